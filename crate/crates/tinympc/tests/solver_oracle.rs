//! Cross-checks of the ADMM path against the exact oracle path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinympc::bench::{random_controllable_system, tracking_problem};
use tinympc::oracle;
use tinympc::problem::BoxBounds;
use tinympc::{build_cache, MpcSolver, Settings, SolveStatus};

/// With the terminal cost pinned to the steady-state cost-to-go and a
/// near-zero penalty, the first iteration already solves the
/// equality-constrained subproblem exactly, so unconstrained solves finish
/// immediately and match the condensed optimum.
#[test]
fn unconstrained_solve_matches_condensed_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for trial in 0..20 {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=3);
        let horizon = rng.random_range(3..=10);
        let model = random_controllable_system(n, m, 1000 + trial).unwrap();
        let mut problem = tracking_problem(&model, horizon, 2000 + trial);
        problem.constraints.input_box = None;

        let rho = 1e-9;
        let cache = build_cache(&model, &problem.cost, rho, 1, 5.0).unwrap();
        // Pin the terminal cost to the solver's implicit one so the oracle
        // and the solver optimize the identical objective.
        problem.cost.qf = &cache.entries[0].pinf - DMatrix::identity(n, n) * rho;

        let mut solver = MpcSolver::new(cache, horizon, Settings::default());
        let solution = solver.solve(&problem).unwrap();
        assert_eq!(solution.status, SolveStatus::Solved);
        assert!(
            solution.iters <= 2,
            "trial {trial}: took {} iterations",
            solution.iters
        );

        let qp = oracle::condense(&problem);
        let exact = oracle::solve_active_set_enum(&qp, 14).unwrap();
        let report = oracle::compare(&solution, &problem, &exact);
        assert!(
            report.sup_norm_gap <= 1e-8,
            "trial {trial}: input gap {}",
            report.sup_norm_gap
        );
    }
}

/// Box-constrained random instances solved to the standard tolerances agree
/// with the exhaustive active-set oracle.
#[test]
fn constrained_solves_agree_with_active_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst_gap: f64 = 0.0;
    let mut worst_violation: f64 = 0.0;
    for trial in 0..40 {
        let n = rng.random_range(2..=4);
        let m = rng.random_range(1..=2);
        // Keep the row count within the enumeration cap: 2 m (N-1) <= 14.
        let horizon = if m == 1 {
            rng.random_range(3..=5)
        } else {
            rng.random_range(3..=4)
        };
        let model = random_controllable_system(n, m, 3000 + trial).unwrap();
        let mut problem = tracking_problem(&model, horizon, 4000 + trial);

        let rho = 1.0;
        let cache = build_cache(&model, &problem.cost, rho, 1, 5.0).unwrap();
        problem.cost.qf = &cache.entries[0].pinf - DMatrix::identity(n, n) * rho;

        let mut solver = MpcSolver::new(
            cache,
            horizon,
            Settings {
                tol_primal: 1e-4,
                tol_dual: 1e-3,
                ..Settings::default()
            },
        );
        let solution = solver.solve(&problem).unwrap();
        assert_eq!(solution.status, SolveStatus::Solved, "trial {trial}");

        let qp = oracle::condense(&problem);
        let exact = oracle::solve_active_set_enum(&qp, 14).unwrap();
        let report = oracle::compare(&solution, &problem, &exact);
        worst_gap = worst_gap.max(report.objective_gap_rel);
        worst_violation = worst_violation.max(report.max_violation);
        assert!(
            report.objective_gap_rel <= 1e-3,
            "trial {trial}: gap {}",
            report.objective_gap_rel
        );
        assert!(
            report.max_violation <= 1e-4,
            "trial {trial}: violation {}",
            report.max_violation
        );
    }
    println!("worst gap {worst_gap:.3e}, worst violation {worst_violation:.3e}");
}

/// Warm-started re-solves across a receding-horizon step — where the
/// initial state moves by one plant step plus small estimate noise — should
/// rarely take more iterations than a cold start of the same new problem
/// (regression guard).
#[test]
fn warm_starting_usually_wins_across_receding_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut wins = 0;
    let trials = 100;
    let horizon = 8;
    for trial in 0..trials {
        let model = random_controllable_system(3, 1, 5000 + trial).unwrap();
        let mut problem = tracking_problem(&model, horizon, 6000 + trial);
        problem.constraints.input_box = Some(BoxBounds::symmetric(1, 0.7));
        let long_ref = tinympc::bench::smooth_reference(3, horizon + 1, 7000 + trial);
        problem.x_ref.clone_from_slice(&long_ref[0..horizon]);
        let cache = build_cache(&model, &problem.cost, 1.0, 1, 5.0).unwrap();

        let settings = Settings {
            warm_start: true,
            ..Settings::default()
        };
        let mut solver = MpcSolver::new(cache.clone(), horizon, settings.clone());
        let previous = solver.solve(&problem).unwrap();

        // Advance the plant one step and slide the reference window; the
        // estimate noise is the small perturbation on top.
        let noise = DVector::from_fn(3, |_, _| rng.random_range(-1e-3..1e-3));
        problem.x_init = &model.a * &problem.x_init + &model.b * previous.u.column(0) + noise;
        problem.x_ref.clone_from_slice(&long_ref[1..horizon + 1]);

        let warm = solver.solve(&problem).unwrap();
        let mut cold_solver = MpcSolver::new(cache, horizon, settings);
        let cold = cold_solver.solve(&problem).unwrap();
        if warm.iters <= cold.iters {
            wins += 1;
        }
    }
    assert!(
        wins * 100 >= 90 * trials,
        "warm start won only {wins} of {trials} trials"
    );
}
