use tinympc::sim::*;
use tinympc::cache::build_cache;
use tinympc::solver::Settings;
use std::time::Instant;

fn main() {
    let dt = 0.01;
    let steps = 3000;
    let combos: Vec<(&str, Vec<f64>, Vec<f64>, f64, f64)> = vec![
        ("tuned A", vec![50.,50.,50., 1.,1.,1., 1.,1.,1., 0.5,0.5,0.5], vec![1.,1.,1.,1.], 0.25, 5.0),
        ("tuned B", vec![50.,50.,50., 1.,1.,1., 1.,1.,1., 0.5,0.5,0.5], vec![0.5,0.5,0.5,0.5], 0.25, 10.0),
        ("tuned C", vec![100.,100.,100., 4.,4.,4., 4.,4.,4., 2.,2.,2.], vec![4.,4.,4.,4.], 0.25, 5.0),
    ];
    for (name, q, r, kt, rho) in combos {
        let sc = ScenarioConfig {
            control_rate_hz: 100.0,
            horizon: 20,
            reference: ReferenceSpec::Hover,
            x_init: None,
            obstacle: Some(ObstacleSpec { radius: 0.35, centers: swinging_obstacle_path(1.0, 0.1, 8.0, dt, steps) }),
            plane_constraint: true,
            noise: NoiseStd::default(),
            steps,
            seed: 7,
            rho,
            quad: Some(QuadParams { thrust_coeff: kt, ..QuadParams::default() }),
            q_diag: Some(q),
            r_diag: Some(r),
        };
        let quad = QuadModel::from_params(&sc.quad.unwrap(), dt);
        let cost = sc.cost();
        let cache = build_cache(&quad.model, &cost, sc.rho, 1, 5.0).unwrap();
        let settings = Settings { tol_primal: 1e-4, tol_dual: 1e-3, max_iters: 500, ..Settings::default() };
        let t = Instant::now();
        let log = simulate_episode(&quad, &sc, cache, settings).unwrap();
        let m = episode_metrics(&log);
        let capped = log.steps.iter().filter(|s| s.iters >= 500).count();
        let mut iters: Vec<usize> = log.steps.iter().map(|s| s.iters).collect();
        iters.sort();
        println!("{name}: min_dist {:.4} (>=0.30?) plane_dev {:.5} med {} p99 {} capped {} time {:?}",
            m.min_obstacle_distance.unwrap(), m.max_plane_deviation.unwrap(),
            iters[iters.len()/2], iters[iters.len()*99/100], capped, t.elapsed());
    }
}
