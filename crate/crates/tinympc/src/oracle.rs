//! Exact reference solutions for small instances: condenses the MPC problem
//! to a dense QP over the stacked inputs and solves it by exhaustive
//! active-set enumeration.
//!
//! This path is deliberately brute force — every subset of inequality rows
//! is tried as a candidate active set — so its answers are exact up to
//! linear-algebra precision and independent of the ADMM solve path it
//! certifies.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::problem::MpcProblem;
use crate::solver::Solution;

/// Default cap on enumerable inequality rows (2^14 = 16384 KKT solves).
pub const DEFAULT_MAX_INEQ: usize = 14;

/// Relative singular-value cutoff when splitting the plane equalities into
/// range and null space.
const NULLSPACE_TOL: f64 = 1e-10;
/// Feasibility slack for inactive rows and fixed-knot constraints.
const FEAS_TOL: f64 = 1e-8;
/// KKT candidates whose residual exceeds this (relative) bound are treated
/// as degenerate and skipped.
const KKT_RESIDUAL_TOL: f64 = 1e-8;
/// Most negative multiplier accepted on an active row.
const MULTIPLIER_TOL: f64 = -1e-10;
/// Objective ties within this margin resolve to the smaller active set.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{rows} inequality rows exceed the enumeration cap of {max_ineq}")]
    TooLarge { rows: usize, max_ineq: usize },
    #[error("no active set yields a feasible point")]
    Infeasible,
}

/// Identifies where a condensed inequality row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    InputUpper { step: usize, index: usize },
    InputLower { step: usize, index: usize },
    StateUpper { knot: usize, index: usize },
    StateLower { knot: usize, index: usize },
    HalfSpace { knot: usize, index: usize },
}

/// Dense condensed QP `min 1/2 v' H v + f' v + constant` subject to
/// `G v <= h`, expressed in reduced coordinates when plane equalities were
/// eliminated (`v_full = v_offset + basis * v`).
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h_rhs: DVector<f64>,
    /// Objective constant from the eliminated states (and any equality
    /// offset), so the QP value equals the trajectory objective.
    pub constant: f64,
    /// Maps each inequality row back to its (step, constraint) identity.
    pub provenance: Vec<RowOrigin>,
    /// Particular solution of the plane equalities in full input space.
    pub v_offset: DVector<f64>,
    /// Null-space basis of the plane equalities; `None` means identity.
    pub basis: Option<DMatrix<f64>>,
    /// Set when constraints on the fixed initial knot (or inconsistent
    /// planes) already rule out every point.
    pub fixed_infeasible: bool,
}

impl DenseQp {
    /// Builds a bare QP in full coordinates, for direct use in tests.
    pub fn from_parts(h: DMatrix<f64>, f: DVector<f64>, g: DMatrix<f64>, h_rhs: DVector<f64>) -> Self {
        let dim = f.len();
        let provenance = (0..g.nrows())
            .map(|i| RowOrigin::HalfSpace { knot: 0, index: i })
            .collect();
        Self {
            h,
            f,
            g,
            h_rhs,
            constant: 0.0,
            provenance,
            v_offset: DVector::zeros(dim),
            basis: None,
            fixed_infeasible: false,
        }
    }

    /// Maps a reduced point back to the full stacked-input space.
    pub fn to_full(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(z) => &self.v_offset + z * v,
            None => v.clone(),
        }
    }
}

/// Result of the exhaustive enumeration, in full stacked-input coordinates.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Stacked optimal inputs `[u_0; ...; u_{N-2}]`.
    pub v: DVector<f64>,
    /// Full objective value including the condensing constant.
    pub objective: f64,
    /// Indices of the active inequality rows (into `DenseQp::provenance`).
    pub active_set: Vec<usize>,
    /// Multipliers on the active rows, same order as `active_set`.
    pub multipliers: Vec<f64>,
}

/// Eliminates the states through the dynamics and rewrites the objective
/// and every constraint over the stacked inputs.
///
/// Plane equalities are handled by restriction: the returned QP lives in
/// the null space of their rows. Constraints pinned to the fixed initial
/// knot are checked directly and can only mark the QP infeasible.
pub fn condense(problem: &MpcProblem) -> DenseQp {
    let n = problem.n();
    let m = problem.m();
    let horizon = problem.horizon;
    let dv = m * (horizon - 1);

    let mut h = DMatrix::<f64>::zeros(dv, dv);
    for k in 0..horizon - 1 {
        h.view_mut((k * m, k * m), (m, m)).copy_from(&problem.cost.r);
    }
    let mut f = DVector::<f64>::zeros(dv);
    for k in 0..horizon - 1 {
        f.rows_mut(k * m, m)
            .copy_from(&problem.linear_input_cost(k));
    }
    let mut constant = 0.0;

    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut g_rhs: Vec<f64> = Vec::new();
    let mut provenance: Vec<RowOrigin> = Vec::new();
    let mut eq_rows: Vec<DVector<f64>> = Vec::new();
    let mut eq_rhs: Vec<f64> = Vec::new();
    let mut fixed_infeasible = false;

    // Input box rows are unit rows in v.
    if let Some(bx) = &problem.constraints.input_box {
        for step in 0..horizon - 1 {
            for i in 0..m {
                if bx.hi[i].is_finite() {
                    let mut row = DVector::zeros(dv);
                    row[step * m + i] = 1.0;
                    g_rows.push(row);
                    g_rhs.push(bx.hi[i]);
                    provenance.push(RowOrigin::InputUpper { step, index: i });
                }
                if bx.lo[i].is_finite() {
                    let mut row = DVector::zeros(dv);
                    row[step * m + i] = -1.0;
                    g_rows.push(row);
                    g_rhs.push(-bx.lo[i]);
                    provenance.push(RowOrigin::InputLower { step, index: i });
                }
            }
        }
    }

    // Walk the horizon with x_k = free_k + s_k v.
    let mut s_k = DMatrix::<f64>::zeros(n, dv);
    let mut free_k = problem.x_init.clone();
    for knot in 0..horizon {
        let hess = if knot + 1 == horizon {
            &problem.cost.qf
        } else {
            &problem.cost.q
        };
        let q_lin = problem.linear_state_cost(knot);
        if knot == 0 {
            constant += 0.5 * (hess * &free_k).dot(&free_k) + q_lin.dot(&free_k);
            // Constraints on the fixed initial state are constants.
            if let Some(bx) = &problem.constraints.state_box {
                for i in 0..n {
                    if free_k[i] > bx.hi[i] + FEAS_TOL || free_k[i] < bx.lo[i] - FEAS_TOL {
                        fixed_infeasible = true;
                    }
                }
            }
            for hs in problem.constraints.halfspaces_at(0) {
                if hs.a.dot(&free_k) > hs.b + FEAS_TOL {
                    fixed_infeasible = true;
                }
            }
            for pl in problem.constraints.planes_at(0) {
                if (pl.a.dot(&free_k) - pl.b).abs() > FEAS_TOL {
                    fixed_infeasible = true;
                }
            }
        } else {
            let sq = hess * &s_k;
            h += s_k.transpose() * &sq;
            f += s_k.transpose() * (hess * &free_k + &q_lin);
            constant += 0.5 * (hess * &free_k).dot(&free_k) + q_lin.dot(&free_k);

            if let Some(bx) = &problem.constraints.state_box {
                for i in 0..n {
                    if bx.hi[i].is_finite() {
                        g_rows.push(s_k.row(i).transpose());
                        g_rhs.push(bx.hi[i] - free_k[i]);
                        provenance.push(RowOrigin::StateUpper { knot, index: i });
                    }
                    if bx.lo[i].is_finite() {
                        g_rows.push(-s_k.row(i).transpose());
                        g_rhs.push(free_k[i] - bx.lo[i]);
                        provenance.push(RowOrigin::StateLower { knot, index: i });
                    }
                }
            }
            for (index, hs) in problem.constraints.halfspaces_at(knot).iter().enumerate() {
                g_rows.push(s_k.transpose() * &hs.a);
                g_rhs.push(hs.b - hs.a.dot(&free_k));
                provenance.push(RowOrigin::HalfSpace { knot, index });
            }
            for pl in problem.constraints.planes_at(knot) {
                eq_rows.push(s_k.transpose() * &pl.a);
                eq_rhs.push(pl.b - pl.a.dot(&free_k));
            }
        }

        if knot + 1 < horizon {
            // Advance: x_{k+1} = A x_k + B u_k.
            s_k = &problem.model.a * s_k;
            s_k.view_mut((0, knot * m), (n, m)).copy_from(&problem.model.b);
            free_k = &problem.model.a * &free_k;
        }
    }

    let rows = g_rows.len();
    let mut g = DMatrix::zeros(rows, dv);
    for (i, row) in g_rows.iter().enumerate() {
        g.row_mut(i).copy_from(&row.transpose());
    }
    let h_rhs = DVector::from_vec(g_rhs);

    if eq_rows.is_empty() {
        return DenseQp {
            h,
            f,
            g,
            h_rhs,
            constant,
            provenance,
            v_offset: DVector::zeros(dv),
            basis: None,
            fixed_infeasible,
        };
    }

    // Restrict to the null space of the plane rows: v = v0 + Z t. The
    // split comes from the eigendecomposition of E'E, which exposes the
    // full orthonormal basis (range and null space together).
    let ne = eq_rows.len();
    let mut e = DMatrix::zeros(ne, dv);
    for (i, row) in eq_rows.iter().enumerate() {
        e.row_mut(i).copy_from(&row.transpose());
    }
    let e_rhs = DVector::from_vec(eq_rhs);
    let (eigvals, eigvecs) = linalg::symmetric_eigen(&(e.transpose() * &e));
    let mut order: Vec<usize> = (0..dv).collect();
    order.sort_by(|&i, &j| eigvals[j].partial_cmp(&eigvals[i]).unwrap());
    let sv: Vec<f64> = order.iter().map(|&i| eigvals[i].max(0.0).sqrt()).collect();
    let max_sv = sv.first().copied().unwrap_or(0.0);
    let rank = sv
        .iter()
        .filter(|&&s| s > NULLSPACE_TOL * max_sv.max(1e-300))
        .count();

    // Minimum-norm particular solution v0 = sum_i v_i (v_i' E' e) / sigma_i^2.
    let ete_rhs = e.transpose() * &e_rhs;
    let mut v0 = DVector::zeros(dv);
    for i in 0..rank {
        let vec_i = eigvecs.column(order[i]);
        let coeff = vec_i.dot(&ete_rhs) / (sv[i] * sv[i]);
        v0.axpy(coeff, &vec_i, 1.0);
    }
    if linalg::max_abs((&e * &v0 - &e_rhs).as_slice())
        > FEAS_TOL * f64::max(1.0, linalg::max_abs(e_rhs.as_slice()))
    {
        fixed_infeasible = true;
    }

    let null_dim = dv - rank;
    let mut basis = DMatrix::zeros(dv, null_dim);
    for j in 0..null_dim {
        basis.column_mut(j).copy_from(&eigvecs.column(order[rank + j]));
    }

    let h_red = basis.transpose() * &h * &basis;
    let f_red = basis.transpose() * (&h * &v0 + &f);
    let g_red = &g * &basis;
    let rhs_red = &h_rhs - &g * &v0;
    let constant_red = constant + 0.5 * (&h * &v0).dot(&v0) + f.dot(&v0);

    DenseQp {
        h: h_red,
        f: f_red,
        g: g_red,
        h_rhs: rhs_red,
        constant: constant_red,
        provenance,
        v_offset: v0,
        basis: Some(basis),
        fixed_infeasible,
    }
}

/// Tries every subset of inequality rows as a candidate active set, solving
/// the equality-constrained KKT system for each, and returns the feasible
/// candidate with the least objective.
///
/// Candidates need primal feasibility on inactive rows and multipliers above
/// [`MULTIPLIER_TOL`] on active rows; near-singular KKT systems are skipped.
/// Objective ties within [`TIE_TOL`] resolve to the smaller active set.
pub fn solve_active_set_enum(qp: &DenseQp, max_ineq: usize) -> Result<OracleSolution, OracleError> {
    let rows = qp.g.nrows();
    if rows > max_ineq {
        return Err(OracleError::TooLarge { rows, max_ineq });
    }
    if qp.fixed_infeasible {
        return Err(OracleError::Infeasible);
    }
    let dim = qp.f.len();
    let rhs_scale = f64::max(1.0, linalg::max_abs(qp.h_rhs.as_slice()));

    let mut best: Option<(f64, u32, OracleSolution)> = None;
    for mask in 0u64..(1u64 << rows) {
        let active: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
        let na = active.len();
        let kdim = dim + na;

        let mut kkt = DMatrix::zeros(kdim, kdim);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&qp.h);
        for (row_pos, &row_idx) in active.iter().enumerate() {
            let grow = qp.g.row(row_idx);
            kkt.view_mut((dim + row_pos, 0), (1, dim)).copy_from(&grow);
            kkt.view_mut((0, dim + row_pos), (dim, 1))
                .copy_from(&grow.transpose());
        }
        let mut rhs = DVector::zeros(kdim);
        rhs.rows_mut(0, dim).copy_from(&(-&qp.f));
        for (row_pos, &row_idx) in active.iter().enumerate() {
            rhs[dim + row_pos] = qp.h_rhs[row_idx];
        }

        let Some(sol) = linalg::lu_solve(&kkt, &rhs) else {
            continue; // exactly singular: degenerate candidate
        };
        let residual = linalg::max_abs((&kkt * &sol - &rhs).as_slice());
        if residual > KKT_RESIDUAL_TOL * f64::max(1.0, linalg::max_abs(rhs.as_slice())) {
            continue; // near-singular: degenerate candidate
        }

        let v = DVector::from(sol.rows(0, dim));
        let multipliers: Vec<f64> = (0..na).map(|i| sol[dim + i]).collect();
        if multipliers.iter().any(|&l| l < MULTIPLIER_TOL) {
            continue;
        }
        let feasible = (0..rows)
            .filter(|i| mask & (1 << i) == 0)
            .all(|i| qp.g.row(i).transpose().dot(&v) <= qp.h_rhs[i] + FEAS_TOL * rhs_scale);
        if !feasible {
            continue;
        }

        let objective = 0.5 * (&qp.h * &v).dot(&v) + qp.f.dot(&v) + qp.constant;
        let popcount = mask.count_ones();
        let better = match &best {
            None => true,
            Some((best_obj, best_pop, _)) => {
                objective < best_obj - TIE_TOL
                    || ((objective - best_obj).abs() <= TIE_TOL && popcount < *best_pop)
            }
        };
        if better {
            best = Some((
                objective,
                popcount,
                OracleSolution {
                    v: qp.to_full(&v),
                    objective,
                    active_set: active,
                    multipliers,
                },
            ));
        }
    }

    best.map(|(_, _, sol)| sol).ok_or(OracleError::Infeasible)
}

/// Rolls stacked inputs out through the dynamics: returns `(x, u)` as
/// `n x N` and `m x (N-1)` trajectories.
pub fn rollout(problem: &MpcProblem, v: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = problem.n();
    let m = problem.m();
    let horizon = problem.horizon;
    let mut x = DMatrix::zeros(n, horizon);
    let mut u = DMatrix::zeros(m, horizon - 1);
    x.column_mut(0).copy_from(&problem.x_init);
    for k in 0..horizon - 1 {
        u.column_mut(k).copy_from(&v.rows(k * m, m));
        let next = &problem.model.a * x.column(k) + &problem.model.b * u.column(k);
        x.column_mut(k + 1).copy_from(&next);
    }
    (x, u)
}

/// Solver-vs-oracle comparison on one problem.
#[derive(Debug, Clone, Copy)]
pub struct CompareReport {
    /// `|J_solver - J_oracle| / max(1, |J_oracle|)`.
    pub objective_gap_rel: f64,
    /// Worst constraint violation of the solver trajectory.
    pub max_violation: f64,
    /// Infinity-norm gap between the input trajectories.
    pub sup_norm_gap: f64,
}

/// Worst violation of the problem's constraints on a trajectory.
pub fn max_constraint_violation(
    problem: &MpcProblem,
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> f64 {
    let mut worst: f64 = 0.0;
    if let Some(bx) = &problem.constraints.input_box {
        for k in 0..u.ncols() {
            for i in 0..u.nrows() {
                if bx.hi[i].is_finite() {
                    worst = worst.max(u[(i, k)] - bx.hi[i]);
                }
                if bx.lo[i].is_finite() {
                    worst = worst.max(bx.lo[i] - u[(i, k)]);
                }
            }
        }
    }
    if let Some(bx) = &problem.constraints.state_box {
        for k in 0..x.ncols() {
            for i in 0..x.nrows() {
                if bx.hi[i].is_finite() {
                    worst = worst.max(x[(i, k)] - bx.hi[i]);
                }
                if bx.lo[i].is_finite() {
                    worst = worst.max(bx.lo[i] - x[(i, k)]);
                }
            }
        }
    }
    for k in 0..x.ncols() {
        let xk = x.column(k);
        for hs in problem.constraints.halfspaces_at(k) {
            worst = worst.max(hs.a.dot(&xk) - hs.b);
        }
        for pl in problem.constraints.planes_at(k) {
            worst = worst.max((pl.a.dot(&xk) - pl.b).abs());
        }
    }
    worst
}

/// Compares a solver run against the oracle optimum on the same problem.
pub fn compare(
    solution: &Solution,
    problem: &MpcProblem,
    oracle_result: &OracleSolution,
) -> CompareReport {
    let (_, u_oracle) = rollout(problem, &oracle_result.v);
    let j_solver = crate::problem::eval_objective(problem, &solution.x, &solution.u);
    let (x_o, u_o) = rollout(problem, &oracle_result.v);
    let j_oracle = crate::problem::eval_objective(problem, &x_o, &u_o);
    let objective_gap_rel = (j_solver - j_oracle).abs() / f64::max(1.0, j_oracle.abs());
    let max_violation = max_constraint_violation(problem, &solution.x, &solution.u);
    let sup_norm_gap = linalg::max_abs_diff(solution.u.as_slice(), u_oracle.as_slice());
    CompareReport {
        objective_gap_rel,
        max_violation,
        sup_norm_gap,
    }
}
