//! The online ADMM loop: factorization-free backward/forward primal update,
//! slack projection, dual ascent, residual checks, and penalty-ladder
//! switching.
//!
//! One iteration runs, in order: linear-cost refresh, backward pass, forward
//! pass, slack projection, dual ascent, then residual/convergence checks.
//! The backward pass uses the cached constant-gain recursion
//!
//! ```text
//! d_k = C1 (B' p_{k+1} + r_k)
//! p_k = q_k + C2 p_{k+1} - K_inf' r_k
//! ```
//!
//! which solves the equality-constrained primal subproblem exactly because
//! the terminal cost-to-go Hessian is pinned to `P_inf`. The loop performs
//! only matrix-vector and vector operations; a debug assertion checks that
//! the per-thread factorization counter never moves inside [`MpcSolver::solve`].

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cache::{RhoCacheEntry, SolverCache};
use crate::linalg;
use crate::problem::{ConstraintSet, MpcProblem};
use crate::projections;

/// Termination parameters and feature switches.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// Infinity-norm tolerance on the consensus gap `max(|x-z|, |u-w|)`.
    pub tol_primal: f64,
    /// Infinity-norm tolerance on the rho-scaled slack change.
    pub tol_dual: f64,
    pub max_iters: usize,
    /// Convergence is evaluated every `check_every` iterations.
    pub check_every: usize,
    /// Enables penalty-ladder switching driven by the residual ratio.
    pub rho_adapt: bool,
    /// Switch one rung when one residual exceeds the other by this factor.
    pub rho_switch_threshold: f64,
    /// Shift the previous solution by one step when re-solving.
    pub warm_start: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol_primal: 1e-4,
            tol_dual: 1e-4,
            max_iters: 4000,
            check_every: 1,
            rho_adapt: false,
            rho_switch_threshold: 10.0,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Both residuals are below their tolerances.
    Solved,
    /// The iteration budget ran out first. Not a fault.
    MaxIters,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveStatus::Solved => write!(f, "Solved"),
            SolveStatus::MaxIters => write!(f, "MaxIters"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("non-finite value in the workspace at iteration {iter}")]
    NonFinite { iter: usize },
    #[error("problem does not match the solver shape: {0}")]
    ShapeMismatch(String),
}

/// Solver output: trajectories plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    /// States, `n x N`.
    pub x: DMatrix<f64>,
    /// Inputs, `m x (N-1)`.
    pub u: DMatrix<f64>,
    pub iters: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho_final: f64,
}

impl Solution {
    /// Heap bytes held by the trajectory copies.
    pub fn data_bytes(&self) -> usize {
        8 * (self.x.len() + self.u.len())
    }

    /// Writes the trajectory CSV: header `k,x_0..x_{n-1},u_0..u_{m-1}`, one
    /// row per knot (input cells empty at the final knot), then a summary
    /// header and row `iters,status,r_primal,r_dual,rho_final`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let n = self.x.nrows();
        let m = self.u.nrows();
        let horizon = self.x.ncols();
        let mut header = String::from("k");
        for i in 0..n {
            header.push_str(&format!(",x_{i}"));
        }
        for j in 0..m {
            header.push_str(&format!(",u_{j}"));
        }
        writeln!(out, "{header}")?;
        for k in 0..horizon {
            let mut row = format!("{k}");
            for i in 0..n {
                row.push_str(&format!(",{}", self.x[(i, k)]));
            }
            for j in 0..m {
                if k + 1 < horizon {
                    row.push_str(&format!(",{}", self.u[(j, k)]));
                } else {
                    row.push(',');
                }
            }
            writeln!(out, "{row}")?;
        }
        writeln!(out, "iters,status,r_primal,r_dual,rho_final")?;
        writeln!(
            out,
            "{},{},{},{},{}",
            self.iters, self.status, self.primal_residual, self.dual_residual, self.rho_final
        )
    }
}

/// All per-horizon iteration state. Column `k` of each matrix belongs to
/// knot (or step) `k`.
#[derive(Debug, Clone)]
pub struct Workspace {
    n: usize,
    m: usize,
    horizon: usize,
    /// Primal states, `n x N`.
    pub x: DMatrix<f64>,
    /// Primal inputs, `m x (N-1)`.
    pub u: DMatrix<f64>,
    /// State slacks and the previous-iteration copy.
    pub z: DMatrix<f64>,
    pub z_prev: DMatrix<f64>,
    /// Input slacks and the previous-iteration copy.
    pub w: DMatrix<f64>,
    pub w_prev: DMatrix<f64>,
    /// Scaled state duals (`lambda / rho`).
    pub y: DMatrix<f64>,
    /// Scaled input duals (`mu / rho`).
    pub g: DMatrix<f64>,
    /// Backward-pass linear cost-to-go, `n x N`.
    pub p: DMatrix<f64>,
    /// Feedforward terms, `m x (N-1)`.
    pub d: DMatrix<f64>,
    /// Working linear state costs `q~`, `n x N`.
    pub q: DMatrix<f64>,
    /// Working linear input costs `r~`, `m x (N-1)`.
    pub r: DMatrix<f64>,
    /// Ladder rung this workspace currently uses.
    pub active_index: usize,
    scratch_m: DVector<f64>,
}

impl Workspace {
    pub fn new(n: usize, m: usize, horizon: usize) -> Self {
        assert!(horizon >= 2, "horizon must be at least 2");
        Self {
            n,
            m,
            horizon,
            x: DMatrix::zeros(n, horizon),
            u: DMatrix::zeros(m, horizon - 1),
            z: DMatrix::zeros(n, horizon),
            z_prev: DMatrix::zeros(n, horizon),
            w: DMatrix::zeros(m, horizon - 1),
            w_prev: DMatrix::zeros(m, horizon - 1),
            y: DMatrix::zeros(n, horizon),
            g: DMatrix::zeros(m, horizon - 1),
            p: DMatrix::zeros(n, horizon),
            d: DMatrix::zeros(m, horizon - 1),
            q: DMatrix::zeros(n, horizon),
            r: DMatrix::zeros(m, horizon - 1),
            active_index: 0,
            scratch_m: DVector::zeros(m),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Heap bytes held by the iteration buffers.
    pub fn data_bytes(&self) -> usize {
        8 * (self.x.len()
            + self.u.len()
            + self.z.len()
            + self.z_prev.len()
            + self.w.len()
            + self.w_prev.len()
            + self.y.len()
            + self.g.len()
            + self.p.len()
            + self.d.len()
            + self.q.len()
            + self.r.len()
            + self.scratch_m.len())
    }

    fn reset(&mut self) {
        for mat in [
            &mut self.x,
            &mut self.z,
            &mut self.z_prev,
            &mut self.y,
            &mut self.p,
            &mut self.q,
        ] {
            mat.fill(0.0);
        }
        for mat in [
            &mut self.u,
            &mut self.w,
            &mut self.w_prev,
            &mut self.g,
            &mut self.d,
            &mut self.r,
        ] {
            mat.fill(0.0);
        }
    }

    /// One-step receding-horizon shift of `x, u, z, w, y, g`: columns move
    /// left by one, the last knot is repeated.
    fn shift_left(&mut self) {
        for mat in [&mut self.x, &mut self.z, &mut self.y] {
            shift_columns_left(mat);
        }
        for mat in [&mut self.u, &mut self.w, &mut self.g] {
            shift_columns_left(mat);
        }
    }

    fn all_finite(&self) -> bool {
        [
            &self.x, &self.u, &self.z, &self.w, &self.y, &self.g, &self.p, &self.d, &self.q,
            &self.r,
        ]
        .iter()
        .all(|mat| linalg::all_finite(mat.as_slice()))
    }
}

fn shift_columns_left(mat: &mut DMatrix<f64>) {
    let cols = mat.ncols();
    if cols < 2 {
        return;
    }
    for k in 0..cols - 1 {
        let (mut dst, src) = mat.columns_range_pair_mut(k, k + 1);
        dst.copy_from(&src);
    }
}

/// `out[i] += scale * (a[i] - b[i])` over whole buffers.
fn add_scaled_diff(out: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    for i in 0..out.len() {
        out[i] += scale * (a[i] - b[i]);
    }
}

/// Refreshes the working linear costs from the problem and the current
/// slack/dual state:
///
/// ```text
/// q_k <- q_k(problem) + rho (y_k - z_k)
/// r_k <- r_k(problem) + rho (g_k - w_k)
/// ```
///
/// The terminal column uses the problem's terminal linear cost.
pub fn update_linear_cost(ws: &mut Workspace, problem: &MpcProblem, rho: f64) {
    for k in 0..ws.horizon {
        problem.write_linear_state_cost(k, &mut ws.q.column_mut(k));
    }
    for k in 0..ws.horizon - 1 {
        problem.write_linear_input_cost(k, &mut ws.r.column_mut(k));
    }
    add_scaled_diff(ws.q.as_mut_slice(), ws.y.as_slice(), ws.z.as_slice(), rho);
    add_scaled_diff(ws.r.as_mut_slice(), ws.g.as_slice(), ws.w.as_slice(), rho);
}

/// Backward recursion over the linear terms with the cached constant gain.
///
/// Seeds `p_N = q_N`, then for `k = N-1 .. 1`:
/// `d_k = C1 (B' p_{k+1} + r_k)` and `p_k = q_k + C2 p_{k+1} - K_inf' r_k`.
pub fn backward_pass(ws: &mut Workspace, entry: &RhoCacheEntry, b: &DMatrix<f64>) {
    let horizon = ws.horizon;
    {
        let (mut p_last, q_last) = (ws.p.column_mut(horizon - 1), ws.q.column(horizon - 1));
        p_last.copy_from(&q_last);
    }
    for k in (0..horizon - 1).rev() {
        let (mut p_k, p_next) = ws.p.columns_range_pair_mut(k, k + 1);
        ws.scratch_m.gemv_tr(1.0, b, &p_next, 0.0);
        ws.scratch_m.axpy(1.0, &ws.r.column(k), 1.0);
        ws.d.column_mut(k).gemv(1.0, &entry.c1, &ws.scratch_m, 0.0);

        p_k.copy_from(&ws.q.column(k));
        p_k.gemv(1.0, &entry.c2, &p_next, 1.0);
        p_k.gemv_tr(-1.0, &entry.kinf, &ws.r.column(k), 1.0);
    }
}

/// Affine-feedback rollout: `u_k = -K_inf x_k - d_k`,
/// `x_{k+1} = A x_k + B u_k`, starting from `x_1 = x_init`.
pub fn forward_pass(
    ws: &mut Workspace,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    entry: &RhoCacheEntry,
    x_init: &DVector<f64>,
) {
    ws.x.column_mut(0).copy_from(x_init);
    for k in 0..ws.horizon - 1 {
        {
            let mut u_k = ws.u.column_mut(k);
            u_k.gemv(-1.0, &entry.kinf, &ws.x.column(k), 0.0);
            u_k.axpy(-1.0, &ws.d.column(k), 1.0);
        }
        let (x_k, mut x_next) = ws.x.columns_range_pair_mut(k, k + 1);
        x_next.gemv(1.0, a, &x_k, 0.0);
        x_next.gemv(1.0, b, &ws.u.column(k), 1.0);
    }
}

/// Projects `x + y` and `u + g` onto the feasible sets, saving the previous
/// slacks for the dual residual.
pub fn slack_update(ws: &mut Workspace, constraints: &ConstraintSet) {
    ws.z_prev.copy_from(&ws.z);
    ws.w_prev.copy_from(&ws.w);

    ws.z.copy_from(&ws.x);
    ws.z.as_mut_slice()
        .iter_mut()
        .zip(ws.y.as_slice())
        .for_each(|(zi, yi)| *zi += yi);
    let n = ws.n;
    for k in 0..ws.horizon {
        let col = &mut ws.z.as_mut_slice()[k * n..(k + 1) * n];
        projections::project_state_set_in_place(col, &constraints.step(k));
    }

    ws.w.copy_from(&ws.u);
    ws.w.as_mut_slice()
        .iter_mut()
        .zip(ws.g.as_slice())
        .for_each(|(wi, gi)| *wi += gi);
    if let Some(bx) = &constraints.input_box {
        let m = ws.m;
        for k in 0..ws.horizon - 1 {
            let col = &mut ws.w.as_mut_slice()[k * m..(k + 1) * m];
            projections::project_box_in_place(col, bx.lo.as_slice(), bx.hi.as_slice());
        }
    }
}

/// Scaled-dual gradient ascent: `y += x - z`, `g += u - w`.
pub fn dual_update(ws: &mut Workspace) {
    for ((yi, xi), zi) in ws
        .y
        .as_mut_slice()
        .iter_mut()
        .zip(ws.x.as_slice())
        .zip(ws.z.as_slice())
    {
        *yi += xi - zi;
    }
    for ((gi, ui), wi) in ws
        .g
        .as_mut_slice()
        .iter_mut()
        .zip(ws.u.as_slice())
        .zip(ws.w.as_slice())
    {
        *gi += ui - wi;
    }
}

/// Infinity-norm residuals: the consensus gap and the rho-scaled slack
/// change.
pub fn compute_residuals(ws: &Workspace, rho: f64) -> (f64, f64) {
    let r_primal = f64::max(
        linalg::max_abs_diff(ws.x.as_slice(), ws.z.as_slice()),
        linalg::max_abs_diff(ws.u.as_slice(), ws.w.as_slice()),
    );
    let r_dual = rho
        * f64::max(
            linalg::max_abs_diff(ws.z.as_slice(), ws.z_prev.as_slice()),
            linalg::max_abs_diff(ws.w.as_slice(), ws.w_prev.as_slice()),
        );
    (r_primal, r_dual)
}

/// Moves one ladder rung when the residuals are out of balance, rescaling
/// the scaled duals so the underlying multipliers `lambda = rho y`,
/// `mu = rho g` are preserved. Returns the new rung on a switch.
pub fn adapt_rho(
    cache: &SolverCache,
    ws: &mut Workspace,
    r_primal: f64,
    r_dual: f64,
    threshold: f64,
) -> Option<usize> {
    let idx = ws.active_index;
    let next = if r_primal > threshold * r_dual && idx + 1 < cache.entries.len() {
        idx + 1
    } else if r_dual > threshold * r_primal && idx > 0 {
        idx - 1
    } else {
        return None;
    };
    let scale = cache.entries[idx].rho / cache.entries[next].rho;
    ws.y.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    ws.g.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    ws.active_index = next;
    Some(next)
}

/// A bound (cache, settings, workspace) triple that solves instances of one
/// problem shape. Instances are independent; run one per thread.
#[derive(Debug, Clone)]
pub struct MpcSolver {
    cache: SolverCache,
    pub settings: Settings,
    ws: Workspace,
    primed: bool,
}

impl MpcSolver {
    /// The solver starts on the cache's default ladder rung.
    pub fn new(cache: SolverCache, horizon: usize, settings: Settings) -> Self {
        let mut ws = Workspace::new(cache.n(), cache.m(), horizon);
        ws.active_index = cache.active_index;
        Self {
            cache,
            settings,
            ws,
            primed: false,
        }
    }

    pub fn cache(&self) -> &SolverCache {
        &self.cache
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    /// Current penalty value (the active ladder rung).
    pub fn rho(&self) -> f64 {
        self.cache.entries[self.ws.active_index].rho
    }

    /// Discards warm-start state; the next solve starts from zeros.
    pub fn reset(&mut self) {
        self.ws.reset();
        self.ws.active_index = self.cache.active_index;
        self.primed = false;
    }

    fn check_shape(&self, problem: &MpcProblem) -> Result<(), SolveError> {
        let (n, m, horizon) = (self.ws.n, self.ws.m, self.ws.horizon);
        if problem.n() != n || problem.m() != m || problem.horizon != horizon {
            return Err(SolveError::ShapeMismatch(format!(
                "problem is (n={}, m={}, N={}), solver is (n={n}, m={m}, N={horizon})",
                problem.n(),
                problem.m(),
                problem.horizon
            )));
        }
        if problem.x_init.len() != n {
            return Err(SolveError::ShapeMismatch(format!(
                "x_init has length {}, expected {n}",
                problem.x_init.len()
            )));
        }
        Ok(())
    }

    /// Runs the ADMM loop until both residuals are below tolerance or the
    /// iteration budget runs out.
    ///
    /// With warm starting enabled, the previous solution is shifted by one
    /// step (last knot repeated) and the duals are carried over. Non-finite
    /// workspace values abort with a fault naming the iteration.
    pub fn solve(&mut self, problem: &MpcProblem) -> Result<Solution, SolveError> {
        self.check_shape(problem)?;
        let factorizations_before = linalg::factorization_count();

        if self.settings.warm_start && self.primed {
            self.ws.shift_left();
        } else {
            self.ws.reset();
            self.ws.active_index = self.cache.active_index;
        }

        let check_every = self.settings.check_every.max(1);
        let mut status = SolveStatus::MaxIters;
        let mut iters = self.settings.max_iters;
        let mut r_primal = f64::INFINITY;
        let mut r_dual = f64::INFINITY;

        for iter in 1..=self.settings.max_iters {
            let entry = &self.cache.entries[self.ws.active_index];
            update_linear_cost(&mut self.ws, problem, entry.rho);
            backward_pass(&mut self.ws, entry, &self.cache.b);
            forward_pass(
                &mut self.ws,
                &self.cache.a,
                &self.cache.b,
                entry,
                &problem.x_init,
            );
            slack_update(&mut self.ws, &problem.constraints);
            dual_update(&mut self.ws);

            if iter % check_every == 0 || iter == self.settings.max_iters {
                if !self.ws.all_finite() {
                    return Err(SolveError::NonFinite { iter });
                }
                (r_primal, r_dual) = compute_residuals(&self.ws, entry.rho);
                if r_primal < self.settings.tol_primal && r_dual < self.settings.tol_dual {
                    status = SolveStatus::Solved;
                    iters = iter;
                    break;
                }
                if self.settings.rho_adapt {
                    adapt_rho(
                        &self.cache,
                        &mut self.ws,
                        r_primal,
                        r_dual,
                        self.settings.rho_switch_threshold,
                    );
                }
            }
        }

        self.primed = true;
        debug_assert_eq!(
            linalg::factorization_count(),
            factorizations_before,
            "the online loop must not factorize"
        );
        Ok(Solution {
            status,
            x: self.ws.x.clone(),
            u: self.ws.u.clone(),
            iters,
            primal_residual: r_primal,
            dual_residual: r_dual,
            rho_final: self.cache.entries[self.ws.active_index].rho,
        })
    }

    #[cfg(test)]
    pub(crate) fn run_single_iteration(&mut self, problem: &MpcProblem) {
        let entry = &self.cache.entries[self.ws.active_index];
        update_linear_cost(&mut self.ws, problem, entry.rho);
        backward_pass(&mut self.ws, entry, &self.cache.b);
        forward_pass(
            &mut self.ws,
            &self.cache.a,
            &self.cache.b,
            entry,
            &problem.x_init,
        );
        slack_update(&mut self.ws, &problem.constraints);
        dual_update(&mut self.ws);
    }
}
