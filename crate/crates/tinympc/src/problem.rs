//! Linear MPC problem data: dynamics, costs, constraints, references,
//! validation, and problem-size accounting.
//!
//! The problem being posed is
//!
//! ```text
//! min  1/2 x_N' Qf x_N + q_N' x_N
//!      + sum_{k<N} 1/2 x_k' Q x_k + q_k' x_k + 1/2 u_k' R u_k + r_k' u_k
//! s.t. x_{k+1} = A x_k + B u_k,   x_k in X_k,   u_k in U,
//! ```
//!
//! with `X_k` an intersection of a shared state box, per-step hyperplanes,
//! and per-step half-spaces, and `U` an input box.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::linalg;

/// Relative tolerance for the symmetry check on cost matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Relative singular-value cutoff for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// Discrete-time LTI dynamics `x+ = A x + B u`.
///
/// `n` and `m` are the declared dimensions; validation checks that the
/// matrices actually have those shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Seconds per step.
    pub dt: f64,
    pub n: usize,
    pub m: usize,
}

impl LtiModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, dt: f64) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        Self { a, b, dt, n, m }
    }
}

/// Quadratic stage and terminal costs plus optional raw linear terms.
///
/// When `q_lin`/`r_lin` are absent the linear terms are derived from the
/// problem references as `q_k = -Q x_ref_k` (`-Qf x_ref_N` at the terminal
/// knot) and `r_k = -R u_ref_k`, which makes the minimizer track the
/// references. Raw terms override that derivation.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    /// Per-step linear state costs, length `N` including the terminal knot.
    pub q_lin: Option<Vec<DVector<f64>>>,
    /// Per-step linear input costs, length `N - 1`.
    pub r_lin: Option<Vec<DVector<f64>>>,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>) -> Self {
        Self {
            q,
            r,
            qf,
            q_lin: None,
            r_lin: None,
        }
    }
}

/// One linear state inequality `a . x <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub a: DVector<f64>,
    pub b: f64,
}

impl HalfSpace {
    pub fn new(a: DVector<f64>, b: f64) -> Self {
        Self { a, b }
    }

    /// Embeds a low-dimensional half-space into `dim` coordinates starting at
    /// `offset`, zero elsewhere.
    pub fn embed(&self, dim: usize, offset: usize) -> HalfSpace {
        let mut a = DVector::zeros(dim);
        a.rows_mut(offset, self.a.len()).copy_from(&self.a);
        HalfSpace { a, b: self.b }
    }
}

/// One equality hyperplane `a . x = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub a: DVector<f64>,
    pub b: f64,
}

impl Hyperplane {
    pub fn new(a: DVector<f64>, b: f64) -> Self {
        Self { a, b }
    }
}

/// Elementwise bounds `lo <= v <= hi`; entries may be infinite for one-sided
/// bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(dim: usize, magnitude: f64) -> Self {
        Self {
            lo: DVector::from_element(dim, -magnitude),
            hi: DVector::from_element(dim, magnitude),
        }
    }

    /// Number of finite scalar bounds (each counts one inequality row).
    pub fn finite_bound_rows(&self) -> usize {
        self.lo.iter().filter(|v| v.is_finite()).count()
            + self.hi.iter().filter(|v| v.is_finite()).count()
    }
}

/// Convex constraint sets for states and inputs.
///
/// `state_halfspaces` and `state_planes` are per-knot lists (length `N`);
/// an empty outer list means the constraint kind is absent everywhere.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub state_box: Option<BoxBounds>,
    pub input_box: Option<BoxBounds>,
    pub state_halfspaces: Vec<Vec<HalfSpace>>,
    pub state_planes: Vec<Vec<Hyperplane>>,
}

impl ConstraintSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_unconstrained(&self) -> bool {
        self.state_box.is_none()
            && self.input_box.is_none()
            && self.state_halfspaces.iter().all(|l| l.is_empty())
            && self.state_planes.iter().all(|l| l.is_empty())
    }

    pub fn halfspaces_at(&self, k: usize) -> &[HalfSpace] {
        self.state_halfspaces.get(k).map_or(&[], Vec::as_slice)
    }

    pub fn planes_at(&self, k: usize) -> &[Hyperplane] {
        self.state_planes.get(k).map_or(&[], Vec::as_slice)
    }
}

/// A complete linear MPC instance over `N` state knot points.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub model: LtiModel,
    pub cost: CostSpec,
    pub constraints: ConstraintSet,
    /// Horizon length: number of state knot points (`N - 1` inputs).
    pub horizon: usize,
    pub x_init: DVector<f64>,
    /// State references, length `N`.
    pub x_ref: Vec<DVector<f64>>,
    /// Input references, length `N - 1`.
    pub u_ref: Vec<DVector<f64>>,
}

impl MpcProblem {
    /// A problem with zero references and no constraints.
    pub fn regulation(model: LtiModel, cost: CostSpec, horizon: usize, x_init: DVector<f64>) -> Self {
        let n = model.n;
        let m = model.m;
        Self {
            model,
            cost,
            constraints: ConstraintSet::none(),
            horizon,
            x_init,
            x_ref: vec![DVector::zeros(n); horizon],
            u_ref: vec![DVector::zeros(m); horizon.saturating_sub(1)],
        }
    }

    pub fn n(&self) -> usize {
        self.model.n
    }

    pub fn m(&self) -> usize {
        self.model.m
    }

    /// Writes the effective linear state cost for knot `k` into `out`.
    ///
    /// Raw `q_lin` wins over the reference-derived term. The terminal knot
    /// uses `Qf`, interior knots use `Q`.
    pub fn write_linear_state_cost(&self, k: usize, out: &mut nalgebra::DVectorViewMut<f64>) {
        if let Some(q_lin) = &self.cost.q_lin {
            out.copy_from(&q_lin[k]);
        } else {
            let hess = if k + 1 == self.horizon {
                &self.cost.qf
            } else {
                &self.cost.q
            };
            out.gemv(-1.0, hess, &self.x_ref[k], 0.0);
        }
    }

    /// Writes the effective linear input cost for step `k` into `out`.
    pub fn write_linear_input_cost(&self, k: usize, out: &mut nalgebra::DVectorViewMut<f64>) {
        if let Some(r_lin) = &self.cost.r_lin {
            out.copy_from(&r_lin[k]);
        } else {
            out.gemv(-1.0, &self.cost.r, &self.u_ref[k], 0.0);
        }
    }

    /// Effective linear state cost for knot `k` as an owned vector.
    pub fn linear_state_cost(&self, k: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        self.write_linear_state_cost(k, &mut out.column_mut(0));
        out
    }

    /// Effective linear input cost for step `k` as an owned vector.
    pub fn linear_input_cost(&self, k: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        self.write_linear_input_cost(k, &mut out.column_mut(0));
        out
    }
}

/// Counts of decision variables and constraint rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemSize {
    pub num_vars: usize,
    pub num_eq: usize,
    pub num_ineq: usize,
}

/// Closed-form size accounting.
///
/// Variables: `n N + m (N-1)`. Equalities: `n (N-1)` dynamics rows plus one
/// row per hyperplane. Inequalities: two rows per finite box bound per knot
/// (inputs over `N-1` steps, states over `N` knots) plus one row per
/// half-space.
pub fn problem_size(problem: &MpcProblem) -> ProblemSize {
    let n = problem.n();
    let m = problem.m();
    let nn = problem.horizon;
    let num_vars = n * nn + m * (nn - 1);

    let mut num_eq = n * (nn - 1);
    for planes in &problem.constraints.state_planes {
        num_eq += planes.len();
    }

    let mut num_ineq = 0;
    if let Some(bx) = &problem.constraints.input_box {
        num_ineq += bx.finite_bound_rows() * (nn - 1);
    }
    if let Some(bx) = &problem.constraints.state_box {
        num_ineq += bx.finite_bound_rows() * nn;
    }
    for hs in &problem.constraints.state_halfspaces {
        num_ineq += hs.len();
    }

    ProblemSize {
        num_vars,
        num_eq,
        num_ineq,
    }
}

/// Rank of the controllability matrix `[B, AB, ..., A^{n-1}B]`, decided on
/// singular values above `RANK_TOL` relative to the largest.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    let sv = linalg::singular_values(&ctrb);
    let max_sv = sv.max();
    if max_sv <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max_sv).count()
}

/// Evaluates the quadratic-plus-linear objective on a trajectory.
///
/// `x_traj` has `N` columns, `u_traj` has `N - 1`. Linear terms are the
/// problem's effective ones (raw overrides or reference-derived).
pub fn eval_objective(problem: &MpcProblem, x_traj: &DMatrix<f64>, u_traj: &DMatrix<f64>) -> f64 {
    assert_eq!(x_traj.ncols(), problem.horizon, "state trajectory length");
    assert_eq!(
        u_traj.ncols(),
        problem.horizon - 1,
        "input trajectory length"
    );
    let mut j = 0.0;
    for k in 0..problem.horizon {
        let x = x_traj.column(k);
        let hess = if k + 1 == problem.horizon {
            &problem.cost.qf
        } else {
            &problem.cost.q
        };
        j += 0.5 * (hess * x).dot(&x) + problem.linear_state_cost(k).dot(&x);
        if k + 1 < problem.horizon {
            let u = u_traj.column(k);
            j += 0.5 * (&problem.cost.r * u).dot(&u) + problem.linear_input_cost(k).dot(&u);
        }
    }
    j
}

/// Outcome of [`validate`]: an empty violation list means the problem
/// satisfies every type invariant.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            for v in &self.violations {
                writeln!(f, "violation: {v}")?;
            }
            Ok(())
        }
    }
}

fn matrix_finite(m: &DMatrix<f64>) -> bool {
    linalg::all_finite(m.as_slice())
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_shape(
    name: &str,
    mat: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    out: &mut Vec<String>,
) -> bool {
    if mat.shape() != (rows, cols) {
        out.push(format!(
            "{name} has shape {}x{}, expected {rows}x{cols}",
            mat.nrows(),
            mat.ncols()
        ));
        false
    } else if !matrix_finite(mat) {
        out.push(format!("{name} has non-finite entries"));
        false
    } else {
        true
    }
}

/// Checks every type invariant and returns the full list of violations.
///
/// Violations are data, not faults: callers decide how to react.
pub fn validate(problem: &MpcProblem) -> ValidationReport {
    let mut report = ValidationReport::default();

    let n = problem.model.n;
    let m = problem.model.m;
    let nn = problem.horizon;

    if n < 1 {
        report.violations.push("state dimension n must be >= 1".into());
    }
    if m < 1 {
        report.violations.push("input dimension m must be >= 1".into());
    }
    if nn < 2 {
        report.violations.push(format!("horizon N = {nn} must be >= 2"));
    }
    if !(problem.model.dt.is_finite() && problem.model.dt > 0.0) {
        report
            .violations
            .push(format!("dt = {} must be positive and finite", problem.model.dt));
    }

    let mut shapes_ok = true;
    shapes_ok &= check_shape("A", &problem.model.a, n, n, &mut report.violations);
    shapes_ok &= check_shape("B", &problem.model.b, n, m, &mut report.violations);
    shapes_ok &= check_shape("Q", &problem.cost.q, n, n, &mut report.violations);
    shapes_ok &= check_shape("R", &problem.cost.r, m, m, &mut report.violations);
    shapes_ok &= check_shape("Qf", &problem.cost.qf, n, n, &mut report.violations);

    if problem.x_init.len() != n {
        report.violations.push(format!(
            "x_init has length {}, expected {n}",
            problem.x_init.len()
        ));
    } else if !linalg::all_finite(problem.x_init.as_slice()) {
        report.violations.push("x_init has non-finite entries".into());
    }

    if problem.x_ref.len() != nn {
        report.violations.push(format!(
            "reference length mismatch: x_ref has {} entries, expected N = {nn}",
            problem.x_ref.len()
        ));
    }
    for (k, v) in problem.x_ref.iter().enumerate() {
        if v.len() != n {
            report
                .violations
                .push(format!("x_ref[{k}] has length {}, expected {n}", v.len()));
        }
    }
    if problem.u_ref.len() != nn - 1 {
        report.violations.push(format!(
            "reference length mismatch: u_ref has {} entries, expected N-1 = {}",
            problem.u_ref.len(),
            nn - 1
        ));
    }
    for (k, v) in problem.u_ref.iter().enumerate() {
        if v.len() != m {
            report
                .violations
                .push(format!("u_ref[{k}] has length {}, expected {m}", v.len()));
        }
    }
    if let Some(q_lin) = &problem.cost.q_lin {
        if q_lin.len() != nn {
            report.violations.push(format!(
                "q has {} entries, expected N = {nn}",
                q_lin.len()
            ));
        }
        for (k, v) in q_lin.iter().enumerate() {
            if v.len() != n {
                report
                    .violations
                    .push(format!("q[{k}] has length {}, expected {n}", v.len()));
            }
        }
    }
    if let Some(r_lin) = &problem.cost.r_lin {
        if r_lin.len() != nn - 1 {
            report.violations.push(format!(
                "r has {} entries, expected N-1 = {}",
                r_lin.len(),
                nn - 1
            ));
        }
        for (k, v) in r_lin.iter().enumerate() {
            if v.len() != m {
                report
                    .violations
                    .push(format!("r[{k}] has length {}, expected {m}", v.len()));
            }
        }
    }

    // Definiteness checks only make sense once the shapes are right.
    if shapes_ok {
        let scale = |mat: &DMatrix<f64>| f64::max(1.0, linalg::max_abs(mat.as_slice()));
        for (name, mat) in [("Q", &problem.cost.q), ("Qf", &problem.cost.qf)] {
            if max_asymmetry(mat) > SYMMETRY_TOL * scale(mat) {
                report.violations.push(format!("{name} is not symmetric"));
                continue;
            }
            let sym = (mat + mat.transpose()) * 0.5;
            let min_eig = linalg::symmetric_eigenvalues(&sym).min();
            if min_eig < -SYMMETRY_TOL * scale(mat) {
                report.violations.push(format!(
                    "{name} not positive semidefinite (min eigenvalue {min_eig:.3e})"
                ));
            }
        }
        let rmat = &problem.cost.r;
        if max_asymmetry(rmat) > SYMMETRY_TOL * scale(rmat) {
            report.violations.push("R is not symmetric".into());
        } else {
            let sym = (rmat + rmat.transpose()) * 0.5;
            let min_eig = linalg::symmetric_eigenvalues(&sym).min();
            if min_eig <= 1e-12 * scale(rmat) {
                report.violations.push(format!(
                    "R not positive definite (min eigenvalue {min_eig:.3e})"
                ));
            }
        }
    }

    let check_box = |name: &str, bx: &BoxBounds, dim: usize, out: &mut Vec<String>| {
        if bx.lo.len() != dim || bx.hi.len() != dim {
            out.push(format!(
                "{name} bounds have lengths {}/{}, expected {dim}",
                bx.lo.len(),
                bx.hi.len()
            ));
            return;
        }
        for i in 0..dim {
            let (lo, hi) = (bx.lo[i], bx.hi[i]);
            if lo.is_nan() || hi.is_nan() {
                out.push(format!("{name} bound {i} is NaN"));
            } else if lo > hi {
                out.push(format!("{name} bound {i}: lo = {lo} > hi = {hi}"));
            }
        }
    };
    if let Some(bx) = &problem.constraints.state_box {
        check_box("state_box", bx, n, &mut report.violations);
    }
    if let Some(bx) = &problem.constraints.input_box {
        check_box("input_box", bx, m, &mut report.violations);
    }

    let hs_lists = &problem.constraints.state_halfspaces;
    if !hs_lists.is_empty() && hs_lists.len() != nn {
        report.violations.push(format!(
            "state_halfspaces has {} per-step lists, expected N = {nn}",
            hs_lists.len()
        ));
    }
    for (k, list) in hs_lists.iter().enumerate() {
        for (i, hs) in list.iter().enumerate() {
            if hs.a.len() != n {
                report.violations.push(format!(
                    "halfspace[{k}][{i}] normal has length {}, expected {n}",
                    hs.a.len()
                ));
            } else if !linalg::all_finite(hs.a.as_slice()) || !hs.b.is_finite() {
                report
                    .violations
                    .push(format!("halfspace[{k}][{i}] has non-finite entries"));
            } else if hs.a.norm() <= 0.0 {
                report
                    .violations
                    .push(format!("halfspace[{k}][{i}] has zero normal"));
            }
        }
    }
    let plane_lists = &problem.constraints.state_planes;
    if !plane_lists.is_empty() && plane_lists.len() != nn {
        report.violations.push(format!(
            "state_planes has {} per-step lists, expected N = {nn}",
            plane_lists.len()
        ));
    }
    for (k, list) in plane_lists.iter().enumerate() {
        for (i, pl) in list.iter().enumerate() {
            if pl.a.len() != n {
                report.violations.push(format!(
                    "plane[{k}][{i}] normal has length {}, expected {n}",
                    pl.a.len()
                ));
            } else if !linalg::all_finite(pl.a.as_slice()) || !pl.b.is_finite() {
                report
                    .violations
                    .push(format!("plane[{k}][{i}] has non-finite entries"));
            } else if pl.a.norm() <= 0.0 {
                report
                    .violations
                    .push(format!("plane[{k}][{i}] has zero normal"));
            }
        }
    }

    report
}

// ---------------------------------------------------------------------------
// Problem file format (JSON)
// ---------------------------------------------------------------------------

/// Largest accepted state/input dimension in problem files.
pub const MAX_FILE_DIM: usize = 512;
/// Largest accepted horizon in problem files.
pub const MAX_FILE_HORIZON: usize = 100_000;

/// Errors from reading or structurally decoding a problem file. Semantic
/// issues (definiteness, length mismatches) are reported by [`validate`]
/// instead.
#[derive(Debug, Error)]
pub enum FileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field {0} has ragged rows")]
    Ragged(&'static str),
    #[error("declared sizes too large (n, m <= {MAX_FILE_DIM}, N <= {MAX_FILE_HORIZON})")]
    TooLarge,
}

#[derive(Debug, Deserialize)]
struct BoxFile {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct LinRowFile {
    a: Vec<f64>,
    b: f64,
}

#[derive(Debug, Deserialize, Default)]
struct ConstraintsFile {
    input_box: Option<BoxFile>,
    state_box: Option<BoxFile>,
    halfspaces: Option<Vec<Vec<LinRowFile>>>,
    planes: Option<Vec<Vec<LinRowFile>>>,
}

#[derive(Debug, Deserialize)]
struct ProblemFile {
    n: usize,
    m: usize,
    #[serde(rename = "N")]
    horizon: usize,
    dt: f64,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "Qf")]
    qf: Vec<Vec<f64>>,
    q_lin: Option<Vec<Vec<f64>>>,
    r_lin: Option<Vec<Vec<f64>>>,
    x_init: Vec<f64>,
    x_ref: Option<Vec<Vec<f64>>>,
    u_ref: Option<Vec<Vec<f64>>>,
    constraints: Option<ConstraintsFile>,
}

fn matrix_from_rows(name: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, FileError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(FileError::Ragged(name));
    }
    if nrows.saturating_mul(ncols) > MAX_FILE_DIM * MAX_FILE_DIM {
        return Err(FileError::TooLarge);
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

fn vectors_from_rows(rows: &[Vec<f64>]) -> Vec<DVector<f64>> {
    rows.iter()
        .map(|r| DVector::from_column_slice(r))
        .collect()
}

/// Symmetrizes `m` in place; logs a warning when the asymmetry exceeds
/// [`SYMMETRY_TOL`] relative to the largest entry.
fn symmetrize(name: &str, m: &mut DMatrix<f64>) {
    if m.nrows() != m.ncols() {
        return;
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * f64::max(1.0, linalg::max_abs(m.as_slice())) {
        log::warn!("{name} asymmetry {asym:.3e} exceeds tolerance; symmetrizing");
    }
    let sym = (&*m + m.transpose()) * 0.5;
    m.copy_from(&sym);
}

/// Decodes a problem from its JSON document.
///
/// Cost matrices are symmetrized on ingestion. Structural defects (bad JSON,
/// ragged matrices, absurd sizes) are errors; everything else is left for
/// [`validate`].
pub fn parse_problem_json(text: &str) -> Result<MpcProblem, FileError> {
    let file: ProblemFile = serde_json::from_str(text)?;
    if file.n > MAX_FILE_DIM || file.m > MAX_FILE_DIM || file.horizon > MAX_FILE_HORIZON {
        return Err(FileError::TooLarge);
    }
    let a = matrix_from_rows("A", &file.a)?;
    let b = matrix_from_rows("B", &file.b)?;
    let mut q = matrix_from_rows("Q", &file.q)?;
    let mut r = matrix_from_rows("R", &file.r)?;
    let mut qf = matrix_from_rows("Qf", &file.qf)?;
    symmetrize("Q", &mut q);
    symmetrize("R", &mut r);
    symmetrize("Qf", &mut qf);

    let n = file.n;
    let m = file.m;
    let nn = file.horizon;
    let x_ref = match &file.x_ref {
        Some(rows) => vectors_from_rows(rows),
        None => vec![DVector::zeros(n); nn],
    };
    let u_ref = match &file.u_ref {
        Some(rows) => vectors_from_rows(rows),
        None => vec![DVector::zeros(m); nn.saturating_sub(1)],
    };

    let cf = file.constraints.unwrap_or_default();
    let to_box = |bf: &BoxFile| BoxBounds {
        lo: DVector::from_column_slice(&bf.lo),
        hi: DVector::from_column_slice(&bf.hi),
    };
    let constraints = ConstraintSet {
        state_box: cf.state_box.as_ref().map(to_box),
        input_box: cf.input_box.as_ref().map(to_box),
        state_halfspaces: cf
            .halfspaces
            .unwrap_or_default()
            .iter()
            .map(|list| {
                list.iter()
                    .map(|row| HalfSpace::new(DVector::from_column_slice(&row.a), row.b))
                    .collect()
            })
            .collect(),
        state_planes: cf
            .planes
            .unwrap_or_default()
            .iter()
            .map(|list| {
                list.iter()
                    .map(|row| Hyperplane::new(DVector::from_column_slice(&row.a), row.b))
                    .collect()
            })
            .collect(),
    };

    Ok(MpcProblem {
        model: LtiModel {
            a,
            b,
            dt: file.dt,
            n,
            m,
        },
        cost: CostSpec {
            q,
            r,
            qf,
            q_lin: file.q_lin.as_deref().map(vectors_from_rows),
            r_lin: file.r_lin.as_deref().map(vectors_from_rows),
        },
        constraints,
        horizon: nn,
        x_init: DVector::from_column_slice(&file.x_init),
        x_ref,
        u_ref,
    })
}

/// Reads and decodes a problem file from disk.
pub fn load_problem(path: &std::path::Path) -> Result<MpcProblem, FileError> {
    let text = std::fs::read_to_string(path)?;
    parse_problem_json(&text)
}
