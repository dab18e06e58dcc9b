//! Offline precomputation: per-penalty infinite-horizon Riccati quantities
//! and the derived matrices that make the online loop factorization-free.
//!
//! For each penalty value `rho` the augmented costs are
//!
//! ```text
//! Q~ = Q + rho I,   R~ = R + rho I,
//! ```
//!
//! and the cached quantities are the Riccati fixed point `(K_inf, P_inf)` of
//! the augmented problem together with
//!
//! ```text
//! C1 = (R~ + B' P_inf B)^-1,   C2 = (A - B K_inf)'.
//! ```

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg;
use crate::problem::{controllability_rank, CostSpec, LtiModel};

/// Default max-abs convergence tolerance for the Riccati fixed point.
pub const RICCATI_TOL: f64 = 1e-10;
/// Default iteration cap for the Riccati fixed point.
pub const RICCATI_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error(
        "Riccati recursion did not converge in {max_iters} iterations \
         (last residual {residual:.3e}); the system may be unstabilizable or badly scaled"
    )]
    NonConvergence { max_iters: usize, residual: f64 },
    #[error("augmented input cost R + rho I is not positive definite")]
    NotPositiveDefinite,
    #[error("ladder size must be an odd positive integer, got {0}")]
    BadLadderSize(usize),
    #[error("ladder factor must exceed 1, got {0}")]
    BadLadderFactor(f64),
    #[error("rho must be positive, got {0}")]
    BadRho(f64),
}

/// Cached matrices for one penalty value.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoCacheEntry {
    pub rho: f64,
    /// Infinite-horizon feedback gain, `m x n`.
    pub kinf: DMatrix<f64>,
    /// Infinite-horizon cost-to-go Hessian, `n x n`.
    pub pinf: DMatrix<f64>,
    /// `(R~ + B' P_inf B)^-1`, `m x m`.
    pub c1: DMatrix<f64>,
    /// `(A - B K_inf)'`, `n x n`.
    pub c2: DMatrix<f64>,
    /// `Q + rho I`.
    pub q_aug: DMatrix<f64>,
    /// `R + rho I`.
    pub r_aug: DMatrix<f64>,
}

impl RhoCacheEntry {
    /// Max-abs residual of the Riccati fixed point
    /// `P = Q~ + K' R~ K + (A - B K)' P (A - B K)`.
    pub fn riccati_residual(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let closed = a - b * &self.kinf;
        let rhs = &self.q_aug
            + self.kinf.transpose() * &self.r_aug * &self.kinf
            + closed.transpose() * &self.pinf * &closed;
        linalg::max_abs_diff(self.pinf.as_slice(), rhs.as_slice())
    }

    /// Heap bytes held by this entry's matrices.
    pub fn data_bytes(&self) -> usize {
        8 * (self.kinf.len()
            + self.pinf.len()
            + self.c1.len()
            + self.c2.len()
            + self.q_aug.len()
            + self.r_aug.len())
    }
}

/// An ascending ladder of per-rho cache entries sharing one model.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverCache {
    /// Entries in strictly ascending rho order.
    pub entries: Vec<RhoCacheEntry>,
    /// Default starting rung (the ladder midpoint). Per-solve position is
    /// tracked in the solver workspace, not here.
    pub active_index: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl SolverCache {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn entry(&self, index: usize) -> &RhoCacheEntry {
        &self.entries[index]
    }

    /// Heap bytes held by all entries plus the model matrices.
    pub fn data_bytes(&self) -> usize {
        self.entries
            .iter()
            .map(RhoCacheEntry::data_bytes)
            .sum::<usize>()
            + 8 * (self.a.len() + self.b.len())
    }
}

/// Iterates the Riccati recursion to its fixed point.
///
/// Starts at `P = Q_aug`, repeats
///
/// ```text
/// K = (R_aug + B' P B)^-1 (B' P A)
/// P <- Q_aug + K' R_aug K + (A - B K)' P (A - B K)
/// ```
///
/// until `max |P+ - P| < tol`, then recomputes the gain from the converged
/// `P`. Returns `(K_inf, P_inf, iterations)`.
pub fn riccati_infinite_horizon(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_aug: &DMatrix<f64>,
    r_aug: &DMatrix<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, usize), CacheError> {
    let n = a.nrows();
    if controllability_rank(a, b) < n {
        log::warn!(
            "(A, B) pair is not controllable (rank {} of {}); Riccati iteration may stall",
            controllability_rank(a, b),
            n
        );
    }

    let bt = b.transpose();
    let mut p = q_aug.clone();
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iters {
        let gram = r_aug + &bt * &p * b;
        let k = linalg::spd_solve(&gram, &(&bt * &p * a)).ok_or(CacheError::NotPositiveDefinite)?;
        let closed = a - b * &k;
        let p_next = q_aug + k.transpose() * r_aug * &k + closed.transpose() * &p * &closed;
        residual = linalg::max_abs_diff(p.as_slice(), p_next.as_slice());
        p = p_next;
        if residual < tol {
            let gram = r_aug + &bt * &p * b;
            let kinf =
                linalg::spd_solve(&gram, &(&bt * &p * a)).ok_or(CacheError::NotPositiveDefinite)?;
            return Ok((kinf, p, iter));
        }
    }
    Err(CacheError::NonConvergence {
        max_iters,
        residual,
    })
}

/// Builds the cache entry for one penalty value.
pub fn build_entry(model: &LtiModel, cost: &CostSpec, rho: f64) -> Result<RhoCacheEntry, CacheError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(CacheError::BadRho(rho));
    }
    let n = model.n;
    let m = model.m;
    let q_aug = &cost.q + DMatrix::identity(n, n) * rho;
    let r_aug = &cost.r + DMatrix::identity(m, m) * rho;
    let (kinf, pinf, _) = riccati_infinite_horizon(
        &model.a,
        &model.b,
        &q_aug,
        &r_aug,
        RICCATI_TOL,
        RICCATI_MAX_ITERS,
    )?;
    let gram = &r_aug + model.b.transpose() * &pinf * &model.b;
    let c1 = linalg::spd_inverse(&gram).ok_or(CacheError::NotPositiveDefinite)?;
    let c2 = (&model.a - &model.b * &kinf).transpose();
    Ok(RhoCacheEntry {
        rho,
        kinf,
        pinf,
        c1,
        c2,
        q_aug,
        r_aug,
    })
}

/// Builds a geometric rho ladder centered on `rho_base`.
///
/// Entries sit at `rho_base * ladder_factor^i` for
/// `i in {-(L-1)/2, ..., +(L-1)/2}`; `active_index` points at the middle.
pub fn build_cache(
    model: &LtiModel,
    cost: &CostSpec,
    rho_base: f64,
    ladder_size: usize,
    ladder_factor: f64,
) -> Result<SolverCache, CacheError> {
    if ladder_size == 0 || ladder_size % 2 == 0 {
        return Err(CacheError::BadLadderSize(ladder_size));
    }
    if ladder_size > 1 && !(ladder_factor > 1.0) {
        return Err(CacheError::BadLadderFactor(ladder_factor));
    }
    if !(rho_base > 0.0 && rho_base.is_finite()) {
        return Err(CacheError::BadRho(rho_base));
    }
    let half = (ladder_size - 1) / 2;
    let mut entries = Vec::with_capacity(ladder_size);
    for i in 0..ladder_size {
        let exp = i as i32 - half as i32;
        let rho = rho_base * ladder_factor.powi(exp);
        entries.push(build_entry(model, cost, rho)?);
    }
    Ok(SolverCache {
        entries,
        active_index: half,
        a: model.a.clone(),
        b: model.b.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    const GOLDEN: f64 = 1.618033988749895; // (1 + sqrt 5) / 2

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn double_integrator(dt: f64) -> LtiModel {
        LtiModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, dt]),
            dt,
        )
    }

    #[test]
    fn scalar_riccati_reaches_golden_ratio() {
        let (kinf, pinf, iters) = riccati_infinite_horizon(
            &scalar(1.0),
            &scalar(1.0),
            &scalar(1.0),
            &scalar(1.0),
            1e-12,
            10_000,
        )
        .unwrap();
        assert_relative_eq!(pinf[(0, 0)], GOLDEN, epsilon = 1e-10);
        assert_relative_eq!(kinf[(0, 0)], GOLDEN - 1.0, epsilon = 1e-10);
        assert!(iters < 100);
    }

    #[test]
    fn deadbeat_system_is_stationary() {
        // A = 0 makes the recursion stationary at P = Q_aug immediately.
        let q0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let (kinf, pinf, iters) = riccati_infinite_horizon(
            &DMatrix::zeros(2, 2),
            &DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            &q0,
            &scalar(1.0),
            1e-12,
            100,
        )
        .unwrap();
        assert_relative_eq!(pinf, q0, epsilon = 1e-12);
        assert_relative_eq!(kinf.norm(), 0.0, epsilon = 1e-12);
        assert_eq!(iters, 1);
    }

    #[test]
    fn double_integrator_matches_plain_fixed_point_iteration() {
        // Brute-force oracle: iterate the recursion a fixed large number of
        // times with no early exit and compare.
        let model = double_integrator(0.1);
        let rho = 1.0;
        let q_aug = DMatrix::identity(2, 2) + DMatrix::identity(2, 2) * rho;
        let r_aug = scalar(1.0 + rho);

        let bt = model.b.transpose();
        let mut p = q_aug.clone();
        for _ in 0..10_000 {
            let gram = &r_aug + &bt * &p * &model.b;
            let k = gram.cholesky().unwrap().solve(&(&bt * &p * &model.a));
            let closed = &model.a - &model.b * &k;
            p = &q_aug + k.transpose() * &r_aug * &k + closed.transpose() * &p * &closed;
        }

        let (_, pinf, _) =
            riccati_infinite_horizon(&model.a, &model.b, &q_aug, &r_aug, 1e-14, 10_000).unwrap();
        assert!(linalg::max_abs_diff(p.as_slice(), pinf.as_slice()) < 1e-10);
    }

    #[test]
    fn nonconvergence_is_reported_for_unstabilizable_system() {
        // Unstable mode with no input authority: A = 2, B = 0.
        let err = riccati_infinite_horizon(
            &scalar(2.0),
            &scalar(0.0),
            &scalar(1.0),
            &scalar(1.0),
            1e-12,
            50,
        )
        .unwrap_err();
        assert!(matches!(err, CacheError::NonConvergence { .. }));
    }

    #[test]
    fn entry_c1_approaches_rho_zero_limit() {
        // With rho -> 0 on the golden-ratio system, C1 -> 1/(1 + Pinf).
        let model = LtiModel::new(scalar(1.0), scalar(1.0), 1.0);
        let cost = CostSpec::new(scalar(1.0), scalar(1.0), scalar(1.0));
        let entry = build_entry(&model, &cost, 1e-9).unwrap();
        assert_relative_eq!(entry.c1[(0, 0)], 1.0 / (1.0 + GOLDEN), epsilon = 1e-7);
        assert_relative_eq!(entry.kinf[(0, 0)], GOLDEN - 1.0, epsilon = 1e-7);
    }

    #[test]
    fn zero_input_map_forces_structure() {
        // B = 0 on a stable system: Kinf = 0, C2 = A', C1 = R_aug^-1.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let model = LtiModel::new(a.clone(), DMatrix::zeros(2, 1), 1.0);
        let cost = CostSpec::new(DMatrix::identity(2, 2), scalar(2.0), DMatrix::identity(2, 2));
        let entry = build_entry(&model, &cost, 1.0).unwrap();
        assert_relative_eq!(entry.kinf.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(entry.c2, a.transpose(), epsilon = 1e-12);
        assert_relative_eq!(entry.c1[(0, 0)], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn entry_invariants_hold_on_double_integrator_ladder() {
        let model = double_integrator(0.1);
        let cost = CostSpec::new(
            DMatrix::identity(2, 2),
            scalar(0.5),
            DMatrix::identity(2, 2),
        );
        let cache = build_cache(&model, &cost, 5.0, 5, 5.0).unwrap();
        assert_eq!(cache.entries.len(), 5);
        assert_eq!(cache.active_index, 2);
        let rhos: Vec<f64> = cache.entries.iter().map(|e| e.rho).collect();
        assert_relative_eq!(rhos[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(rhos[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(rhos[2], 5.0, epsilon = 1e-12);
        assert_relative_eq!(rhos[3], 25.0, epsilon = 1e-12);
        assert_relative_eq!(rhos[4], 125.0, epsilon = 1e-12);

        for entry in &cache.entries {
            // Riccati fixed point.
            assert!(entry.riccati_residual(&cache.a, &cache.b) < 1e-8);
            // C1 behaves as the inverse.
            let gram = &entry.r_aug + cache.b.transpose() * &entry.pinf * &cache.b;
            let eye_err = &entry.c1 * gram - DMatrix::identity(1, 1);
            assert!(linalg::max_abs(eye_err.as_slice()) < 1e-9);
            // Closed loop is strictly stable.
            let closed = &cache.a - &cache.b * &entry.kinf;
            assert!(linalg::spectral_radius(&closed) < 1.0);
            // Pinf symmetric PSD.
            let asym = linalg::max_abs_diff(
                entry.pinf.as_slice(),
                entry.pinf.transpose().as_slice(),
            );
            assert!(asym < 1e-9);
            assert!(linalg::symmetric_eigenvalues(&entry.pinf).min() > -1e-10);
        }

        // Riccati monotonicity: larger rho gives larger Pinf (PSD ordering).
        for pair in cache.entries.windows(2) {
            let diff = &pair[1].pinf - &pair[0].pinf;
            let sym = (&diff + diff.transpose()) * 0.5;
            assert!(linalg::symmetric_eigenvalues(&sym).min() >= -1e-8);
        }
    }

    #[test]
    fn single_entry_ladder_is_allowed() {
        let model = double_integrator(0.1);
        let cost = CostSpec::new(
            DMatrix::identity(2, 2),
            scalar(1.0),
            DMatrix::identity(2, 2),
        );
        let cache = build_cache(&model, &cost, 2.0, 1, 5.0).unwrap();
        assert_eq!(cache.entries.len(), 1);
        assert_eq!(cache.active_index, 0);
    }

    #[test]
    fn even_ladder_size_is_rejected() {
        let model = double_integrator(0.1);
        let cost = CostSpec::new(
            DMatrix::identity(2, 2),
            scalar(1.0),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(
            build_cache(&model, &cost, 2.0, 4, 5.0),
            Err(CacheError::BadLadderSize(4))
        ));
    }

    #[test]
    fn cache_bytes_do_not_depend_on_horizon() {
        // The cache stores no per-knot data, so its size is a function of
        // (n, m, ladder) only; this pins the accounting used by the memory
        // model.
        let model = double_integrator(0.05);
        let cost = CostSpec::new(
            DMatrix::identity(2, 2),
            scalar(1.0),
            DMatrix::identity(2, 2),
        );
        let cache = build_cache(&model, &cost, 5.0, 3, 5.0).unwrap();
        let n = 2;
        let m = 1;
        let per_entry = 8 * (m * n + n * n + m * m + n * n + n * n + m * m);
        assert_eq!(cache.data_bytes(), 3 * per_entry + 8 * (n * n + n * m));
    }

    #[test]
    fn quadrotor_scale_entry_meets_residual_budget() {
        // A 12-state hover-like chain with 4 inputs; mirrors the simulator
        // model's structure without depending on it.
        let dt = 0.01;
        let mut a = DMatrix::<f64>::identity(12, 12);
        for i in 0..3 {
            a[(i, 6 + i)] = dt; // position <- velocity
            a[(3 + i, 9 + i)] = dt; // attitude <- angular rate
        }
        a[(6, 4)] = 9.81 * dt;
        a[(7, 3)] = -9.81 * dt;
        let mut b = DMatrix::<f64>::zeros(12, 4);
        for j in 0..4 {
            b[(8, j)] = 4.0 * dt;
        }
        b[(9, 0)] = -40.0 * dt;
        b[(9, 1)] = 40.0 * dt;
        b[(9, 2)] = 40.0 * dt;
        b[(9, 3)] = -40.0 * dt;
        b[(10, 0)] = -40.0 * dt;
        b[(10, 1)] = -40.0 * dt;
        b[(10, 2)] = 40.0 * dt;
        b[(10, 3)] = 40.0 * dt;
        b[(11, 0)] = -10.0 * dt;
        b[(11, 1)] = 10.0 * dt;
        b[(11, 2)] = -10.0 * dt;
        b[(11, 3)] = 10.0 * dt;
        let model = LtiModel::new(a, b, dt);
        assert_eq!(controllability_rank(&model.a, &model.b), 12);

        let q = DMatrix::from_diagonal(&DVector::from_iterator(
            12,
            (0..12).map(|i| if i < 3 { 100.0 } else { 4.0 }),
        ));
        let cost = CostSpec::new(q, DMatrix::identity(4, 4) * 4.0, DMatrix::identity(12, 12));
        let entry = build_entry(&model, &cost, 5.0).unwrap();
        assert!(entry.riccati_residual(&model.a, &model.b) < 1e-8);
    }
}
