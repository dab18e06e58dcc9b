//! Scaling benchmarks: random controllable systems, receding-horizon timing
//! sweeps over one problem dimension, and the analytic memory model.
//!
//! Cache construction is never timed — precomputation is an offline stage —
//! and its duration is reported separately. Timing wraps the solve call
//! only, on a monotonic clock.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::cache::{build_cache, CacheError};
use crate::problem::{controllability_rank, BoxBounds, CostSpec, LtiModel, MpcProblem};
use crate::solver::{MpcSolver, Settings};

/// Spectral radius that generated systems are rescaled to.
pub const GENERATED_SPECTRAL_RADIUS: f64 = 0.95;
/// Resampling budget when searching for a controllable system.
pub const GENERATION_ATTEMPTS: usize = 100;
/// Steps in each receding-horizon timing run.
pub const RECEDING_STEPS: usize = 100;
/// Standard deviation of the state-estimate noise injected between steps.
pub const ESTIMATE_NOISE_STD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("failed to generate a controllable ({n}, {m}) system in {attempts} attempts")]
    GenerationFailure { n: usize, m: usize, attempts: usize },
    #[error("bad sweep config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// The problem dimension a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    StateDim,
    InputDim,
    Horizon,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepAxis::StateDim => write!(f, "state_dim"),
            SweepAxis::InputDim => write!(f, "input_dim"),
            SweepAxis::Horizon => write!(f, "horizon"),
        }
    }
}

/// One sweep: vary `axis` over `values`, holding the other two dimensions at
/// their `fixed_*` values.
#[derive(Debug, Clone, Deserialize)]
pub struct BenchConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    #[serde(default = "default_state_dim")]
    pub fixed_state_dim: usize,
    #[serde(default = "default_input_dim")]
    pub fixed_input_dim: usize,
    #[serde(default = "default_horizon")]
    pub fixed_horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol_primal")]
    pub tol_primal: f64,
    #[serde(default = "default_tol_dual")]
    pub tol_dual: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_state_dim() -> usize {
    10
}
fn default_input_dim() -> usize {
    4
}
fn default_horizon() -> usize {
    10
}
fn default_trials() -> usize {
    5
}
fn default_tol_primal() -> f64 {
    1e-4
}
fn default_tol_dual() -> f64 {
    1e-3
}
fn default_max_iters() -> usize {
    4000
}
fn default_rho() -> f64 {
    5.0
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.values.is_empty() {
            return Err(BenchError::BadConfig("values list is empty".into()));
        }
        if self.values.iter().any(|&v| v == 0) {
            return Err(BenchError::BadConfig("axis values must be >= 1".into()));
        }
        if self.axis == SweepAxis::Horizon && self.values.iter().any(|&v| v < 2) {
            return Err(BenchError::BadConfig("horizon values must be >= 2".into()));
        }
        if self.trials == 0 {
            return Err(BenchError::BadConfig("trials must be >= 1".into()));
        }
        if self.fixed_state_dim == 0 || self.fixed_input_dim == 0 || self.fixed_horizon < 2 {
            return Err(BenchError::BadConfig("fixed dimensions out of range".into()));
        }
        Ok(())
    }

    fn dims_for(&self, value: usize) -> (usize, usize, usize) {
        match self.axis {
            SweepAxis::StateDim => (value, self.fixed_input_dim, self.fixed_horizon),
            SweepAxis::InputDim => (self.fixed_state_dim, value, self.fixed_horizon),
            SweepAxis::Horizon => (self.fixed_state_dim, self.fixed_input_dim, value),
        }
    }
}

/// Parses a sweep config from its JSON document.
pub fn parse_bench_config_json(text: &str) -> Result<BenchConfig, BenchError> {
    let config: BenchConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

/// One timed trial at one sweep point.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub trial: usize,
    /// Total ADMM iterations over the receding-horizon run.
    pub iters: usize,
    pub total_us: f64,
    pub per_iter_us: f64,
    pub ws_bytes_pred: usize,
    pub ws_bytes_meas: usize,
    pub cache_bytes: usize,
    /// Offline cache construction time, reported separately from the timed
    /// solves.
    pub cache_build_us: f64,
}

/// Analytic memory estimate for the cache and workspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub cache_bytes: usize,
    pub workspace_bytes: usize,
}

/// Closed-form byte counts.
///
/// Cache: per rho entry `K_inf (mn) + P_inf (n^2) + C1 (m^2) + C2 (n^2) +
/// Q~ (n^2) + R~ (m^2)` doubles, plus the shared `A, B`. Workspace: five
/// state-sized blocks (`x, z, y, p, q`), five input-sized blocks
/// (`u, w, g, d, r`), the previous-slack copies, and the solution
/// trajectory copies — seven of each in total.
pub fn memory_model(n: usize, m: usize, horizon: usize, num_rho_entries: usize) -> MemoryEstimate {
    let per_entry = m * n + n * n + m * m + n * n + n * n + m * m;
    let cache_bytes = num_rho_entries * 8 * per_entry + 8 * (n * n + n * m);
    let state_blocks = horizon * n * 5 + horizon * n + horizon * n;
    let input_blocks = (horizon - 1) * m * 5 + (horizon - 1) * m + (horizon - 1) * m;
    let workspace_bytes = 8 * (state_blocks + input_blocks);
    MemoryEstimate {
        cache_bytes,
        workspace_bytes,
    }
}

/// Samples a random controllable system with entries uniform in `[-1, 1]`
/// and `A` rescaled to spectral radius [`GENERATED_SPECTRAL_RADIUS`].
///
/// Resamples until the controllability matrix has full rank, up to
/// [`GENERATION_ATTEMPTS`] times. Deterministic in `(n, m, seed)`.
pub fn random_controllable_system(n: usize, m: usize, seed: u64) -> Result<LtiModel, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GENERATION_ATTEMPTS {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..=1.0));
        let radius = crate::linalg::spectral_radius(&a);
        if radius < 1e-9 {
            continue;
        }
        a *= GENERATED_SPECTRAL_RADIUS / radius;
        if controllability_rank(&a, &b) == n {
            return Ok(LtiModel::new(a, b, 0.05));
        }
    }
    Err(BenchError::GenerationFailure {
        n,
        m,
        attempts: GENERATION_ATTEMPTS,
    })
}

/// Smooth random reference: first-order-filtered white noise per state.
pub fn smooth_reference(n: usize, len: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut refs = Vec::with_capacity(len);
    let mut current = DVector::zeros(n);
    for _ in 0..len {
        refs.push(current.clone());
        for i in 0..n {
            current[i] = 0.95 * current[i] + 0.1 * normal.sample(&mut rng);
        }
    }
    refs
}

/// A random trajectory-tracking instance: `Q = I`, `R = 0.1 I`, a smooth
/// random state reference, a symmetric input box at fixed bounds, and a
/// random initial state. Deterministic in `(model, N, seed)`.
pub fn tracking_problem(model: &LtiModel, horizon: usize, seed: u64) -> MpcProblem {
    let n = model.n;
    let m = model.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let cost = CostSpec::new(
        DMatrix::identity(n, n),
        DMatrix::identity(m, m) * 0.1,
        DMatrix::identity(n, n),
    );
    let x_ref = smooth_reference(n, horizon, seed);
    let x_init = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    MpcProblem {
        model: model.clone(),
        cost,
        constraints: crate::problem::ConstraintSet {
            input_box: Some(BoxBounds::symmetric(m, 1.0)),
            ..Default::default()
        },
        horizon,
        x_init,
        x_ref,
        u_ref: vec![DVector::zeros(m); horizon - 1],
    }
}

fn trial_seed(base: u64, point: usize, trial: usize) -> u64 {
    // SplitMix-style mix keeps trials decorrelated across points.
    let mut z = base
        .wrapping_add((point as u64) << 32)
        .wrapping_add(trial as u64)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one receding-horizon timing trial; returns `None` when cache
/// construction fails (recorded as a failed trial by the sweep).
fn run_trial(
    n: usize,
    m: usize,
    horizon: usize,
    trial: usize,
    seed: u64,
    config: &BenchConfig,
) -> Result<BenchRecord, BenchError> {
    let model = random_controllable_system(n, m, seed)?;
    let mut problem = tracking_problem(&model, horizon, seed ^ 0x55AA);
    let long_ref = smooth_reference(n, RECEDING_STEPS + horizon, seed ^ 0x33CC);

    let cache_start = Instant::now();
    let cache = build_cache(&model, &problem.cost, config.rho, 1, 5.0)?;
    let cache_build_us = cache_start.elapsed().as_secs_f64() * 1e6;
    let cache_bytes = cache.data_bytes();

    let settings = Settings {
        tol_primal: config.tol_primal,
        tol_dual: config.tol_dual,
        max_iters: config.max_iters,
        warm_start: true,
        ..Settings::default()
    };
    let mut solver = MpcSolver::new(cache, horizon, settings);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77EE);
    let noise = Normal::new(0.0, ESTIMATE_NOISE_STD).unwrap();
    let mut state = problem.x_init.clone();
    let mut total_iters = 0usize;
    let mut total_secs = 0.0f64;
    let mut ws_bytes_meas = 0usize;

    for step in 0..RECEDING_STEPS {
        // Imperfect state estimate feeds the solver.
        problem.x_init = DVector::from_fn(n, |i, _| state[i] + noise.sample(&mut rng));
        problem.x_ref.clone_from_slice(&long_ref[step..step + horizon]);

        let start = Instant::now();
        let solution = solver
            .solve(&problem)
            .expect("finite workspace in benchmark trial");
        total_secs += start.elapsed().as_secs_f64();
        total_iters += solution.iters;
        if step == 0 {
            ws_bytes_meas = solver.workspace().data_bytes() + solution.data_bytes();
        }

        // Plant step with the first input.
        state = &model.a * &state + &model.b * solution.u.column(0);
    }

    let total_us = total_secs * 1e6;
    Ok(BenchRecord {
        n,
        m,
        horizon,
        trial,
        iters: total_iters,
        total_us,
        per_iter_us: total_us / total_iters.max(1) as f64,
        ws_bytes_pred: memory_model(n, m, horizon, 1).workspace_bytes,
        ws_bytes_meas,
        cache_bytes,
        cache_build_us,
    })
}

/// Sweep outcome: per-trial records plus descriptions of failed trials.
#[derive(Debug, Default)]
pub struct SweepResult {
    pub records: Vec<BenchRecord>,
    pub failures: Vec<String>,
}

/// Runs the full sweep. Cache non-convergence fails that trial and the
/// sweep continues; timing is single-threaded to avoid contention skew.
pub fn run_sweep(config: &BenchConfig) -> Result<SweepResult, BenchError> {
    config.validate()?;
    let mut result = SweepResult::default();
    for (point, &value) in config.values.iter().enumerate() {
        let (n, m, horizon) = config.dims_for(value);
        for trial in 0..config.trials {
            let seed = trial_seed(config.seed, point, trial);
            match run_trial(n, m, horizon, trial, seed, config) {
                Ok(record) => result.records.push(record),
                Err(err) => result
                    .failures
                    .push(format!("point (n={n}, m={m}, N={horizon}) trial {trial}: {err}")),
            }
        }
    }
    Ok(result)
}

/// Mean after trimming the top and bottom 20% (scheduler-noise taming).
pub fn trimmed_mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let trim = sorted.len() / 5;
    let kept = &sorted[trim..sorted.len() - trim];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Writes the sweep CSV: `#`-prefixed config echo lines, the fixed header,
/// then one row per trial.
pub fn write_sweep_csv<W: Write>(
    out: &mut W,
    config: &BenchConfig,
    result: &SweepResult,
) -> std::io::Result<()> {
    writeln!(out, "# axis={} values={:?}", config.axis, config.values)?;
    writeln!(
        out,
        "# fixed: n={} m={} N={} trials={} seed={}",
        config.fixed_state_dim,
        config.fixed_input_dim,
        config.fixed_horizon,
        config.trials,
        config.seed
    )?;
    writeln!(
        out,
        "# tol_primal={} tol_dual={} max_iters={} rho={}",
        config.tol_primal, config.tol_dual, config.max_iters, config.rho
    )?;
    writeln!(
        out,
        "n,m,N,trial,iters,total_us,per_iter_us,ws_bytes_pred,ws_bytes_meas,cache_bytes"
    )?;
    for r in &result.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.m,
            r.horizon,
            r.trial,
            r.iters,
            r.total_us,
            r.per_iter_us,
            r.ws_bytes_pred,
            r.ws_bytes_meas,
            r.cache_bytes
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_systems_are_deterministic_and_controllable() {
        let a = random_controllable_system(8, 3, 1).unwrap();
        let b = random_controllable_system(8, 3, 1).unwrap();
        assert_eq!(a.a, b.a);
        assert_eq!(a.b, b.b);
        assert_eq!(controllability_rank(&a.a, &a.b), 8);
    }

    #[test]
    fn generated_spectral_radius_is_pinned() {
        let model = random_controllable_system(6, 2, 42).unwrap();
        let radius = crate::linalg::spectral_radius(&model.a);
        assert!((radius - GENERATED_SPECTRAL_RADIUS).abs() < 1e-9);

        // Independent confirmation via Gelfand's bound: after repeated
        // squaring, the norm growth rate approaches the spectral radius.
        let mut power = model.a.clone();
        let mut exponent = 1u32;
        for _ in 0..12 {
            power = &power * &power;
            exponent *= 2;
            // Rescale to dodge under/overflow; track the scale in logs.
            let norm = power.norm();
            power /= norm;
        }
        // After normalizing each squaring step, reconstruct the radius
        // estimate from a fresh power computation in log space.
        let mut log_norm = 0.0;
        let mut mat = model.a.clone();
        for _ in 0..12 {
            mat = &mat * &mat;
            let norm = mat.norm();
            log_norm = 2.0 * log_norm + norm.ln();
            mat /= norm;
        }
        let gelfand = (log_norm / exponent as f64).exp();
        assert!(
            (gelfand - GENERATED_SPECTRAL_RADIUS).abs() < 5e-3,
            "gelfand estimate {gelfand}"
        );
    }

    #[test]
    fn tracking_problem_is_deterministic_and_valid() {
        let model = random_controllable_system(4, 2, 7).unwrap();
        let p1 = tracking_problem(&model, 6, 9);
        let p2 = tracking_problem(&model, 6, 9);
        assert_eq!(p1.x_init, p2.x_init);
        assert_eq!(p1.x_ref, p2.x_ref);
        assert!(crate::problem::validate(&p1).is_ok());
    }

    #[test]
    fn paper_scale_instance_size() {
        let model = random_controllable_system(10, 4, 3).unwrap();
        let p = tracking_problem(&model, 50, 4);
        let size = crate::problem::problem_size(&p);
        assert_eq!(size.num_vars, 696);
        assert_eq!(size.num_eq, 490);
        assert_eq!(size.num_ineq, 392);
    }

    #[test]
    fn memory_model_shapes() {
        // Cache bytes carry no horizon dependence.
        assert_eq!(
            memory_model(12, 4, 10, 3).cache_bytes,
            memory_model(12, 4, 50, 3).cache_bytes
        );
        // Workspace bytes are affine in the horizon.
        let b10 = memory_model(12, 4, 10, 3).workspace_bytes;
        let b20 = memory_model(12, 4, 20, 3).workspace_bytes;
        let b30 = memory_model(12, 4, 30, 3).workspace_bytes;
        assert_eq!(b20 - b10, b30 - b20);
    }

    #[test]
    fn one_point_sweep_produces_one_row_per_trial() {
        let config = BenchConfig {
            axis: SweepAxis::StateDim,
            values: vec![3],
            fixed_state_dim: 3,
            fixed_input_dim: 1,
            fixed_horizon: 5,
            trials: 1,
            seed: 11,
            tol_primal: 1e-4,
            tol_dual: 1e-3,
            max_iters: 4000,
            rho: 5.0,
        };
        let result = run_sweep(&config).unwrap();
        assert_eq!(result.records.len(), 1);
        assert!(result.failures.is_empty());
        let record = &result.records[0];
        assert!(record.iters > 0);
        assert!((record.per_iter_us - record.total_us / record.iters as f64).abs() < 1e-9);
        // Measured workspace bytes within 5% of the analytic model.
        let pred = record.ws_bytes_pred as f64;
        let meas = record.ws_bytes_meas as f64;
        assert!((meas - pred).abs() / pred < 0.05, "pred {pred}, meas {meas}");

        let mut csv = Vec::new();
        write_sweep_csv(&mut csv, &config, &result).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let data_rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(data_rows, 2); // header + one record
    }

    #[test]
    fn sweep_iteration_counts_reproduce_across_runs() {
        let config = BenchConfig {
            axis: SweepAxis::Horizon,
            values: vec![4, 6],
            fixed_state_dim: 3,
            fixed_input_dim: 1,
            fixed_horizon: 4,
            trials: 2,
            seed: 21,
            tol_primal: 1e-4,
            tol_dual: 1e-3,
            max_iters: 4000,
            rho: 5.0,
        };
        let first = run_sweep(&config).unwrap();
        let second = run_sweep(&config).unwrap();
        let iters = |r: &SweepResult| r.records.iter().map(|x| x.iters).collect::<Vec<_>>();
        assert_eq!(iters(&first), iters(&second));
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(parse_bench_config_json(r#"{"axis": "state_dim", "values": []}"#).is_err());
        assert!(parse_bench_config_json(r#"{"axis": "sideways", "values": [2]}"#).is_err());
        let ok = parse_bench_config_json(
            r#"{"axis": "state_dim", "values": [4, 8], "trials": 2, "seed": 1}"#,
        )
        .unwrap();
        assert_eq!(ok.values, vec![4, 8]);
        assert_eq!(ok.fixed_input_dim, 4);
    }

    #[test]
    fn trimmed_mean_drops_outliers() {
        let samples = vec![1.0, 1.0, 1.0, 1.0, 100.0];
        assert!(trimmed_mean(&samples) < 2.0);
    }
}
