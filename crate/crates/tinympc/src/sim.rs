//! Closed-loop receding-horizon quadrotor episodes: figure-eight tracking,
//! extreme-attitude recovery, and dynamic obstacle avoidance with an
//! optional plane constraint.
//!
//! The vehicle model is a hover linearization of rigid-body dynamics with a
//! 3-parameter attitude (rotation-vector deviation from hover), 12 states
//! and 4 normalized motor commands. The plant propagated between MPC steps
//! is the same linear model plus additive Gaussian process noise; inputs
//! are clipped to `[0, 1]` at the plant only — respecting the limits inside
//! the horizon is the solver's job via its input box.
//!
//! State layout: `[position(3), attitude(3), velocity(3), angular rate(3)]`,
//! all as deviations from the hover point (which sits at the origin).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::cache::SolverCache;
use crate::problem::{
    BoxBounds, ConstraintSet, CostSpec, Hyperplane, LtiModel, MpcProblem,
};
use crate::projections::linearize_sphere_obstacle;
use crate::solver::{MpcSolver, Settings, SolveError, SolveStatus};

pub const GRAVITY: f64 = 9.81;
/// Yaw torque per unit thrust (meters of equivalent moment arm).
const YAW_TORQUE_RATIO: f64 = 0.01;
/// Largest accepted episode length in scenario files.
pub const MAX_FILE_STEPS: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad scenario: {0}")]
    BadScenario(String),
    #[error(transparent)]
    Solver(#[from] SolveError),
}

/// Hover-linearized quadrotor: the LTI model plus the hover input it was
/// linearized around. Model states and inputs are deviations; absolute
/// motor commands are `u_hover + du`.
#[derive(Debug, Clone)]
pub struct QuadModel {
    pub model: LtiModel,
    /// Normalized hover command per motor, each in `(0, 1)`.
    pub u_hover: DVector<f64>,
}

/// Physical parameters for the hover linearization.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct QuadParams {
    pub mass: f64,
    pub inertia: [f64; 3],
    pub arm_length: f64,
    /// Max thrust per motor in Newtons; command 1.0 produces this.
    pub thrust_coeff: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        // A 33-gram class vehicle hovering near 59% command.
        Self {
            mass: 0.033,
            inertia: [1.66e-5, 1.66e-5, 2.93e-5],
            arm_length: 0.046,
            thrust_coeff: 0.1375,
        }
    }
}

/// Discrete hover linearization with n = 12 states and m = 4 motor
/// commands.
///
/// The continuous-time coupling chain (rate -> attitude -> velocity ->
/// position) is nilpotent, so the zero-order-hold discretization truncates
/// exactly after the cubic term.
pub fn hover_linearized_model(
    mass: f64,
    inertia_diag: &[f64; 3],
    arm_length: f64,
    thrust_coeff: f64,
    dt: f64,
) -> QuadModel {
    let n = 12;
    let m = 4;
    let mut a_c = DMatrix::<f64>::zeros(n, n);
    for i in 0..3 {
        a_c[(i, 6 + i)] = 1.0; // position <- velocity
        a_c[(3 + i, 9 + i)] = 1.0; // attitude <- angular rate
    }
    // Thrust tilt: pitch accelerates +x, roll accelerates -y.
    a_c[(6, 4)] = GRAVITY;
    a_c[(7, 3)] = -GRAVITY;

    // X-configuration mixer on normalized commands (thrust_coeff newtons at
    // full command). Motor order: front-left, front-right, back-right,
    // back-left; equal commands produce pure thrust.
    let l = arm_length / std::f64::consts::SQRT_2;
    let kt = thrust_coeff;
    #[rustfmt::skip]
    let mix = DMatrix::from_row_slice(3, 4, &[
        -l * kt,                 l * kt,                 l * kt,                -l * kt, // roll
        -l * kt,                -l * kt,                 l * kt,                 l * kt, // pitch
        -YAW_TORQUE_RATIO * kt,  YAW_TORQUE_RATIO * kt, -YAW_TORQUE_RATIO * kt,  YAW_TORQUE_RATIO * kt, // yaw
    ]);
    let mut b_c = DMatrix::<f64>::zeros(n, m);
    for j in 0..m {
        b_c[(8, j)] = kt / mass; // vertical acceleration
        for i in 0..3 {
            b_c[(9 + i, j)] = mix[(i, j)] / inertia_diag[i];
        }
    }

    // Exact ZOH: A = sum A_c^i dt^i / i!, B = (sum A_c^i dt^{i+1}/(i+1)!) B_c,
    // truncation exact because A_c^4 = 0.
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = &a_c * &a_c;
    let a3 = &a2 * &a_c;
    let a = &eye + &a_c * dt + &a2 * (dt * dt / 2.0) + &a3 * (dt * dt * dt / 6.0);
    let b_map = &eye * dt
        + &a_c * (dt * dt / 2.0)
        + &a2 * (dt * dt * dt / 6.0)
        + &a3 * (dt * dt * dt * dt / 24.0);
    let b = b_map * b_c;

    let hover = mass * GRAVITY / (4.0 * kt);
    QuadModel {
        model: LtiModel::new(a, b, dt),
        u_hover: DVector::from_element(4, hover),
    }
}

impl QuadModel {
    pub fn from_params(params: &QuadParams, dt: f64) -> Self {
        hover_linearized_model(
            params.mass,
            &params.inertia,
            params.arm_length,
            params.thrust_coeff,
            dt,
        )
    }
}

/// Lissajous reference: `x = Ax sin(2 pi t / T)`, `y = Ay sin(4 pi t / T)`,
/// velocities by analytic differentiation, everything else zero.
pub fn figure_eight_reference(
    amplitude_x: f64,
    amplitude_y: f64,
    period_s: f64,
    dt: f64,
    steps: usize,
) -> Vec<DVector<f64>> {
    let w1 = 2.0 * std::f64::consts::PI / period_s;
    let w2 = 2.0 * w1;
    (0..steps)
        .map(|k| {
            let t = k as f64 * dt;
            let mut x = DVector::zeros(12);
            x[0] = amplitude_x * (w1 * t).sin();
            x[1] = amplitude_y * (w2 * t).sin();
            x[6] = amplitude_x * w1 * (w1 * t).cos();
            x[7] = amplitude_y * w2 * (w2 * t).cos();
            x
        })
        .collect()
}

/// Pendulum-like sweep through the flight volume: the center starts at full
/// displacement and oscillates along y through the hover point, with a
/// small vertical bob that peaks at each crossing.
pub fn swinging_obstacle_path(
    amplitude_y: f64,
    bob_z: f64,
    period_s: f64,
    dt: f64,
    steps: usize,
) -> Vec<[f64; 3]> {
    let w = 2.0 * std::f64::consts::PI / period_s;
    (0..steps)
        .map(|k| {
            let t = k as f64 * dt;
            let phase = (w * t).cos();
            [0.0, amplitude_y * phase, bob_z * (1.0 - phase * phase)]
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReferenceSpec {
    Hover,
    FigureEight {
        amplitude_x: f64,
        amplitude_y: f64,
        period_s: f64,
    },
}

/// Time-indexed obstacle centers plus the keep-out radius. The path is
/// sampled per control step; a path shorter than the episode holds its last
/// center.
#[derive(Debug, Clone, Deserialize)]
pub struct ObstacleSpec {
    pub radius: f64,
    pub centers: Vec<[f64; 3]>,
}

impl ObstacleSpec {
    fn center_at(&self, step: usize) -> DVector<f64> {
        let idx = step.min(self.centers.len().saturating_sub(1));
        DVector::from_column_slice(&self.centers[idx])
    }
}

/// Process-noise standard deviation per state block.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct NoiseStd {
    #[serde(default)]
    pub pos: f64,
    #[serde(default)]
    pub att: f64,
    #[serde(default = "default_vel_noise")]
    pub vel: f64,
    #[serde(default)]
    pub angvel: f64,
}

fn default_vel_noise() -> f64 {
    1e-3
}

impl Default for NoiseStd {
    fn default() -> Self {
        Self {
            pos: 0.0,
            att: 0.0,
            vel: default_vel_noise(),
            angvel: 0.0,
        }
    }
}

impl NoiseStd {
    pub fn none() -> Self {
        Self {
            pos: 0.0,
            att: 0.0,
            vel: 0.0,
            angvel: 0.0,
        }
    }

    fn for_state(&self, index: usize) -> f64 {
        match index / 3 {
            0 => self.pos,
            1 => self.att,
            2 => self.vel,
            _ => self.angvel,
        }
    }
}

/// One closed-loop episode description.
#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioConfig {
    pub control_rate_hz: f64,
    pub horizon: usize,
    pub reference: ReferenceSpec,
    /// Initial deviation state; defaults to the first reference state.
    pub x_init: Option<Vec<f64>>,
    pub obstacle: Option<ObstacleSpec>,
    #[serde(default)]
    pub plane_constraint: bool,
    #[serde(default)]
    pub noise: NoiseStd,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scenario_rho")]
    pub rho: f64,
    #[serde(default)]
    pub quad: Option<QuadParams>,
    /// Diagonal state cost; defaults to the tuned tracking weights.
    pub q_diag: Option<Vec<f64>>,
    /// Diagonal input cost.
    pub r_diag: Option<Vec<f64>>,
}

fn default_scenario_rho() -> f64 {
    5.0
}

impl ScenarioConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate_hz
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.control_rate_hz > 0.0 && self.control_rate_hz.is_finite()) {
            return Err(SimError::BadScenario(
                "control_rate_hz must be positive".into(),
            ));
        }
        if self.horizon < 2 {
            return Err(SimError::BadScenario("horizon must be >= 2".into()));
        }
        if self.steps == 0 || self.steps > MAX_FILE_STEPS {
            return Err(SimError::BadScenario(format!(
                "steps must be in 1..={MAX_FILE_STEPS}"
            )));
        }
        if let Some(x) = &self.x_init {
            if x.len() != 12 {
                return Err(SimError::BadScenario("x_init must have 12 entries".into()));
            }
        }
        if let Some(ob) = &self.obstacle {
            if !(ob.radius > 0.0 && ob.radius.is_finite()) {
                return Err(SimError::BadScenario(
                    "obstacle radius must be positive".into(),
                ));
            }
            if ob.centers.is_empty() {
                return Err(SimError::BadScenario("obstacle path has no centers".into()));
            }
        }
        if let Some(q) = &self.q_diag {
            if q.len() != 12 {
                return Err(SimError::BadScenario("q_diag must have 12 entries".into()));
            }
        }
        if let Some(r) = &self.r_diag {
            if r.len() != 4 {
                return Err(SimError::BadScenario("r_diag must have 4 entries".into()));
            }
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(SimError::BadScenario("rho must be positive".into()));
        }
        Ok(())
    }

    pub fn cost(&self) -> CostSpec {
        let q_diag = self.q_diag.clone().unwrap_or_else(default_q_diag);
        let r_diag = self.r_diag.clone().unwrap_or_else(default_r_diag);
        CostSpec::new(
            DMatrix::from_diagonal(&DVector::from_vec(q_diag)),
            DMatrix::from_diagonal(&DVector::from_vec(r_diag)),
            DMatrix::identity(12, 12),
        )
    }

    /// The full reference trail: one state per control step plus the
    /// horizon tail.
    pub fn reference_trail(&self) -> Vec<DVector<f64>> {
        let len = self.steps + self.horizon;
        match &self.reference {
            ReferenceSpec::Hover => vec![DVector::zeros(12); len],
            ReferenceSpec::FigureEight {
                amplitude_x,
                amplitude_y,
                period_s,
            } => figure_eight_reference(*amplitude_x, *amplitude_y, *period_s, self.dt(), len),
        }
    }
}

/// Tuned default weights: position tracking dominates, attitude and rates
/// lightly damped.
pub fn default_q_diag() -> Vec<f64> {
    vec![
        100.0, 100.0, 100.0, // position
        4.0, 4.0, 4.0, // attitude
        4.0, 4.0, 4.0, // velocity
        2.0, 2.0, 2.0, // angular rate
    ]
}

pub fn default_r_diag() -> Vec<f64> {
    vec![4.0, 4.0, 4.0, 4.0]
}

/// Decodes a scenario from its JSON document.
pub fn parse_scenario_json(text: &str) -> Result<ScenarioConfig, SimError> {
    let scenario: ScenarioConfig = serde_json::from_str(text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads and decodes a scenario file from disk.
pub fn load_scenario(path: &std::path::Path) -> Result<ScenarioConfig, SimError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario_json(&text)
}

/// Per-step record of one episode.
#[derive(Debug, Clone)]
pub struct StepLog {
    /// True plant state (deviation coordinates).
    pub state: DVector<f64>,
    /// Reference state for this step.
    pub reference: DVector<f64>,
    /// Commanded absolute motor inputs, before the plant clip.
    pub u_cmd: DVector<f64>,
    /// Applied absolute motor inputs, after clipping to `[0, 1]`.
    pub u_applied: DVector<f64>,
    pub iters: usize,
    pub status: SolveStatus,
    pub r_primal: f64,
    pub r_dual: f64,
    pub rho: f64,
    /// Distance from the vehicle to the obstacle center, when present.
    pub obstacle_distance: Option<f64>,
    /// `|x|` position deviation from the plane, when the plane is active.
    pub plane_deviation: Option<f64>,
}

/// Full episode log plus the seed that generated it.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub steps: Vec<StepLog>,
    pub seed: u64,
    pub has_obstacle: bool,
    pub has_plane: bool,
}

/// Summary metrics computed from an episode log.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeMetrics {
    /// RMS position-tracking error over the episode.
    pub tracking_rmse: f64,
    pub max_pos_error: f64,
    /// Largest absolute commanded motor value (pre-clip).
    pub max_input: f64,
    pub min_obstacle_distance: Option<f64>,
    pub max_plane_deviation: Option<f64>,
    pub iters_max: usize,
    pub iters_median: usize,
}

/// Runs one closed-loop episode.
///
/// Per step: rebuild the per-knot constraints (obstacle half-space
/// linearized at the vehicle's current position and the obstacle's current
/// center, optional plane `x = 0`), warm-started solve, apply the first
/// input to the noisy linear plant with a `[0, 1]` clip, log everything.
/// `MaxIters` statuses are logged and the episode continues; non-finite
/// workspace values abort.
pub fn simulate_episode(
    quad: &QuadModel,
    scenario: &ScenarioConfig,
    cache: SolverCache,
    settings: Settings,
) -> Result<EpisodeLog, SimError> {
    scenario.validate()?;
    let horizon = scenario.horizon;
    let trail = scenario.reference_trail();
    let rho = cache.entries[cache.active_index].rho;

    let mut cost = scenario.cost();
    // Terminal cost consistent with the constant-gain pass: the steady-state
    // cost-to-go of the active entry, minus the penalty share.
    cost.qf = &cache.entries[cache.active_index].pinf - DMatrix::identity(12, 12) * rho;

    let input_box = BoxBounds::new(
        -quad.u_hover.clone(),
        DVector::from_element(4, 1.0) - &quad.u_hover,
    );
    // Geometry rows go on future knots only: the initial knot is pinned to
    // the measured state, so a row there can never be repaired by the
    // inputs and would stall the residuals.
    let plane_rows: Vec<Vec<Hyperplane>> = if scenario.plane_constraint {
        let mut normal = DVector::zeros(12);
        normal[0] = 1.0;
        let mut rows = vec![vec![Hyperplane::new(normal, 0.0)]; horizon];
        rows[0].clear();
        rows
    } else {
        Vec::new()
    };

    let mut problem = MpcProblem {
        model: quad.model.clone(),
        cost,
        constraints: ConstraintSet {
            state_box: None,
            input_box: Some(input_box),
            state_halfspaces: Vec::new(),
            state_planes: plane_rows,
        },
        horizon,
        x_init: scenario
            .x_init
            .as_ref()
            .map(|v| DVector::from_column_slice(v))
            .unwrap_or_else(|| trail[0].clone()),
        x_ref: trail[0..horizon].to_vec(),
        u_ref: vec![DVector::zeros(4); horizon - 1],
    };

    let mut solver = MpcSolver::new(cache, horizon, settings);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut state = problem.x_init.clone();
    let mut steps = Vec::with_capacity(scenario.steps);
    for step in 0..scenario.steps {
        problem.x_init.copy_from(&state);
        problem.x_ref.clone_from_slice(&trail[step..step + horizon]);

        let mut obstacle_distance = None;
        if let Some(ob) = &scenario.obstacle {
            let center = ob.center_at(step);
            let pos = DVector::from_column_slice(&state.as_slice()[0..3]);
            obstacle_distance = Some((&pos - &center).norm());
            match linearize_sphere_obstacle(&pos, &center, ob.radius) {
                Ok(hs) => {
                    let full = hs.embed(12, 0);
                    let mut rows = vec![vec![full]; horizon];
                    rows[0].clear();
                    problem.constraints.state_halfspaces = rows;
                }
                Err(_) => {
                    // Vehicle exactly at the center: no tangent plane this
                    // step; keep the previous rows.
                }
            }
        }

        let solution = solver.solve(&problem)?;

        let du = solution.u.column(0);
        let u_cmd = &quad.u_hover + du;
        let u_applied = DVector::from_fn(4, |i, _| u_cmd[i].clamp(0.0, 1.0));
        let du_applied = &u_applied - &quad.u_hover;

        let mut next = &quad.model.a * &state + &quad.model.b * du_applied;
        for i in 0..12 {
            let std = scenario.noise.for_state(i);
            if std > 0.0 {
                next[i] += std * unit_normal.sample(&mut rng);
            }
        }

        steps.push(StepLog {
            state: state.clone(),
            reference: trail[step].clone(),
            u_cmd,
            u_applied,
            iters: solution.iters,
            status: solution.status,
            r_primal: solution.primal_residual,
            r_dual: solution.dual_residual,
            rho: solution.rho_final,
            obstacle_distance,
            plane_deviation: scenario.plane_constraint.then(|| state[0].abs()),
        });
        state = next;
    }

    Ok(EpisodeLog {
        steps,
        seed: scenario.seed,
        has_obstacle: scenario.obstacle.is_some(),
        has_plane: scenario.plane_constraint,
    })
}

/// Deterministic summary metrics from a log.
pub fn episode_metrics(log: &EpisodeLog) -> EpisodeMetrics {
    assert!(!log.steps.is_empty(), "empty episode log");
    let mut sq_sum = 0.0;
    let mut max_pos_error: f64 = 0.0;
    let mut max_input: f64 = 0.0;
    let mut min_obstacle_distance: Option<f64> = None;
    let mut max_plane_deviation: Option<f64> = None;
    let mut iters: Vec<usize> = Vec::with_capacity(log.steps.len());
    for step in &log.steps {
        let err = ((step.state[0] - step.reference[0]).powi(2)
            + (step.state[1] - step.reference[1]).powi(2)
            + (step.state[2] - step.reference[2]).powi(2))
        .sqrt();
        sq_sum += err * err;
        max_pos_error = max_pos_error.max(err);
        max_input = max_input.max(step.u_cmd.amax());
        if let Some(d) = step.obstacle_distance {
            min_obstacle_distance = Some(min_obstacle_distance.map_or(d, |m: f64| m.min(d)));
        }
        if let Some(d) = step.plane_deviation {
            max_plane_deviation = Some(max_plane_deviation.map_or(d, |m: f64| m.max(d)));
        }
        iters.push(step.iters);
    }
    iters.sort_unstable();
    EpisodeMetrics {
        tracking_rmse: (sq_sum / log.steps.len() as f64).sqrt(),
        max_pos_error,
        max_input,
        min_obstacle_distance,
        max_plane_deviation,
        iters_max: *iters.last().unwrap(),
        iters_median: iters[iters.len() / 2],
    }
}

/// Writes the episode CSV. Column order: `step`, the 12 state entries, the
/// 4 pre-clip commands, the 4 applied commands, solver diagnostics, then
/// `obst_dist` and `plane_dev` columns when the scenario has them.
pub fn write_episode_csv<W: Write>(out: &mut W, log: &EpisodeLog) -> std::io::Result<()> {
    let mut header = String::from("step");
    for i in 0..12 {
        header.push_str(&format!(",x_{i}"));
    }
    for i in 0..4 {
        header.push_str(&format!(",ucmd_{i}"));
    }
    for i in 0..4 {
        header.push_str(&format!(",uapp_{i}"));
    }
    header.push_str(",iters,status,r_primal,r_dual,rho");
    if log.has_obstacle {
        header.push_str(",obst_dist");
    }
    if log.has_plane {
        header.push_str(",plane_dev");
    }
    writeln!(out, "{header}")?;
    for (k, s) in log.steps.iter().enumerate() {
        let mut row = format!("{k}");
        for v in s.state.iter() {
            row.push_str(&format!(",{v}"));
        }
        for v in s.u_cmd.iter() {
            row.push_str(&format!(",{v}"));
        }
        for v in s.u_applied.iter() {
            row.push_str(&format!(",{v}"));
        }
        row.push_str(&format!(
            ",{},{},{},{},{}",
            s.iters, s.status, s.r_primal, s.r_dual, s.rho
        ));
        if log.has_obstacle {
            row.push_str(&format!(",{}", s.obstacle_distance.unwrap_or(f64::NAN)));
        }
        if log.has_plane {
            row.push_str(&format!(",{}", s.plane_deviation.unwrap_or(f64::NAN)));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Writes the metrics sidecar as `key=value` lines.
pub fn write_metrics<W: Write>(
    out: &mut W,
    metrics: &EpisodeMetrics,
    seed: u64,
) -> std::io::Result<()> {
    writeln!(out, "seed={seed}")?;
    writeln!(out, "tracking_rmse={}", metrics.tracking_rmse)?;
    writeln!(out, "max_pos_error={}", metrics.max_pos_error)?;
    writeln!(out, "max_input={}", metrics.max_input)?;
    if let Some(d) = metrics.min_obstacle_distance {
        writeln!(out, "min_obstacle_distance={d}")?;
    }
    if let Some(d) = metrics.max_plane_deviation {
        writeln!(out, "max_plane_deviation={d}")?;
    }
    writeln!(out, "iters_max={}", metrics.iters_max)?;
    writeln!(out, "iters_median={}", metrics.iters_median)
}
