//! Convex model-predictive control solved with ADMM and a precomputed
//! infinite-horizon Riccati cache, so the online loop contains only
//! matrix-vector products.
//!
//! The crate is organized around the solve pipeline:
//!
//! - [`problem`]: problem data (dynamics, costs, constraints, references),
//!   validation, and the JSON problem-file format.
//! - [`cache`]: offline precomputation of the per-penalty Riccati quantities
//!   (`K_inf`, `P_inf`, `C1`, `C2`) that make the online loop
//!   factorization-free.
//! - [`solver`]: the online ADMM loop — backward/forward primal update,
//!   slack projection, dual ascent, residuals, and penalty-ladder switching.
//! - [`projections`]: closed-form Euclidean projections for boxes,
//!   half-spaces, and hyperplanes, plus sphere-obstacle linearization.
//! - [`oracle`]: exact reference solutions for small instances via QP
//!   condensing and exhaustive active-set enumeration.
//! - [`sim`]: closed-loop quadrotor episodes (figure-eight tracking,
//!   attitude recovery, dynamic obstacle avoidance).
//! - [`bench`]: scaling benchmarks over random controllable systems and the
//!   analytic memory model.
//! - [`cli`]: the `tinympc` command-line frontend.

pub mod bench;
pub mod cache;
pub mod cli;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod projections;
pub mod sim;
pub mod solver;

pub use cache::{build_cache, build_entry, riccati_infinite_horizon, RhoCacheEntry, SolverCache};
pub use problem::{
    controllability_rank, eval_objective, problem_size, validate, BoxBounds, ConstraintSet,
    CostSpec, HalfSpace, Hyperplane, LtiModel, MpcProblem, ProblemSize,
};
pub use solver::{MpcSolver, Settings, Solution, SolveError, SolveStatus, Workspace};
