//! Data-mixture weights by convex minimization of ensemble risk.
//!
//! Given per-source proxy models scored on target samples, the weights that
//! minimize the target risk of the weighted ensemble are found by entropic
//! mirror descent on the simplex ([`solver::mixmin_fit`]). Baseline selection
//! methods, synthetic worlds with exact Bayes-optimal models, and file I/O
//! for the `mixmin` command-line tool live alongside.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod io;
pub mod objectives;
pub mod simplex;
pub mod solver;
pub mod synthworld;

pub use error::{Error, Result};
pub use objectives::{LossKind, PredictionMatrix};
pub use simplex::{GradientVector, MixtureWeights};
pub use solver::{mixmin_fit, FitResult, SolverConfig, SolverTrace};
pub use synthworld::CategoricalWorld;
