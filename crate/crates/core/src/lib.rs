//! Sparse Bayesian learning with dynamic filtering.
//!
//! The crate recovers sparse signals `x` from underdetermined measurements
//! `y = Φx + e` with a hierarchical Gaussian prior whose variances carry
//! inverse-gamma hyperpriors. Feeding a dynamics prediction `x̃` into those
//! hyperpriors turns the static solvers into a causal tracker.
//!
//! * [`model`]: shared types, posterior moments and the objective.
//! * [`em`], [`rwl1`], [`fml`]: the three static solvers.
//! * [`tracker`]: the time-stepping loop.
//! * [`synth`]: seeded generators for the benchmark experiments.
//! * [`container`]: a flat binary file of named `f64` arrays.

mod clock;
pub mod container;
pub mod em;
pub mod error;
pub mod fml;
pub mod linalg;
pub mod model;
pub mod rwl1;
pub mod synth;
pub mod tracker;

pub use em::{solve_em, EmOptions};
pub use error::{Result, SblError};
pub use fml::{solve_fml, FmlOptions};
pub use model::{
    effective_prior_density, map_prediction_to_hyperpriors, neg_log_likelihood, rmse, Dictionary,
    HyperPriors, Prediction, SblEstimate,
};
pub use rwl1::{solve_rwl1, RwlOptions};
pub use tracker::{sbl_df_run, DynamicsModel, LambdaPolicy, SolverKind, TrackerConfig};
