//! Acceptance-probability learning: random-feature kernel logistic
//! regression fitted by penalized IRLS, and estimation of the state
//! distribution.

mod features;
mod irls;
mod state;

pub use features::{rbf_kernel, FeatureMap};
pub use irls::{
    clamped_sigmoid, fit, log_grid, monotonicity_in_state, penalized_objective, sigmoid, softplus, AcceptanceModel,
    BoundModel, FitConfig, FitDiagnostics, HistoryRecord, PROB_CLAMP,
};
pub use state::{
    fit_state_distribution, grid_point, silverman_bandwidth, DiscreteSupport, Kde, StateMode, StateModel, GRID_STEPS,
    MIN_BANDWIDTH,
};
