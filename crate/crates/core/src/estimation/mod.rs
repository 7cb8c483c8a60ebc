//! Measurement-based estimation of voltage sensitivity coefficients.
//!
//! For a monitored node `i` the voltage-magnitude difference between two
//! consecutive samples is regressed on the injection differences of every
//! non-slack bus: `dV_i ≈ [dP | dQ] · [K^P_i ; K^Q_i]`. An offline ridge fit
//! over historical data initializes one of the recursive schemes, whose
//! covariance and residual scale give the coefficient intervals.

mod intervals;
mod ls;
mod online;
mod regressor;
mod rls;

pub use intervals::{coefficient_intervals, CoefficientEstimate, INTERVAL_SIGMAS};
pub use ls::{ls_estimate, NormalEquations};
pub use online::OnlineEstimator;
pub use regressor::{build_regressor_window, difference_row, RegressorWindow};
pub use rls::{
    rls_step_ct, rls_step_df, rls_step_f, rls_step_sf, selective_map, EstimatorState, Variant,
    DF_GUARD,
};

#[derive(Debug, thiserror::Error)]
pub enum EstimationError {
    #[error("regressor window: {0}")]
    Window(String),
    #[error("information matrix is rank deficient with lambda = {lambda}; use lambda > 0")]
    RankDeficient { lambda: f64 },
    #[error("invalid estimator parameter: {0}")]
    Parameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
