//! Feeder model, AC load flow and the exact sensitivity coefficients that serve
//! as ground truth for estimation and for model-based control.

mod loadflow;
mod network;
mod sensitivity;

pub use loadflow::{solve_load_flow, solve_load_flow_from, solve_load_flow_with, GridState, LoadFlowOptions};
pub use network::{build_admittance, Branch, Bus, NetworkModel};
pub use sensitivity::{finite_difference_sensitivities, true_sensitivities, SensitivityMatrix};

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("network model error: {0}")]
    Model(String),
    #[error("network file parse error: {0}")]
    Parse(String),
    #[error("network file error: {0}")]
    Io(String),
    #[error("invalid load-flow input: {0}")]
    Input(String),
    #[error("load flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("power-flow Jacobian is singular at this operating point")]
    SingularJacobian,
}
