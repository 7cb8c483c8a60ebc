//! PV dispatch under linearized voltage constraints.
//!
//! Each control period a QP picks active and reactive setpoints that track the
//! available power while keeping the predicted voltages in band. The robust
//! variant guards the prediction against interval-valued coefficients.

mod dispatch;
pub mod qp;

pub use dispatch::{
    apply_decision, build_nonrobust, build_robust, solve_dispatch, ControlDecision,
    DecisionStatus, DispatchOptions, DispatchProblem, NodeConstraint, PlantInputs,
    ProtectionForm, PvPlant, VoltageConstraintSet,
};
pub use qp::{solve_qp, solve_qp_with, QpError, QpOptions, QpProblem, QpSolution, QpStatus};

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("invalid dispatch input: {0}")]
    Input(String),
    #[error("no coefficients for a plant bus at constrained node {0}")]
    MissingCoefficients(usize),
    #[error(transparent)]
    Qp(#[from] QpError),
}
