pub mod control;
pub mod estimation;
pub mod grid;
pub mod harness;
pub mod measurement;
pub mod metrics;
