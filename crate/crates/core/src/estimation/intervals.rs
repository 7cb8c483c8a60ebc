use serde::{Deserialize, Serialize};

use super::EstimatorState;

/// Estimated coefficient rows of one node with symmetric half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub node: usize,
    pub kp: Vec<f64>,
    pub kq: Vec<f64>,
    pub dkp: Vec<f64>,
    pub dkq: Vec<f64>,
}

impl CoefficientEstimate {
    /// Exact coefficients with zero half-widths.
    pub fn exact(node: usize, kp: Vec<f64>, kq: Vec<f64>) -> Self {
        let n = kp.len();
        Self { node, kp, kq, dkp: vec![0.0; n], dkq: vec![0.0; n] }
    }

    pub fn n_nodes(&self) -> usize {
        self.kp.len()
    }
}

/// Number of standard deviations in a half-width (99 % two-sided).
pub const INTERVAL_SIGMAS: f64 = 3.0;

/// Half-widths `3 σ_r sqrt(diag P)`; negative diagonal round-off counts as zero.
pub fn coefficient_intervals(s: &EstimatorState) -> CoefficientEstimate {
    let n = s.n_params() / 2;
    let half: Vec<f64> =
        s.p.diagonal().iter().map(|d| INTERVAL_SIGMAS * s.sigma_r * d.max(0.0).sqrt()).collect();
    CoefficientEstimate {
        node: s.node,
        kp: s.x.rows(0, n).iter().copied().collect(),
        kq: s.x.rows(n, n).iter().copied().collect(),
        dkp: half[..n].to_vec(),
        dkq: half[n..].to_vec(),
    }
}
