use nalgebra::{DMatrix, DVector};

use super::EstimationError;
use crate::measurement::MeasurementSample;

/// Stacked first differences for one monitored node.
///
/// Row `k` of `h` is `[dP_k | dQ_k]` over all non-slack buses and `gamma[k]`
/// is the matching voltage-magnitude difference of `node`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorWindow {
    pub node: usize,
    pub h: DMatrix<f64>,
    pub gamma: DVector<f64>,
}

impl RegressorWindow {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.h.ncols()
    }
}

/// Regressor row `[P_k - P_{k-1} | Q_k - Q_{k-1}]` written into `out`.
pub fn difference_row(prev: &MeasurementSample, cur: &MeasurementSample, out: &mut DVector<f64>) {
    let n = cur.p.len();
    for j in 0..n {
        out[j] = cur.p[j] - prev.p[j];
        out[n + j] = cur.q[j] - prev.q[j];
    }
}

pub fn build_regressor_window(
    samples: &[MeasurementSample],
    node: usize,
) -> Result<RegressorWindow, EstimationError> {
    if samples.len() < 2 {
        return Err(EstimationError::Window(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].p.len();
    if node >= n {
        return Err(EstimationError::Window(format!("node {node} out of range for {n} nodes")));
    }
    if samples.iter().any(|s| s.p.len() != n || s.q.len() != n || s.v.len() != n) {
        return Err(EstimationError::Window("samples have inconsistent lengths".into()));
    }
    if samples.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(EstimationError::Window("timestamps must be strictly increasing".into()));
    }
    let rows = samples.len() - 1;
    let mut h = DMatrix::zeros(rows, 2 * n);
    let mut gamma = DVector::zeros(rows);
    let mut row = DVector::zeros(2 * n);
    for (k, pair) in samples.windows(2).enumerate() {
        difference_row(&pair[0], &pair[1], &mut row);
        h.row_mut(k).copy_from(&row.transpose());
        gamma[k] = pair[1].v[node] - pair[0].v[node];
    }
    Ok(RegressorWindow { node, h, gamma })
}
