//! Estimation accuracy, interval quality and control statistics.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ ({0} vs {1})")]
    Length(usize, usize),
    #[error("series is empty")]
    Empty,
    #[error("reference has zero norm")]
    ZeroNorm,
    #[error("negative half-width at step {0}")]
    NegativeWidth(usize),
}

/// `‖truth − estimate‖₂ / ‖truth‖₂`.
pub fn rmse(truth: &[f64], estimate: &[f64]) -> Result<f64, MetricsError> {
    if truth.len() != estimate.len() {
        return Err(MetricsError::Length(truth.len(), estimate.len()));
    }
    let norm = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    let err = truth.iter().zip(estimate).map(|(t, e)| (t - e) * (t - e)).sum::<f64>().sqrt();
    Ok(err / norm)
}

/// Per-step truth, estimate and half-width of one interval-valued quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSeries {
    pub truth: Vec<f64>,
    pub estimate: Vec<f64>,
    pub half_width: Vec<f64>,
    /// Width normalization; the largest `|truth|` unless set explicitly.
    pub k_max: f64,
}

impl IntervalSeries {
    pub fn new(truth: Vec<f64>, estimate: Vec<f64>, half_width: Vec<f64>) -> Result<Self, MetricsError> {
        let k_max = truth.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        Self::with_k_max(truth, estimate, half_width, k_max)
    }

    pub fn with_k_max(
        truth: Vec<f64>,
        estimate: Vec<f64>,
        half_width: Vec<f64>,
        k_max: f64,
    ) -> Result<Self, MetricsError> {
        if truth.is_empty() {
            return Err(MetricsError::Empty);
        }
        if estimate.len() != truth.len() {
            return Err(MetricsError::Length(truth.len(), estimate.len()));
        }
        if half_width.len() != truth.len() {
            return Err(MetricsError::Length(truth.len(), half_width.len()));
        }
        if let Some(k) = half_width.iter().position(|w| !(*w >= 0.0)) {
            return Err(MetricsError::NegativeWidth(k));
        }
        Ok(Self { truth, estimate, half_width, k_max })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// Fraction of steps whose true value lies inside the interval.
pub fn picp(s: &IntervalSeries) -> f64 {
    let inside = (0..s.len())
        .filter(|&k| (s.truth[k] - s.estimate[k]).abs() <= s.half_width[k])
        .count();
    inside as f64 / s.len() as f64
}

/// `Σ 2Δ / (N · K_max)`.
pub fn pinaw(s: &IntervalSeries) -> Result<f64, MetricsError> {
    if s.k_max == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    let total: f64 = s.half_width.iter().map(|w| 2.0 * w).sum();
    Ok(total / (s.len() as f64 * s.k_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CwcParams {
    pub alpha: f64,
    pub nu: f64,
    /// Penalize over-coverage instead of under-coverage.
    pub literal: bool,
}

impl Default for CwcParams {
    fn default() -> Self {
        Self { alpha: 0.99, nu: 50.0, literal: false }
    }
}

/// `PINAW · (1 + η e^{−ν (PICP − α)})`.
pub fn cwc(picp: f64, pinaw: f64, params: &CwcParams) -> f64 {
    let under = picp < params.alpha;
    let eta = if under != params.literal { 1.0 } else { 0.0 };
    pinaw * (1.0 + eta * (-params.nu * (picp - params.alpha)).exp())
}

/// Interval metrics of one coefficient series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalScores {
    pub rmse: f64,
    pub picp: f64,
    pub pinaw: f64,
    pub cwc: f64,
}

pub fn score_intervals(s: &IntervalSeries, params: &CwcParams) -> Result<IntervalScores, MetricsError> {
    let r = rmse(&s.truth, &s.estimate)?;
    let c = picp(s);
    let w = pinaw(s)?;
    Ok(IntervalScores { rmse: r, picp: c, pinaw: w, cwc: cwc(c, w, params) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVoltageSummary {
    pub node: u32,
    pub v_max: f64,
    pub v_min: f64,
    pub over_steps: u64,
    pub under_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub nodes: Vec<NodeVoltageSummary>,
    pub max_voltage: f64,
    pub min_voltage: f64,
    /// Steps where any node is outside the band.
    pub violation_steps: u64,
    pub steps: u64,
    pub curtailed_kwh: f64,
    pub reactive_kvarh: f64,
    pub available_kwh: f64,
}

/// Streaming aggregation of post-control voltages and plant outputs.
#[derive(Debug, Clone)]
pub struct ControlAccumulator {
    v_min: f64,
    v_max: f64,
    base_va: f64,
    nodes: Vec<NodeVoltageSummary>,
    violation_steps: u64,
    steps: u64,
    curtailed_pu_s: f64,
    reactive_pu_s: f64,
    available_pu_s: f64,
}

impl ControlAccumulator {
    pub fn new(node_ids: &[u32], v_min: f64, v_max: f64, base_va: f64) -> Self {
        Self {
            v_min,
            v_max,
            base_va,
            nodes: node_ids
                .iter()
                .map(|&node| NodeVoltageSummary {
                    node,
                    v_max: f64::NEG_INFINITY,
                    v_min: f64::INFINITY,
                    over_steps: 0,
                    under_steps: 0,
                })
                .collect(),
            violation_steps: 0,
            steps: 0,
            curtailed_pu_s: 0.0,
            reactive_pu_s: 0.0,
            available_pu_s: 0.0,
        }
    }

    /// One step of duration `dt` seconds; plant slices are in plant order.
    pub fn push(&mut self, voltages: &[f64], mpp: &[f64], p_pv: &[f64], q_pv: &[f64], dt: f64) {
        let mut violated = false;
        for (s, &v) in self.nodes.iter_mut().zip(voltages) {
            s.v_max = s.v_max.max(v);
            s.v_min = s.v_min.min(v);
            if v > self.v_max {
                s.over_steps += 1;
                violated = true;
            }
            if v < self.v_min {
                s.under_steps += 1;
                violated = true;
            }
        }
        self.violation_steps += violated as u64;
        self.steps += 1;
        for j in 0..mpp.len() {
            self.available_pu_s += mpp[j] * dt;
            self.curtailed_pu_s += (mpp[j] - p_pv[j]).max(0.0) * dt;
            self.reactive_pu_s += q_pv[j].abs() * dt;
        }
    }

    pub fn finish(self) -> ControlReport {
        let to_kwh = self.base_va / 3.6e6;
        let max_voltage = self.nodes.iter().fold(f64::NEG_INFINITY, |m, s| m.max(s.v_max));
        let min_voltage = self.nodes.iter().fold(f64::INFINITY, |m, s| m.min(s.v_min));
        ControlReport {
            nodes: self.nodes,
            max_voltage,
            min_voltage,
            violation_steps: self.violation_steps,
            steps: self.steps,
            curtailed_kwh: self.curtailed_pu_s * to_kwh,
            reactive_kvarh: self.reactive_pu_s * to_kwh,
            available_kwh: self.available_pu_s * to_kwh,
        }
    }
}

/// Aggregates a full voltage trace (`voltages[t][node]`) with plant outputs.
#[allow(clippy::too_many_arguments)]
pub fn control_report(
    node_ids: &[u32],
    voltages: &[Vec<f64>],
    mpp: &[Vec<f64>],
    p_pv: &[Vec<f64>],
    q_pv: &[Vec<f64>],
    dt: f64,
    bounds: (f64, f64),
    base_va: f64,
) -> ControlReport {
    let mut acc = ControlAccumulator::new(node_ids, bounds.0, bounds.1, base_va);
    for t in 0..voltages.len() {
        acc.push(&voltages[t], &mpp[t], &p_pv[t], &q_pv[t], dt);
    }
    acc.finish()
}
