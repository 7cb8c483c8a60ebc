use std::collections::VecDeque;

use nalgebra::DVector;

use super::{
    coefficient_intervals, CoefficientEstimate, EstimationError, EstimatorState, NormalEquations,
    Variant,
};

/// Smallest ridge used when a window carries no excitation at all.
const MIN_LAMBDA: f64 = 1e-12;

/// A per-node estimator fed one regression row at a time.
///
/// The plain LS scheme keeps a sliding window of rows and refits on demand;
/// the recursive schemes update their state on every row.
#[derive(Debug, Clone)]
pub enum OnlineEstimator {
    Window {
        node: usize,
        rows: VecDeque<(DVector<f64>, f64)>,
        capacity: usize,
        lambda: Option<f64>,
    },
    Recursive(EstimatorState),
}

impl OnlineEstimator {
    pub fn window(node: usize, capacity: usize, lambda: Option<f64>) -> Self {
        Self::Window { node, rows: VecDeque::with_capacity(capacity + 1), capacity, lambda }
    }

    /// A recursive estimator initialized from an offline fit.
    pub fn recursive(init: EstimatorState, variant: Variant, sigma_weight: f64) -> Self {
        Self::Recursive(init.with_variant(variant, sigma_weight))
    }

    pub fn node(&self) -> usize {
        match self {
            Self::Window { node, .. } => *node,
            Self::Recursive(s) => s.node,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Window { .. } => Variant::Ls.label(),
            Self::Recursive(s) => s.variant.label(),
        }
    }

    pub fn push(&mut self, h: &DVector<f64>, gamma: f64) -> Result<(), EstimationError> {
        match self {
            Self::Window { rows, capacity, .. } => {
                rows.push_back((h.clone(), gamma));
                while rows.len() > *capacity {
                    rows.pop_front();
                }
                Ok(())
            }
            Self::Recursive(s) => s.step(h, gamma),
        }
    }

    /// Current state; the window scheme refits from its buffer.
    pub fn state(&self) -> Result<EstimatorState, EstimationError> {
        match self {
            Self::Window { node, rows, lambda, .. } => {
                let dim = rows.front().map(|(h, _)| h.len()).ok_or_else(|| {
                    EstimationError::Window("window is empty".into())
                })?;
                let mut ne = NormalEquations::new(dim);
                for (h, g) in rows {
                    ne.push(h, *g);
                }
                let lambda = lambda.unwrap_or_else(|| ne.default_lambda()).max(MIN_LAMBDA);
                ne.solve(lambda, *node)
            }
            Self::Recursive(s) => Ok(s.clone()),
        }
    }

    pub fn estimate(&self) -> Result<CoefficientEstimate, EstimationError> {
        Ok(coefficient_intervals(&self.state()?))
    }
}
