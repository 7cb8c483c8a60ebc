use nalgebra::{DMatrix, DVector};

use super::{EstimationError, EstimatorState, RegressorWindow, Variant};

/// Streaming sufficient statistics of a regression `gamma ~ h x`.
///
/// Lets the offline fit run over a full day of samples without materialising
/// the regressor matrix.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub hth: DMatrix<f64>,
    pub htg: DVector<f64>,
    pub sum_h: DVector<f64>,
    pub gtg: f64,
    pub sum_g: f64,
    pub n: usize,
}

impl NormalEquations {
    pub fn new(n_params: usize) -> Self {
        Self {
            hth: DMatrix::zeros(n_params, n_params),
            htg: DVector::zeros(n_params),
            sum_h: DVector::zeros(n_params),
            gtg: 0.0,
            sum_g: 0.0,
            n: 0,
        }
    }

    pub fn from_window(w: &RegressorWindow) -> Self {
        let mut ne = Self::new(w.n_params());
        ne.hth = w.h.transpose() * &w.h;
        ne.htg = w.h.transpose() * &w.gamma;
        ne.sum_h = w.h.row_sum().transpose();
        ne.gtg = w.gamma.norm_squared();
        ne.sum_g = w.gamma.sum();
        ne.n = w.len();
        ne
    }

    pub fn push(&mut self, h: &DVector<f64>, gamma: f64) {
        self.hth.ger(1.0, h, h, 1.0);
        self.htg.axpy(gamma, h, 1.0);
        self.sum_h += h;
        self.gtg += gamma * gamma;
        self.sum_g += gamma;
        self.n += 1;
    }

    /// Ridge weight proportional to the mean diagonal of `HᵀH`.
    pub fn default_lambda(&self) -> f64 {
        1e-6 * self.hth.trace() / self.hth.nrows() as f64
    }

    /// Regularized fit with `R = HᵀH + λI`, `P = R⁻¹` and the unbiased sample
    /// standard deviation of the residuals.
    pub fn solve(&self, lambda: f64, node: usize) -> Result<EstimatorState, EstimationError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(EstimationError::Parameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if self.n == 0 {
            return Err(EstimationError::Window("no regression rows".into()));
        }
        let dim = self.hth.nrows();
        let mut r = self.hth.clone();
        for d in 0..dim {
            r[(d, d)] += lambda;
        }
        let chol = r.clone().cholesky().ok_or(EstimationError::RankDeficient { lambda })?;
        let x = chol.solve(&self.htg);
        let p = chol.inverse();
        // Cholesky can succeed on a numerically singular R
        let (dmin, dmax) = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
        if lambda == 0.0 && (dmin == 0.0 || dmax / dmin > 1e7) {
            return Err(EstimationError::RankDeficient { lambda });
        }
        let sse = (self.gtg - 2.0 * x.dot(&self.htg) + (&self.hth * &x).dot(&x)).max(0.0);
        let mean = (self.sum_g - self.sum_h.dot(&x)) / self.n as f64;
        let sigma_r = if self.n > 1 {
            ((sse - self.n as f64 * mean * mean).max(0.0) / (self.n - 1) as f64).sqrt()
        } else {
            sse.sqrt()
        };
        let mut p = p;
        symmetrize(&mut p);
        Ok(EstimatorState {
            node,
            x,
            r,
            p,
            sigma_r,
            sigma_weight: 1.0,
            variant: Variant::Ls,
        })
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Regularized least squares `X = (HᵀH + λI)⁻¹HᵀΓ` over a window.
pub fn ls_estimate(w: &RegressorWindow, lambda: f64) -> Result<EstimatorState, EstimationError> {
    NormalEquations::from_window(w).solve(lambda, w.node)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_regressor() {
        let w = RegressorWindow {
            node: 0,
            h: DMatrix::identity(3, 3),
            gamma: DVector::from_vec(vec![0.5, -1.0, 2.0]),
        };
        let s = ls_estimate(&w, 0.0).unwrap();
        assert!((s.x - &w.gamma).amax() < 1e-15);
        assert!((s.p - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn two_by_two_ridge_closed_form() {
        // (HᵀH + I)⁻¹HᵀΓ with H = diag(1, 2), Γ = (1, 2) -> (1/2, 4/5)
        let w = RegressorWindow {
            node: 0,
            h: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            gamma: DVector::from_vec(vec![1.0, 2.0]),
        };
        let s = ls_estimate(&w, 1.0).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-15);
        assert!((s.x[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_without_ridge() {
        let w = RegressorWindow {
            node: 0,
            h: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            gamma: DVector::from_vec(vec![1.0, 2.0]),
        };
        let err = ls_estimate(&w, 0.0).unwrap_err();
        assert!(matches!(err, EstimationError::RankDeficient { .. }));
        assert!(ls_estimate(&w, 1e-3).is_ok());
    }

    #[test]
    fn streaming_matches_window() {
        let h = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let gamma = DVector::from_fn(7, |i, _| (i as f64 * 1.3).cos());
        let w = RegressorWindow { node: 0, h: h.clone(), gamma: gamma.clone() };
        let mut ne = NormalEquations::new(3);
        for k in 0..7 {
            ne.push(&h.row(k).transpose(), gamma[k]);
        }
        let a = ne.solve(1e-3, 0).unwrap();
        let b = ls_estimate(&w, 1e-3).unwrap();
        assert!((&a.x - &b.x).amax() < 1e-12);
        assert!((a.sigma_r - b.sigma_r).abs() < 1e-12);
        // residual std recomputed directly
        let res = &gamma - &h * &b.x;
        let mean = res.mean();
        let std = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 6.0).sqrt();
        assert!((b.sigma_r - std).abs() < 1e-12);
    }
}
