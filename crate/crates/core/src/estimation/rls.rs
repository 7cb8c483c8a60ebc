use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ls::symmetrize;
use super::EstimationError;

/// Recursive scheme and its tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    /// Plain batch fit; never stepped recursively.
    Ls,
    /// Exponential forgetting.
    Forgetting { mu: f64 },
    /// Forgetting-free update followed by a constant-trace rescale.
    ConstantTrace { c1: f64, c2: f64 },
    /// Forgetting-free update followed by an eigenvalue map into
    /// `[tau_min, tau_max]`; `mu_dirs` divides the mapped eigenvalues in
    /// ascending order (last entry repeats).
    SelectiveForgetting { tau_min: f64, tau_max: f64, mu_dirs: Vec<f64> },
    /// Forgetting restricted to the excited direction.
    DirectionalForgetting { mu: f64 },
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Ls => "ls",
            Variant::Forgetting { .. } => "rls-f",
            Variant::ConstantTrace { .. } => "rls-ct",
            Variant::SelectiveForgetting { .. } => "rls-sf",
            Variant::DirectionalForgetting { .. } => "rls-df",
        }
    }
}

/// Per-node recursive state.
///
/// `x` is laid out as `[K^P_i | K^Q_i]`. `sigma_weight` is the memory of the
/// exponentially weighted residual RMS.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub node: usize,
    pub x: DVector<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub sigma_r: f64,
    pub sigma_weight: f64,
    pub variant: Variant,
}

impl EstimatorState {
    /// Plain initial state `R = λI`, `P = I/λ`, `x = 0`.
    pub fn prior(node: usize, n_params: usize, lambda: f64) -> Self {
        Self {
            node,
            x: DVector::zeros(n_params),
            r: DMatrix::identity(n_params, n_params) * lambda,
            p: DMatrix::identity(n_params, n_params) / lambda,
            sigma_r: 0.0,
            sigma_weight: 1.0,
            variant: Variant::Ls,
        }
    }

    pub fn with_variant(mut self, variant: Variant, sigma_weight: f64) -> Self {
        self.variant = variant;
        self.sigma_weight = sigma_weight;
        self
    }

    pub fn n_params(&self) -> usize {
        self.x.len()
    }

    /// Applies the configured variant to one regression row.
    pub fn step(&mut self, h: &DVector<f64>, gamma: f64) -> Result<(), EstimationError> {
        match self.variant.clone() {
            Variant::Ls => Err(EstimationError::Parameter("plain LS has no recursive step".into())),
            Variant::Forgetting { mu } => rls_step_f(self, h, gamma, mu),
            Variant::ConstantTrace { c1, c2 } => rls_step_ct(self, h, gamma, c1, c2),
            Variant::SelectiveForgetting { tau_min, tau_max, mu_dirs } => {
                rls_step_sf(self, h, gamma, tau_min, tau_max, &mu_dirs)
            }
            Variant::DirectionalForgetting { mu } => rls_step_df(self, h, gamma, mu),
        }
    }

    fn innovation(&self, h: &DVector<f64>, gamma: f64) -> f64 {
        gamma - h.dot(&self.x)
    }

    fn update_sigma(&mut self, e: f64) {
        let w = self.sigma_weight;
        self.sigma_r = (w * self.sigma_r * self.sigma_r + (1.0 - w) * e * e).sqrt();
    }

    fn check_dims(&self, h: &DVector<f64>) -> Result<(), EstimationError> {
        if h.len() != self.n_params() {
            return Err(EstimationError::Parameter(format!(
                "regressor has {} entries, state has {}",
                h.len(),
                self.n_params()
            )));
        }
        Ok(())
    }
}

fn check_mu(mu: f64, allow_one: bool) -> Result<(), EstimationError> {
    let ok = mu > 0.0 && if allow_one { mu <= 1.0 } else { mu < 1.0 };
    if !ok {
        return Err(EstimationError::Parameter(format!("forgetting factor out of range: {mu}")));
    }
    Ok(())
}

/// Exponential forgetting.
pub fn rls_step_f(
    s: &mut EstimatorState,
    h: &DVector<f64>,
    gamma: f64,
    mu: f64,
) -> Result<(), EstimationError> {
    check_mu(mu, true)?;
    s.check_dims(h)?;
    let e = s.innovation(h, gamma);
    let ph = &s.p * h;
    let denom = mu + h.dot(&ph);
    let gain = &ph / denom;
    s.x.axpy(e, &gain, 1.0);
    // (I - L h) P / mu
    s.p.ger(-1.0, &gain, &ph, 1.0);
    s.p /= mu;
    symmetrize(&mut s.p);
    s.r *= mu;
    s.r.ger(1.0, h, h, 1.0);
    s.update_sigma(e);
    Ok(())
}

/// Unit-forgetting gain update shared by the constant-trace and selective schemes.
fn plain_update(s: &mut EstimatorState, h: &DVector<f64>, e: f64) {
    let ph = &s.p * h;
    let denom = 1.0 + h.dot(&ph);
    s.x.axpy(e / denom, &ph, 1.0);
    s.p.ger(-1.0 / denom, &ph, &ph, 1.0);
    s.r.ger(1.0, h, h, 1.0);
}

/// Constant trace: `P = c1 P / trace(P) + c2 I` after each update.
pub fn rls_step_ct(
    s: &mut EstimatorState,
    h: &DVector<f64>,
    gamma: f64,
    c1: f64,
    c2: f64,
) -> Result<(), EstimationError> {
    if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
        return Err(EstimationError::Parameter(format!("c1, c2 must be positive, got {c1}, {c2}")));
    }
    s.check_dims(h)?;
    let e = s.innovation(h, gamma);
    plain_update(s, h, e);
    let trace = s.p.trace();
    if !(trace > 0.0 && trace.is_finite()) {
        return Err(EstimationError::Numerical(format!("covariance trace {trace}")));
    }
    s.p *= c1 / trace;
    for d in 0..s.n_params() {
        s.p[(d, d)] += c2;
    }
    symmetrize(&mut s.p);
    s.update_sigma(e);
    Ok(())
}

/// Eigenvalue map of the selective scheme.
///
/// Below `tau_min` the printed affine lift applies, above `tau_max` values are
/// clamped to `tau_max`, the middle range passes through.
pub fn selective_map(x: f64, tau_min: f64, tau_max: f64) -> f64 {
    if x > tau_max {
        tau_max
    } else if x <= tau_min {
        tau_min + (1.0 - tau_min / tau_max) * x.max(0.0)
    } else {
        x
    }
}

/// Selective forgetting on the eigenvalues of the covariance.
pub fn rls_step_sf(
    s: &mut EstimatorState,
    h: &DVector<f64>,
    gamma: f64,
    tau_min: f64,
    tau_max: f64,
    mu_dirs: &[f64],
) -> Result<(), EstimationError> {
    if !(tau_min > 0.0 && tau_min < tau_max && tau_max.is_finite()) {
        return Err(EstimationError::Parameter(format!(
            "need 0 < tau_min < tau_max, got {tau_min}, {tau_max}"
        )));
    }
    if mu_dirs.iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
        return Err(EstimationError::Parameter("directional factors must lie in (0, 1]".into()));
    }
    s.check_dims(h)?;
    let e = s.innovation(h, gamma);
    plain_update(s, h, e);
    if s.p.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::Numerical("non-finite covariance before eigendecomposition".into()));
    }
    symmetrize(&mut s.p);
    if mu_dirs.iter().all(|m| *m == 1.0) && spectrum_inside(&s.p, tau_min, tau_max) {
        s.update_sigma(e);
        return Ok(());
    }
    let eig = SymmetricEigen::new(s.p.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut mapped = DVector::zeros(order.len());
    for (rank, &k) in order.iter().enumerate() {
        let mu = mu_dirs.get(rank).or(mu_dirs.last()).copied().unwrap_or(1.0);
        mapped[k] = selective_map(eig.eigenvalues[k], tau_min, tau_max) / mu;
    }
    let u = &eig.eigenvectors;
    s.p = u * DMatrix::from_diagonal(&mapped) * u.transpose();
    symmetrize(&mut s.p);
    s.update_sigma(e);
    Ok(())
}

/// Relative slack on `tau_max` in the cheap spectrum test.
const SF_UPPER_SLACK: f64 = 1e-9;

/// True when every eigenvalue of `p` lies in `(tau_min, tau_max]`, up to
/// [`SF_UPPER_SLACK`] at the top, so the selective map is the identity.
fn spectrum_inside(p: &DMatrix<f64>, tau_min: f64, tau_max: f64) -> bool {
    let n = p.nrows();
    let shifted = |shift: f64, sign: f64| {
        let mut m = p * sign;
        for d in 0..n {
            m[(d, d)] += shift;
        }
        m
    };
    Cholesky::new(shifted(-tau_min, 1.0)).is_some()
        && Cholesky::new(shifted(tau_max * (1.0 + SF_UPPER_SLACK), -1.0)).is_some()
}

/// Information-direction magnitude below which no forgetting is applied.
pub const DF_GUARD: f64 = 1e-12;

/// Directional forgetting: information is discounted only along `h`.
pub fn rls_step_df(
    s: &mut EstimatorState,
    h: &DVector<f64>,
    gamma: f64,
    mu: f64,
) -> Result<(), EstimationError> {
    check_mu(mu, false)?;
    s.check_dims(h)?;
    let e = s.innovation(h, gamma);
    let rh = &s.r * h;
    let hrh = h.dot(&rh);
    if hrh >= DF_GUARD {
        // P̄ = P + (1-μ)/μ · hᵀh / (hRhᵀ)
        s.p.ger((1.0 - mu) / (mu * hrh), h, h, 1.0);
        // (I - M) R with M = (1-μ) R hᵀh / (hRhᵀ)
        s.r.ger(-(1.0 - mu) / hrh, &rh, &rh, 1.0);
    }
    let ph = &s.p * h;
    let denom = 1.0 + h.dot(&ph);
    s.p.ger(-1.0 / denom, &ph, &ph, 1.0);
    symmetrize(&mut s.p);
    s.r.ger(1.0, h, h, 1.0);
    let gain = &s.p * h;
    s.x.axpy(e, &gain, 1.0);
    s.update_sigma(e);
    Ok(())
}
