use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::control::ProtectionForm;
use crate::estimation::Variant;
use crate::measurement::{ItClass, PhaseNoise};
use crate::metrics::CwcParams;

/// A complete experiment definition, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Extra noise seeds simulated side by side; open loop only.
    #[serde(default)]
    pub extra_seeds: Vec<u64>,
    #[serde(default = "default_sample_period")]
    pub sample_period_s: u64,
    pub network: NetworkConfig,
    #[serde(default)]
    pub profiles: ProfileConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub pv: Vec<PvConfig>,
}

fn default_seed() -> u64 {
    1
}

fn default_sample_period() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Name of a bundled feeder (`feeder4`, `feeder18`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feeder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buses: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branches: Option<PathBuf>,
    #[serde(default = "default_base_va")]
    pub base_va: f64,
    #[serde(default = "default_base_v")]
    pub base_v: f64,
    #[serde(default = "default_slack_vm")]
    pub slack_vm: f64,
}

fn default_base_va() -> f64 {
    100e3
}

fn default_base_v() -> f64 {
    400.0
}

fn default_slack_vm() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    /// `profiles.csv` with uncontrolled injections; synthetic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// `mpp.csv` with one `mpp_<bus>` column per plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpp_file: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

/// Parameters of the generated load and PV series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub days: u32,
    pub seed: u64,
    /// Range of per-bus load scale (per-unit active power).
    pub load_min: f64,
    pub load_max: f64,
    pub load_pf: f64,
    /// Standard deviation of the one-second innovations of the load factors.
    pub load_fluctuation: f64,
    pub load_q_fluctuation: f64,
    /// Peak MPP as a fraction of the plant rating.
    pub pv_peak: f64,
    /// Weight of the cloud process shared by all plants.
    pub cloud_common: f64,
    /// Weight of the plant-specific cloud process.
    pub cloud_local: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            days: 2,
            seed: 7,
            load_min: 0.015,
            load_max: 0.04,
            load_pf: 0.95,
            load_fluctuation: 0.08,
            load_q_fluctuation: 0.1,
            pv_peak: 0.95,
            cloud_common: 0.1,
            cloud_local: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub it_class: String,
    pub phase_noise: PhaseNoise,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self { it_class: "1.0".into(), phase_noise: PhaseNoise::PhaseDraw }
    }
}

/// When the recursive estimators consume a regression row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cadence {
    #[default]
    PerSample,
    PerRefresh,
}

/// What the forgetting factors and residual weights are quoted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForgettingBasis {
    /// One factor per estimation window; spread evenly over its steps.
    #[default]
    Window,
    /// One factor per recursive step.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub variants: Vec<String>,
    pub mu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub c1: f64,
    pub c2: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub mu_dirs: Vec<f64>,
    /// Residual-scale weight of the schemes without a forgetting factor.
    pub sigma_weight: f64,
    pub window_s: u64,
    /// Length of the open-loop history used for the offline fit.
    pub offline_h: f64,
    pub cadence: Cadence,
    pub forgetting: ForgettingBasis,
    /// Bus ids whose coefficients are estimated; the PV buses when empty.
    pub monitored: Vec<usize>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            variants: vec!["rls-df".into()],
            mu: 0.85,
            lambda: None,
            c1: 100.0,
            c2: 0.01,
            tau_min: 1e-3,
            tau_max: 10.0,
            mu_dirs: vec![1.0],
            sigma_weight: 0.85,
            window_s: 300,
            offline_h: 24.0,
            cadence: Cadence::PerSample,
            forgetting: ForgettingBasis::Window,
            monitored: Vec::new(),
        }
    }
}

impl EstimationConfig {
    /// Recursive steps per estimation window at a given sampling period.
    pub fn steps_per_window(&self, sample_period_s: u64) -> u64 {
        match (self.forgetting, self.cadence) {
            (ForgettingBasis::Step, _) | (_, Cadence::PerRefresh) => 1,
            (ForgettingBasis::Window, Cadence::PerSample) => (self.window_s / sample_period_s.max(1)).max(1),
        }
    }

    fn per_step(&self, factor: f64, steps: u64) -> f64 {
        factor.powf(1.0 / steps.max(1) as f64)
    }

    /// Builds the variant named by a CLI/config label, with its factors
    /// converted to one recursive step.
    pub fn variant(&self, label: &str, steps: u64) -> Result<Variant, HarnessError> {
        let mu = self.per_step(self.mu, steps);
        let v = match label {
            "ls" => Variant::Ls,
            "rls-f" => Variant::Forgetting { mu },
            "rls-ct" => Variant::ConstantTrace { c1: self.c1, c2: self.c2 },
            "rls-sf" => Variant::SelectiveForgetting {
                tau_min: self.tau_min,
                tau_max: self.tau_max,
                mu_dirs: self.mu_dirs.iter().map(|m| self.per_step(*m, steps)).collect(),
            },
            "rls-df" => Variant::DirectionalForgetting { mu },
            other => {
                return Err(HarnessError::Config(format!(
                    "estimation.variants: unknown estimator '{other}' (ls, rls-f, rls-ct, rls-sf, rls-df)"
                )))
            }
        };
        Ok(v)
    }

    /// Residual-scale weight used with a variant.
    pub fn sigma_weight_for(&self, v: &Variant, steps: u64) -> f64 {
        match v {
            Variant::Forgetting { mu } | Variant::DirectionalForgetting { mu } => *mu,
            _ => self.per_step(self.sigma_weight, steps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    #[default]
    Off,
    Nonrobust,
    Robust,
    ModelBased,
}

impl ControlMode {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "off" => Ok(Self::Off),
            "nonrobust" | "non-robust" => Ok(Self::Nonrobust),
            "robust" => Ok(Self::Robust),
            "model-based" => Ok(Self::ModelBased),
            other => Err(HarnessError::Config(format!("unknown control mode '{other}'"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::Nonrobust => "nonrobust",
            Self::Robust => "robust",
            Self::ModelBased => "model-based",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasiblePolicy {
    /// Log the step and curtail every plant for the period.
    #[default]
    Curtail,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub mode: ControlMode,
    /// Estimator feeding the controller; the first listed variant when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<String>,
    pub v_min: f64,
    pub v_max: f64,
    pub period_s: u64,
    /// Budget for every constrained node; the plant count when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Per-bus budget overrides keyed by bus id.
    pub omega_nodes: BTreeMap<String, f64>,
    pub protection: ProtectionForm,
    pub weight_p: f64,
    pub weight_q: f64,
    pub capability_facets: usize,
    pub on_infeasible: InfeasiblePolicy,
    /// Samples averaged into the voltage and injections the QP linearizes at.
    pub voltage_avg_samples: usize,
    /// Model-based mode: refresh the true coefficients every period.
    pub recompute_true: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            mode: ControlMode::Off,
            estimator: None,
            v_min: 0.97,
            v_max: 1.03,
            period_s: 300,
            omega: None,
            omega_nodes: BTreeMap::new(),
            protection: ProtectionForm::Combined,
            weight_p: 1.0,
            weight_q: 1.0,
            capability_facets: 16,
            on_infeasible: InfeasiblePolicy::Curtail,
            voltage_avg_samples: 30,
            recompute_true: true,
        }
    }
}

/// Which estimates enter the interval metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorePoints {
    #[default]
    Refresh,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub window_h: [f64; 2],
    pub points: ScorePoints,
    pub alpha: f64,
    pub nu: f64,
    pub cwc_literal: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { window_h: [32.0, 42.0], points: ScorePoints::Refresh, alpha: 0.99, nu: 50.0, cwc_literal: false }
    }
}

impl MetricsConfig {
    pub fn cwc(&self) -> CwcParams {
        CwcParams { alpha: self.alpha, nu: self.nu, literal: self.cwc_literal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Spacing of `voltages.csv` rows; 0 disables the file.
    pub voltage_every_s: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, voltage_every_s: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvConfig {
    pub bus: usize,
    pub s_max: f64,
    #[serde(default = "default_pf")]
    pub pf_min: f64,
}

fn default_pf() -> f64 {
    0.9
}

fn field(name: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{name}: {msg}"))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg = Self::parse_toml_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without the cross-field checks, for callers that override
    /// fields before validating.
    pub fn parse_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads and validates a config file. Relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let cfg = Self::load_unchecked(path)?;
        cfg.validate().map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// [`ScenarioConfig::load`] without the final validation.
    pub fn load_unchecked(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse_toml_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.network.buses);
        resolve(&mut cfg.network.branches);
        resolve(&mut cfg.profiles.file);
        resolve(&mut cfg.profiles.mpp_file);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn it_class(&self) -> Result<ItClass, HarnessError> {
        ItClass::named(&self.measurement.it_class).map_err(|e| field("measurement.it_class", e))
    }

    /// Estimator variants in run order, with their labels.
    pub fn variants(&self) -> Result<Vec<(String, Variant)>, HarnessError> {
        let mut out = Vec::new();
        for label in &self.estimation.variants {
            if out.iter().any(|(l, _): &(String, Variant)| l == label) {
                return Err(field("estimation.variants", format!("'{label}' listed twice")));
            }
            out.push((label.clone(), self.estimation.variant(label, self.recursive_steps())?));
        }
        Ok(out)
    }

    /// Recursive steps per estimation window under this configuration.
    pub fn recursive_steps(&self) -> u64 {
        self.estimation.steps_per_window(self.sample_period_s)
    }

    pub fn control_variant(&self) -> Result<String, HarnessError> {
        let label = match &self.control.estimator {
            Some(l) => l.clone(),
            None => self
                .estimation
                .variants
                .first()
                .cloned()
                .ok_or_else(|| field("estimation.variants", "at least one estimator required"))?,
        };
        if !self.estimation.variants.contains(&label) {
            return Err(field("control.estimator", format!("'{label}' is not in estimation.variants")));
        }
        Ok(label)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let n = &self.network;
        match (&n.feeder, &n.buses, &n.branches) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => return Err(field("network", "give either `feeder` or both `buses` and `branches`")),
        }
        if !(n.base_va > 0.0 && n.base_v > 0.0 && n.slack_vm > 0.0) {
            return Err(field("network", "base_va, base_v and slack_vm must be positive"));
        }
        if self.sample_period_s == 0 {
            return Err(field("sample_period_s", "must be positive"));
        }
        if self.profiles.file.is_none() && self.profiles.mpp_file.is_some() {
            return Err(field("profiles.mpp_file", "requires profiles.file"));
        }
        let s = &self.profiles.synthetic;
        if s.days == 0 {
            return Err(field("profiles.synthetic.days", "must be positive"));
        }
        if !(s.load_min >= 0.0 && s.load_max >= s.load_min) {
            return Err(field("profiles.synthetic.load_min", "need 0 <= load_min <= load_max"));
        }
        if !(s.load_pf > 0.0 && s.load_pf <= 1.0) {
            return Err(field("profiles.synthetic.load_pf", "must lie in (0, 1]"));
        }
        if !(s.pv_peak >= 0.0) || !(s.cloud_common >= 0.0) || !(s.cloud_local >= 0.0) {
            return Err(field("profiles.synthetic", "pv_peak and cloud weights must be >= 0"));
        }
        if s.load_fluctuation < 0.0 || s.load_q_fluctuation < 0.0 {
            return Err(field("profiles.synthetic", "fluctuations must be >= 0"));
        }
        self.it_class()?;

        let e = &self.estimation;
        if !(e.mu > 0.0 && e.mu <= 1.0) {
            return Err(field("estimation.mu", "must lie in (0, 1]"));
        }
        if let Some(l) = e.lambda {
            if !(l >= 0.0) {
                return Err(field("estimation.lambda", "must be >= 0"));
            }
        }
        if !(e.c1 > 0.0 && e.c2 >= 0.0) {
            return Err(field("estimation.c1", "need c1 > 0 and c2 >= 0"));
        }
        if !(e.tau_min > 0.0 && e.tau_max > e.tau_min) {
            return Err(field("estimation.tau_min", "need 0 < tau_min < tau_max"));
        }
        if e.mu_dirs.is_empty() || e.mu_dirs.iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
            return Err(field("estimation.mu_dirs", "values must lie in (0, 1]"));
        }
        if !(e.sigma_weight >= 0.0 && e.sigma_weight < 1.0) {
            return Err(field("estimation.sigma_weight", "must lie in [0, 1)"));
        }
        if e.window_s < 2 * self.sample_period_s {
            return Err(field("estimation.window_s", "window must hold at least 2 samples"));
        }
        if e.window_s % self.sample_period_s != 0 {
            return Err(field("estimation.window_s", "must be a multiple of sample_period_s"));
        }
        if !(e.offline_h > 0.0) {
            return Err(field("estimation.offline_h", "must be positive"));
        }
        self.variants()?;

        let c = &self.control;
        if !(c.v_min < c.v_max) {
            return Err(field("control.v_min", "must be below v_max"));
        }
        if c.period_s == 0 {
            return Err(field("control.period_s", "must be positive"));
        }
        if c.period_s % self.sample_period_s != 0 {
            return Err(field(
                "control.period_s",
                format!("{} s is not a multiple of the {} s sample period", c.period_s, self.sample_period_s),
            ));
        }
        if c.period_s % self.estimation.window_s != 0 {
            return Err(field(
                "control.period_s",
                format!("{} s is not a multiple of the {} s estimation window", c.period_s, self.estimation.window_s),
            ));
        }
        if c.voltage_avg_samples == 0 {
            return Err(field("control.voltage_avg_samples", "must be positive"));
        }
        if c.capability_facets < 4 {
            return Err(field("control.capability_facets", "need at least 4 facets"));
        }
        if !(c.weight_p > 0.0 && c.weight_q > 0.0) {
            return Err(field("control.weight_p", "weights must be positive"));
        }
        let n_pv = self.pv.len() as f64;
        let omegas = c.omega.iter().chain(c.omega_nodes.values());
        for o in omegas {
            if !(*o >= 0.0 && *o <= n_pv) {
                return Err(field("control.omega", format!("{o} outside [0, {n_pv}]")));
            }
        }
        for key in c.omega_nodes.keys() {
            key.parse::<usize>().map_err(|_| field("control.omega_nodes", format!("'{key}' is not a bus id")))?;
        }
        if c.mode != ControlMode::Off {
            self.control_variant()?;
            if self.pv.is_empty() {
                return Err(field("pv", "control needs at least one plant"));
            }
            if !self.extra_seeds.is_empty() {
                return Err(field("extra_seeds", "only allowed with control.mode = \"off\""));
            }
        }
        let m = &self.metrics;
        if !(m.window_h[0] < m.window_h[1]) {
            return Err(field("metrics.window_h", "start must precede end"));
        }
        if !(m.alpha > 0.0 && m.alpha <= 1.0 && m.nu >= 0.0) {
            return Err(field("metrics.alpha", "need 0 < alpha <= 1 and nu >= 0"));
        }
        for (k, p) in self.pv.iter().enumerate() {
            if !(p.s_max > 0.0) {
                return Err(field(&format!("pv[{k}].s_max"), "must be positive"));
            }
            if !(p.pf_min > 0.0 && p.pf_min <= 1.0) {
                return Err(field(&format!("pv[{k}].pf_min"), "must lie in (0, 1]"));
            }
            if self.pv[..k].iter().any(|o| o.bus == p.bus) {
                return Err(field(&format!("pv[{k}].bus"), "one plant per bus"));
            }
        }
        Ok(())
    }
}
