use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MeasurementError;
use crate::grid::{GridState, NetworkModel};

/// Instrument-transformer accuracy class.
///
/// Magnitude sigmas are fractions of the phasor magnitude, phase sigmas are in
/// radians. The class limit is read as three standard deviations, so draws use
/// `sigma / 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItClass {
    pub name: String,
    pub voltage_magnitude: f64,
    pub voltage_phase: f64,
    pub current_magnitude: f64,
    pub current_phase: f64,
}

impl ItClass {
    pub fn class_0_2() -> Self {
        Self::custom("0.2", 0.002, 3e-3, 0.002, 3e-3)
    }

    pub fn class_0_5() -> Self {
        Self::custom("0.5", 0.005, 6e-3, 0.005, 9e-3)
    }

    pub fn class_1_0() -> Self {
        Self::custom("1.0", 0.01, 12e-3, 0.01, 18e-3)
    }

    /// A class that leaves phasors untouched.
    pub fn noiseless() -> Self {
        Self::custom("none", 0.0, 0.0, 0.0, 0.0)
    }

    pub fn custom(name: &str, vm: f64, va: f64, im: f64, ia: f64) -> Self {
        Self {
            name: name.to_string(),
            voltage_magnitude: vm,
            voltage_phase: va,
            current_magnitude: im,
            current_phase: ia,
        }
    }

    pub fn named(name: &str) -> Result<Self, MeasurementError> {
        match name.trim() {
            "0.2" => Ok(Self::class_0_2()),
            "0.5" => Ok(Self::class_0_5()),
            "1" | "1.0" => Ok(Self::class_1_0()),
            "none" | "0" => Ok(Self::noiseless()),
            other => Err(MeasurementError::InvalidClass(format!("unknown IT class '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        let sigmas =
            [self.voltage_magnitude, self.voltage_phase, self.current_magnitude, self.current_phase];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(MeasurementError::InvalidClass(format!(
                "IT class '{}' has a negative or non-finite sigma",
                self.name
            )));
        }
        Ok(())
    }
}

/// Which draw perturbs the phase angle.
///
/// The raw-data generation listing adds the magnitude draw to the angle; the
/// default adds the dedicated phase draw instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseNoise {
    #[default]
    PhaseDraw,
    Literal,
}

/// One timestamped record of what the meters report for the non-slack buses.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSample {
    pub t: u64,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Seeded noise generator with one ChaCha8 stream per non-slack bus.
///
/// Stream `k` belongs to load index `k`; each sample draws, in order, voltage
/// magnitude, voltage phase, current magnitude, current phase. Streams are
/// therefore unaffected by the number of buses downstream of a node.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    streams: Vec<ChaCha8Rng>,
    pub phase_noise: PhaseNoise,
}

impl NoiseSource {
    pub fn new(seed: u64, n_nodes: usize) -> Self {
        let streams = (0..n_nodes)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64 + 1);
                rng
            })
            .collect();
        Self { streams, phase_noise: PhaseNoise::PhaseDraw }
    }

    pub fn with_phase_noise(mut self, mode: PhaseNoise) -> Self {
        self.phase_noise = mode;
        self
    }

    fn corrupt(&mut self, node: usize, phasor: Complex64, sigma_m: f64, sigma_p: f64) -> Complex64 {
        let rng = &mut self.streams[node];
        let z_m: f64 = StandardNormal.sample(rng);
        let z_p: f64 = StandardNormal.sample(rng);
        let magnitude = phasor.norm();
        let delta_m = z_m * sigma_m * magnitude / 3.0;
        let delta_p = z_p * sigma_p / 3.0;
        let angle_shift = match self.phase_noise {
            PhaseNoise::PhaseDraw => delta_p,
            PhaseNoise::Literal => delta_m,
        };
        if delta_m == 0.0 && angle_shift == 0.0 {
            return phasor;
        }
        Complex64::from_polar(magnitude + delta_m, phasor.arg() + angle_shift)
    }
}

/// Noise-free measurement of a state: magnitudes and `V conj(I)` powers.
pub fn exact_sample(model: &NetworkModel, state: &GridState, t: u64) -> MeasurementSample {
    let nodes = model.non_slack_positions();
    let mut v = Vec::with_capacity(nodes.len());
    let mut p = Vec::with_capacity(nodes.len());
    let mut q = Vec::with_capacity(nodes.len());
    for &pos in nodes {
        let s = state.v[pos] * state.i[pos].conj();
        v.push(state.v[pos].norm());
        p.push(s.re);
        q.push(s.im);
    }
    MeasurementSample { t, v, p, q }
}

/// Corrupts the voltage and current phasors of every non-slack bus and
/// recomputes the powers from the corrupted phasors.
pub fn corrupt_sample(
    model: &NetworkModel,
    state: &GridState,
    it: &ItClass,
    noise: &mut NoiseSource,
    t: u64,
) -> Result<MeasurementSample, MeasurementError> {
    it.validate()?;
    let nodes = model.non_slack_positions();
    if noise.streams.len() != nodes.len() {
        return Err(MeasurementError::InvalidClass(format!(
            "noise source has {} streams for {} nodes",
            noise.streams.len(),
            nodes.len()
        )));
    }
    let mut v = Vec::with_capacity(nodes.len());
    let mut p = Vec::with_capacity(nodes.len());
    let mut q = Vec::with_capacity(nodes.len());
    for (k, &pos) in nodes.iter().enumerate() {
        let vt = noise.corrupt(k, state.v[pos], it.voltage_magnitude, it.voltage_phase);
        let it_ = noise.corrupt(k, state.i[pos], it.current_magnitude, it.current_phase);
        let s = vt * it_.conj();
        v.push(vt.norm());
        p.push(s.re);
        q.push(s.im);
    }
    Ok(MeasurementSample { t, v, p, q })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_classes_carry_table_values() {
        let c = ItClass::named("0.5").unwrap();
        assert_eq!(
            (c.voltage_magnitude, c.voltage_phase, c.current_magnitude, c.current_phase),
            (0.005, 6e-3, 0.005, 9e-3)
        );
        let c = ItClass::named("0.2").unwrap();
        assert_eq!(
            (c.voltage_magnitude, c.voltage_phase, c.current_magnitude, c.current_phase),
            (0.002, 3e-3, 0.002, 3e-3)
        );
        let c = ItClass::named("1.0").unwrap();
        assert_eq!(
            (c.voltage_magnitude, c.voltage_phase, c.current_magnitude, c.current_phase),
            (0.01, 12e-3, 0.01, 18e-3)
        );
        assert!(ItClass::named("3.0").is_err());
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(ItClass::custom("x", -0.1, 0.0, 0.0, 0.0).validate().is_err());
    }

    #[test]
    fn magnitude_noise_calibration() {
        // unit phasor under class 1.0: magnitude error std should be 0.01 / 3
        let mut src = NoiseSource::new(7, 1);
        let it = ItClass::class_1_0();
        let n = 100_000;
        let unit = Complex64::new(1.0, 0.0);
        let errs: Vec<f64> = (0..n)
            .map(|_| src.corrupt(0, unit, it.voltage_magnitude, it.voltage_phase).norm() - 1.0)
            .collect();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let target = 0.01 / 3.0;
        assert!(((std - target) / target).abs() < 0.02, "std {std}");
        // unbiased: mean within three standard errors
        assert!(mean.abs() < 3.0 * target / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn phase_draw_vs_literal() {
        let it = ItClass::custom("p", 0.0, 0.3, 0.0, 0.0);
        let mut a = NoiseSource::new(1, 1);
        let x = a.corrupt(0, Complex64::new(1.0, 0.0), it.voltage_magnitude, it.voltage_phase);
        assert!(x.arg().abs() > 0.0);
        // literal mode with zero magnitude sigma adds a zero angle
        let mut b = NoiseSource::new(1, 1).with_phase_noise(PhaseNoise::Literal);
        let y = b.corrupt(0, Complex64::new(1.0, 0.0), it.voltage_magnitude, it.voltage_phase);
        assert_eq!(y, Complex64::new(1.0, 0.0));
    }
}
