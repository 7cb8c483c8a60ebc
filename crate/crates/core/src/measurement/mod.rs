//! Instrument-transformer noise model and the synthetic measurement stream.

mod noise;
mod profile;

pub use noise::{corrupt_sample, exact_sample, ItClass, MeasurementSample, NoiseSource, PhaseNoise};
pub use profile::Profiles;

use crate::grid::{solve_load_flow, GridError, GridState, NetworkModel};

#[derive(Debug, thiserror::Error)]
pub enum MeasurementError {
    #[error("invalid IT class: {0}")]
    InvalidClass(String),
    #[error("profile error: {0}")]
    Profile(String),
    #[error("load flow failed at t = {t} s: {source}")]
    LoadFlow {
        t: u64,
        #[source]
        source: GridError,
    },
}

/// Open-loop data generation: one load flow and one corruption per profile
/// step. The true state is kept next to each noisy sample for scoring.
pub struct Dataset<'a> {
    model: &'a NetworkModel,
    profiles: Profiles,
    it: ItClass,
    noise: NoiseSource,
    k: usize,
}

impl<'a> Dataset<'a> {
    pub fn new(
        model: &'a NetworkModel,
        profiles: &Profiles,
        it: ItClass,
        seed: u64,
        phase_noise: PhaseNoise,
    ) -> Result<Self, MeasurementError> {
        it.validate()?;
        let profiles = profiles.aligned_to(model)?;
        let noise = NoiseSource::new(seed, model.n_nodes()).with_phase_noise(phase_noise);
        Ok(Self { model, profiles, it, noise, k: 0 })
    }
}

impl Iterator for Dataset<'_> {
    type Item = Result<(GridState, MeasurementSample), MeasurementError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.k >= self.profiles.len() {
            return None;
        }
        let k = self.k;
        self.k += 1;
        let t = self.profiles.times()[k];
        let item = solve_load_flow(self.model, self.profiles.p(k), self.profiles.q(k))
            .map_err(|source| MeasurementError::LoadFlow { t, source })
            .and_then(|state| {
                let sample = corrupt_sample(self.model, &state, &self.it, &mut self.noise, t)?;
                Ok((state, sample))
            });
        Some(item)
    }
}

/// Runs the whole open-loop generation eagerly.
pub fn synthesize_dataset(
    model: &NetworkModel,
    profiles: &Profiles,
    it: &ItClass,
    seed: u64,
) -> Result<Vec<(GridState, MeasurementSample)>, MeasurementError> {
    Dataset::new(model, profiles, it.clone(), seed, PhaseNoise::PhaseDraw)?.collect()
}
