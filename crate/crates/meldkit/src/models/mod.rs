//! Built-in example models.

pub mod gaussian;
pub mod h1n1;
pub mod hiv;

use crate::density::{DensityModel, SampleSet};
use crate::error::Result;
use crate::mcmc::stream_rng;

/// Exact (Monte Carlo) draws from a model's prior.
pub trait PriorSampler: Send + Sync {
    /// One draw of the full parameter vector.
    fn sample_theta(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
}

/// `n` prior draws of φ pushed through `model.phi`, seeded on stream 0.
pub fn sample_prior_phi(
    sampler: &dyn PriorSampler,
    model: &dyn DensityModel,
    n: usize,
    seed: u64,
    label: &str,
) -> Result<SampleSet> {
    let mut rng = stream_rng(seed, 0);
    let draws = (0..n).map(|_| model.phi(&sampler.sample_theta(&mut rng))).collect();
    SampleSet::new(draws, label, Some(seed))
}
