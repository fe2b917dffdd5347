//! Two-stage Markov melding samplers with weighted-sample self-density ratio
//! estimation (WSRE).
//!
//! Prior marginals of the shared quantity φ only ever enter the samplers as
//! self-density ratios `p(φ_nu) / p(φ_de)`, so every marginal is represented by
//! a [`RatioEvaluator`]: analytic when known, a naive kernel density estimate
//! from prior draws, or the WSRE combination of inverse-weighted estimates
//! built from samples of tilted targets `p(φ, γ) w(φ; ξ)`.
//!
//! Module map:
//! - [`density`]: model and ratio contracts, sample sets.
//! - [`kde`]: standard and inverse-weighted Gaussian KDEs, bandwidths.
//! - [`wsre`]: weighting functions, weighted targets, κ solver, combination.
//! - [`mcmc`]: random-walk Metropolis and Metropolis-within-Gibbs.
//! - [`melding`]: pooled prior, stage one, stage two.
//! - [`models`]: Gaussian test bed, HIV and H1N1 example models.
//! - [`diagnostics`]: ESS, stuck runs, QQ tables, KS distance.
//! - [`registry`]: named evaluator strategies and experiments.

pub mod density;
pub mod diagnostics;
mod error;
pub mod io;
pub mod kde;
pub mod mcmc;
pub mod melding;
pub mod models;
pub mod registry;
pub mod special;
pub mod wsre;

pub use density::{
    analytic_ratio, constant_ratio, pow_ratio, DensityModel, Provenance, RatioEvaluator,
    SampleSet, SharedRatio, Summary, Support,
};
pub use error::{Error, Result};
