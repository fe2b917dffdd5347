//! Bivariate normal test bed with a known standard-normal φ-marginal, and a
//! two-submodel Gaussian melding problem with a closed-form answer.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::density::{analytic_ratio, DensityModel, SharedRatio, Support};
use crate::error::{Error, Result};
use crate::models::PriorSampler;
use crate::special::ln_normal_pdf;

/// `(φ, γ)` standard bivariate normal with correlation ρ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTestbed {
    rho: f64,
}

impl GaussianTestbed {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("correlation must lie in (-1, 1), got {rho}")));
        }
        Ok(GaussianTestbed { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Analytic standard-normal marginal ratio.
    pub fn marginal_ratio(&self) -> SharedRatio {
        standard_normal_ratio()
    }
}

pub fn standard_normal_ratio() -> SharedRatio {
    analytic_ratio(Some(1), |p: &[f64]| -0.5 * p[0] * p[0])
}

impl DensityModel for GaussianTestbed {
    fn names(&self) -> Vec<String> {
        vec!["phi".into(), "gamma".into()]
    }

    fn dim(&self) -> usize {
        2
    }

    fn supports(&self) -> Vec<Support> {
        vec![Support::Real; 2]
    }

    fn log_density(&self, t: &[f64]) -> f64 {
        let (x, y, r) = (t[0], t[1], self.rho);
        let q = (x * x - 2.0 * r * x * y + y * y) / (1.0 - r * r);
        -0.5 * q - (2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 - r * r).ln()
    }

    fn phi_dim(&self) -> usize {
        1
    }

    fn phi(&self, t: &[f64]) -> Vec<f64> {
        vec![t[0]]
    }

    fn phi_names(&self) -> Vec<String> {
        vec!["phi".into()]
    }

    fn initial(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn phi_is_leading(&self) -> bool {
        true
    }
}

impl PriorSampler for GaussianTestbed {
    fn sample_theta(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        vec![z1, self.rho * z1 + (1.0 - self.rho * self.rho).sqrt() * z2]
    }
}

/// Observations and noise levels of the Gaussian melding problem.
///
/// Submodel 1: the test bed `(φ, γ)` with `y₁ ~ N(γ, τ₁²)`.
/// Submodel 2: `φ ~ N(0, s₂²)` with `y₂ ~ N(φ, τ₂²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeld {
    pub rho: f64,
    pub y1: f64,
    pub tau1: f64,
    pub s2: f64,
    pub y2: f64,
    pub tau2: f64,
}

impl Default for GaussianMeld {
    fn default() -> Self {
        GaussianMeld {
            rho: 0.8,
            y1: 1.0,
            tau1: 0.5,
            s2: 1.5,
            y2: 2.5,
            tau2: 0.5,
        }
    }
}

impl GaussianMeld {
    pub fn sub1(&self) -> Result<GaussianSub1> {
        Ok(GaussianSub1 {
            bed: GaussianTestbed::new(self.rho)?,
            y1: self.y1,
            tau1: self.tau1,
        })
    }

    pub fn sub2(&self) -> GaussianSub2 {
        GaussianSub2 {
            s2: self.s2,
            y2: self.y2,
            tau2: self.tau2,
        }
    }

    /// Mean and variance of φ under the melded posterior with log pooling
    /// weights `(λ₁, λ₂)`.
    pub fn melded_phi(&self, lambda: (f64, f64)) -> (f64, f64) {
        // Precision-weighted sum of Gaussian factors in φ.
        let (l1, l2) = lambda;
        let prior_prec = l1 + l2 / (self.s2 * self.s2);
        let v1 = 1.0 - self.rho * self.rho + self.tau1 * self.tau1;
        let like1_prec = self.rho * self.rho / v1;
        let like1_lin = self.rho * self.y1 / v1;
        let like2_prec = 1.0 / (self.tau2 * self.tau2);
        let like2_lin = self.y2 / (self.tau2 * self.tau2);
        let prec = prior_prec + like1_prec + like2_prec;
        ((like1_lin + like2_lin) / prec, 1.0 / prec)
    }
}

/// Test bed plus one observation of γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSub1 {
    bed: GaussianTestbed,
    y1: f64,
    tau1: f64,
}

impl GaussianSub1 {
    pub fn prior(&self) -> GaussianTestbed {
        self.bed
    }
}

impl DensityModel for GaussianSub1 {
    fn names(&self) -> Vec<String> {
        self.bed.names()
    }

    fn dim(&self) -> usize {
        2
    }

    fn supports(&self) -> Vec<Support> {
        self.bed.supports()
    }

    fn log_density(&self, t: &[f64]) -> f64 {
        self.bed.log_density(t) + ln_normal_pdf(self.y1, t[1], self.tau1 * self.tau1)
    }

    fn phi_dim(&self) -> usize {
        1
    }

    fn phi(&self, t: &[f64]) -> Vec<f64> {
        vec![t[0]]
    }

    fn phi_names(&self) -> Vec<String> {
        self.bed.phi_names()
    }

    fn initial(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn phi_is_leading(&self) -> bool {
        true
    }
}

/// `φ ~ N(0, s₂²)` with one observation of φ; no other parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSub2 {
    s2: f64,
    y2: f64,
    tau2: f64,
}

impl GaussianSub2 {
    pub fn marginal_ratio(&self) -> SharedRatio {
        let v = self.s2 * self.s2;
        analytic_ratio(Some(1), move |p: &[f64]| -0.5 * p[0] * p[0] / v)
    }
}

impl DensityModel for GaussianSub2 {
    fn names(&self) -> Vec<String> {
        vec!["phi".into()]
    }

    fn dim(&self) -> usize {
        1
    }

    fn supports(&self) -> Vec<Support> {
        vec![Support::Real]
    }

    fn log_density(&self, t: &[f64]) -> f64 {
        ln_normal_pdf(t[0], 0.0, self.s2 * self.s2) + ln_normal_pdf(self.y2, t[0], self.tau2 * self.tau2)
    }

    fn phi_dim(&self) -> usize {
        1
    }

    fn phi(&self, t: &[f64]) -> Vec<f64> {
        vec![t[0]]
    }

    fn phi_names(&self) -> Vec<String> {
        vec!["phi".into()]
    }

    fn initial(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn phi_is_leading(&self) -> bool {
        true
    }
}
