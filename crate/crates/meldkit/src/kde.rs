//! Gaussian kernel density estimators.
//!
//! `K_h` is the normalized Gaussian density with standard deviation `h` per
//! dimension; multivariate estimates use product kernels with a diagonal
//! bandwidth. The standard estimator is `(1/N) Σ K_h(φ − φ_n)`. The
//! inverse-weighted (Jones) form `Σ w(φ_n)^{-1} K_h(φ − φ_n)` is left
//! unnormalized because only its ratios at two points are ever used.

use std::sync::Arc;

use crate::density::{check_point, Provenance, RatioEvaluator, SampleSet, SharedRatio, Summary};
use crate::error::{Error, Result};
use crate::special::{quantile_sorted, sample_var, sorted, LN_SQRT_2PI};

pub use crate::special::log_sum_exp;

/// Silverman's rule per dimension: `0.9 · min(sd, IQR/1.34) · N^(−1/5)`.
///
/// When the IQR is zero but the standard deviation is not, the standard
/// deviation alone is used.
pub fn bandwidth_rule(sample: &SampleSet) -> Result<Vec<f64>> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!(
            "bandwidth rule needs at least 2 draws, `{}` has {n}",
            sample.label
        )));
    }
    let factor = 0.9 * (n as f64).powf(-0.2);
    (0..sample.dim)
        .map(|j| {
            let col = sample.column(j);
            let sd = sample_var(&col).sqrt();
            if !(sd > 0.0) {
                return Err(Error::DegenerateSample(format!(
                    "dimension {j} of `{}` has zero spread",
                    sample.label
                )));
            }
            let s = sorted(&col);
            let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
            let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
            Ok(factor * spread)
        })
        .collect()
}

/// A Gaussian product-kernel density estimate over a fixed sample.
#[derive(Debug, Clone)]
pub struct Kde {
    dim: usize,
    n: usize,
    /// Row-major `n × dim` copy of the sample.
    points: Vec<f64>,
    bandwidth: Vec<f64>,
    inv_h: Vec<f64>,
    /// `Σ_j (−ln h_j − ½ ln 2π)`.
    log_kernel_norm: f64,
    /// `−ln w(φ_n)` per draw for the inverse-weighted form.
    log_inv_weights: Option<Vec<f64>>,
}

impl Kde {
    /// Standard estimator; Silverman bandwidth unless `bandwidth` is given.
    pub fn new(sample: &SampleSet, bandwidth: Option<Vec<f64>>) -> Result<Self> {
        let bandwidth = match bandwidth {
            Some(h) => h,
            None => bandwidth_rule(sample)?,
        };
        Self::build(sample, bandwidth, None)
    }

    /// Inverse-weighted estimator with per-draw `−ln w(φ_n; ξ)`.
    pub fn inverse_weighted(
        sample: &SampleSet,
        bandwidth: Option<Vec<f64>>,
        log_inv_weights: Vec<f64>,
    ) -> Result<Self> {
        if log_inv_weights.len() != sample.len() {
            return Err(Error::Dimension {
                expected: sample.len(),
                got: log_inv_weights.len(),
            });
        }
        if let Some(bad) = log_inv_weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "inverse weight of draw {bad} is not finite"
            )));
        }
        let bandwidth = match bandwidth {
            Some(h) => h,
            None => bandwidth_rule(sample)?,
        };
        Self::build(sample, bandwidth, Some(log_inv_weights))
    }

    fn build(sample: &SampleSet, bandwidth: Vec<f64>, log_inv_weights: Option<Vec<f64>>) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample(sample.label.clone()));
        }
        if bandwidth.len() != sample.dim {
            return Err(Error::Dimension {
                expected: sample.dim,
                got: bandwidth.len(),
            });
        }
        if bandwidth.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "bandwidths must be positive and finite, got {bandwidth:?}"
            )));
        }
        let points = sample.draws.iter().flatten().copied().collect();
        let inv_h = bandwidth.iter().map(|h| 1.0 / h).collect();
        let log_kernel_norm = bandwidth.iter().map(|h| -h.ln() - LN_SQRT_2PI).sum();
        Ok(Kde {
            dim: sample.dim,
            n: sample.len(),
            points,
            bandwidth,
            inv_h,
            log_kernel_norm,
            log_inv_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn is_weighted(&self) -> bool {
        self.log_inv_weights.is_some()
    }

    fn log_kernel_sum(&self, phi: &[f64]) -> Result<f64> {
        check_point(phi, Some(self.dim))?;
        let mut terms = Vec::with_capacity(self.n);
        match self.dim {
            1 => {
                let (x, ih) = (phi[0], self.inv_h[0]);
                for &p in &self.points {
                    let z = (x - p) * ih;
                    terms.push(-0.5 * z * z);
                }
            }
            2 => {
                let (x, y) = (phi[0], phi[1]);
                let (ih0, ih1) = (self.inv_h[0], self.inv_h[1]);
                for p in self.points.chunks_exact(2) {
                    let z0 = (x - p[0]) * ih0;
                    let z1 = (y - p[1]) * ih1;
                    terms.push(-0.5 * (z0 * z0 + z1 * z1));
                }
            }
            _ => {
                for p in self.points.chunks_exact(self.dim) {
                    let mut q = 0.0;
                    for j in 0..self.dim {
                        let z = (phi[j] - p[j]) * self.inv_h[j];
                        q += z * z;
                    }
                    terms.push(-0.5 * q);
                }
            }
        }
        if let Some(lw) = &self.log_inv_weights {
            for (t, w) in terms.iter_mut().zip(lw) {
                *t += w;
            }
        }
        Ok(self.log_kernel_norm + log_sum_exp(&terms))
    }

    /// `log (1/N) Σ K_h(φ − φ_n)`; standard estimators only.
    pub fn log_pdf(&self, phi: &[f64]) -> Result<f64> {
        if self.is_weighted() {
            return Err(Error::InvalidArgument(
                "log_pdf called on an inverse-weighted estimator".into(),
            ));
        }
        Ok(self.log_kernel_sum(phi)? - (self.n as f64).ln())
    }

    /// `log Σ w(φ_n)^{-1} K_h(φ − φ_n)`, unnormalized; weighted estimators only.
    pub fn log_weighted_unnorm(&self, phi: &[f64]) -> Result<f64> {
        if !self.is_weighted() {
            return Err(Error::InvalidArgument(
                "log_weighted_unnorm needs an inverse-weighted estimator".into(),
            ));
        }
        self.log_kernel_sum(phi)
    }
}

/// Product of a kernel and a Gaussian weight in one dimension:
/// `K_h(φ − φ_n) · N(φ; μ, σ²) = S · N(φ; μ_p, σ_p²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianProduct {
    pub log_s: f64,
    pub mean: f64,
    pub var: f64,
}

pub fn gaussian_product_params(phi_n: f64, h: f64, mu: f64, sigma2: f64) -> Result<GaussianProduct> {
    if !(h > 0.0 && sigma2 > 0.0) || !phi_n.is_finite() || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian product needs h > 0, σ² > 0 and finite centres (h={h}, σ²={sigma2})"
        )));
    }
    let h2 = h * h;
    let s2 = h2 + sigma2;
    let d = phi_n - mu;
    Ok(GaussianProduct {
        log_s: -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * d * d / s2,
        mean: (h2 * mu + sigma2 * phi_n) / s2,
        var: h2 * sigma2 / s2,
    })
}

/// Ratio of a standard KDE fitted to direct draws from the marginal.
#[derive(Debug)]
pub struct NaiveRatio {
    kde: Kde,
}

impl NaiveRatio {
    pub fn new(sample: &SampleSet, bandwidth: Option<Vec<f64>>) -> Result<Self> {
        Ok(NaiveRatio {
            kde: Kde::new(sample, bandwidth)?,
        })
    }

    pub fn kde(&self) -> &Kde {
        &self.kde
    }
}

/// Naive self-density ratio from prior draws of φ.
pub fn naive_ratio(sample: &SampleSet, bandwidth: Option<Vec<f64>>) -> Result<SharedRatio> {
    Ok(Arc::new(NaiveRatio::new(sample, bandwidth)?))
}

impl RatioEvaluator for NaiveRatio {
    fn provenance(&self) -> Provenance {
        Provenance::Naive
    }

    fn dim(&self) -> Option<usize> {
        Some(self.kde.dim())
    }

    fn summarize(&self, phi: &[f64]) -> Result<Summary> {
        Ok(Summary::Scalar(self.kde.log_pdf(phi)?))
    }

    fn log_ratio_summaries(&self, nu: &Summary, de: &Summary) -> Result<f64> {
        let (a, b) = (nu.scalar()?, de.scalar()?);
        if b == f64::NEG_INFINITY {
            // Every kernel underflowed at the denominator.
            return Err(Error::OutOfSupport(Vec::new()));
        }
        Ok(a - b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(xs: &[f64]) -> SampleSet {
        SampleSet::from_scalars(xs, "t", None).unwrap()
    }

    #[test]
    fn silverman_two_points() {
        // sd = √2, IQR = 1 (type 7), so min is 1/1.34.
        let h = bandwidth_rule(&sample(&[-1.0, 1.0])).unwrap();
        let expected = 0.9 * (2f64.sqrt()).min(1.0 / 1.34) * 2f64.powf(-0.2);
        assert!((h[0] - expected).abs() < 1e-15);
        assert!((h[0] - 0.584_7).abs() < 1e-4);
    }

    #[test]
    fn silverman_is_scale_equivariant_and_diagonal() {
        let xs = [0.3, -1.2, 2.2, 0.8, -0.4, 1.7];
        let h = bandwidth_rule(&sample(&xs)).unwrap()[0];
        let scaled: Vec<f64> = xs.iter().map(|x| 3.5 * x).collect();
        let hs = bandwidth_rule(&sample(&scaled)).unwrap()[0];
        assert!((hs - 3.5 * h).abs() < 1e-12);

        let two = SampleSet::new(xs.iter().map(|&x| vec![x, 10.0 * x]).collect(), "t", None).unwrap();
        let h2 = bandwidth_rule(&two).unwrap();
        assert_eq!(h2.len(), 2);
        assert!((h2[0] - h).abs() < 1e-15);
        assert!((h2[1] - 10.0 * h).abs() < 1e-12);
    }

    #[test]
    fn degenerate_samples_error() {
        assert!(bandwidth_rule(&sample(&[1.0])).is_err());
        assert!(bandwidth_rule(&sample(&[2.0, 2.0, 2.0])).is_err());
    }

    #[test]
    fn zero_iqr_falls_back_to_sd() {
        let xs = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0];
        let h = bandwidth_rule(&sample(&xs)).unwrap()[0];
        let sd = sample_var(&xs).sqrt();
        assert!((h - 0.9 * sd * 7f64.powf(-0.2)).abs() < 1e-14);
    }

    #[test]
    fn single_point_kde() {
        let k = Kde::new(&sample(&[0.7]), Some(vec![1.0])).unwrap();
        assert!((k.log_pdf(&[0.7]).unwrap() + LN_SQRT_2PI).abs() < 1e-15);
        assert!((k.log_pdf(&[1.7]).unwrap() + LN_SQRT_2PI + 0.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_reduces_to_standard() {
        let s = sample(&[0.1, -0.5, 1.4, 2.0, -2.2]);
        let std = Kde::new(&s, None).unwrap();
        let w = Kde::inverse_weighted(&s, None, vec![0.0; 5]).unwrap();
        for &x in &[-3.0, -0.2, 0.0, 1.1, 4.0] {
            let a = std.log_pdf(&[x]).unwrap();
            let b = w.log_weighted_unnorm(&[x]).unwrap() - 5f64.ln();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_single_draw_cancels_weight() {
        let s = sample(&[0.4]);
        let k = Kde::inverse_weighted(&s, Some(vec![0.5]), vec![3.7]).unwrap();
        let a = k.log_weighted_unnorm(&[1.0]).unwrap();
        let b = k.log_weighted_unnorm(&[-0.3]).unwrap();
        let kern = |x: f64| -0.5 * ((x - 0.4) / 0.5f64).powi(2);
        assert!((a - b - (kern(1.0) - kern(-0.3))).abs() < 1e-12);
        let direct = 3.7 - 0.5f64.ln() - LN_SQRT_2PI + kern(1.0);
        assert!((a - direct).abs() < 1e-12);
    }

    #[test]
    fn non_finite_weight_rejected() {
        let s = sample(&[0.0, 1.0]);
        assert!(Kde::inverse_weighted(&s, None, vec![0.0, f64::INFINITY]).is_err());
        assert!(Kde::inverse_weighted(&s, None, vec![0.0]).is_err());
    }

    #[test]
    fn mode_misuse_errors() {
        let s = sample(&[0.0, 1.0]);
        assert!(Kde::new(&s, None).unwrap().log_weighted_unnorm(&[0.0]).is_err());
        assert!(Kde::inverse_weighted(&s, None, vec![0.0, 0.0]).unwrap().log_pdf(&[0.0]).is_err());
    }

    #[test]
    fn product_examples() {
        let g = gaussian_product_params(0.0, 1.0, 2.0, 1.0).unwrap();
        assert!((g.var - 0.5).abs() < 1e-15);
        assert!((g.mean - 1.0).abs() < 1e-15);
        assert!((g.log_s - (-0.5 * (4.0 * std::f64::consts::PI).ln() - 1.0)).abs() < 1e-15);

        let g = gaussian_product_params(1.3, 0.4, 1.3, 2.0).unwrap();
        assert!((g.log_s + 0.5 * (2.0 * std::f64::consts::PI * 2.16).ln()).abs() < 1e-15);
        assert!((g.mean - 1.3).abs() < 1e-15);
        assert!(gaussian_product_params(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn naive_ratio_identity() {
        let s = sample(&[0.1, -0.5, 1.4, 2.0, -2.2]);
        let r = naive_ratio(&s, None).unwrap();
        for &x in &[-30.0, 0.0, 2.5] {
            assert_eq!(r.log_ratio(&[x], &[x]).unwrap(), 0.0);
        }
        assert_eq!(r.provenance(), Provenance::Naive);
    }
}
