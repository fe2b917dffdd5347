//! Model and ratio-evaluation contracts.
//!
//! A [`DensityModel`] is an unnormalized log joint density over a named
//! parameter vector θ, with the shared quantity φ exposed either as leading
//! coordinates of θ or as a derived function of θ. A [`RatioEvaluator`]
//! returns `log p(φ_nu) − log p(φ_de)` for some (possibly estimated) marginal.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_logistic, logistic};

/// Per-coordinate support, used by the samplers to pick an unconstrained scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Real,
    /// `(0, ∞)`, sampled on the log scale.
    Positive,
    /// `(0, 1)`, sampled on the logit scale.
    Unit,
    /// `(lo, hi)`, sampled on a scaled logit.
    Interval { lo: f64, hi: f64 },
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::Real => x.is_finite(),
            Support::Positive => x > 0.0 && x.is_finite(),
            Support::Unit => x > 0.0 && x < 1.0,
            Support::Interval { lo, hi } => x > lo && x < hi,
        }
    }

    /// Map a constrained value to the unconstrained real line.
    pub fn to_unconstrained(&self, x: f64) -> f64 {
        match *self {
            Support::Real => x,
            Support::Positive => x.ln(),
            Support::Unit => (x / (1.0 - x)).ln(),
            Support::Interval { lo, hi } => {
                let p = (x - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            }
        }
    }

    /// Inverse of [`Support::to_unconstrained`] together with
    /// `ln |dx/du|`.
    pub fn from_unconstrained(&self, u: f64) -> (f64, f64) {
        match *self {
            Support::Real => (u, 0.0),
            Support::Positive => (u.exp(), u),
            Support::Unit => (logistic(u), ln_logistic(u) + ln_logistic(-u)),
            Support::Interval { lo, hi } => {
                let w = hi - lo;
                (
                    lo + w * logistic(u),
                    w.ln() + ln_logistic(u) + ln_logistic(-u),
                )
            }
        }
    }
}

/// Unnormalized log joint density over θ with a distinguished φ.
///
/// `log_density` must return `-inf` off support and never NaN.
pub trait DensityModel: Send + Sync {
    fn names(&self) -> Vec<String>;

    fn dim(&self) -> usize;

    fn supports(&self) -> Vec<Support>;

    fn log_density(&self, theta: &[f64]) -> f64;

    fn phi_dim(&self) -> usize;

    /// φ as a function of θ. Only meaningful on support.
    fn phi(&self, theta: &[f64]) -> Vec<f64>;

    /// Names of the φ coordinates.
    fn phi_names(&self) -> Vec<String>;

    /// A point inside the support.
    fn initial(&self) -> Vec<f64>;

    /// `true` when φ occupies θ[0..phi_dim] directly.
    fn phi_is_leading(&self) -> bool {
        false
    }

    /// An in-support initial state whose φ equals `phi`, for models with
    /// leading φ coordinates.
    fn initial_with_phi(&self, phi: &[f64]) -> Vec<f64> {
        let mut theta = self.initial();
        theta[..phi.len()].copy_from_slice(phi);
        theta
    }
}

/// Evaluate `model.log_density`, checking dimension, finiteness and NaN.
pub fn checked_log_density(model: &dyn DensityModel, theta: &[f64]) -> Result<f64> {
    if theta.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: theta.len(),
        });
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinitePoint(theta.to_vec()));
    }
    let lp = model.log_density(theta);
    if lp.is_nan() {
        return Err(Error::NanDensity(theta.to_vec()));
    }
    Ok(lp)
}

/// Check that `phi` has dimension `dim` (when known) and finite entries.
pub fn check_point(phi: &[f64], dim: Option<usize>) -> Result<()> {
    if let Some(d) = dim {
        if phi.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: phi.len(),
            });
        }
    }
    if phi.is_empty() || phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinitePoint(phi.to_vec()));
    }
    Ok(())
}

/// Where a ratio evaluator's numbers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    Naive,
    WsreSingle,
    WsreCombined,
    Constant,
    Scaled,
    Pooled,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Analytic => "analytic",
            Provenance::Naive => "naive",
            Provenance::WsreSingle => "wsre-single",
            Provenance::WsreCombined => "wsre-combined",
            Provenance::Constant => "constant",
            Provenance::Scaled => "scaled",
            Provenance::Pooled => "pooled",
        };
        f.write_str(s)
    }
}

/// Per-point precomputation an evaluator needs to form ratios.
///
/// Stage two evaluates ratios between a fixed finite set of points many
/// times over, so summaries are computed once per point and reused.
#[derive(Debug, Clone, PartialEq)]
pub enum Summary {
    Empty,
    Scalar(f64),
    Vector(Vec<f64>),
    Composite(Vec<Summary>),
}

impl Summary {
    pub fn scalar(&self) -> Result<f64> {
        match self {
            Summary::Scalar(v) => Ok(*v),
            other => Err(Error::InvalidArgument(format!(
                "expected a scalar summary, got {other:?}"
            ))),
        }
    }
}

/// `log r(φ_nu, φ_de) = log p(φ_nu) − log p(φ_de)`.
///
/// Implementations guarantee `log_ratio(φ, φ) == 0.0` exactly for in-support
/// φ: both summaries are computed identically, so the difference is zero.
pub trait RatioEvaluator: Send + Sync + fmt::Debug {
    fn provenance(&self) -> Provenance;

    /// φ dimension, when fixed by the evaluator.
    fn dim(&self) -> Option<usize>;

    fn summarize(&self, phi: &[f64]) -> Result<Summary>;

    fn log_ratio_summaries(&self, nu: &Summary, de: &Summary) -> Result<f64>;

    fn log_ratio(&self, nu: &[f64], de: &[f64]) -> Result<f64> {
        let s_nu = self.summarize(nu)?;
        let s_de = self.summarize(de)?;
        self.log_ratio_summaries(&s_nu, &s_de).map_err(|e| match e {
            Error::OutOfSupport(_) => Error::OutOfSupport(de.to_vec()),
            other => other,
        })
    }
}

pub type SharedRatio = Arc<dyn RatioEvaluator>;

type LogMarginal = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Ratio from a known log marginal density (up to a constant).
pub struct AnalyticRatio {
    f: Box<LogMarginal>,
    dim: Option<usize>,
}

impl fmt::Debug for AnalyticRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticRatio").field("dim", &self.dim).finish()
    }
}

pub fn analytic_ratio<F>(dim: Option<usize>, log_marginal: F) -> SharedRatio
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(AnalyticRatio {
        f: Box::new(log_marginal),
        dim,
    })
}

impl RatioEvaluator for AnalyticRatio {
    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn summarize(&self, phi: &[f64]) -> Result<Summary> {
        check_point(phi, self.dim)?;
        let v = (self.f)(phi);
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::NanDensity(phi.to_vec()));
        }
        Ok(Summary::Scalar(v))
    }

    fn log_ratio_summaries(&self, nu: &Summary, de: &Summary) -> Result<f64> {
        let (a, b) = (nu.scalar()?, de.scalar()?);
        if b == f64::NEG_INFINITY {
            return Err(Error::OutOfSupport(Vec::new()));
        }
        Ok(a - b)
    }
}

/// `log r ≡ 0`: a marginal that is flat over the region of interest.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantRatio;

pub fn constant_ratio() -> SharedRatio {
    Arc::new(ConstantRatio)
}

impl RatioEvaluator for ConstantRatio {
    fn provenance(&self) -> Provenance {
        Provenance::Constant
    }

    fn dim(&self) -> Option<usize> {
        None
    }

    fn summarize(&self, phi: &[f64]) -> Result<Summary> {
        check_point(phi, None)?;
        Ok(Summary::Empty)
    }

    fn log_ratio_summaries(&self, _nu: &Summary, _de: &Summary) -> Result<f64> {
        Ok(0.0)
    }
}

/// `r^λ`: scales the base log ratio by `exponent`.
#[derive(Debug)]
pub struct PowRatio {
    base: SharedRatio,
    exponent: f64,
}

pub fn pow_ratio(base: SharedRatio, exponent: f64) -> Result<SharedRatio> {
    if !exponent.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ratio exponent must be finite, got {exponent}"
        )));
    }
    Ok(Arc::new(PowRatio { base, exponent }))
}

impl RatioEvaluator for PowRatio {
    fn provenance(&self) -> Provenance {
        Provenance::Scaled
    }

    fn dim(&self) -> Option<usize> {
        self.base.dim()
    }

    fn summarize(&self, phi: &[f64]) -> Result<Summary> {
        if self.exponent == 0.0 {
            check_point(phi, self.base.dim())?;
            return Ok(Summary::Empty);
        }
        self.base.summarize(phi)
    }

    fn log_ratio_summaries(&self, nu: &Summary, de: &Summary) -> Result<f64> {
        if self.exponent == 0.0 {
            return Ok(0.0);
        }
        if self.exponent == 1.0 {
            return self.base.log_ratio_summaries(nu, de);
        }
        Ok(self.exponent * self.base.log_ratio_summaries(nu, de)?)
    }
}

/// Draws of φ (or of any vector quantity) with provenance metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub dim: usize,
    pub draws: Vec<Vec<f64>>,
    pub label: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn new(draws: Vec<Vec<f64>>, label: impl Into<String>, seed: Option<u64>) -> Result<Self> {
        let label = label.into();
        let Some(first) = draws.first() else {
            return Err(Error::EmptySample(label));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("sample points must have dimension ≥ 1".into()));
        }
        for d in &draws {
            check_point(d, Some(dim))?;
        }
        Ok(SampleSet {
            dim,
            draws,
            label,
            seed,
            ess: None,
        })
    }

    /// One-dimensional convenience constructor.
    pub fn from_scalars(xs: &[f64], label: impl Into<String>, seed: Option<u64>) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect(), label, seed)
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Values of coordinate `j` across draws.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }
}
