//! Weighted-sample self-density ratio estimation.
//!
//! For each weighting function `w(φ; ξ_w)` the tilted target
//! `p(φ, γ) w(φ; ξ_w)` is sampled by MCMC, its φ draws feed an
//! inverse-weighted KDE whose ratios estimate `p(φ_nu)/p(φ_de)` without the
//! tilted normalizing constant, and the per-w estimates are averaged with
//! weights `ŝ_w(φ_nu) ŝ_w(φ_de)` from a standard KDE of the same draws.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{check_point, DensityModel, Provenance, RatioEvaluator, SampleSet, SharedRatio, Summary, Support};
use crate::error::{Error, Result};
use crate::kde::{gaussian_product_params, log_sum_exp, Kde};
use crate::mcmc::{componentwise_metropolis, rw_metropolis, stream_rng, MhSettings, ModelTarget};
use crate::special::{mean, normal_interval, sample_var, LN_SQRT_2PI};

/// Diagonal Gaussian weight `w(φ; μ, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingFunction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl WeightingFunction {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != var.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: var.len(),
            });
        }
        if mean.iter().any(|m| !m.is_finite()) || var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "weighting function needs finite means and positive variances, got μ={mean:?}, σ²={var:?}"
            )));
        }
        Ok(WeightingFunction { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `ln w(φ; ξ)`, finite for every finite φ.
    pub fn log_w(&self, phi: &[f64]) -> f64 {
        let mut lw = 0.0;
        for ((x, m), v) in phi.iter().zip(&self.mean).zip(&self.var) {
            let d = x - m;
            lw += -LN_SQRT_2PI - 0.5 * v.ln() - 0.5 * d * d / v;
        }
        lw
    }

    /// `count` equally spaced means on `[lo, hi]` with common variance.
    pub fn grid_1d(lo: f64, hi: f64, count: usize, var: f64) -> Result<Vec<Self>> {
        Ok(linspace(lo, hi, count)?
            .into_iter()
            .map(|m| WeightingFunction { mean: vec![m], var: vec![var] })
            .collect())
    }

    /// Product grid of equally spaced means; the first coordinate varies slowest.
    pub fn grid_2d(lo: [f64; 2], hi: [f64; 2], count: [usize; 2], var: [f64; 2]) -> Result<Vec<Self>> {
        let xs = linspace(lo[0], hi[0], count[0])?;
        let ys = linspace(lo[1], hi[1], count[1])?;
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &x in &xs {
            for &y in &ys {
                out.push(WeightingFunction::new(vec![x, y], var.to_vec())?);
            }
        }
        Ok(out)
    }
}

/// Product grid of weighting means: `count` equally spaced values per
/// coordinate, shared variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub count: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub var: Vec<f64>,
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Weighting functions, first coordinate varying slowest.
    pub fn build(&self) -> Result<Vec<WeightingFunction>> {
        let d = self.lo.len();
        if d == 0 || self.hi.len() != d || self.var.len() != d {
            return Err(Error::InvalidArgument(format!(
                "grid bounds and variances disagree in length: lo {}, hi {}, var {}",
                d,
                self.hi.len(),
                self.var.len()
            )));
        }
        let axes = (0..d)
            .map(|j| linspace(self.lo[j], self.hi[j], self.count))
            .collect::<Result<Vec<_>>>()?;
        let mut means: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &axes {
            means = means
                .into_iter()
                .flat_map(|m| {
                    axis.iter().map(move |x| {
                        let mut next = m.clone();
                        next.push(*x);
                        next
                    })
                })
                .collect();
        }
        means.into_iter().map(|m| WeightingFunction::new(m, self.var.clone())).collect()
    }
}

/// `count` equally spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 || !lo.is_finite() || !hi.is_finite() || (count > 1 && lo > hi) {
        return Err(Error::InvalidArgument(format!(
            "bad grid: {count} points on [{lo}, {hi}]"
        )));
    }
    if count == 1 {
        return Ok(vec![0.5 * (lo + hi)]);
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count).map(|i| if i + 1 == count { hi } else { lo + step * i as f64 }).collect())
}

/// `p(θ) w(φ(θ); ξ)`, unnormalized.
pub struct WeightedTarget {
    base: Arc<dyn DensityModel>,
    wf: WeightingFunction,
}

pub fn weighted_target(model: Arc<dyn DensityModel>, wf: WeightingFunction) -> Result<WeightedTarget> {
    if model.phi_dim() != wf.dim() {
        return Err(Error::Dimension {
            expected: model.phi_dim(),
            got: wf.dim(),
        });
    }
    Ok(WeightedTarget { base: model, wf })
}

impl WeightedTarget {
    pub fn weighting(&self) -> &WeightingFunction {
        &self.wf
    }
}

impl DensityModel for WeightedTarget {
    fn names(&self) -> Vec<String> {
        self.base.names()
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn supports(&self) -> Vec<Support> {
        self.base.supports()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let lp = self.base.log_density(theta);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.wf.log_w(&self.base.phi(theta))
    }

    fn phi_dim(&self) -> usize {
        self.base.phi_dim()
    }

    fn phi(&self, theta: &[f64]) -> Vec<f64> {
        self.base.phi(theta)
    }

    fn phi_names(&self) -> Vec<String> {
        self.base.phi_names()
    }

    fn initial(&self) -> Vec<f64> {
        self.base.initial()
    }

    fn phi_is_leading(&self) -> bool {
        self.base.phi_is_leading()
    }
}

/// How the κ solver's answer was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaStatus {
    /// A root of `mass(μ) = κ` was bracketed and bisected.
    Exact,
    /// The mass exceeds κ for every scanned μ (e.g. the region covers the
    /// whole sample); the region midpoint is returned.
    Saturated,
    /// The mass never reaches κ; the μ with the largest mass is returned.
    Unattainable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSolution {
    pub mu: f64,
    pub mass: f64,
    pub status: KappaStatus,
}

/// Share of the tilted KDE `p̂(φ) N(φ; μ, σ²)` lying in `[a, b]`.
pub fn kappa_mass(points: &[f64], h: f64, region: (f64, f64), sigma2: f64, mu: f64) -> Result<f64> {
    let (a, b) = region;
    let mut log_s = Vec::with_capacity(points.len());
    let mut inner = Vec::with_capacity(points.len());
    for &p in points {
        let g = gaussian_product_params(p, h, mu, sigma2)?;
        let sd = g.var.sqrt();
        log_s.push(g.log_s);
        inner.push(normal_interval((a - g.mean) / sd, (b - g.mean) / sd));
    }
    let top = log_s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (ls, q) in log_s.iter().zip(&inner) {
        let s = (ls - top).exp();
        num += s * q;
        den += s;
    }
    Ok(num / den)
}

/// Find the weighting mean μ that puts a share κ of the tilted KDE mass in
/// `region`, for fixed σ². One-dimensional samples only.
///
/// μ is scanned over `[min − 10 sd, max + 10 sd]` of the sample; every sign
/// change of `mass − κ` is bisected and the root nearest the region midpoint
/// is returned.
pub fn solve_kappa(sample: &SampleSet, h: f64, region: (f64, f64), kappa: f64, sigma2: f64) -> Result<KappaSolution> {
    if sample.dim != 1 {
        return Err(Error::Unsupported("solve_kappa is one-dimensional".into()));
    }
    let (a, b) = region;
    if !(a < b) {
        return Err(Error::InvalidArgument(format!("empty region [{a}, {b}]")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidArgument(format!("κ must lie in (0, 1), got {kappa}")));
    }
    if !(h > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidArgument("h and σ² must be positive".into()));
    }
    let xs = sample.column(0);
    if xs.len() < 2 {
        return Err(Error::DegenerateSample("κ solver needs at least 2 draws".into()));
    }
    let sd = sample_var(&xs).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("κ solver sample has zero spread".into()));
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * sd;
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * sd;
    let grid = linspace(lo, hi, 2001)?;
    let f = |mu: f64| kappa_mass(&xs, h, region, sigma2, mu).map(|m| m - kappa);
    let vals = grid.iter().map(|&m| f(m)).collect::<Result<Vec<_>>>()?;

    let mid = 0.5 * (a + b);
    let mut best: Option<f64> = None;
    for i in 0..grid.len() - 1 {
        let (f0, f1) = (vals[i], vals[i + 1]);
        let root = if f0 == 0.0 {
            Some(grid[i])
        } else if (f0 < 0.0) != (f1 < 0.0) && f1 != 0.0 {
            let (mut l, mut r, mut fl) = (grid[i], grid[i + 1], f0);
            for _ in 0..100 {
                let m = 0.5 * (l + r);
                let fm = f(m)?;
                if (fm < 0.0) == (fl < 0.0) {
                    l = m;
                    fl = fm;
                } else {
                    r = m;
                }
                if r - l <= 1e-13 * (1.0 + m.abs()) {
                    break;
                }
            }
            Some(0.5 * (l + r))
        } else {
            None
        };
        if let Some(r) = root {
            if best.is_none_or(|b| (r - mid).abs() < (b - mid).abs()) {
                best = Some(r);
            }
        }
    }
    if let Some(mu) = best {
        return Ok(KappaSolution {
            mu,
            mass: f(mu)? + kappa,
            status: KappaStatus::Exact,
        });
    }
    if vals.iter().all(|v| *v > 0.0) {
        let mu = mid.clamp(lo, hi);
        return Ok(KappaSolution {
            mu,
            mass: f(mu)? + kappa,
            status: KappaStatus::Saturated,
        });
    }
    let (i, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    Ok(KappaSolution {
        mu: grid[i],
        mass: vals[i] + kappa,
        status: KappaStatus::Unattainable,
    })
}

/// MCMC settings for the weighted targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsreMcmc {
    /// Discarded iterations; defaults to the number of kept draws.
    #[serde(default)]
    pub warmup: Option<usize>,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub step: Vec<f64>,
    /// One random-walk block per coordinate instead of a joint block.
    #[serde(default)]
    pub componentwise: bool,
    /// Learn a full proposal covariance for the joint block during warmup.
    #[serde(default)]
    pub adapt_covariance: bool,
}

fn one() -> usize {
    1
}

impl Default for WsreMcmc {
    fn default() -> Self {
        WsreMcmc {
            warmup: None,
            thin: 1,
            step: Vec::new(),
            componentwise: false,
            adapt_covariance: false,
        }
    }
}

impl WsreMcmc {
    pub fn settings(&self, n: usize, seed: u64) -> MhSettings {
        let warmup = self.warmup.unwrap_or(n);
        MhSettings::new(warmup + n * self.thin, warmup, seed)
            .with_thin(self.thin)
            .with_step(self.step.clone())
            .with_adapt_covariance(self.adapt_covariance)
    }
}

/// Draws of φ from one tilted target, with what is needed to rebuild its
/// estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSampleSet {
    pub weighting: WeightingFunction,
    pub sample: SampleSet,
    pub bandwidth: Vec<f64>,
    pub seed: u64,
    pub acceptance_rate: f64,
}

/// Jones ratio estimate from a single tilted sample.
#[derive(Debug)]
pub struct JonesRatio {
    kde: Kde,
}

impl JonesRatio {
    pub fn new(set: &WeightedSampleSet) -> Result<Self> {
        let lw = set.sample.draws.iter().map(|p| -set.weighting.log_w(p)).collect();
        Ok(JonesRatio {
            kde: Kde::inverse_weighted(&set.sample, Some(set.bandwidth.clone()), lw)?,
        })
    }
}

impl RatioEvaluator for JonesRatio {
    fn provenance(&self) -> Provenance {
        Provenance::WsreSingle
    }

    fn dim(&self) -> Option<usize> {
        Some(self.kde.dim())
    }

    fn summarize(&self, phi: &[f64]) -> Result<Summary> {
        Ok(Summary::Scalar(self.kde.log_weighted_unnorm(phi)?))
    }

    fn log_ratio_summaries(&self, nu: &Summary, de: &Summary) -> Result<f64> {
        let (a, b) = (nu.scalar()?, de.scalar()?);
        if b == f64::NEG_INFINITY {
            return Err(Error::OutOfSupport(Vec::new()));
        }
        Ok(a - b)
    }
}

struct Component {
    jones: Kde,
    smooth: Kde,
}

/// `r̂_W = Σ_w ŝ_w(nu) ŝ_w(de) r̂_w / Σ_w ŝ_w(nu) ŝ_w(de)` in log space.
pub struct CombinedRatio {
    dim: usize,
    components: Vec<Component>,
    fallbacks: AtomicU64,
}

impl fmt::Debug for CombinedRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CombinedRatio")
            .field("dim", &self.dim)
            .field("components", &self.components.len())
            .field("fallbacks", &self.fallback_count())
            .finish()
    }
}

impl CombinedRatio {
    /// Number of evaluations where every combination weight underflowed and
    /// the unweighted mean of log ratios was used instead.
    pub fn fallback_count(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Combine per-w estimates. Each ŝ_w is a standard KDE of the w-th draws
/// with that set's bandwidth.
pub fn combine(sets: &[WeightedSampleSet]) -> Result<CombinedRatio> {
    let first = sets
        .first()
        .ok_or_else(|| Error::EmptySample("no weighted sample sets to combine".into()))?;
    let dim = first.sample.dim;
    let mut components = Vec::with_capacity(sets.len());
    for set in sets {
        if set.sample.dim != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: set.sample.dim,
            });
        }
        let lw = set.sample.draws.iter().map(|p| -set.weighting.log_w(p)).collect();
        components.push(Component {
            jones: Kde::inverse_weighted(&set.sample, Some(set.bandwidth.clone()), lw)?,
            smooth: Kde::new(&set.sample, Some(set.bandwidth.clone()))?,
        });
    }
    Ok(CombinedRatio {
        dim,
        components,
        fallbacks: AtomicU64::new(0),
    })
}

impl RatioEvaluator for CombinedRatio {
    fn provenance(&self) -> Provenance {
        Provenance::WsreCombined
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    /// `[ln Jones_1..W, ln ŝ_1..W]` at φ.
    fn summarize(&self, phi: &[f64]) -> Result<Summary> {
        check_point(phi, Some(self.dim))?;
        let w = self.components.len();
        let mut v = vec![0.0; 2 * w];
        for (i, c) in self.components.iter().enumerate() {
            v[i] = c.jones.log_weighted_unnorm(phi)?;
            v[w + i] = c.smooth.log_pdf(phi)?;
        }
        Ok(Summary::Vector(v))
    }

    fn log_ratio_summaries(&self, nu: &Summary, de: &Summary) -> Result<f64> {
        let (Summary::Vector(a), Summary::Vector(b)) = (nu, de) else {
            return Err(Error::InvalidArgument("combined WSRE expects vector summaries".into()));
        };
        let w = self.components.len();
        if a.len() != 2 * w || b.len() != 2 * w {
            return Err(Error::Dimension {
                expected: 2 * w,
                got: a.len().min(b.len()),
            });
        }
        let mut lr = Vec::with_capacity(w);
        for i in 0..w {
            if b[i] == f64::NEG_INFINITY {
                return Err(Error::OutOfSupport(Vec::new()));
            }
            lr.push(a[i] - b[i]);
        }
        if w == 1 {
            return Ok(lr[0]);
        }
        let lc: Vec<f64> = (0..w).map(|i| a[w + i] + b[w + i]).collect();
        let den = log_sum_exp(&lc);
        if den == f64::NEG_INFINITY {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
            return Ok(mean(&lr));
        }
        let weighted: Vec<f64> = lc.iter().zip(&lr).map(|(c, r)| c + r).collect();
        Ok(log_sum_exp(&weighted) - den)
    }
}

/// Sample one tilted target and build its Jones evaluator.
///
/// Fails when the post-warmup acceptance rate is below 0.01.
pub fn estimate_single(
    model: Arc<dyn DensityModel>,
    wf: &WeightingFunction,
    n: usize,
    mcmc: &WsreMcmc,
    seed: u64,
    bandwidth: Option<Vec<f64>>,
) -> Result<(WeightedSampleSet, JonesRatio)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 draws per weighting function, got {n}")));
    }
    let target = weighted_target(model, wf.clone())?;
    let settings = mcmc.settings(n, seed);
    let init = target.initial();
    let mt = ModelTarget::new(&target);
    let chain = if mcmc.componentwise {
        componentwise_metropolis(&mt, &init, &settings)?
    } else {
        rw_metropolis(&mt, &init, &settings)?
    };
    let rate = chain.acceptance_rate();
    if rate < 0.01 {
        return Err(Error::Divergence {
            label: format!("weighted target μ={:?}", wf.mean),
            rate,
        });
    }
    let phis = chain.draws.iter().map(|t| target.phi(t)).collect();
    let sample = SampleSet::new(phis, format!("s_w μ={:?} σ²={:?}", wf.mean, wf.var), Some(seed))?;
    let bandwidth = match bandwidth {
        Some(h) => h,
        None => crate::kde::bandwidth_rule(&sample)?,
    };
    let set = WeightedSampleSet {
        weighting: wf.clone(),
        sample,
        bandwidth,
        seed,
        acceptance_rate: rate,
    };
    let ratio = JonesRatio::new(&set)?;
    Ok((set, ratio))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsreConfig {
    pub weighting: Vec<WeightingFunction>,
    pub n_per_w: usize,
    #[serde(default)]
    pub mcmc: WsreMcmc,
    #[serde(default)]
    pub bandwidth: Option<Vec<f64>>,
    pub seed: u64,
}

impl WsreConfig {
    pub fn validate(&self, phi_dim: usize) -> Result<()> {
        if self.weighting.is_empty() {
            return Err(Error::InvalidArgument("WSRE needs at least one weighting function".into()));
        }
        if self.n_per_w < 2 {
            return Err(Error::InvalidArgument("WSRE needs at least 2 draws per weighting function".into()));
        }
        if let Some(wf) = self.weighting.iter().find(|w| w.dim() != phi_dim) {
            return Err(Error::Dimension {
                expected: phi_dim,
                got: wf.dim(),
            });
        }
        Ok(())
    }

    /// Seed for the w-th tilted sampler, split from the root seed.
    pub fn component_seed(&self, w: usize) -> u64 {
        stream_rng(self.seed, 1 + w as u64).next_u64()
    }
}

/// Sample sets plus the combined evaluator built from them.
#[derive(Debug, Clone)]
pub struct WsreEstimate {
    pub phi_names: Vec<String>,
    pub config: WsreConfig,
    pub sets: Vec<WeightedSampleSet>,
    pub combined: Arc<CombinedRatio>,
}

pub const WSRE_FORMAT: &str = "meldkit-wsre";
pub const WSRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WsreArtifact {
    format: String,
    version: u32,
    phi_names: Vec<String>,
    config: WsreConfig,
    sets: Vec<WeightedSampleSet>,
}

impl WsreEstimate {
    pub fn ratio(&self) -> SharedRatio {
        self.combined.clone()
    }

    pub fn total_draws(&self) -> usize {
        self.sets.iter().map(|s| s.sample.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let art = WsreArtifact {
            format: WSRE_FORMAT.into(),
            version: WSRE_VERSION,
            phi_names: self.phi_names.clone(),
            config: self.config.clone(),
            sets: self.sets.clone(),
        };
        Ok(serde_json::to_string_pretty(&art)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let art: WsreArtifact = serde_json::from_str(text)?;
        if art.format != WSRE_FORMAT || art.version != WSRE_VERSION {
            return Err(Error::Data(format!(
                "unsupported WSRE artifact {} v{}",
                art.format, art.version
            )));
        }
        let combined = Arc::new(combine(&art.sets)?);
        Ok(WsreEstimate {
            phi_names: art.phi_names,
            config: art.config,
            sets: art.sets,
            combined,
        })
    }
}

/// Run every tilted sampler (in parallel) and combine.
pub fn wsre_pipeline(model: Arc<dyn DensityModel>, config: &WsreConfig) -> Result<WsreEstimate> {
    config.validate(model.phi_dim())?;
    let sets = config
        .weighting
        .par_iter()
        .enumerate()
        .map(|(w, wf)| {
            estimate_single(
                model.clone(),
                wf,
                config.n_per_w,
                &config.mcmc,
                config.component_seed(w),
                config.bandwidth.clone(),
            )
            .map(|(set, _)| set)
        })
        .collect::<Result<Vec<_>>>()?;
    let combined = Arc::new(combine(&sets)?);
    Ok(WsreEstimate {
        phi_names: model.phi_names(),
        config: config.clone(),
        sets,
        combined,
    })
}
