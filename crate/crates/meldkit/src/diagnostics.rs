//! Chain diagnostics: effective sample size, stuck runs, quantile comparison
//! and the two-sample Kolmogorov–Smirnov distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{mean, quantile_sorted, sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EssFlag {
    /// The chain never moves; ESS is reported as 1.
    Constant,
    /// Negative autocorrelation pushed the estimate above N; clamped to N.
    ExceedsN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    pub flag: Option<EssFlag>,
}

/// Effective sample size by Geyer's initial positive sequence.
///
/// Autocovariances are summed in adjacent pairs until a pair sum turns
/// non-positive. Requires at least 10 draws.
pub fn ess(xs: &[f64]) -> Result<Ess> {
    let n = xs.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!("ESS needs at least 10 draws, got {n}")));
    }
    let m = mean(xs);
    let d: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let acov = |k: usize| -> f64 { d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 };
    let c0 = acov(0);
    if !(c0 > 0.0) || xs.iter().all(|x| *x == xs[0]) {
        return Ok(Ess {
            value: 1.0,
            flag: Some(EssFlag::Constant),
        });
    }
    let mut sum = 0.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = (acov(k) + acov(k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 2;
    }
    // τ = −1 + 2 Σ Γ_k, with Γ_k the pair sums.
    let tau = -1.0 + 2.0 * sum;
    let value = n as f64 / tau.max(f64::MIN_POSITIVE);
    if value > n as f64 {
        return Ok(Ess {
            value: n as f64,
            flag: Some(EssFlag::ExceedsN),
        });
    }
    Ok(Ess { value, flag: None })
}

/// Runs of repeated values in one chain coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StuckReport {
    pub length: usize,
    pub longest_run: usize,
    pub longest_start: usize,
    /// Length of the run that ends the chain.
    pub terminal_run: usize,
    pub threshold: usize,
    /// Share of iterations inside runs of at least `threshold`.
    pub fraction_in_long_runs: f64,
}

impl StuckReport {
    /// Whether the chain ends in a run covering at least `share` of it.
    pub fn terminal_stuck(&self, share: f64) -> bool {
        self.length > 0 && self.terminal_run as f64 >= share * self.length as f64
    }
}

/// Equality used for continuous-proposal chains.
pub fn nearly_equal(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Run-length encoding with exact equality (stage-two φ chains repeat
/// bit-for-bit on rejection).
pub fn stuck_runs(xs: &[f64], threshold: usize) -> StuckReport {
    stuck_runs_by(xs, threshold, |a, b| a == b)
}

/// Run-length encoding with a caller-supplied equality.
pub fn stuck_runs_by(xs: &[f64], threshold: usize, same: impl Fn(f64, f64) -> bool) -> StuckReport {
    let n = xs.len();
    let mut report = StuckReport {
        length: n,
        longest_run: 0,
        longest_start: 0,
        terminal_run: 0,
        threshold,
        fraction_in_long_runs: 0.0,
    };
    if n == 0 {
        return report;
    }
    let mut in_long = 0usize;
    let mut start = 0;
    for i in 1..=n {
        if i == n || !same(xs[i], xs[i - 1]) {
            let len = i - start;
            if len > report.longest_run {
                report.longest_run = len;
                report.longest_start = start;
            }
            if len >= threshold {
                in_long += len;
            }
            if i == n {
                report.terminal_run = len;
            }
            start = i;
        }
    }
    report.fraction_in_long_runs = in_long as f64 / n as f64;
    report
}

/// The default 19-point grid `0.05, 0.10, …, 0.95`.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// Tail probabilities reported beside the main grid.
pub const TAIL_GRID: [f64; 2] = [0.975, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqTable {
    pub grid: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub max_gap: f64,
    pub mean_gap: f64,
    pub tail_grid: Vec<f64>,
    pub tail_a: Vec<f64>,
    pub tail_b: Vec<f64>,
}

/// Empirical (type 7) quantiles of two samples on `grid`, gap statistics
/// over the grid, and the tail quantiles.
pub fn qq_compare(a: &[f64], b: &[f64], grid: &[f64]) -> Result<QqTable> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample("quantile comparison needs two non-empty chains".into()));
    }
    if grid.is_empty() || grid.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::InvalidArgument("quantile grid must be a non-empty subset of (0, 1)".into()));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let qa: Vec<f64> = grid.iter().map(|p| quantile_sorted(&sa, *p)).collect();
    let qb: Vec<f64> = grid.iter().map(|p| quantile_sorted(&sb, *p)).collect();
    let gaps: Vec<f64> = qa.iter().zip(&qb).map(|(x, y)| (x - y).abs()).collect();
    Ok(QqTable {
        grid: grid.to_vec(),
        max_gap: gaps.iter().cloned().fold(0.0, f64::max),
        mean_gap: mean(&gaps),
        a: qa,
        b: qb,
        tail_grid: TAIL_GRID.to_vec(),
        tail_a: TAIL_GRID.iter().map(|p| quantile_sorted(&sa, *p)).collect(),
        tail_b: TAIL_GRID.iter().map(|p| quantile_sorted(&sb, *p)).collect(),
    })
}

/// Two-sample Kolmogorov–Smirnov distance `sup |F_a − F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample("KS distance needs two non-empty samples".into()));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted(xs), 0.5)
}
