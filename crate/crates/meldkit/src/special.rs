//! Special functions, log-space arithmetic and small sample statistics.

use std::f64::consts::{PI, SQRT_2};

pub use statrs::function::gamma::{digamma, ln_gamma};

/// `0.5 * ln(2π)`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Fixed-point scale used by [`log_sum_exp`]: 2^96.
const LSE_SCALE: f64 = 79_228_162_514_264_337_593_543_950_336.0;

/// `log Σ exp(tᵢ)`, pivoting on the largest term.
///
/// The shifted terms `exp(tᵢ − max)` are accumulated as 96-bit fixed-point
/// integers, so the result does not depend on the order of `terms`.
/// Returns `-inf` for an empty slice or when every term is `-inf`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &t in terms {
        if t.is_nan() {
            return f64::NAN;
        }
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    let mut acc: u128 = 0;
    for &t in terms {
        acc += ((t - max).exp() * LSE_SCALE) as u128;
    }
    max + ((acc as f64) / LSE_SCALE).ln()
}

/// Log density of `N(mean, var)` at `x`.
pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

/// Log density of `Beta(a, b)` at `x`; `-inf` outside `(0, 1)`.
pub fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) {
        return f64::NEG_INFINITY;
    }
    let norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let mut lp = norm;
    if a != 1.0 {
        lp += (a - 1.0) * x.ln();
    }
    if b != 1.0 {
        lp += (b - 1.0) * (-x).ln_1p();
    }
    lp
}

/// Log density of a lognormal with log-mean `mu` and log-sd `sigma`.
pub fn ln_lognormal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    let lx = x.ln();
    ln_normal_pdf(lx, mu, sigma * sigma) - lx
}

/// `ln C(n, k)` through the gamma continuation; valid for real `0 ≤ k ≤ n`.
pub fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Binomial log mass `ln C(n,y) + y ln p + (n−y) ln(1−p)`, with the usual
/// conventions at `p ∈ {0, 1}`.
pub fn ln_binomial_pmf(y: f64, n: f64, p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NEG_INFINITY;
    }
    ln_choose(n, y) + xlogy(y, p) + xlogy(n - y, 1.0 - p)
}

/// Poisson log mass at integer `y` with mean `rate`.
pub fn ln_poisson_pmf(y: f64, rate: f64) -> f64 {
    if rate < 0.0 || rate.is_nan() {
        return f64::NEG_INFINITY;
    }
    xlogy(y, rate) - rate - ln_gamma(y + 1.0)
}

/// `x ln y` with `0 ln 0 = 0`.
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / SQRT_2)
}

/// Standard normal upper tail `1 − Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / SQRT_2)
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, evaluated on whichever tail keeps precision.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b < 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    }
}

/// Logistic function.
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln logistic(u)`, stable in both tails.
pub fn ln_logistic(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `N − 1` divisor.
pub fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolation quantile (Hyndman–Fan type 7) of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sorted copy of `xs` using the IEEE total order.
pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive_sum() {
        let t: [f64; 4] = [0.1, -2.0, 3.5, 1.0];
        let naive: f64 = t.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&t) - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[-1e6]), -1e6);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn lse_is_order_free() {
        let t: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64).sin() * 30.0).collect();
        let mut r = t.clone();
        r.reverse();
        r.swap(3, 150);
        assert_eq!(log_sum_exp(&t).to_bits(), log_sum_exp(&r).to_bits());
    }

    #[test]
    fn beta_and_binomial() {
        assert!(ln_beta_pdf(0.3, 1.0, 1.0).abs() < 1e-14);
        assert!((ln_beta_pdf(0.5, 3.0, 1.0) - (3.0f64 * 0.25).ln()).abs() < 1e-12);
        // C(4,2) 0.5^4 = 6/16
        assert!((ln_binomial_pmf(2.0, 4.0, 0.5) - (6.0f64 / 16.0).ln()).abs() < 1e-12);
        assert!(ln_binomial_pmf(0.0, 5.0, 0.0).abs() < 1e-14);
        assert_eq!(ln_binomial_pmf(1.0, 5.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn normal_tails() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_interval(-1.96, 1.96) - 0.950_004_209_703_559_3).abs() < 1e-11);
        let far = normal_interval(9.0, 10.0);
        assert!(far > 1.128e-19 && far < 1.129e-19);
    }

    #[test]
    fn logistic_stable() {
        assert!((logistic(0.0) - 0.5).abs() < 1e-16);
        assert!((ln_logistic(-800.0) + 800.0).abs() < 1e-12);
        assert!(ln_logistic(800.0).abs() < 1e-300);
    }

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.25) - 1.75).abs() < 1e-15);
    }
}
