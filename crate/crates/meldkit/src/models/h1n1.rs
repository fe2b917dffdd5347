//! H1N1 severity example: an ICU occupancy model (a thinned Poisson process
//! observed weekly, with virology positivity data) and a collapsed severity
//! model. They share cumulative H1N1 ICU admissions `φ = (φ₁, φ₂)` for
//! children (`a = 1`) and adults (`a = 2`).
//!
//! The positivity proportion `π^pos_{a,t} ~ Unif(ω_{a,v}, 1)` is sampled as
//! `π^pos = ω + (1 − ω) u` with `u ~ Unif(0, 1)`, which has the same law and
//! keeps every coordinate on a fixed support.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Normal, Poisson};

use crate::density::{DensityModel, Support};
use crate::error::{Error, Result};
use crate::mcmc::stream_rng;
use crate::models::PriorSampler;
use crate::special::{digamma, ln_beta_pdf, ln_binomial_pmf, ln_choose, ln_gamma, ln_lognormal_pdf, ln_normal_pdf};

pub const GROUPS: usize = 2;

/// Desk-scale horizon in days.
pub const DEFAULT_HORIZON: usize = 28;

const LOG_LAMBDA1_MAX: f64 = 250.0;
const NU_LO: f64 = 0.1;
const NU_HI: f64 = 2.7;
pub const ALPHA_PRIOR: (f64, f64) = (2.7058, 0.0788);
pub const BETA_PRIOR: (f64, f64) = (-0.4969, 0.2048);

/// Lognormal `(log-mean, log-sd)` priors on true ICU admissions χ₁, χ₂.
pub const CHI_PRIOR: [(f64, f64); 2] = [(4.93, 0.17), (7.71, 0.23)];
/// Beta prior on the detection probability.
pub const DETECTION_PRIOR: (f64, f64) = (6.0, 4.0);

/// Virology week of day `t` (1-based).
pub fn week_of(t: usize) -> usize {
    if t <= 14 {
        1
    } else {
        (t - 1) / 7
    }
}

/// Number of virology weeks covering days `1..=horizon`.
pub fn weeks(horizon: usize) -> usize {
    week_of(horizon.max(1))
}

/// Weekly observation days ending on `horizon` and never before day 8
/// (`8, 15, …, 78` for the full season, `14, 21, 28` at four weeks).
pub fn observation_days(horizon: usize) -> Vec<usize> {
    let mut days: Vec<usize> = (8..=horizon).rev().step_by(7).collect();
    days.reverse();
    days
}

/// Exit rates `μ₁ = e^{−α}`, `μ₂ = e^{−(α+β)}`.
pub fn exit_rates(alpha: f64, beta: f64) -> [f64; 2] {
    [(-alpha).exp(), (-(alpha + beta)).exp()]
}

/// Expected occupancy `η_t` for days `1..=T` with `η₁ = 0`, via
/// `η_t = (η_{t−1} + λ_{t−1}) e^{−μ}`.
pub fn eta_recursive(lambda: &[f64], mu: f64) -> Vec<f64> {
    let decay = (-mu).exp();
    let mut eta = Vec::with_capacity(lambda.len());
    let mut e = 0.0;
    for t in 0..lambda.len() {
        if t > 0 {
            e = (e + lambda[t - 1]) * decay;
        }
        eta.push(e);
    }
    eta
}

/// The same occupancy as a convolution, `η_t = Σ_{u<t} λ_u e^{−μ(t−u)}`.
pub fn eta_convolution(lambda: &[f64], mu: f64) -> Vec<f64> {
    (0..lambda.len())
        .map(|t| (0..t).map(|u| lambda[u] * (-mu * (t - u) as f64).exp()).sum())
        .collect()
}

/// Weekly ICU counts and virology for both age groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct H1n1Data {
    pub horizon: usize,
    /// Observation days, strictly increasing, within `1..=horizon`.
    pub days: Vec<usize>,
    /// `icu[a][k]` patients in ICU on `days[k]`.
    pub icu: [Vec<u64>; 2],
    /// `positive[a][v−1]` H1N1-positive swabs in week v.
    pub positive: [Vec<u64>; 2],
    /// `swabs[a][v−1]` swabs tested in week v.
    pub swabs: [Vec<u64>; 2],
}

impl H1n1Data {
    /// No observations at all; the model then reduces to its prior.
    pub fn empty(horizon: usize) -> Self {
        H1n1Data {
            horizon,
            days: Vec::new(),
            icu: [Vec::new(), Vec::new()],
            positive: [Vec::new(), Vec::new()],
            swabs: [Vec::new(), Vec::new()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Data("horizon must be at least one day".into()));
        }
        for w in self.days.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Data(format!(
                    "observation days must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(d) = self.days.iter().find(|d| **d == 0 || **d > self.horizon) {
            return Err(Error::Data(format!("observation day {d} outside 1..={}", self.horizon)));
        }
        let v = weeks(self.horizon);
        for a in 0..GROUPS {
            if self.icu[a].len() != self.days.len() {
                return Err(Error::Data(format!(
                    "group {}: {} ICU counts for {} observation days",
                    a + 1,
                    self.icu[a].len(),
                    self.days.len()
                )));
            }
            let (z, n) = (&self.positive[a], &self.swabs[a]);
            if z.len() != n.len() || (!z.is_empty() && z.len() != v) {
                return Err(Error::Data(format!(
                    "group {}: virology must cover all {v} weeks",
                    a + 1
                )));
            }
            if let Some(k) = (0..z.len()).find(|&k| z[k] > n[k]) {
                return Err(Error::Data(format!(
                    "group {} week {}: {} positives out of {} swabs",
                    a + 1,
                    k + 1,
                    z[k],
                    n[k]
                )));
            }
        }
        Ok(())
    }

    /// Read `icu.csv` (`a,t,y`) and `virology.csv` (`a,v,z,n`) from `dir`.
    pub fn read_dir(dir: &Path, horizon: usize) -> Result<Self> {
        let icu_rows = read_int_rows(&dir.join("icu.csv"), 3)?;
        let vir_rows = read_int_rows(&dir.join("virology.csv"), 4)?;
        let mut data = H1n1Data::empty(horizon);
        let mut days: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (line, r) in icu_rows {
            let a = group(r[0], line)?;
            let (t, y) = (r[1], r[2]);
            if t < 1 || y < 0 {
                return Err(Error::Parse {
                    line,
                    message: format!("day must be ≥ 1 and count ≥ 0, got t={t}, y={y}"),
                });
            }
            if days[a].last().is_some_and(|&d| d >= t as usize) {
                return Err(Error::Parse {
                    line,
                    message: format!("observation times for group {} are not increasing at t={t}", a + 1),
                });
            }
            days[a].push(t as usize);
            data.icu[a].push(y as u64);
        }
        if days[0] != days[1] {
            return Err(Error::Data("both groups must be observed on the same days".into()));
        }
        data.days = days[0].clone();
        for (line, r) in vir_rows {
            let a = group(r[0], line)?;
            let (v, z, n) = (r[1], r[2], r[3]);
            if z < 0 || n < 0 {
                return Err(Error::Parse {
                    line,
                    message: format!("negative swab count z={z}, n={n}"),
                });
            }
            if v as usize != data.positive[a].len() + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("virology weeks for group {} must run 1, 2, … in order, got {v}", a + 1),
                });
            }
            data.positive[a].push(z as u64);
            data.swabs[a].push(n as u64);
        }
        data.validate()?;
        Ok(data)
    }

    /// Write `icu.csv` and `virology.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("icu.csv"))?;
        w.write_record(["a", "t", "y"])?;
        for a in 0..GROUPS {
            for (k, d) in self.days.iter().enumerate() {
                w.write_record([(a + 1).to_string(), d.to_string(), self.icu[a][k].to_string()])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("virology.csv"))?;
        w.write_record(["a", "v", "z", "n"])?;
        for a in 0..GROUPS {
            for v in 0..self.positive[a].len() {
                w.write_record([
                    (a + 1).to_string(),
                    (v + 1).to_string(),
                    self.positive[a][v].to_string(),
                    self.swabs[a][v].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn group(a: i64, line: u64) -> Result<usize> {
    match a {
        1 | 2 => Ok(a as usize - 1),
        _ => Err(Error::Parse {
            line,
            message: format!("age group must be 1 or 2, got {a}"),
        }),
    }
}

fn read_int_rows(path: &Path, width: usize) -> Result<Vec<(u64, Vec<i64>)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<i64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("`{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((line, row));
    }
    Ok(out)
}

/// ICU submodel `p₁(λ, ν, α, β, ω, u, Y₁)`.
///
/// Layout: `λ_{1,1..T}, λ_{2,1..T}, ν₁, ν₂, α, β, ω_{1,1..V}, ω_{2,1..V},
/// u_{1,1..T}, u_{2,1..T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct H1n1Icu {
    data: H1n1Data,
    with_data: bool,
    /// `day − 1` of each observation.
    obs: Vec<usize>,
    ln_fact: [Vec<f64>; 2],
}

impl H1n1Icu {
    pub fn new(data: H1n1Data) -> Result<Self> {
        data.validate()?;
        let obs = data.days.iter().map(|d| d - 1).collect();
        let ln_fact = [0, 1].map(|a| data.icu[a].iter().map(|y| ln_gamma(*y as f64 + 1.0)).collect());
        Ok(H1n1Icu {
            data,
            with_data: true,
            obs,
            ln_fact,
        })
    }

    /// Same parameters, no likelihood terms.
    pub fn prior(&self) -> Self {
        H1n1Icu {
            with_data: false,
            ..self.clone()
        }
    }

    pub fn data(&self) -> &H1n1Data {
        &self.data
    }

    pub fn horizon(&self) -> usize {
        self.data.horizon
    }

    pub fn weeks(&self) -> usize {
        weeks(self.data.horizon)
    }

    /// Index of `λ_{a,t}`, with `a` and `t` 0-based.
    pub fn lambda_index(&self, a: usize, t: usize) -> usize {
        a * self.horizon() + t
    }

    pub fn nu_index(&self, a: usize) -> usize {
        2 * self.horizon() + a
    }

    pub fn alpha_index(&self) -> usize {
        2 * self.horizon() + 2
    }

    pub fn beta_index(&self) -> usize {
        2 * self.horizon() + 3
    }

    /// Index of `ω_{a,v}`, `v` 0-based.
    pub fn omega_index(&self, a: usize, v: usize) -> usize {
        2 * self.horizon() + 4 + a * self.weeks() + v
    }

    pub fn u_index(&self, a: usize, t: usize) -> usize {
        2 * self.horizon() + 4 + 2 * self.weeks() + a * self.horizon() + t
    }

    fn pi_pos(&self, theta: &[f64], a: usize, t: usize) -> f64 {
        let w = theta[self.omega_index(a, week_of(t + 1) - 1)];
        w + (1.0 - w) * theta[self.u_index(a, t)]
    }
}

impl DensityModel for H1n1Icu {
    fn names(&self) -> Vec<String> {
        let (t, v) = (self.horizon(), self.weeks());
        let mut n = Vec::with_capacity(self.dim());
        for a in 1..=GROUPS {
            n.extend((1..=t).map(|d| format!("lambda_{a}_{d}")));
        }
        n.extend(["nu_1".into(), "nu_2".into(), "alpha".into(), "beta".into()]);
        for a in 1..=GROUPS {
            n.extend((1..=v).map(|w| format!("omega_{a}_{w}")));
        }
        for a in 1..=GROUPS {
            n.extend((1..=t).map(|d| format!("u_{a}_{d}")));
        }
        n
    }

    fn dim(&self) -> usize {
        4 * self.horizon() + 2 * self.weeks() + 4
    }

    fn supports(&self) -> Vec<Support> {
        let (t, v) = (self.horizon(), self.weeks());
        let mut s = vec![Support::Positive; 2 * t];
        s.extend([Support::Interval { lo: NU_LO, hi: NU_HI }; 2]);
        s.extend([Support::Real; 2]);
        s.extend(vec![Support::Unit; 2 * v + 2 * t]);
        s
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let horizon = self.horizon();
        let ninf = f64::NEG_INFINITY;
        let ab = (theta[self.alpha_index()], theta[self.beta_index()]);
        if !(ab.0.is_finite() && ab.1.is_finite()) {
            return ninf;
        }
        let mut lp = ln_normal_pdf(ab.0, ALPHA_PRIOR.0, ALPHA_PRIOR.1 * ALPHA_PRIOR.1)
            + ln_normal_pdf(ab.1, BETA_PRIOR.0, BETA_PRIOR.1 * BETA_PRIOR.1);
        let unit = &theta[self.omega_index(0, 0)..];
        if unit.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return ninf;
        }
        let mu = exit_rates(ab.0, ab.1);
        for a in 0..GROUPS {
            let nu = theta[self.nu_index(a)];
            if !(NU_LO..=NU_HI).contains(&nu) {
                return ninf;
            }
            lp -= (NU_HI - NU_LO).ln();
            let lam = &theta[self.lambda_index(a, 0)..self.lambda_index(a, 0) + horizon];
            if lam.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                return ninf;
            }
            let mut prev = lam[0].ln();
            if !(prev > 0.0 && prev < LOG_LAMBDA1_MAX) {
                return ninf;
            }
            lp -= LOG_LAMBDA1_MAX.ln() + prev;
            let var = 1.0 / (nu * nu);
            for &l in &lam[1..] {
                let ll = l.ln();
                lp += ln_normal_pdf(ll, prev, var) - ll;
                prev = ll;
            }
            if !self.with_data {
                continue;
            }
            for v in 0..self.data.positive[a].len() {
                let w = theta[self.omega_index(a, v)];
                lp += ln_binomial_pmf(self.data.positive[a][v] as f64, self.data.swabs[a][v] as f64, w);
            }
            // Occupancy by recursion, read off at the observation days.
            let decay = (-mu[a]).exp();
            let mut eta = 0.0;
            let mut k = 0;
            for t in 0..horizon {
                if t > 0 {
                    eta = (eta + lam[t - 1]) * decay;
                }
                if k < self.obs.len() && self.obs[k] == t {
                    let y = self.data.icu[a][k] as f64;
                    if eta == 0.0 {
                        if y > 0.0 {
                            return ninf;
                        }
                    } else {
                        lp += y * eta.ln() - eta - self.ln_fact[a][k];
                    }
                    k += 1;
                }
            }
        }
        lp
    }

    fn phi_dim(&self) -> usize {
        2
    }

    /// `φ_a = Σ_t π^pos_{a,t} λ_{a,t}`.
    fn phi(&self, theta: &[f64]) -> Vec<f64> {
        (0..GROUPS)
            .map(|a| {
                (0..self.horizon())
                    .map(|t| self.pi_pos(theta, a, t) * theta[self.lambda_index(a, t)])
                    .sum()
            })
            .collect()
    }

    fn phi_names(&self) -> Vec<String> {
        vec!["phi_1".into(), "phi_2".into()]
    }

    /// Flat admissions at a level suggested by the counts, prior means for α
    /// and β, and empirical positivity for ω.
    fn initial(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        let mu = exit_rates(ALPHA_PRIOR.0, BETA_PRIOR.0);
        for a in 0..GROUPS {
            let level = if self.with_data && !self.data.icu[a].is_empty() {
                let ybar = self.data.icu[a].iter().sum::<u64>() as f64 / self.data.icu[a].len() as f64;
                (ybar * mu[a]).max(2.0)
            } else {
                2.0
            };
            for t in 0..self.horizon() {
                theta[self.lambda_index(a, t)] = level;
                theta[self.u_index(a, t)] = 0.5;
            }
            theta[self.nu_index(a)] = 1.5;
            for v in 0..self.weeks() {
                theta[self.omega_index(a, v)] = match (self.with_data, self.data.positive[a].get(v)) {
                    (true, Some(z)) => (*z as f64 + 1.0) / (self.data.swabs[a][v] as f64 + 2.0),
                    _ => 0.5,
                };
            }
        }
        theta[self.alpha_index()] = ALPHA_PRIOR.0;
        theta[self.beta_index()] = BETA_PRIOR.0;
        theta
    }
}

/// Binomial log mass continued to real `φ ∈ [0, χ]` through gamma functions.
pub fn ln_continuous_binomial(phi: f64, chi: f64, p: f64) -> f64 {
    if !(phi >= 0.0 && phi <= chi && p > 0.0 && p < 1.0) {
        return f64::NEG_INFINITY;
    }
    ln_choose(chi, phi) + phi * p.ln() + (chi - phi) * (-p).ln_1p()
}

/// Collapsed severity submodel `p₂(φ, χ, π^det)`, with no data.
///
/// Layout: `φ₁, φ₂, χ₁, χ₂, π^det`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct H1n1Severity;

impl H1n1Severity {
    /// Prior medians of χ.
    pub fn chi_medians() -> [f64; 2] {
        CHI_PRIOR.map(|(m, _)| m.exp())
    }
}

impl DensityModel for H1n1Severity {
    fn names(&self) -> Vec<String> {
        ["phi_1", "phi_2", "chi_1", "chi_2", "pi_det"].map(String::from).to_vec()
    }

    fn dim(&self) -> usize {
        5
    }

    fn supports(&self) -> Vec<Support> {
        vec![
            Support::Positive,
            Support::Positive,
            Support::Positive,
            Support::Positive,
            Support::Unit,
        ]
    }

    fn log_density(&self, t: &[f64]) -> f64 {
        let p = t[4];
        let mut lp = ln_beta_pdf(p, DETECTION_PRIOR.0, DETECTION_PRIOR.1);
        for a in 0..GROUPS {
            let (phi, chi) = (t[a], t[2 + a]);
            if !(phi > 0.0 && chi >= phi && chi.is_finite()) {
                return f64::NEG_INFINITY;
            }
            lp += ln_lognormal_pdf(chi, CHI_PRIOR[a].0, CHI_PRIOR[a].1) + ln_continuous_binomial(phi, chi, p);
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    fn phi_dim(&self) -> usize {
        2
    }

    fn phi(&self, t: &[f64]) -> Vec<f64> {
        t[..2].to_vec()
    }

    fn phi_names(&self) -> Vec<String> {
        vec!["phi_1".into(), "phi_2".into()]
    }

    /// φ at `χ · π^det` evaluated at the prior medians.
    fn initial(&self) -> Vec<f64> {
        let m = Self::chi_medians();
        vec![0.6 * m[0], 0.6 * m[1], m[0], m[1], 0.6]
    }

    fn phi_is_leading(&self) -> bool {
        true
    }

    /// Keeps `χ_a > φ_a` so the point is in support.
    fn initial_with_phi(&self, phi: &[f64]) -> Vec<f64> {
        let m = Self::chi_medians();
        vec![phi[0], phi[1], m[0].max(phi[0] / 0.6), m[1].max(phi[1] / 0.6), 0.6]
    }
}

impl PriorSampler for H1n1Severity {
    /// χ and π^det from their priors, then each φ_a from the continuous
    /// binomial given (χ_a, π^det).
    fn sample_theta(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let beta = Beta::new(DETECTION_PRIOR.0, DETECTION_PRIOR.1).expect("valid beta prior");
        let mut chi = [0.0; 2];
        for a in 0..GROUPS {
            let z: f64 = Normal::new(CHI_PRIOR[a].0, CHI_PRIOR[a].1).expect("valid normal").sample(rng);
            chi[a] = z.exp();
        }
        let p: f64 = beta.sample(rng);
        let phi = chi.map(|c| ContinuousBinomial::new(c, p).sample(rng));
        vec![phi[0], phi[1], chi[0], chi[1], p]
    }
}

/// Density on `[0, n]` proportional to the gamma-continued binomial mass.
///
/// Log-concave, so it is sampled by rejection from a piecewise-exponential
/// envelope of three tangents placed at the mode and about 1.5 sd either side.
#[derive(Debug, Clone)]
pub struct ContinuousBinomial {
    n: f64,
    p: f64,
    logit: f64,
    pieces: Vec<Piece>,
    cum: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    /// Tangent `a + b x`.
    a: f64,
    b: f64,
}

impl Piece {
    fn log_mass(&self) -> f64 {
        let d = self.hi - self.lo;
        if self.b.abs() * d < 1e-10 {
            self.a + self.b * 0.5 * (self.lo + self.hi) + d.ln()
        } else if self.b > 0.0 {
            self.a + self.b * self.hi + (-(-self.b * d).exp()).ln_1p() - self.b.ln()
        } else {
            self.a + self.b * self.lo + (-(self.b * d).exp()).ln_1p() - (-self.b).ln()
        }
    }

    fn draw(&self, u: f64) -> f64 {
        let d = self.hi - self.lo;
        let x = if self.b.abs() * d < 1e-10 {
            self.lo + u * d
        } else if self.b > 0.0 {
            let e = (-self.b * d).exp();
            self.hi + (e + u * (1.0 - e)).ln() / self.b
        } else {
            let e = (self.b * d).exp();
            self.lo + (1.0 - u * (1.0 - e)).ln() / self.b
        };
        x.clamp(self.lo, self.hi)
    }
}

impl ContinuousBinomial {
    /// Requires `n > 0` and `p ∈ (0, 1)`.
    pub fn new(n: f64, p: f64) -> Self {
        assert!(n > 0.0 && p > 0.0 && p < 1.0, "continuous binomial needs n > 0, 0 < p < 1");
        let logit = p.ln() - (-p).ln_1p();
        let sd = (n * p * (1.0 - p)).sqrt();
        let eps = 1e-9 * n;
        let mut xs: Vec<f64> = [n * p - 1.5 * sd, n * p, n * p + 1.5 * sd]
            .iter()
            .map(|x| x.clamp(eps, n - eps))
            .collect();
        xs.dedup_by(|b, a| (*b - *a).abs() < 1e-9 * n.max(1.0));
        let mut this = ContinuousBinomial {
            n,
            p,
            logit,
            pieces: Vec::new(),
            cum: Vec::new(),
        };
        let mut tangents: Vec<(f64, f64, f64)> = Vec::new();
        for x in xs {
            let (f, g) = (this.ln_unnorm(x), this.slope(x));
            if tangents.last().is_some_and(|t| (t.2 - g).abs() < 1e-12) {
                continue;
            }
            tangents.push((x, f, g));
        }
        let mut lo = 0.0;
        for k in 0..tangents.len() {
            let (x, f, g) = tangents[k];
            let hi = match tangents.get(k + 1) {
                Some(&(x2, f2, g2)) => ((f2 - g2 * x2) - (f - g * x)) / (g - g2),
                None => n,
            }
            .clamp(lo, n);
            this.pieces.push(Piece {
                lo,
                hi,
                a: f - g * x,
                b: g,
            });
            lo = hi;
        }
        let logs: Vec<f64> = this.pieces.iter().map(|p| p.log_mass()).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        for l in logs {
            acc += (l - top).exp();
            this.cum.push(acc);
        }
        this
    }

    pub fn ln_unnorm(&self, x: f64) -> f64 {
        ln_continuous_binomial(x, self.n, self.p)
    }

    fn slope(&self, x: f64) -> f64 {
        digamma(self.n - x + 1.0) - digamma(x + 1.0) + self.logit
    }

    pub fn sample(&self, rng: &mut dyn rand::RngCore) -> f64 {
        let total = *self.cum.last().expect("at least one envelope piece");
        loop {
            let pick: f64 = rng.random::<f64>() * total;
            let k = self.cum.iter().position(|c| pick < *c).unwrap_or(self.cum.len() - 1);
            let piece = &self.pieces[k];
            let x = piece.draw(rng.random::<f64>());
            let accept = self.ln_unnorm(x) - (piece.a + piece.b * x);
            let u: f64 = rng.random();
            if u.ln() < accept {
                return x;
            }
        }
    }
}

/// Fixed generating parameters for synthetic ICU and virology data.
///
/// Daily admissions follow a bell-shaped wave
/// `λ_{a,t} = peak_a · exp(−(t − c)² / (2 w²))` with `c = (T + 1)/2` and
/// `w = width · T`.
#[derive(Debug, Clone, PartialEq)]
pub struct H1n1Truth {
    pub peak: [f64; 2],
    pub width: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Weekly positivity lower bound ω_a, constant over weeks.
    pub omega: [f64; 2],
    /// Position of π^pos within `(ω, 1)`.
    pub u: f64,
    /// Swabs tested per group and week.
    pub swabs: u64,
}

impl Default for H1n1Truth {
    fn default() -> Self {
        H1n1Truth {
            peak: [10.0, 78.0],
            width: 0.4,
            alpha: ALPHA_PRIOR.0,
            beta: BETA_PRIOR.0,
            omega: [0.6, 0.6],
            u: 0.5,
            swabs: 200,
        }
    }
}

impl H1n1Truth {
    pub fn lambda(&self, horizon: usize) -> [Vec<f64>; 2] {
        let c = 0.5 * (horizon as f64 + 1.0);
        let w = self.width * horizon as f64;
        self.peak.map(|pk| {
            (1..=horizon)
                .map(|t| pk * (-(t as f64 - c).powi(2) / (2.0 * w * w)).exp())
                .collect()
        })
    }

    pub fn pi_pos(&self) -> [f64; 2] {
        self.omega.map(|w| w + (1.0 - w) * self.u)
    }

    /// True `φ_a = Σ_t π^pos_{a,t} λ_{a,t}`.
    pub fn phi(&self, horizon: usize) -> [f64; 2] {
        let lam = self.lambda(horizon);
        let pi = self.pi_pos();
        [0, 1].map(|a| lam[a].iter().map(|l| pi[a] * l).sum())
    }

    /// ICU parameter vector holding the truth (ν at its upper bound).
    pub fn theta(&self, model: &H1n1Icu) -> Vec<f64> {
        let horizon = model.horizon();
        let lam = self.lambda(horizon);
        let mut theta = vec![0.0; model.dim()];
        for a in 0..GROUPS {
            for t in 0..horizon {
                theta[model.lambda_index(a, t)] = lam[a][t];
                theta[model.u_index(a, t)] = self.u;
            }
            theta[model.nu_index(a)] = NU_HI;
            for v in 0..model.weeks() {
                theta[model.omega_index(a, v)] = self.omega[a];
            }
        }
        theta[model.alpha_index()] = self.alpha;
        theta[model.beta_index()] = self.beta;
        theta
    }
}

/// Synthetic dataset from [`H1n1Truth::default`].
pub fn h1n1_synthetic(seed: u64, horizon: usize) -> Result<H1n1Data> {
    h1n1_synthetic_with(&H1n1Truth::default(), seed, horizon)
}

/// Forward-simulate weekly ICU counts `y ~ Pois(η)` and virology
/// `z ~ Bin(n, ω)`. Only the noise depends on `seed`.
pub fn h1n1_synthetic_with(truth: &H1n1Truth, seed: u64, horizon: usize) -> Result<H1n1Data> {
    if horizon < 14 {
        return Err(Error::InvalidArgument(format!(
            "synthetic H1N1 data need a horizon of at least 14 days, got {horizon}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let lam = truth.lambda(horizon);
    let mu = exit_rates(truth.alpha, truth.beta);
    let mut data = H1n1Data::empty(horizon);
    data.days = observation_days(horizon);
    for a in 0..GROUPS {
        let eta = eta_recursive(&lam[a], mu[a]);
        for &d in &data.days {
            let y: f64 = Poisson::new(eta[d - 1]).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(&mut rng);
            data.icu[a].push(y as u64);
        }
    }
    for a in 0..GROUPS {
        for _ in 0..weeks(horizon) {
            let z = Binomial::new(truth.swabs, truth.omega[a])
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(&mut rng);
            data.positive[a].push(z);
            data.swabs[a].push(truth.swabs);
        }
    }
    data.validate()?;
    Ok(data)
}
