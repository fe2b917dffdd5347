//! HIV prenatal screening evidence synthesis: twelve binomial studies whose
//! proportions are link functions of nine basic parameters ρ₁..ρ₉.

use std::path::Path;

use rand::Rng;

use crate::density::{analytic_ratio, DensityModel, SharedRatio, Support};
use crate::error::{Error, Result};
use crate::models::PriorSampler;
use crate::special::{ln_beta_pdf, ln_binomial_pmf};

/// Observed counts `y_s` out of `n_s` for the twelve studies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HivData {
    pub y: [u64; 12],
    pub n: [u64; 12],
}

impl Default for HivData {
    fn default() -> Self {
        HivData {
            y: [11_044, 12, 252, 10, 74, 254, 43, 4, 87, 12, 14, 5],
            n: [104_577, 882, 15_428, 473, 136_139, 102_287, 60, 17, 254, 15, 118, 31],
        }
    }
}

impl HivData {
    pub fn new(y: [u64; 12], n: [u64; 12]) -> Result<Self> {
        for s in 0..12 {
            if y[s] > n[s] {
                return Err(Error::Data(format!(
                    "study {}: y = {} exceeds n = {}",
                    s + 1,
                    y[s],
                    n[s]
                )));
            }
        }
        Ok(HivData { y, n })
    }

    /// Read `study,y,n` rows (studies 1..12, any order).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut y = [u64::MAX; 12];
        let mut n = [0u64; 12];
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |i: usize| -> Result<i64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("missing column {i}"),
                    })?
                    .trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Parse {
                        line,
                        message: e.to_string(),
                    })
            };
            let (s, ys, ns) = (field(0)?, field(1)?, field(2)?);
            if !(1..=12).contains(&s) || ys < 0 || ns < 0 {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid row study={s}, y={ys}, n={ns}"),
                });
            }
            y[s as usize - 1] = ys as u64;
            n[s as usize - 1] = ns as u64;
        }
        if let Some(s) = y.iter().position(|v| *v == u64::MAX) {
            return Err(Error::Data(format!("study {} missing from {}", s + 1, path.display())));
        }
        HivData::new(y, n)
    }
}

/// Study proportions π₁..π₁₂ from basic parameters ρ₁..ρ₉.
pub fn hiv_links(rho: &[f64]) -> Result<[f64; 12]> {
    if rho.len() != 9 {
        return Err(Error::Dimension { expected: 9, got: rho.len() });
    }
    // ρ = 1 is admitted: every link stays well defined there.
    if let Some(i) = rho.iter().position(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(Error::HivConstraint(format!("ρ{} = {} is not in (0, 1]", i + 1, rho[i])));
    }
    let (r1, r2, r3, r4, r5, r6, r7, r8, r9) = (
        rho[0], rho[1], rho[2], rho[3], rho[4], rho[5], rho[6], rho[7], rho[8],
    );
    let rest = 1.0 - r1 - r2;
    if !(rest > 0.0) {
        return Err(Error::HivConstraint(format!(
            "ρ1 + ρ2 = {} leaves no remaining group",
            r1 + r2
        )));
    }
    let ssa = r3 * r1;
    let idu = r4 * r2;
    let other = r5 * rest;
    let infected = ssa + idu + other;
    let diag = r6 * ssa + r7 * idu + r8 * other;
    let pi = [
        r1,
        r2,
        r3,
        r4,
        (idu + other) / (1.0 - r1),
        infected,
        r6 * ssa / diag,
        r7 * idu / (r7 * idu + r8 * other),
        diag / infected,
        r7,
        r9,
        (idu + r9 * other) / (idu + other),
    ];
    for (s, p) in pi.iter().enumerate() {
        if !(*p > 0.0 && *p <= 1.0) {
            return Err(Error::HivConstraint(format!("π{} = {p} is not in (0, 1]", s + 1)));
        }
    }
    Ok(pi)
}

/// Which studies and parameters a model covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HivVariant {
    /// ρ₁..ρ₉ with all twelve studies.
    Full,
    /// ρ₁..ρ₉ with studies 1–11; φ = π₁₂(ρ).
    Sub1,
    /// φ = π₁₂ directly with a Beta(1,1) prior and study 12.
    Sub2,
}

impl std::str::FromStr for HivVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HivVariant::Full),
            "sub1" => Ok(HivVariant::Sub1),
            "sub2" => Ok(HivVariant::Sub2),
            other => Err(Error::Unknown {
                kind: "HIV variant",
                name: other.into(),
                available: "full, sub1, sub2".into(),
            }),
        }
    }
}

/// HIV model for one variant; `with_data = false` gives the prior alone.
#[derive(Debug, Clone, PartialEq)]
pub struct HivModel {
    data: HivData,
    variant: HivVariant,
    with_data: bool,
}

impl HivModel {
    pub fn new(data: HivData, variant: HivVariant) -> Self {
        HivModel {
            data,
            variant,
            with_data: true,
        }
    }

    /// Same parameters and priors, no likelihood.
    pub fn prior(&self) -> Self {
        HivModel {
            with_data: false,
            ..self.clone()
        }
    }

    pub fn variant(&self) -> HivVariant {
        self.variant
    }

    fn study(&self, s: usize, p: f64) -> f64 {
        ln_binomial_pmf(self.data.y[s] as f64, self.data.n[s] as f64, p)
    }

    /// Analytic Beta(1,1) marginal of the second submodel.
    pub fn sub2_marginal_ratio() -> SharedRatio {
        analytic_ratio(Some(1), |p: &[f64]| ln_beta_pdf(p[0], 1.0, 1.0))
    }
}

impl DensityModel for HivModel {
    fn names(&self) -> Vec<String> {
        match self.variant {
            HivVariant::Sub2 => vec!["pi12".into()],
            _ => (1..=9).map(|i| format!("rho{i}")).collect(),
        }
    }

    fn dim(&self) -> usize {
        match self.variant {
            HivVariant::Sub2 => 1,
            _ => 9,
        }
    }

    fn supports(&self) -> Vec<Support> {
        vec![Support::Unit; self.dim()]
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        if self.variant == HivVariant::Sub2 {
            let p = theta[0];
            let mut lp = ln_beta_pdf(p, 1.0, 1.0);
            if self.with_data && lp > f64::NEG_INFINITY {
                lp += self.study(11, p);
            }
            return lp;
        }
        if theta.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return f64::NEG_INFINITY;
        }
        let Ok(pi) = hiv_links(theta) else {
            return f64::NEG_INFINITY;
        };
        let mut lp = ln_beta_pdf(theta[8], 3.0, 1.0);
        if !self.with_data {
            return lp;
        }
        let last = if self.variant == HivVariant::Full { 12 } else { 11 };
        for (s, p) in pi.iter().enumerate().take(last) {
            lp += self.study(s, *p);
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    fn phi_dim(&self) -> usize {
        1
    }

    fn phi(&self, theta: &[f64]) -> Vec<f64> {
        match self.variant {
            HivVariant::Sub2 => vec![theta[0]],
            _ => vec![pi12(theta)],
        }
    }

    fn phi_names(&self) -> Vec<String> {
        vec!["pi12".into()]
    }

    fn initial(&self) -> Vec<f64> {
        match self.variant {
            HivVariant::Sub2 => vec![0.5],
            // Near the observed study proportions.
            _ => vec![0.106, 0.014, 0.016, 0.021, 0.0006, 0.3, 0.8, 0.3, 0.7],
        }
    }

    fn phi_is_leading(&self) -> bool {
        self.variant == HivVariant::Sub2
    }
}

fn pi12(rho: &[f64]) -> f64 {
    let idu = rho[1] * rho[3];
    let other = rho[4] * (1.0 - rho[0] - rho[1]);
    (idu + rho[8] * other) / (idu + other)
}

impl PriorSampler for HivModel {
    /// ρ₁..ρ₈ uniform subject to ρ₁ + ρ₂ < 1 (by rejection), ρ₉ ~ Beta(3,1).
    fn sample_theta(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        if self.variant == HivVariant::Sub2 {
            return vec![open_unit(rng)];
        }
        let (r1, r2) = loop {
            let (a, b) = (open_unit(rng), open_unit(rng));
            if a + b < 1.0 {
                break (a, b);
            }
        };
        let mut rho = vec![r1, r2];
        for _ in 2..8 {
            rho.push(open_unit(rng));
        }
        // Inverse CDF of Beta(3,1): F(x) = x³.
        rho.push(open_unit(rng).cbrt());
        rho
    }
}

fn open_unit(rng: &mut dyn rand::RngCore) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::stream_rng;
    use crate::special::ln_choose;

    #[test]
    fn pi6_example() {
        let rho = [0.1, 0.01, 0.016, 0.021, 0.001, 0.5, 0.5, 0.5, 0.5];
        let pi = hiv_links(&rho).unwrap();
        assert!((pi[5] - 0.002_70).abs() < 1e-12);
        assert!((pi[5] - (0.0016 + 0.00021 + 0.00089)).abs() < 1e-15);
    }

    #[test]
    fn pass_through_links_and_rho9_one() {
        let rho = [0.2, 0.1, 0.3, 0.4, 0.05, 0.6, 0.7, 0.8, 0.35];
        let pi = hiv_links(&rho).unwrap();
        assert_eq!(pi[0], 0.2);
        assert_eq!(pi[9], 0.7);
        assert_eq!(pi[10], 0.35);
        for others in [[0.2, 0.1, 0.3, 0.4, 0.05], [0.01, 0.9, 0.5, 0.001, 0.7]] {
            let mut r = others.to_vec();
            r.extend([0.6, 0.7, 0.8, 1.0]);
            assert_eq!(hiv_links(&r).unwrap()[11], 1.0);
        }
    }

    #[test]
    fn constraint_errors_name_the_parameter() {
        let e = hiv_links(&[0.6, 0.5, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap_err();
        assert!(e.to_string().contains("ρ1 + ρ2"));
        let e = hiv_links(&[0.1, 0.1, 0.1, 1.2, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap_err();
        assert!(e.to_string().contains("ρ4"));
    }

    #[test]
    fn table_one_ratios() {
        let d = HivData::default();
        assert!((d.y[11] as f64 / d.n[11] as f64 - 0.161).abs() < 5e-4);
        assert!((d.y[0] as f64 / d.n[0] as f64 - 0.106).abs() < 5e-4);
        assert!(HivData::new([5; 12], [4; 12]).is_err());
    }

    #[test]
    fn sub2_density_example() {
        let m = HivModel::new(HivData::default(), HivVariant::Sub2);
        let p: f64 = 0.161;
        let expected = ln_choose(31.0, 5.0) + 5.0 * p.ln() + 26.0 * (1.0 - p).ln();
        assert!((m.log_density(&[p]) - expected).abs() < 1e-12);
        assert_eq!(m.log_density(&[1.2]), f64::NEG_INFINITY);
    }

    #[test]
    fn full_is_sub1_plus_study_12() {
        let d = HivData::default();
        let full = HivModel::new(d.clone(), HivVariant::Full);
        let sub1 = HivModel::new(d.clone(), HivVariant::Sub1);
        let rho = full.initial();
        let p12 = sub1.phi(&rho)[0];
        let extra = ln_binomial_pmf(5.0, 31.0, p12);
        assert!((full.log_density(&rho) - sub1.log_density(&rho) - extra).abs() < 1e-9);
    }

    #[test]
    fn prior_has_only_rho9_term() {
        let m = HivModel::new(HivData::default(), HivVariant::Sub1).prior();
        let rho = [0.2, 0.1, 0.3, 0.4, 0.05, 0.6, 0.7, 0.8, 0.5];
        assert!((m.log_density(&rho) - (3.0f64 * 0.25).ln()).abs() < 1e-12);
        let bad = [0.6, 0.5, 0.3, 0.4, 0.05, 0.6, 0.7, 0.8, 0.5];
        assert_eq!(m.log_density(&bad), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_sampler_respects_support() {
        let m = HivModel::new(HivData::default(), HivVariant::Sub1).prior();
        let mut rng = stream_rng(3, 0);
        let mut r9 = 0.0;
        for _ in 0..5000 {
            let t = m.sample_theta(&mut rng);
            assert!(t[0] + t[1] < 1.0);
            assert!(m.log_density(&t).is_finite());
            r9 += t[8];
        }
        // Beta(3,1) mean 0.75.
        assert!((r9 / 5000.0 - 0.75).abs() < 0.01);
    }
}
