//! The two-stage melding sampler.
//!
//! The melded posterior is
//! `p_pool(φ) · p₁(φ, ψ₁, Y₁)/p₁(φ) · p₂(φ, ψ₂, Y₂)/p₂(φ)` with a log-pooled
//! prior `p_pool ∝ Π p_m(φ)^{λ_m}`. Stage one samples submodel 1 (with or
//! without the `1/p₁(φ)` factor); stage two resamples stage-one φ draws by
//! index inside a Metropolis-within-Gibbs sweep over `(φ, ψ₂)`. Prior
//! marginals only appear through ratio evaluators.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{check_point, DensityModel, Provenance, RatioEvaluator, SharedRatio, Summary};
use crate::error::{Error, Result};
use crate::special::{quantile_sorted, sorted};
use crate::io::{write_chain_csv, write_rows};
use crate::mcmc::{
    componentwise_blocks, gibbs_blocks, stream_rng, Block, BlockUpdate, Chain, ChainRng, Evaluation, MhSettings,
    ModelTarget, Target,
};
use crate::models::PriorSampler;

/// Stream used by the stage-two φ move (index and uniform).
const PHI_STREAM: u64 = 2;
/// Stream used to pick the stage-two starting index.
const INIT_STREAM: u64 = 3;

/// One submodel `p_m(φ, ψ_m, Y_m)` with its data bound.
#[derive(Clone)]
pub struct Submodel {
    pub name: String,
    pub joint: Arc<dyn DensityModel>,
    /// The same parameters without likelihood terms; tilted for WSRE.
    pub prior: Arc<dyn DensityModel>,
    pub prior_sampler: Option<Arc<dyn PriorSampler>>,
    /// Known φ-marginal of the prior, when there is one.
    pub analytic_marginal: Option<SharedRatio>,
}

impl fmt::Debug for Submodel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Submodel")
            .field("name", &self.name)
            .field("dim", &self.joint.dim())
            .field("phi", &self.joint.phi_names())
            .field("prior_sampler", &self.prior_sampler.is_some())
            .field("analytic_marginal", &self.analytic_marginal.is_some())
            .finish()
    }
}

impl Submodel {
    pub fn new(name: impl Into<String>, joint: Arc<dyn DensityModel>, prior: Arc<dyn DensityModel>) -> Self {
        Submodel {
            name: name.into(),
            joint,
            prior,
            prior_sampler: None,
            analytic_marginal: None,
        }
    }

    pub fn with_sampler(mut self, sampler: Arc<dyn PriorSampler>) -> Self {
        self.prior_sampler = Some(sampler);
        self
    }

    pub fn with_analytic_marginal(mut self, ratio: SharedRatio) -> Self {
        self.analytic_marginal = Some(ratio);
        self
    }

    pub fn phi_dim(&self) -> usize {
        self.joint.phi_dim()
    }
}

/// `Σ_m λ_m log r_m`, the log ratio of a log-pooled prior.
#[derive(Debug, Clone)]
pub struct PooledPriorRatio {
    parts: Vec<(SharedRatio, f64)>,
}

/// Log-pool the evaluators `rs` with weights `lambdas ≥ 0`.
pub fn pooled_ratio(rs: Vec<SharedRatio>, lambdas: Vec<f64>) -> Result<PooledPriorRatio> {
    if rs.len() != lambdas.len() {
        return Err(Error::InvalidArgument(format!(
            "{} evaluators but {} pooling weights",
            rs.len(),
            lambdas.len()
        )));
    }
    if rs.is_empty() {
        return Err(Error::InvalidArgument("pooling needs at least one evaluator".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!("pooling weights must be finite and ≥ 0, got {l}")));
    }
    Ok(PooledPriorRatio {
        parts: rs.into_iter().zip(lambdas).collect(),
    })
}

impl PooledPriorRatio {
    pub fn parts(&self) -> &[(SharedRatio, f64)] {
        &self.parts
    }

    pub fn lambda_sum(&self) -> f64 {
        self.parts.iter().map(|(_, l)| l).sum()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.parts.iter().map(|(_, l)| *l).collect()
    }
}

impl RatioEvaluator for PooledPriorRatio {
    fn provenance(&self) -> Provenance {
        Provenance::Pooled
    }

    fn dim(&self) -> Option<usize> {
        self.parts.iter().find_map(|(r, _)| r.dim())
    }

    fn summarize(&self, phi: &[f64]) -> Result<Summary> {
        check_point(phi, self.dim())?;
        self.parts
            .iter()
            .map(|(r, l)| if *l == 0.0 { Ok(Summary::Empty) } else { r.summarize(phi) })
            .collect::<Result<Vec<_>>>()
            .map(Summary::Composite)
    }

    fn log_ratio_summaries(&self, nu: &Summary, de: &Summary) -> Result<f64> {
        let (Summary::Composite(a), Summary::Composite(b)) = (nu, de) else {
            return Err(Error::InvalidArgument("pooled ratio expects composite summaries".into()));
        };
        let mut total = 0.0;
        for (k, (r, l)) in self.parts.iter().enumerate() {
            if *l != 0.0 {
                total += l * r.log_ratio_summaries(&a[k], &b[k])?;
            }
        }
        Ok(total)
    }
}

/// What stage one targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageOneMode {
    /// `p₁(φ, ψ₁, Y₁) / p₁(φ)`, with `1/p₁` supplied by the r1 evaluator.
    DividePrior,
    /// `p₁(φ, ψ₁ | Y₁)`; stage two then carries the `1/p₁(φ)` term.
    PlainPosterior,
}

impl fmt::Display for StageOneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageOneMode::DividePrior => "divide-prior",
            StageOneMode::PlainPosterior => "plain-posterior",
        })
    }
}

impl FromStr for StageOneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divide-prior" => Ok(StageOneMode::DividePrior),
            "plain-posterior" => Ok(StageOneMode::PlainPosterior),
            other => Err(Error::Unknown {
                kind: "stage-one mode",
                name: other.into(),
                available: "divide-prior, plain-posterior".into(),
            }),
        }
    }
}

/// Sampler settings plus the blocking choice for random-walk coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSettings {
    pub mh: MhSettings,
    /// One random-walk block per coordinate instead of one joint block.
    #[serde(default)]
    pub componentwise: bool,
}

impl StageSettings {
    pub fn new(mh: MhSettings, componentwise: bool) -> Self {
        StageSettings { mh, componentwise }
    }
}

/// A ratio evaluation whose denominator sits outside the evaluator's support
/// rejects the move.
fn ratio_or_reject(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::OutOfSupport(_)) => Ok(f64::NEG_INFINITY),
        other => other,
    }
}

struct StageOneTarget<'a> {
    model: &'a dyn DensityModel,
    r1: Option<&'a dyn RatioEvaluator>,
}

impl Target for StageOneTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn supports(&self) -> Vec<crate::density::Support> {
        self.model.supports()
    }

    fn names(&self) -> Vec<String> {
        self.model.names()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let inner = ModelTarget::new(self.model).evaluate(theta)?;
        match self.r1 {
            Some(r1) if inner.log_density > f64::NEG_INFINITY => Ok(Evaluation {
                log_density: inner.log_density,
                summary: r1.summarize(&self.model.phi(theta))?,
            }),
            _ => Ok(inner),
        }
    }

    /// `Δ log p₁ + log r1(φ, φ*)`.
    fn log_accept(&self, proposed: &Evaluation, current: &Evaluation) -> Result<f64> {
        let delta = proposed.log_density - current.log_density;
        match self.r1 {
            Some(r1) => Ok(delta + ratio_or_reject(r1.log_ratio_summaries(&current.summary, &proposed.summary))?),
            None => Ok(delta),
        }
    }
}

/// Stage-one chain with its φ values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOne {
    pub mode: StageOneMode,
    pub chain: Chain,
    pub phi_names: Vec<String>,
    pub phi: Vec<Vec<f64>>,
}

impl StageOne {
    /// Chain columns, followed by φ columns when φ is not itself a
    /// coordinate of θ.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let names = &self.chain.names;
        if self.phi_names.iter().all(|p| names.contains(p)) {
            return write_chain_csv(path, names, &self.chain.draws);
        }
        let mut header = names.clone();
        header.extend(self.phi_names.iter().cloned());
        let rows: Vec<Vec<f64>> = self
            .chain
            .draws
            .iter()
            .zip(&self.phi)
            .map(|(t, p)| t.iter().chain(p).copied().collect())
            .collect();
        write_chain_csv(path, &header, &rows)
    }

    /// φ coordinate `j` across draws.
    pub fn phi_column(&self, j: usize) -> Vec<f64> {
        self.phi.iter().map(|p| p[j]).collect()
    }
}

/// Sample stage one from `sub1.joint`, divided by `p₁(φ)` through `r1` in
/// divide-prior mode.
pub fn stage_one(sub1: &Submodel, r1: &dyn RatioEvaluator, mode: StageOneMode, settings: &StageSettings) -> Result<StageOne> {
    let model = sub1.joint.as_ref();
    let target = StageOneTarget {
        model,
        r1: match mode {
            StageOneMode::DividePrior => Some(r1),
            StageOneMode::PlainPosterior => None,
        },
    };
    let init = model.initial();
    let blocks = if settings.componentwise {
        componentwise_blocks(&model.names())
    } else {
        vec![Block::random_walk("all", (0..model.dim()).collect())]
    };
    let chain = gibbs_blocks(&target, &init, blocks, &settings.mh)?;
    let phi = chain.draws.iter().map(|t| model.phi(t)).collect();
    Ok(StageOne {
        mode,
        chain,
        phi_names: model.phi_names(),
        phi,
    })
}

/// Stage two over a fixed stage-one sample, with every ratio summary
/// precomputed per stage-one point.
pub struct StageTwoSampler<'a> {
    phi: &'a [Vec<f64>],
    sub2: &'a Submodel,
    mode: StageOneMode,
    evaluators: Vec<SharedRatio>,
    /// `summaries[e][k]` for evaluator `e` at distinct point `k`.
    summaries: Vec<Vec<Summary>>,
    /// Distinct-point slot of each stage-one index.
    slot: Vec<usize>,
    pooled: Vec<(usize, f64)>,
    r1: usize,
    r2: usize,
    lambdas: Vec<f64>,
    provenance: RunProvenance,
    /// Stage-one indices whose φ lies inside the per-coordinate
    /// interquartile range; replicates start at one of these.
    central: Vec<usize>,
}

/// Indices of draws with every coordinate inside its interquartile range.
fn central_indices(phi: &[Vec<f64>]) -> Vec<usize> {
    let d = phi[0].len();
    let bounds: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let col = sorted(&phi.iter().map(|p| p[j]).collect::<Vec<_>>());
            (quantile_sorted(&col, 0.25), quantile_sorted(&col, 0.75))
        })
        .collect();
    let inside: Vec<usize> = (0..phi.len())
        .filter(|&k| phi[k].iter().zip(&bounds).all(|(x, (lo, hi))| x >= lo && x <= hi))
        .collect();
    if inside.is_empty() {
        (0..phi.len()).collect()
    } else {
        inside
    }
}

/// Provenance tags of the evaluators a run used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub r1: Provenance,
    pub r2: Provenance,
    pub pooled: Vec<Provenance>,
}

fn slot_of(evaluators: &mut Vec<SharedRatio>, r: &SharedRatio) -> usize {
    if let Some(i) = evaluators.iter().position(|e| Arc::ptr_eq(e, r)) {
        return i;
    }
    evaluators.push(r.clone());
    evaluators.len() - 1
}

impl<'a> StageTwoSampler<'a> {
    /// `pooled` is evaluated part by part so evaluators shared with `r1` or
    /// `r2` are summarized once.
    pub fn new(
        stage1: &'a StageOne,
        sub2: &'a Submodel,
        pooled: &PooledPriorRatio,
        r1: &SharedRatio,
        r2: &SharedRatio,
    ) -> Result<Self> {
        if stage1.phi.is_empty() {
            return Err(Error::EmptySample("stage-one sample is empty".into()));
        }
        let d = sub2.phi_dim();
        if stage1.phi[0].len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: stage1.phi[0].len(),
            });
        }
        if !sub2.joint.phi_is_leading() {
            return Err(Error::Unsupported(format!(
                "stage two needs φ as the leading coordinates of submodel `{}`",
                sub2.name
            )));
        }
        let mut evaluators = Vec::new();
        let r1_slot = slot_of(&mut evaluators, r1);
        let r2_slot = slot_of(&mut evaluators, r2);
        let pooled_slots: Vec<(usize, f64)> = pooled
            .parts()
            .iter()
            .filter(|(_, l)| *l != 0.0)
            .map(|(r, l)| (slot_of(&mut evaluators, r), *l))
            .collect();

        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut distinct: Vec<&[f64]> = Vec::new();
        let slot = stage1
            .phi
            .iter()
            .map(|p| {
                let key: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
                *seen.entry(key).or_insert_with(|| {
                    distinct.push(p);
                    distinct.len() - 1
                })
            })
            .collect();
        let needed: Vec<bool> = (0..evaluators.len())
            .map(|e| e == r2_slot || pooled_slots.iter().any(|(s, _)| *s == e) || (e == r1_slot && stage1.mode == StageOneMode::PlainPosterior))
            .collect();
        let summaries = evaluators
            .iter()
            .zip(&needed)
            .map(|(ev, need)| {
                if !need {
                    return Ok(Vec::new());
                }
                distinct.par_iter().map(|p| ev.summarize(p)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StageTwoSampler {
            phi: &stage1.phi,
            sub2,
            mode: stage1.mode,
            provenance: RunProvenance {
                r1: r1.provenance(),
                r2: r2.provenance(),
                pooled: pooled.parts().iter().map(|(r, _)| r.provenance()).collect(),
            },
            evaluators,
            summaries,
            slot,
            pooled: pooled_slots,
            r1: r1_slot,
            r2: r2_slot,
            lambdas: pooled.lambdas(),
            central: central_indices(&stage1.phi),
        })
    }

    pub fn provenance(&self) -> &RunProvenance {
        &self.provenance
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    fn lr(&self, e: usize, nu: usize, de: usize) -> Result<f64> {
        let s = &self.summaries[e];
        self.evaluators[e].log_ratio_summaries(&s[self.slot[nu]], &s[self.slot[de]])
    }

    /// Ratio part of the log acceptance for moving from stage-one index
    /// `cur` to `prop`, excluding the `p₂` joint difference.
    pub fn log_ratio_terms(&self, prop: usize, cur: usize) -> Result<f64> {
        let mut total = 0.0;
        for &(e, l) in &self.pooled {
            // A current point outside a pooled component's support carries
            // zero pooled density, so any move away is taken.
            match self.lr(e, prop, cur) {
                Err(Error::OutOfSupport(_)) => return Ok(f64::INFINITY),
                r => total += l * r?,
            }
        }
        total += ratio_or_reject(self.lr(self.r2, cur, prop))?;
        if self.mode == StageOneMode::PlainPosterior {
            total += ratio_or_reject(self.lr(self.r1, cur, prop))?;
        }
        Ok(total)
    }

    /// One stage-two chain. φ moves first each sweep, then `ψ₂` by random
    /// walk.
    pub fn run(&self, settings: &StageSettings, seed: u64) -> Result<StageTwoRun> {
        let mh = MhSettings { seed, ..settings.mh.clone() };
        let model = self.sub2.joint.as_ref();
        let target = ModelTarget::new(model);
        let d = model.phi_dim();
        let start = self.central[stream_rng(seed, INIT_STREAM).random_range(0..self.central.len())];
        let init = model.initial_with_phi(&self.phi[start]);
        let mut mover = PhiMove {
            sampler: self,
            rng: stream_rng(seed, PHI_STREAM),
            current: start,
            trace: Vec::with_capacity(mh.kept()),
            proposal: Vec::with_capacity(model.dim()),
        };
        let names = model.names();
        let mut blocks = vec![Block::custom("phi", (0..d).collect(), &mut mover)];
        if model.dim() > d {
            if settings.componentwise {
                blocks.extend(
                    (d..model.dim()).map(|i| Block::random_walk(names[i].clone(), vec![i])),
                );
            } else {
                blocks.push(Block::random_walk("psi2", (d..model.dim()).collect()));
            }
        }
        let chain = gibbs_blocks(&target, &init, blocks, &mh)?;
        if mh.warmup > 0 && chain.blocks.iter().all(|b| b.warmup_accepted == 0) {
            return Err(Error::ZeroAcceptance {
                block: "every stage-two block".into(),
            });
        }
        let indices = mover.trace;
        Ok(StageTwoRun {
            seed,
            start_index: start,
            chain,
            indices,
        })
    }

    /// Independent replicates, run concurrently.
    pub fn run_replicates(&self, settings: &StageSettings, seeds: &[u64]) -> Result<Vec<StageTwoRun>> {
        seeds.par_iter().map(|s| self.run(settings, *s)).collect()
    }
}

struct PhiMove<'s, 'a> {
    sampler: &'s StageTwoSampler<'a>,
    rng: ChainRng,
    current: usize,
    trace: Vec<usize>,
    proposal: Vec<f64>,
}

impl BlockUpdate for PhiMove<'_, '_> {
    fn update(&mut self, target: &dyn Target, theta: &mut [f64], current: &mut Evaluation) -> Result<bool> {
        // Both draws happen every sweep so the proposal stream does not
        // depend on the evaluators.
        let j = self.rng.random_range(0..self.sampler.phi.len());
        let log_u = self.rng.random::<f64>().ln();
        let phi = &self.sampler.phi[j];
        self.proposal.clear();
        self.proposal.extend_from_slice(theta);
        self.proposal[..phi.len()].copy_from_slice(phi);
        let ev = target.evaluate(&self.proposal)?;
        if ev.log_density == f64::NEG_INFINITY {
            return Ok(false);
        }
        let la = self.sampler.log_ratio_terms(j, self.current)? + ev.log_density - current.log_density;
        if la.is_nan() {
            return Err(Error::NanDensity(self.proposal.clone()));
        }
        if log_u < la {
            theta[..phi.len()].copy_from_slice(phi);
            *current = ev;
            self.current = j;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn record(&mut self, _theta: &[f64]) {
        self.trace.push(self.current);
    }
}

/// One stage-two chain over `(φ, ψ₂)` plus the stage-one index of every
/// recorded φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTwoRun {
    pub seed: u64,
    pub start_index: usize,
    pub chain: Chain,
    pub indices: Vec<usize>,
}

impl StageTwoRun {
    /// φ coordinate `j` across recorded draws.
    pub fn phi_column(&self, j: usize) -> Vec<f64> {
        self.chain.column(j)
    }

    /// Whether every recorded φ equals the stage-one φ at its index.
    pub fn indices_consistent(&self, stage1: &StageOne) -> bool {
        self.indices.len() == self.chain.len()
            && self.chain.draws.iter().zip(&self.indices).all(|(t, &k)| {
                let p = &stage1.phi[k];
                t[..p.len()].iter().zip(p).all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }

    /// Melded-posterior ψ₁ draws recovered through the stored indices.
    pub fn psi1_draws<'s>(&self, stage1: &'s StageOne) -> Vec<&'s [f64]> {
        self.indices.iter().map(|&k| stage1.chain.draws[k].as_slice()).collect()
    }

    /// Rows `φ…, index, ψ₂…` with header.
    pub fn write_csv(&self, path: &Path, phi_dim: usize) -> Result<()> {
        let mut header: Vec<String> = self.chain.names[..phi_dim].to_vec();
        header.push("index".into());
        header.extend(self.chain.names[phi_dim..].iter().cloned());
        let rows = self.chain.draws.iter().zip(&self.indices).map(|(t, k)| {
            let mut row: Vec<String> = t[..phi_dim].iter().map(|x| x.to_string()).collect();
            row.push(k.to_string());
            row.extend(t[phi_dim..].iter().map(|x| x.to_string()));
            row
        });
        write_rows(path, &header, rows)
    }
}

/// Stage one, replicate stage-two chains and what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeldingRun {
    pub stage_one: StageOne,
    pub stage_two: Vec<StageTwoRun>,
    pub provenance: RunProvenance,
    pub lambdas: Vec<f64>,
    pub stage_two_settings: StageSettings,
}

/// Per-block acceptance summary for metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub chain: String,
    pub seed: u64,
    pub blocks: Vec<(String, f64)>,
}

impl MeldingRun {
    /// Stage one, then `seeds.len()` stage-two replicates.
    #[allow(clippy::too_many_arguments)]
    pub fn execute(
        sub1: &Submodel,
        sub2: &Submodel,
        r1: &SharedRatio,
        r2: &SharedRatio,
        lambdas: [f64; 2],
        mode: StageOneMode,
        stage_one_settings: &StageSettings,
        stage_two_settings: &StageSettings,
        seeds: &[u64],
    ) -> Result<Self> {
        let pooled = pooled_ratio(vec![r1.clone(), r2.clone()], lambdas.to_vec())?;
        let s1 = stage_one(sub1, r1.as_ref(), mode, stage_one_settings)?;
        let (stage_two, provenance) = {
            let sampler = StageTwoSampler::new(&s1, sub2, &pooled, r1, r2)?;
            (sampler.run_replicates(stage_two_settings, seeds)?, sampler.provenance().clone())
        };
        Ok(MeldingRun {
            stage_one: s1,
            stage_two,
            provenance,
            lambdas: lambdas.to_vec(),
            stage_two_settings: stage_two_settings.clone(),
        })
    }

    /// `stage_one.csv` and `stage_two_XX.csv` under `dir`.
    pub fn write_chains(&self, dir: &Path) -> Result<Vec<String>> {
        let mut files = vec!["stage_one.csv".to_string()];
        self.stage_one.write_csv(&dir.join(&files[0]))?;
        let d = self.stage_one.phi_names.len();
        for (r, run) in self.stage_two.iter().enumerate() {
            let name = format!("stage_two_{:02}.csv", r + 1);
            run.write_csv(&dir.join(&name), d)?;
            files.push(name);
        }
        Ok(files)
    }

    pub fn acceptance(&self) -> Vec<AcceptanceSummary> {
        let summarize = |label: String, chain: &Chain| AcceptanceSummary {
            chain: label,
            seed: chain.settings.seed,
            blocks: chain.blocks.iter().map(|b| (b.name.clone(), b.acceptance_rate())).collect(),
        };
        let mut out = vec![summarize("stage_one".into(), &self.stage_one.chain)];
        for (r, run) in self.stage_two.iter().enumerate() {
            out.push(summarize(format!("stage_two_{:02}", r + 1), &run.chain));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{analytic_ratio, constant_ratio, Support};
    use crate::diagnostics::ks_distance;
    use crate::models::gaussian::GaussianMeld;

    fn gauss(mean: f64) -> SharedRatio {
        analytic_ratio(Some(1), move |p: &[f64]| -0.5 * (p[0] - mean).powi(2))
    }

    #[test]
    fn pooled_examples() {
        let a = gauss(0.0);
        let p = pooled_ratio(vec![a.clone(), a.clone()], vec![0.5, 0.5]).unwrap();
        for &(x, y) in &[(0.0, 3.0), (1.5, -2.0)] {
            let single = a.log_ratio(&[x], &[y]).unwrap();
            assert!((p.log_ratio(&[x], &[y]).unwrap() - single).abs() < 1e-12);
        }
        let q = pooled_ratio(vec![a.clone(), gauss(1.0)], vec![1.0, 0.0]).unwrap();
        assert_eq!(q.log_ratio(&[0.3], &[2.0]).unwrap(), a.log_ratio(&[0.3], &[2.0]).unwrap());
        let r = pooled_ratio(vec![gauss(0.0), gauss(1.0)], vec![0.5, 0.5]).unwrap();
        assert!(r.log_ratio(&[0.0], &[1.0]).unwrap().abs() < 1e-15);
        assert_eq!(r.lambda_sum(), 1.0);
        assert!(pooled_ratio(vec![a.clone()], vec![0.5, 0.5]).is_err());
        assert!(pooled_ratio(vec![a], vec![-0.1]).is_err());
    }

    fn gaussian_subs() -> (Submodel, Submodel, GaussianMeld) {
        let g = GaussianMeld::default();
        let s1 = g.sub1().unwrap();
        let sub1 = Submodel::new("sub1", Arc::new(s1), Arc::new(s1.prior())).with_analytic_marginal(s1.prior().marginal_ratio());
        let s2 = g.sub2();
        let sub2 = Submodel::new("sub2", Arc::new(s2), Arc::new(s2)).with_analytic_marginal(s2.marginal_ratio());
        (sub1, sub2, g)
    }

    #[test]
    fn divide_prior_with_constant_equals_plain() {
        let (sub1, _, _) = gaussian_subs();
        let st = StageSettings::new(MhSettings::new(3000, 500, 11), false);
        let a = stage_one(&sub1, constant_ratio().as_ref(), StageOneMode::DividePrior, &st).unwrap();
        let b = stage_one(&sub1, constant_ratio().as_ref(), StageOneMode::PlainPosterior, &st).unwrap();
        assert_eq!(a.chain.draws, b.chain.draws);
    }

    #[test]
    fn self_index_proposal_has_unit_acceptance() {
        let (sub1, sub2, _) = gaussian_subs();
        let r1 = sub1.analytic_marginal.clone().unwrap();
        let r2 = sub2.analytic_marginal.clone().unwrap();
        let st = StageSettings::new(MhSettings::new(2000, 500, 3), false);
        let s1 = stage_one(&sub1, r1.as_ref(), StageOneMode::DividePrior, &st).unwrap();
        let pooled = pooled_ratio(vec![r1.clone(), r2.clone()], vec![0.5, 0.5]).unwrap();
        let sampler = StageTwoSampler::new(&s1, &sub2, &pooled, &r1, &r2).unwrap();
        for k in [0, 7, 100] {
            assert_eq!(sampler.log_ratio_terms(k, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn gaussian_meld_matches_closed_form() {
        let (sub1, sub2, g) = gaussian_subs();
        let r1 = sub1.analytic_marginal.clone().unwrap();
        let r2 = sub2.analytic_marginal.clone().unwrap();
        let s1 = StageSettings::new(MhSettings::new(60_000, 2_000, 21).with_thin(2), false);
        let s2 = StageSettings::new(MhSettings::new(22_000, 2_000, 0), false);
        let run = MeldingRun::execute(&sub1, &sub2, &r1, &r2, [0.5, 0.5], StageOneMode::DividePrior, &s1, &s2, &[5, 6]).unwrap();
        let (m, v) = g.melded_phi((0.5, 0.5));
        for rep in &run.stage_two {
            assert!(rep.indices_consistent(&run.stage_one));
            let x = rep.phi_column(0);
            let mean = crate::special::mean(&x);
            let var = crate::special::sample_var(&x);
            assert!((mean - m).abs() < 0.05, "{mean} vs {m}");
            assert!((var - v).abs() < 0.03, "{var} vs {v}");
        }
    }

    /// Flat one-dimensional submodel with no data.
    struct Flat;

    impl DensityModel for Flat {
        fn names(&self) -> Vec<String> {
            vec!["phi".into()]
        }
        fn dim(&self) -> usize {
            1
        }
        fn supports(&self) -> Vec<Support> {
            vec![Support::Real]
        }
        fn log_density(&self, _t: &[f64]) -> f64 {
            0.0
        }
        fn phi_dim(&self) -> usize {
            1
        }
        fn phi(&self, t: &[f64]) -> Vec<f64> {
            t.to_vec()
        }
        fn phi_names(&self) -> Vec<String> {
            self.names()
        }
        fn initial(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn phi_is_leading(&self) -> bool {
            true
        }
    }

    #[test]
    fn degenerate_meld_reproduces_stage_one() {
        let (sub1, _, _) = gaussian_subs();
        let flat = Submodel::new("flat", Arc::new(Flat), Arc::new(Flat));
        let c = constant_ratio();
        let st = StageSettings::new(MhSettings::new(41_000, 1_000, 8).with_thin(4), false);
        let s1 = stage_one(&sub1, c.as_ref(), StageOneMode::PlainPosterior, &st).unwrap();
        let pooled = pooled_ratio(vec![c.clone(), c.clone()], vec![0.5, 0.5]).unwrap();
        let sampler = StageTwoSampler::new(&s1, &flat, &pooled, &c, &c).unwrap();
        let run = sampler
            .run(&StageSettings::new(MhSettings::new(11_000, 1_000, 0), false), 9)
            .unwrap();
        assert_eq!(run.chain.blocks[0].acceptance_rate(), 1.0);
        assert!(run.indices_consistent(&s1));
        let ks = ks_distance(&run.phi_column(0), &s1.chain.column(0)).unwrap();
        assert!(ks < 0.03, "{ks}");
    }

    #[test]
    fn proposal_stream_ignores_evaluators() {
        let (sub1, sub2, _) = gaussian_subs();
        let r1 = sub1.analytic_marginal.clone().unwrap();
        let r2 = sub2.analytic_marginal.clone().unwrap();
        let st = StageSettings::new(MhSettings::new(3000, 500, 4), false);
        let s1 = stage_one(&sub1, r1.as_ref(), StageOneMode::DividePrior, &st).unwrap();
        // Record proposed indices by replaying the φ stream.
        let replay = |seed: u64, n: usize| -> Vec<usize> {
            let mut rng = stream_rng(seed, PHI_STREAM);
            (0..n)
                .map(|_| {
                    let j = rng.random_range(0..s1.phi.len());
                    let _: f64 = rng.random();
                    j
                })
                .collect()
        };
        let c = constant_ratio();
        let settings = StageSettings::new(MhSettings::new(1500, 500, 0), false);
        for (a, b) in [(r1.clone(), r2.clone()), (c.clone(), c.clone())] {
            let pooled = pooled_ratio(vec![a.clone(), b.clone()], vec![0.5, 0.5]).unwrap();
            let run = StageTwoSampler::new(&s1, &sub2, &pooled, &a, &b).unwrap().run(&settings, 12).unwrap();
            let proposed = replay(12, 1500);
            // Every accepted move lands on the index proposed in that sweep.
            let post = &proposed[500..];
            for (k, idx) in run.indices.iter().enumerate() {
                let prev = if k == 0 { None } else { Some(run.indices[k - 1]) };
                assert!(Some(*idx) == prev || *idx == post[k] || k == 0);
            }
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("divide-prior".parse::<StageOneMode>().unwrap(), StageOneMode::DividePrior);
        assert_eq!(StageOneMode::PlainPosterior.to_string(), "plain-posterior");
        assert!("other".parse::<StageOneMode>().is_err());
    }
}
