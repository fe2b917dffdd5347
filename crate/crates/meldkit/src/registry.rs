//! Strategies selected by name at run time: ratio evaluators
//! (`analytic`, `naive`, `wsre`, `constant`) and experiments
//! (`gaussian`, `hiv`, `h1n1`).

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{constant_ratio, DensityModel, SampleSet, SharedRatio};
use crate::error::{Error, Result};
use crate::kde::naive_ratio;
use crate::mcmc::MhSettings;
use crate::melding::{stage_one, StageOne, StageOneMode, StageSettings, Submodel};
use crate::models::gaussian::GaussianMeld;
use crate::models::h1n1::{h1n1_synthetic, H1n1Data, H1n1Icu, H1n1Severity, DEFAULT_HORIZON};
use crate::models::hiv::{HivData, HivModel, HivVariant};
use crate::models::sample_prior_phi;
use crate::wsre::{wsre_pipeline, GridSpec, WeightingFunction, WsreConfig, WsreEstimate, WsreMcmc};

/// Inputs an evaluator strategy may draw on.
#[derive(Debug, Clone)]
pub struct BuildContext {
    pub seed: u64,
    /// Prior draws for the naive KDE.
    pub naive_draws: usize,
    pub wsre: WsreConfig,
    /// Bandwidth override for the naive KDE.
    pub bandwidth: Option<Vec<f64>>,
    /// Previously built WSRE estimate to reuse instead of sampling.
    pub wsre_estimate: Option<WsreEstimate>,
}

/// A ratio evaluator plus the artefacts it was built from.
#[derive(Debug, Clone)]
pub struct BuiltEvaluator {
    pub name: &'static str,
    pub ratio: SharedRatio,
    pub naive_sample: Option<SampleSet>,
    pub wsre: Option<WsreEstimate>,
}

pub trait EvaluatorStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Build the self-density ratio of `sub`'s prior φ-marginal.
    fn build(&self, sub: &Submodel, ctx: &BuildContext) -> Result<BuiltEvaluator>;
}

struct Analytic;
struct Naive;
struct Wsre;
struct Constant;

impl EvaluatorStrategy for Analytic {
    fn name(&self) -> &'static str {
        "analytic"
    }

    fn build(&self, sub: &Submodel, _ctx: &BuildContext) -> Result<BuiltEvaluator> {
        let ratio = sub.analytic_marginal.clone().ok_or_else(|| {
            Error::Unsupported(format!("submodel `{}` has no analytic prior marginal for φ", sub.name))
        })?;
        Ok(BuiltEvaluator {
            name: self.name(),
            ratio,
            naive_sample: None,
            wsre: None,
        })
    }
}

impl EvaluatorStrategy for Naive {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn build(&self, sub: &Submodel, ctx: &BuildContext) -> Result<BuiltEvaluator> {
        let sampler = sub.prior_sampler.as_ref().ok_or_else(|| {
            Error::Unsupported(format!("submodel `{}` cannot be sampled directly from its prior", sub.name))
        })?;
        let sample = sample_prior_phi(
            sampler.as_ref(),
            sub.prior.as_ref(),
            ctx.naive_draws,
            ctx.seed,
            &format!("{} prior φ", sub.name),
        )?;
        Ok(BuiltEvaluator {
            name: self.name(),
            ratio: naive_ratio(&sample, ctx.bandwidth.clone())?,
            naive_sample: Some(sample),
            wsre: None,
        })
    }
}

impl EvaluatorStrategy for Wsre {
    fn name(&self) -> &'static str {
        "wsre"
    }

    fn build(&self, sub: &Submodel, ctx: &BuildContext) -> Result<BuiltEvaluator> {
        let est = match &ctx.wsre_estimate {
            Some(e) => {
                if e.phi_names != sub.prior.phi_names() {
                    return Err(Error::Data(format!(
                        "WSRE estimate is for φ = {:?}, submodel `{}` has {:?}",
                        e.phi_names,
                        sub.name,
                        sub.prior.phi_names()
                    )));
                }
                e.clone()
            }
            None => wsre_pipeline(sub.prior.clone(), &ctx.wsre)?,
        };
        Ok(BuiltEvaluator {
            name: self.name(),
            ratio: est.ratio(),
            naive_sample: None,
            wsre: Some(est),
        })
    }
}

impl EvaluatorStrategy for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn build(&self, _sub: &Submodel, _ctx: &BuildContext) -> Result<BuiltEvaluator> {
        Ok(BuiltEvaluator {
            name: self.name(),
            ratio: constant_ratio(),
            naive_sample: None,
            wsre: None,
        })
    }
}

pub const EVALUATORS: [&str; 4] = ["analytic", "naive", "wsre", "constant"];

pub fn evaluator(name: &str) -> Result<Box<dyn EvaluatorStrategy>> {
    match name {
        "analytic" => Ok(Box::new(Analytic)),
        "naive" => Ok(Box::new(Naive)),
        "wsre" => Ok(Box::new(Wsre)),
        "constant" => Ok(Box::new(Constant)),
        other => Err(Error::Unknown {
            kind: "evaluator",
            name: other.into(),
            available: EVALUATORS.join(", "),
        }),
    }
}

/// Data sources and sizes for building an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    /// Directory with the experiment's data files; built-in data otherwise.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// H1N1 horizon in days.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Seed of the synthetic H1N1 dataset.
    #[serde(default = "one")]
    pub data_seed: u64,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn one() -> u64 {
    1
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            data_dir: None,
            horizon: DEFAULT_HORIZON,
            data_seed: 1,
        }
    }
}

/// A two-submodel melding problem with its default settings.
pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    fn submodels(&self) -> Result<(Submodel, Submodel)>;

    /// Joint model targeted by the direct baseline, when one exists.
    fn full_joint(&self) -> Result<Arc<dyn DensityModel>>;

    fn mode(&self) -> StageOneMode;

    fn lambdas(&self) -> [f64; 2] {
        [0.5, 0.5]
    }

    /// Index (0 or 1) of the submodel whose marginal the chosen evaluator
    /// estimates.
    fn estimated(&self) -> usize;

    /// Strategy for the other submodel's marginal.
    fn fixed_evaluator(&self) -> &'static str;

    /// Default grid of tilted-target means.
    fn wsre_grid_spec(&self) -> GridSpec;

    fn default_wsre(&self, seed: u64) -> Result<WsreConfig>;

    fn default_naive_draws(&self) -> usize;

    fn default_stage_one(&self, seed: u64) -> StageSettings;

    fn default_stage_two(&self) -> StageSettings;

    fn default_direct(&self, seed: u64) -> StageSettings;
}

pub const EXPERIMENTS: [&str; 3] = ["gaussian", "hiv", "h1n1"];

pub fn experiment(name: &str, opts: &ExperimentOptions) -> Result<Box<dyn Experiment>> {
    match name {
        "gaussian" => Ok(Box::new(GaussianExperiment { meld: GaussianMeld::default() })),
        "hiv" => {
            let data = match &opts.data_dir {
                Some(dir) => HivData::from_csv(&dir.join("hiv.csv"))?,
                None => HivData::default(),
            };
            Ok(Box::new(HivExperiment { data }))
        }
        "h1n1" => {
            let data = match &opts.data_dir {
                Some(dir) => H1n1Data::read_dir(dir, opts.horizon)?,
                None => h1n1_synthetic(opts.data_seed, opts.horizon)?,
            };
            Ok(Box::new(H1n1Experiment { data }))
        }
        other => Err(Error::Unknown {
            kind: "model",
            name: other.into(),
            available: EXPERIMENTS.join(", "),
        }),
    }
}

/// Evaluators `[r1, r2]`: strategy `name` for the experiment's estimated
/// submodel, its fixed strategy for the other.
pub fn evaluators_for(
    exp: &dyn Experiment,
    subs: &(Submodel, Submodel),
    name: &str,
    ctx: &BuildContext,
) -> Result<[BuiltEvaluator; 2]> {
    let chosen = evaluator(name)?;
    let fixed = evaluator(exp.fixed_evaluator())?;
    let (a, b) = (&subs.0, &subs.1);
    Ok(if exp.estimated() == 0 {
        [chosen.build(a, ctx)?, fixed.build(b, ctx)?]
    } else {
        [fixed.build(a, ctx)?, chosen.build(b, ctx)?]
    })
}

/// Sample the experiment's full joint model directly.
pub fn run_direct(exp: &dyn Experiment, settings: &StageSettings) -> Result<StageOne> {
    let joint = exp.full_joint()?;
    let sub = Submodel::new(format!("{}-joint", exp.name()), joint.clone(), joint);
    stage_one(&sub, constant_ratio().as_ref(), StageOneMode::PlainPosterior, settings)
}

/// Gaussian problem with a closed-form melded posterior.
pub struct GaussianExperiment {
    pub meld: GaussianMeld,
}

impl GaussianExperiment {
    /// Tilted-target grid: ten means over `[−2, 6]`, `σ = 1.5`.
    pub fn grid_spec() -> GridSpec {
        GridSpec {
            count: 10,
            lo: vec![-2.0],
            hi: vec![6.0],
            var: vec![2.25],
        }
    }

    pub fn wsre_grid() -> Result<Vec<WeightingFunction>> {
        Self::grid_spec().build()
    }
}

impl Experiment for GaussianExperiment {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn submodels(&self) -> Result<(Submodel, Submodel)> {
        let s1 = self.meld.sub1()?;
        let bed = s1.prior();
        let sub1 = Submodel::new("gaussian-1", Arc::new(s1), Arc::new(bed))
            .with_sampler(Arc::new(bed))
            .with_analytic_marginal(bed.marginal_ratio());
        let s2 = self.meld.sub2();
        let sub2 = Submodel::new("gaussian-2", Arc::new(s2), Arc::new(s2)).with_analytic_marginal(s2.marginal_ratio());
        Ok((sub1, sub2))
    }

    fn full_joint(&self) -> Result<Arc<dyn DensityModel>> {
        Ok(Arc::new(self.meld.sub1()?.prior()))
    }

    fn mode(&self) -> StageOneMode {
        StageOneMode::DividePrior
    }

    fn estimated(&self) -> usize {
        0
    }

    fn fixed_evaluator(&self) -> &'static str {
        "analytic"
    }

    fn wsre_grid_spec(&self) -> GridSpec {
        Self::grid_spec()
    }

    fn default_wsre(&self, seed: u64) -> Result<WsreConfig> {
        Ok(WsreConfig {
            weighting: Self::wsre_grid()?,
            n_per_w: 250,
            mcmc: WsreMcmc {
                thin: 4,
                ..WsreMcmc::default()
            },
            bandwidth: None,
            seed,
        })
    }

    fn default_naive_draws(&self) -> usize {
        2500
    }

    fn default_stage_one(&self, seed: u64) -> StageSettings {
        StageSettings::new(MhSettings::new(22_000, 2_000, seed).with_thin(4), false)
    }

    fn default_stage_two(&self) -> StageSettings {
        StageSettings::new(MhSettings::new(6_000, 1_000, 0), false)
    }

    fn default_direct(&self, seed: u64) -> StageSettings {
        StageSettings::new(MhSettings::new(22_000, 2_000, seed).with_thin(4), false)
    }
}

/// HIV: studies 1–11 with ρ₁..ρ₉ against study 12 with a flat prior on π₁₂.
pub struct HivExperiment {
    pub data: HivData,
}

impl HivExperiment {
    /// Ten means equally spaced over `[0.01, 0.99]`, `σ = 0.25`.
    pub fn grid_spec() -> GridSpec {
        GridSpec {
            count: 10,
            lo: vec![0.01],
            hi: vec![0.99],
            var: vec![0.0625],
        }
    }

    pub fn wsre_grid() -> Result<Vec<WeightingFunction>> {
        Self::grid_spec().build()
    }
}

impl Experiment for HivExperiment {
    fn name(&self) -> &'static str {
        "hiv"
    }

    fn submodels(&self) -> Result<(Submodel, Submodel)> {
        let m1 = HivModel::new(self.data.clone(), HivVariant::Sub1);
        let p1 = m1.prior();
        let sub1 = Submodel::new("hiv-1", Arc::new(m1), Arc::new(p1.clone())).with_sampler(Arc::new(p1));
        let m2 = HivModel::new(self.data.clone(), HivVariant::Sub2);
        let sub2 = Submodel::new("hiv-2", Arc::new(m2.clone()), Arc::new(m2.prior()))
            .with_sampler(Arc::new(m2.prior()))
            .with_analytic_marginal(HivModel::sub2_marginal_ratio());
        Ok((sub1, sub2))
    }

    fn full_joint(&self) -> Result<Arc<dyn DensityModel>> {
        Ok(Arc::new(HivModel::new(self.data.clone(), HivVariant::Full)))
    }

    fn mode(&self) -> StageOneMode {
        StageOneMode::DividePrior
    }

    fn estimated(&self) -> usize {
        0
    }

    fn fixed_evaluator(&self) -> &'static str {
        "analytic"
    }

    fn wsre_grid_spec(&self) -> GridSpec {
        Self::grid_spec()
    }

    fn default_wsre(&self, seed: u64) -> Result<WsreConfig> {
        Ok(WsreConfig {
            weighting: Self::wsre_grid()?,
            n_per_w: 250,
            mcmc: WsreMcmc {
                warmup: Some(1000),
                thin: 10,
                step: Vec::new(),
                componentwise: true,
                adapt_covariance: false,
            },
            bandwidth: None,
            seed,
        })
    }

    fn default_naive_draws(&self) -> usize {
        2500
    }

    fn default_stage_one(&self, seed: u64) -> StageSettings {
        StageSettings::new(MhSettings::new(27_000, 2_000, seed).with_thin(5), true)
    }

    fn default_stage_two(&self) -> StageSettings {
        StageSettings::new(MhSettings::new(6_000, 1_000, 0), true)
    }

    fn default_direct(&self, seed: u64) -> StageSettings {
        StageSettings::new(MhSettings::new(27_000, 2_000, seed).with_thin(5), true)
    }
}

/// H1N1: ICU occupancy model against the collapsed severity model.
pub struct H1n1Experiment {
    pub data: H1n1Data,
}

impl H1n1Experiment {
    /// 10 × 10 grid of means over `[30, 275] × [500, 3000]`,
    /// `σ² = (25², 250²)`.
    pub fn grid_spec() -> GridSpec {
        GridSpec {
            count: 10,
            lo: vec![30.0, 500.0],
            hi: vec![275.0, 3000.0],
            var: vec![625.0, 62_500.0],
        }
    }

    pub fn wsre_grid() -> Result<Vec<WeightingFunction>> {
        Self::grid_spec().build()
    }
}

impl Experiment for H1n1Experiment {
    fn name(&self) -> &'static str {
        "h1n1"
    }

    fn submodels(&self) -> Result<(Submodel, Submodel)> {
        let icu = H1n1Icu::new(self.data.clone())?;
        let sub1 = Submodel::new("icu", Arc::new(icu.clone()), Arc::new(icu.prior()));
        let sub2 = Submodel::new("severity", Arc::new(H1n1Severity), Arc::new(H1n1Severity))
            .with_sampler(Arc::new(H1n1Severity));
        Ok((sub1, sub2))
    }

    fn full_joint(&self) -> Result<Arc<dyn DensityModel>> {
        Err(Error::Unsupported(
            "the H1N1 melded model has no implied joint model to sample directly".into(),
        ))
    }

    fn mode(&self) -> StageOneMode {
        StageOneMode::PlainPosterior
    }

    fn estimated(&self) -> usize {
        1
    }

    fn fixed_evaluator(&self) -> &'static str {
        "constant"
    }

    fn wsre_grid_spec(&self) -> GridSpec {
        Self::grid_spec()
    }

    fn default_wsre(&self, seed: u64) -> Result<WsreConfig> {
        Ok(WsreConfig {
            weighting: Self::wsre_grid()?,
            n_per_w: 1000,
            mcmc: WsreMcmc {
                warmup: Some(2000),
                thin: 50,
                step: Vec::new(),
                componentwise: false,
                adapt_covariance: true,
            },
            bandwidth: None,
            seed,
        })
    }

    fn default_naive_draws(&self) -> usize {
        100_000
    }

    fn default_stage_one(&self, seed: u64) -> StageSettings {
        StageSettings::new(MhSettings::new(60_000, 10_000, seed).with_thin(10), true)
    }

    fn default_stage_two(&self) -> StageSettings {
        StageSettings::new(MhSettings::new(31_000, 1_000, 0).with_adapt_covariance(true), false)
    }

    fn default_direct(&self, seed: u64) -> StageSettings {
        self.default_stage_one(seed)
    }
}
