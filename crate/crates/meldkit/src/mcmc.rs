//! Random-walk Metropolis and Metropolis-within-Gibbs.
//!
//! Proposals are Gaussian steps on an unconstrained scale per coordinate
//! (log for positive parameters, logit for probabilities) with the Jacobian
//! folded into the acceptance ratio. Step scales adapt by Robbins–Monro on the
//! log scale during warmup only, then stay frozen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{checked_log_density, DensityModel, Summary, Support};
use crate::error::{Error, Result};

pub type ChainRng = ChaCha8Rng;

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream reserved for the sampler's own proposals.
const ENGINE_STREAM: u64 = 0;

/// Default initial random-walk step on the unconstrained scale.
pub const DEFAULT_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhSettings {
    pub iterations: usize,
    pub warmup: usize,
    #[serde(default = "one")]
    pub thin: usize,
    pub seed: u64,
    /// Initial unconstrained step sizes: empty for the default, one value to
    /// broadcast, or one per coordinate.
    #[serde(default)]
    pub step: Vec<f64>,
    #[serde(default = "yes")]
    pub adapt: bool,
    /// Learn a full proposal covariance for multi-coordinate random-walk
    /// blocks during warmup.
    #[serde(default)]
    pub adapt_covariance: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl MhSettings {
    pub fn new(iterations: usize, warmup: usize, seed: u64) -> Self {
        MhSettings {
            iterations,
            warmup,
            thin: 1,
            seed,
            step: Vec::new(),
            adapt: true,
            adapt_covariance: false,
        }
    }

    pub fn with_thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }

    pub fn with_step(mut self, step: Vec<f64>) -> Self {
        self.step = step;
        self
    }

    pub fn with_adapt(mut self, adapt: bool) -> Self {
        self.adapt = adapt;
        self
    }

    pub fn with_adapt_covariance(mut self, on: bool) -> Self {
        self.adapt_covariance = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.warmup {
            return Err(Error::InvalidArgument(format!(
                "iterations ({}) must exceed warmup ({})",
                self.iterations, self.warmup
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thinning must be ≥ 1".into()));
        }
        if self.step.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "step sizes must be positive, got {:?}",
                self.step
            )));
        }
        Ok(())
    }

    /// Number of recorded draws.
    pub fn kept(&self) -> usize {
        (self.iterations - self.warmup) / self.thin
    }

    fn steps_for(&self, dim: usize) -> Result<Vec<f64>> {
        match self.step.len() {
            0 => Ok(vec![DEFAULT_STEP; dim]),
            1 => Ok(vec![self.step[0]; dim]),
            n if n == dim => Ok(self.step.clone()),
            n => Err(Error::Dimension { expected: dim, got: n }),
        }
    }
}

/// Log density plus whatever per-state summary the acceptance rule needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_density: f64,
    pub summary: Summary,
}

impl Evaluation {
    pub fn plain(log_density: f64) -> Self {
        Evaluation {
            log_density,
            summary: Summary::Empty,
        }
    }
}

/// What a sampler targets. The default acceptance is the plain log density
/// difference; melding stage one adds a ratio term through `log_accept`.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    fn supports(&self) -> Vec<Support>;

    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation>;

    /// Log acceptance ratio for symmetric proposals, excluding Jacobians.
    /// Only called when `proposed.log_density` is finite.
    fn log_accept(&self, proposed: &Evaluation, current: &Evaluation) -> Result<f64> {
        Ok(proposed.log_density - current.log_density)
    }
}

/// A [`DensityModel`] seen as a plain sampling target.
pub struct ModelTarget<'a> {
    model: &'a dyn DensityModel,
}

impl<'a> ModelTarget<'a> {
    pub fn new(model: &'a dyn DensityModel) -> Self {
        ModelTarget { model }
    }
}

impl Target for ModelTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn supports(&self) -> Vec<Support> {
        self.model.supports()
    }

    fn names(&self) -> Vec<String> {
        self.model.names()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        Ok(Evaluation::plain(checked_log_density(self.model, theta)?))
    }
}

/// An externally supplied update for one block.
pub trait BlockUpdate {
    /// Attempt one move of the block's coordinates of `theta`, keeping
    /// `current` consistent with `theta`. Returns whether the move was taken.
    fn update(&mut self, target: &dyn Target, theta: &mut [f64], current: &mut Evaluation) -> Result<bool>;

    /// Called whenever the sampler records a draw.
    fn record(&mut self, _theta: &[f64]) {}
}

pub enum BlockKind<'a> {
    RandomWalk,
    Custom(&'a mut dyn BlockUpdate),
}

pub struct Block<'a> {
    pub name: String,
    pub indices: Vec<usize>,
    pub kind: BlockKind<'a>,
}

impl<'a> Block<'a> {
    pub fn random_walk(name: impl Into<String>, indices: Vec<usize>) -> Self {
        Block {
            name: name.into(),
            indices,
            kind: BlockKind::RandomWalk,
        }
    }

    pub fn custom(name: impl Into<String>, indices: Vec<usize>, rule: &'a mut dyn BlockUpdate) -> Self {
        Block {
            name: name.into(),
            indices,
            kind: BlockKind::Custom(rule),
        }
    }
}

/// One random-walk block per coordinate, named after the coordinates.
pub fn componentwise_blocks<'a>(names: &[String]) -> Vec<Block<'a>> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| Block::random_walk(n.clone(), vec![i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub name: String,
    pub indices: Vec<usize>,
    pub warmup_proposed: u64,
    pub warmup_accepted: u64,
    pub proposed: u64,
    pub accepted: u64,
    /// Final multiplier applied to the initial step sizes.
    pub scale: f64,
}

impl BlockStats {
    /// Post-warmup acceptance rate.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub blocks: Vec<BlockStats>,
    pub settings: MhSettings,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    /// Overall post-warmup acceptance rate across blocks.
    pub fn acceptance_rate(&self) -> f64 {
        let (a, p) = self
            .blocks
            .iter()
            .fold((0u64, 0u64), |(a, p), b| (a + b.accepted, p + b.proposed));
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

/// Random-walk Metropolis with a single block over every coordinate.
pub fn rw_metropolis(target: &dyn Target, init: &[f64], settings: &MhSettings) -> Result<Chain> {
    let block = Block::random_walk("all", (0..target.dim()).collect());
    gibbs_blocks(target, init, vec![block], settings)
}

/// Metropolis-within-Gibbs with one random-walk block per coordinate.
pub fn componentwise_metropolis(target: &dyn Target, init: &[f64], settings: &MhSettings) -> Result<Chain> {
    let names = target.names();
    gibbs_blocks(target, init, componentwise_blocks(&names), settings)
}

struct RwState {
    steps: Vec<f64>,
    log_scale: f64,
    target_rate: f64,
    /// Row-major lower Cholesky factor of the learned proposal covariance.
    chol: Option<Vec<f64>>,
    /// Unconstrained block states seen during warmup, row-major.
    history: Vec<f64>,
    next_checkpoint: usize,
}

/// First warmup iteration at which a proposal covariance is estimated; later
/// estimates happen at doublings of it.
const COV_FIRST_CHECKPOINT: usize = 200;

/// Lower Cholesky factor of a symmetric positive definite `k × k` matrix.
fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a[i * k + j];
            for m in 0..j {
                sum -= l[i * k + m] * l[j * k + m];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * k + i] = sum.sqrt();
            } else {
                l[i * k + j] = sum / l[j * k + j];
            }
        }
    }
    Some(l)
}

impl RwState {
    /// Covariance of the second half of the warmup history, scaled by
    /// `2.38² / k`, with a small ridge.
    fn refit(&mut self, k: usize) {
        let rows = self.history.len() / k;
        let xs = &self.history[(rows / 2) * k..];
        let n = xs.len() / k;
        if n < 2 * k + 2 {
            return;
        }
        let mut mean = vec![0.0; k];
        for r in xs.chunks(k) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![0.0; k * k];
        for r in xs.chunks(k) {
            for i in 0..k {
                for j in 0..=i {
                    cov[i * k + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        let c = 2.38 * 2.38 / k as f64;
        for i in 0..k {
            for j in 0..i {
                cov[j * k + i] = cov[i * k + j];
            }
        }
        for i in 0..k {
            for j in 0..k {
                cov[i * k + j] *= c;
            }
            cov[i * k + i] += 1e-10 + 1e-6 * cov[i * k + i];
        }
        if let Some(l) = cholesky(&cov, k) {
            self.chol = Some(l);
            self.log_scale = 0.0;
        }
    }
}

/// Cycle through `blocks` in order once per iteration.
///
/// Blocks must partition the coordinates. Random-walk blocks are tuned during
/// warmup when `settings.adapt` is set and fail if they accept nothing there.
pub fn gibbs_blocks(target: &dyn Target, init: &[f64], mut blocks: Vec<Block<'_>>, settings: &MhSettings) -> Result<Chain> {
    settings.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: init.len(),
        });
    }
    let mut owner = vec![usize::MAX; dim];
    for (b, block) in blocks.iter().enumerate() {
        if block.indices.is_empty() {
            return Err(Error::InvalidArgument(format!("block `{}` is empty", block.name)));
        }
        for &i in &block.indices {
            if i >= dim {
                return Err(Error::InvalidArgument(format!(
                    "block `{}` refers to coordinate {i} of a {dim}-dimensional target",
                    block.name
                )));
            }
            if owner[i] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "blocks `{}` and `{}` overlap at coordinate {i}",
                    blocks[owner[i]].name, block.name
                )));
            }
            owner[i] = b;
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::InvalidArgument(format!(
            "coordinate {i} is not covered by any block"
        )));
    }

    let supports = target.supports();
    if init.iter().zip(&supports).any(|(x, s)| !s.contains(*x)) {
        return Err(Error::InitOutOfSupport(init.to_vec()));
    }
    let mut theta = init.to_vec();
    let mut current = target.evaluate(&theta)?;
    if current.log_density == f64::NEG_INFINITY {
        return Err(Error::InitOutOfSupport(init.to_vec()));
    }
    let mut u: Vec<f64> = theta.iter().zip(&supports).map(|(x, s)| s.to_unconstrained(*x)).collect();
    let mut log_jac: Vec<f64> = u.iter().zip(&supports).map(|(v, s)| s.from_unconstrained(*v).1).collect();

    let all_steps = settings.steps_for(dim)?;
    let mut rw: Vec<Option<RwState>> = blocks
        .iter()
        .map(|b| match b.kind {
            BlockKind::RandomWalk => Some(RwState {
                steps: b.indices.iter().map(|&i| all_steps[i]).collect(),
                log_scale: 0.0,
                target_rate: if b.indices.len() == 1 { 0.44 } else { 0.234 },
                chol: None,
                history: Vec::new(),
                next_checkpoint: COV_FIRST_CHECKPOINT,
            }),
            BlockKind::Custom(_) => None,
        })
        .collect();
    let mut stats: Vec<BlockStats> = blocks
        .iter()
        .map(|b| BlockStats {
            name: b.name.clone(),
            indices: b.indices.clone(),
            warmup_proposed: 0,
            warmup_accepted: 0,
            proposed: 0,
            accepted: 0,
            scale: 1.0,
        })
        .collect();

    let mut rng = stream_rng(settings.seed, ENGINE_STREAM);
    let mut draws = Vec::with_capacity(settings.kept());
    let mut proposal_u = u.clone();
    let mut proposal_theta = theta.clone();

    for iter in 0..settings.iterations {
        let in_warmup = iter < settings.warmup;
        for (b, block) in blocks.iter_mut().enumerate() {
            let accepted = match &mut block.kind {
                BlockKind::RandomWalk => {
                    let state = rw[b].as_mut().expect("random-walk state");
                    let scale = state.log_scale.exp();
                    let mut delta_jac = 0.0;
                    let mut inside = true;
                    let k_dim = block.indices.len();
                    let z: Vec<f64> = (0..k_dim).map(|_| rng.sample(StandardNormal)).collect();
                    for (k, &i) in block.indices.iter().enumerate() {
                        let step = match &state.chol {
                            Some(l) => (0..=k).map(|m| l[k * k_dim + m] * z[m]).sum::<f64>(),
                            None => state.steps[k] * z[k],
                        };
                        proposal_u[i] = u[i] + scale * step;
                        let (x, lj) = supports[i].from_unconstrained(proposal_u[i]);
                        proposal_theta[i] = x;
                        delta_jac += lj - log_jac[i];
                        inside &= supports[i].contains(x);
                    }
                    let log_u: f64 = rng.random::<f64>().ln();
                    let mut take = false;
                    let mut proposed_eval = None;
                    if inside {
                        let ev = target.evaluate(&proposal_theta)?;
                        if ev.log_density > f64::NEG_INFINITY {
                            let la = target.log_accept(&ev, &current)? + delta_jac;
                            if la.is_nan() {
                                return Err(Error::NanDensity(proposal_theta.clone()));
                            }
                            take = log_u < la;
                        }
                        proposed_eval = Some(ev);
                    }
                    if take {
                        for &i in &block.indices {
                            u[i] = proposal_u[i];
                            theta[i] = proposal_theta[i];
                            log_jac[i] = supports[i].from_unconstrained(u[i]).1;
                        }
                        current = proposed_eval.expect("evaluated proposal");
                    } else {
                        for &i in &block.indices {
                            proposal_u[i] = u[i];
                            proposal_theta[i] = theta[i];
                        }
                    }
                    if in_warmup && settings.adapt {
                        let gamma = ((iter + 1) as f64).powf(-0.6);
                        let a = if take { 1.0 } else { 0.0 };
                        state.log_scale = (state.log_scale + gamma * (a - state.target_rate)).clamp(-30.0, 30.0);
                        if settings.adapt_covariance && k_dim > 1 {
                            state.history.extend(block.indices.iter().map(|&i| u[i]));
                            if iter + 1 == state.next_checkpoint && iter + 1 < settings.warmup {
                                state.refit(k_dim);
                                state.next_checkpoint *= 2;
                            }
                        }
                    }
                    take
                }
                BlockKind::Custom(rule) => {
                    let take = rule.update(target, &mut theta, &mut current)?;
                    if take {
                        for &i in &block.indices {
                            u[i] = supports[i].to_unconstrained(theta[i]);
                            log_jac[i] = supports[i].from_unconstrained(u[i]).1;
                            proposal_u[i] = u[i];
                            proposal_theta[i] = theta[i];
                        }
                    }
                    take
                }
            };
            let s = &mut stats[b];
            if in_warmup {
                s.warmup_proposed += 1;
                s.warmup_accepted += accepted as u64;
            } else {
                s.proposed += 1;
                s.accepted += accepted as u64;
            }
        }
        if iter + 1 == settings.warmup {
            for (b, block) in blocks.iter().enumerate() {
                if matches!(block.kind, BlockKind::RandomWalk) && stats[b].warmup_accepted == 0 {
                    return Err(Error::ZeroAcceptance {
                        block: block.name.clone(),
                    });
                }
            }
        }
        if !in_warmup && (iter - settings.warmup + 1) % settings.thin == 0 {
            draws.push(theta.clone());
            for block in blocks.iter_mut() {
                if let BlockKind::Custom(rule) = &mut block.kind {
                    rule.record(&theta);
                }
            }
        }
    }
    for (b, s) in stats.iter_mut().enumerate() {
        if let Some(state) = &rw[b] {
            s.scale = state.log_scale.exp();
        }
    }
    Ok(Chain {
        names: target.names(),
        draws,
        blocks: stats,
        settings: settings.clone(),
    })
}
