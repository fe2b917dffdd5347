//! Run configuration: a TOML file, command-line overrides, and the fully
//! resolved settings recorded in `meta.json`.
//!
//! ```toml
//! model = "hiv"
//! evaluator = "wsre"
//! seed = 7
//! replicates = 1
//!
//! [wsre]
//! w = 10
//! lo = [0.01]
//! hi = [0.99]
//! var = [0.0625]
//! n_per_w = 250
//!
//! [stage_two]
//! iterations = 6000
//! warmup = 1000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use meldkit::melding::{StageOneMode, StageSettings};
use meldkit::registry::{Experiment, ExperimentOptions};
use meldkit::wsre::{GridSpec, WsreConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<String>,
    pub evaluator: Option<String>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub mode: Option<String>,
    pub lambdas: Option<[f64; 2]>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub wsre: WsreSection,
    #[serde(default)]
    pub naive: NaiveSection,
    #[serde(default)]
    pub stage_one: StageSection,
    #[serde(default)]
    pub stage_two: StageSection,
    #[serde(default)]
    pub direct: StageSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory with `hiv.csv` or `icu.csv` + `virology.csv`.
    pub dir: Option<PathBuf>,
    pub horizon: Option<usize>,
    /// Seed of the synthetic H1N1 dataset.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WsreSection {
    /// Means per φ coordinate.
    pub w: Option<usize>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub var: Option<Vec<f64>>,
    pub n_per_w: Option<usize>,
    pub warmup: Option<usize>,
    pub thin: Option<usize>,
    pub componentwise: Option<bool>,
    pub adapt_covariance: Option<bool>,
    pub bandwidth: Option<Vec<f64>>,
    /// Reuse a stored estimate instead of sampling.
    pub artifact: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaiveSection {
    pub draws: Option<usize>,
    pub bandwidth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub iterations: Option<usize>,
    pub warmup: Option<usize>,
    pub thin: Option<usize>,
    pub componentwise: Option<bool>,
    pub adapt_covariance: Option<bool>,
    pub step: Option<Vec<f64>>,
}

impl StageSection {
    fn apply(&self, s: &mut StageSettings) {
        if let Some(v) = self.iterations {
            s.mh.iterations = v;
        }
        if let Some(v) = self.warmup {
            s.mh.warmup = v;
        }
        if let Some(v) = self.thin {
            s.mh.thin = v;
        }
        if let Some(v) = self.componentwise {
            s.componentwise = v;
        }
        if let Some(v) = self.adapt_covariance {
            s.mh.adapt_covariance = v;
        }
        if let Some(v) = &self.step {
            s.mh.step = v.clone();
        }
    }

    /// Overlay `other`'s set fields.
    fn merge(&mut self, other: &StageSection) {
        merge_opt(&mut self.iterations, &other.iterations);
        merge_opt(&mut self.warmup, &other.warmup);
        merge_opt(&mut self.thin, &other.thin);
        merge_opt(&mut self.componentwise, &other.componentwise);
        merge_opt(&mut self.adapt_covariance, &other.adapt_covariance);
        merge_opt(&mut self.step, &other.step);
    }
}

fn merge_opt<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
    if src.is_some() {
        *dst = src.clone();
    }
}

impl ConfigFile {
    /// Parsed file plus its verbatim text.
    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok((cfg, text))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Overlay the fields set in `flags`; flags win.
    pub fn merge(&mut self, flags: &ConfigFile) {
        merge_opt(&mut self.model, &flags.model);
        merge_opt(&mut self.evaluator, &flags.evaluator);
        merge_opt(&mut self.seed, &flags.seed);
        merge_opt(&mut self.replicates, &flags.replicates);
        merge_opt(&mut self.mode, &flags.mode);
        merge_opt(&mut self.lambdas, &flags.lambdas);
        merge_opt(&mut self.data.dir, &flags.data.dir);
        merge_opt(&mut self.data.horizon, &flags.data.horizon);
        merge_opt(&mut self.data.seed, &flags.data.seed);
        let (w, f) = (&mut self.wsre, &flags.wsre);
        merge_opt(&mut w.w, &f.w);
        merge_opt(&mut w.lo, &f.lo);
        merge_opt(&mut w.hi, &f.hi);
        merge_opt(&mut w.var, &f.var);
        merge_opt(&mut w.n_per_w, &f.n_per_w);
        merge_opt(&mut w.warmup, &f.warmup);
        merge_opt(&mut w.thin, &f.thin);
        merge_opt(&mut w.componentwise, &f.componentwise);
        merge_opt(&mut w.adapt_covariance, &f.adapt_covariance);
        merge_opt(&mut w.bandwidth, &f.bandwidth);
        merge_opt(&mut w.artifact, &f.artifact);
        merge_opt(&mut self.naive.draws, &flags.naive.draws);
        merge_opt(&mut self.naive.bandwidth, &flags.naive.bandwidth);
        self.stage_one.merge(&flags.stage_one);
        self.stage_two.merge(&flags.stage_two);
        self.direct.merge(&flags.direct);
    }

    pub fn experiment_options(&self) -> ExperimentOptions {
        let d = ExperimentOptions::default();
        ExperimentOptions {
            data_dir: self.data.dir.clone(),
            horizon: self.data.horizon.unwrap_or(d.horizon),
            data_seed: self.data.seed.unwrap_or(d.data_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveSettings {
    pub draws: usize,
    pub bandwidth: Option<Vec<f64>>,
}

/// Every setting a run used, after defaults, file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub model: String,
    pub evaluator: String,
    pub seed: u64,
    pub replicates: usize,
    pub mode: StageOneMode,
    pub lambdas: [f64; 2],
    pub data: ExperimentOptions,
    pub grid: GridSpec,
    pub wsre: WsreConfig,
    pub wsre_artifact: Option<PathBuf>,
    pub naive: NaiveSettings,
    pub stage_one: StageSettings,
    pub stage_two: StageSettings,
    pub direct: StageSettings,
}

impl Resolved {
    pub fn new(cfg: &ConfigFile, exp: &dyn Experiment) -> Result<Self, CliError> {
        let model = cfg.model.clone().ok_or_else(|| CliError::Usage("no model given (use --model)".into()))?;
        let seed = cfg.seed.unwrap_or(1);
        let evaluator = cfg.evaluator.clone().unwrap_or_else(|| "wsre".into());
        let replicates = cfg.replicates.unwrap_or(1);
        if replicates == 0 {
            return Err(CliError::Usage("replicates must be at least 1".into()));
        }
        let mode = match &cfg.mode {
            Some(m) => m.parse().map_err(CliError::from_config)?,
            None => exp.mode(),
        };
        let lambdas = cfg.lambdas.unwrap_or_else(|| exp.lambdas());

        let d = exp.wsre_grid_spec();
        let w = &cfg.wsre;
        let grid = GridSpec {
            count: w.w.unwrap_or(d.count),
            lo: w.lo.clone().unwrap_or(d.lo),
            hi: w.hi.clone().unwrap_or(d.hi),
            var: w.var.clone().unwrap_or(d.var),
        };
        if grid.count == 0 {
            return Err(CliError::Usage("wsre.w must be at least 1".into()));
        }
        let mut wsre = exp.default_wsre(seed).map_err(CliError::from_config)?;
        wsre.weighting = grid.build().map_err(CliError::from_config)?;
        if let Some(v) = w.n_per_w {
            wsre.n_per_w = v;
        }
        if let Some(v) = w.warmup {
            wsre.mcmc.warmup = Some(v);
        }
        if let Some(v) = w.thin {
            wsre.mcmc.thin = v;
        }
        if let Some(v) = w.componentwise {
            wsre.mcmc.componentwise = v;
        }
        if let Some(v) = w.adapt_covariance {
            wsre.mcmc.adapt_covariance = v;
        }
        if w.bandwidth.is_some() {
            wsre.bandwidth = w.bandwidth.clone();
        }
        if wsre.mcmc.thin == 0 {
            return Err(CliError::Usage("wsre.thin must be at least 1".into()));
        }

        let naive = NaiveSettings {
            draws: cfg.naive.draws.unwrap_or_else(|| exp.default_naive_draws()),
            bandwidth: cfg.naive.bandwidth.clone(),
        };
        if naive.draws < 2 {
            return Err(CliError::Usage("naive.draws must be at least 2".into()));
        }

        let mut stage_one = exp.default_stage_one(seed);
        cfg.stage_one.apply(&mut stage_one);
        let mut stage_two = exp.default_stage_two();
        cfg.stage_two.apply(&mut stage_two);
        let mut direct = exp.default_direct(seed);
        cfg.direct.apply(&mut direct);
        for (name, s) in [("stage_one", &stage_one), ("stage_two", &stage_two), ("direct", &direct)] {
            s.mh.validate()
                .map_err(|e| CliError::Usage(format!("[{name}] {e}")))?;
        }

        Ok(Resolved {
            model,
            evaluator,
            seed,
            replicates,
            mode,
            lambdas,
            data: cfg.experiment_options(),
            grid,
            wsre,
            wsre_artifact: w.artifact.clone(),
            naive,
            stage_one,
            stage_two,
            direct,
        })
    }

    /// Stage-two replicate seeds `seed + 1, …, seed + replicates`.
    pub fn replicate_seeds(&self) -> Vec<u64> {
        (1..=self.replicates as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use meldkit::registry::experiment;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("model = \"hiv\"\nsed = 3\n").is_err());
        assert!(ConfigFile::parse("[wsre]\nn_per_w = 10\nwidth = 2\n").is_err());
        let c = ConfigFile::parse("model = \"hiv\"\n[stage_two]\niterations = 50\nwarmup = 10\n").unwrap();
        assert_eq!(c.stage_two.iterations, Some(50));
    }

    #[test]
    fn flags_override_file() {
        let mut file = ConfigFile::parse("model = \"hiv\"\nseed = 3\n[wsre]\nn_per_w = 10\nthin = 2\n").unwrap();
        let mut flags = ConfigFile {
            seed: Some(9),
            ..Default::default()
        };
        flags.wsre.n_per_w = Some(40);
        file.merge(&flags);
        assert_eq!((file.seed, file.wsre.n_per_w, file.wsre.thin), (Some(9), Some(40), Some(2)));
        assert_eq!(file.model.as_deref(), Some("hiv"));
    }

    #[test]
    fn resolution_fills_defaults_and_overrides_grid() {
        let mut cfg = ConfigFile::parse("model = \"hiv\"\nseed = 4\n[wsre]\nw = 5\n").unwrap();
        let exp = experiment("hiv", &cfg.experiment_options()).unwrap();
        let r = Resolved::new(&cfg, exp.as_ref()).unwrap();
        assert_eq!(r.wsre.weighting.len(), 5);
        assert_eq!(r.grid.lo, vec![0.01]);
        assert_eq!(r.wsre.seed, 4);
        assert_eq!(r.stage_one.mh.seed, 4);
        assert_eq!(r.replicate_seeds(), vec![5]);
        cfg.stage_one.warmup = Some(10_000_000);
        assert!(matches!(Resolved::new(&cfg, exp.as_ref()), Err(CliError::Usage(_))));
    }

    #[test]
    fn grid_dimension_mismatch_is_a_config_error() {
        let cfg = ConfigFile::parse("model = \"h1n1\"\n[wsre]\nlo = [30.0]\n").unwrap();
        let exp = experiment("h1n1", &cfg.experiment_options()).unwrap();
        assert!(matches!(Resolved::new(&cfg, exp.as_ref()), Err(CliError::Usage(_))));
    }
}
