//! `meldkit`: WSRE estimation, two-stage melding runs, direct baselines and
//! chain diagnostics from the command line.

mod commands;
mod config;
mod diagnose;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigFile, StageSection};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "meldkit", version, about = "Markov melding with weighted-sample self-density ratio estimation")]
struct Cli {
    /// TOML configuration; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Run directory. Defaults to a name derived from the command under
    /// $MELDKIT_OUTPUT_ROOT (or ./runs).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for tilted targets and replicate chains.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the tilted targets and store the WSRE estimate.
    Wsre(WsreArgs),
    /// Stage one followed by replicate stage-two chains.
    Meld(MeldArgs),
    /// Sample the full joint model directly.
    Direct(DirectArgs),
    /// ESS, stuck runs and quantile comparisons for chain CSVs.
    Diagnose(diagnose::DiagnoseArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// gaussian, hiv or h1n1.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory with hiv.csv or icu.csv and virology.csv.
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// H1N1 horizon in days.
    #[arg(long)]
    horizon: Option<usize>,
    /// Seed of the synthetic H1N1 dataset.
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Weighting means per φ coordinate.
    #[arg(long)]
    w: Option<usize>,
    /// Lowest mean per coordinate, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    lo: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    hi: Vec<f64>,
    /// Weighting variance per coordinate.
    #[arg(long, value_delimiter = ',')]
    var: Vec<f64>,
    /// Draws kept from each tilted target.
    #[arg(long)]
    n_per_w: Option<usize>,
    #[arg(long)]
    wsre_warmup: Option<usize>,
    #[arg(long)]
    wsre_thin: Option<usize>,
}

#[derive(Debug, Args)]
struct WsreArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct MeldArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// analytic, naive, wsre or constant.
    #[arg(long)]
    evaluator: Option<String>,
    /// Stage-two chains; replicate r uses seed + r.
    #[arg(long)]
    replicates: Option<usize>,
    /// divide-prior or plain-posterior.
    #[arg(long)]
    mode: Option<String>,
    /// Reuse a WSRE estimate written by `meldkit wsre`.
    #[arg(long, value_name = "FILE")]
    wsre_artifact: Option<PathBuf>,
    /// Prior draws behind the naive KDE.
    #[arg(long)]
    naive_draws: Option<usize>,
    #[arg(long)]
    stage_one_iterations: Option<usize>,
    #[arg(long)]
    stage_one_warmup: Option<usize>,
    #[arg(long)]
    stage_one_thin: Option<usize>,
    #[arg(long)]
    stage_two_iterations: Option<usize>,
    #[arg(long)]
    stage_two_warmup: Option<usize>,
}

#[derive(Debug, Args)]
struct DirectArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

fn non_empty(v: &[f64]) -> Option<Vec<f64>> {
    (!v.is_empty()).then(|| v.to_vec())
}

impl CommonArgs {
    fn apply(&self, c: &mut ConfigFile) {
        c.model = self.model.clone();
        c.seed = self.seed;
        c.data.dir = self.data_dir.clone();
        c.data.horizon = self.horizon;
        c.data.seed = self.data_seed;
    }
}

impl GridArgs {
    fn apply(&self, c: &mut ConfigFile) {
        c.wsre.w = self.w;
        c.wsre.lo = non_empty(&self.lo);
        c.wsre.hi = non_empty(&self.hi);
        c.wsre.var = non_empty(&self.var);
        c.wsre.n_per_w = self.n_per_w;
        c.wsre.warmup = self.wsre_warmup;
        c.wsre.thin = self.wsre_thin;
    }
}

impl WsreArgs {
    fn flags(&self) -> ConfigFile {
        let mut c = ConfigFile::default();
        self.common.apply(&mut c);
        self.grid.apply(&mut c);
        c
    }
}

impl MeldArgs {
    fn flags(&self) -> ConfigFile {
        let mut c = ConfigFile::default();
        self.common.apply(&mut c);
        self.grid.apply(&mut c);
        c.evaluator = self.evaluator.clone();
        c.replicates = self.replicates;
        c.mode = self.mode.clone();
        c.wsre.artifact = self.wsre_artifact.clone();
        c.naive.draws = self.naive_draws;
        c.stage_one = StageSection {
            iterations: self.stage_one_iterations,
            warmup: self.stage_one_warmup,
            thin: self.stage_one_thin,
            ..Default::default()
        };
        c.stage_two = StageSection {
            iterations: self.stage_two_iterations,
            warmup: self.stage_two_warmup,
            ..Default::default()
        };
        c
    }
}

impl DirectArgs {
    fn flags(&self) -> ConfigFile {
        let mut c = ConfigFile::default();
        self.common.apply(&mut c);
        c.direct = StageSection {
            iterations: self.iterations,
            warmup: self.warmup,
            thin: self.thin,
            ..Default::default()
        };
        c
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?;
    }
    let (mut cfg, text) = match &cli.config {
        Some(p) => {
            let (c, t) = ConfigFile::load(p)?;
            (c, Some(t))
        }
        None => (ConfigFile::default(), None),
    };
    let source = commands::ConfigSource {
        path: cli.config.clone(),
        text,
    };
    match &cli.command {
        Command::Wsre(a) => {
            cfg.merge(&a.flags());
            commands::wsre(&cfg, &source, cli.out.as_deref())
        }
        Command::Meld(a) => {
            cfg.merge(&a.flags());
            commands::meld(&cfg, &source, cli.out.as_deref())
        }
        Command::Direct(a) => {
            cfg.merge(&a.flags());
            commands::direct(&cfg, &source, cli.out.as_deref())
        }
        Command::Diagnose(a) => diagnose::run(a, cli.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
