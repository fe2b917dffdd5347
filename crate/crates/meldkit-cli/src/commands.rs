//! The `wsre`, `meld` and `direct` commands.

use std::fs;
use std::path::{Path, PathBuf};

use meldkit::io::{read_chain_csv, write_chain_csv, write_rows};
use meldkit::melding::{MeldingRun, Submodel};
use meldkit::models::h1n1::h1n1_synthetic;
use meldkit::registry::{evaluators_for, experiment, run_direct, BuildContext, Experiment};
use meldkit::wsre::{wsre_pipeline, WsreEstimate};
use serde::Serialize;

use crate::config::{ConfigFile, Resolved};
use crate::diagnose::{column_reports, replicate_group, write_long, ColumnReport, ReplicateGroup};
use crate::error::CliError;
use crate::output::{RunDir, META_FORMAT, META_VERSION};

/// Where the configuration came from, echoed into `meta.json`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ConfigSource {
    pub path: Option<PathBuf>,
    pub text: Option<String>,
}

#[derive(Debug, Serialize)]
struct Meta<'a, X: Serialize> {
    format: &'static str,
    version: u32,
    command: &'static str,
    meldkit_version: &'static str,
    config_file: Option<String>,
    config_text: Option<&'a str>,
    resolved: &'a Resolved,
    files: Vec<String>,
    #[serde(flatten)]
    extra: X,
}

fn meta<'a, X: Serialize>(command: &'static str, src: &'a ConfigSource, resolved: &'a Resolved, files: Vec<String>, extra: X) -> Meta<'a, X> {
    Meta {
        format: META_FORMAT,
        version: META_VERSION,
        command,
        meldkit_version: env!("CARGO_PKG_VERSION"),
        config_file: src.path.as_ref().map(|p| p.display().to_string()),
        config_text: src.text.as_deref(),
        resolved,
        files,
        extra,
    }
}

fn setup(cfg: &ConfigFile) -> Result<(Box<dyn Experiment>, Resolved), CliError> {
    let name = cfg
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("no model given (use --model)".into()))?;
    let exp = experiment(name, &cfg.experiment_options())?;
    let resolved = Resolved::new(cfg, exp.as_ref())?;
    Ok((exp, resolved))
}

fn estimated_submodel(exp: &dyn Experiment, subs: &(Submodel, Submodel)) -> Submodel {
    if exp.estimated() == 0 {
        subs.0.clone()
    } else {
        subs.1.clone()
    }
}

fn load_artifact(path: &Path) -> Result<WsreEstimate, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    WsreEstimate::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_estimate(run: &RunDir, est: &WsreEstimate) -> Result<String, CliError> {
    let path = run.estimates().join("wsre.json");
    let mut text = est.to_json()?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
    Ok("estimates/wsre.json".into())
}

/// One row per tilted target.
fn write_wsre_sets(run: &RunDir, est: &WsreEstimate) -> Result<String, CliError> {
    let d = est.phi_names.len();
    let mut header = vec!["w".to_string()];
    for n in &est.phi_names {
        header.push(format!("mean_{n}"));
    }
    for n in &est.phi_names {
        header.push(format!("bandwidth_{n}"));
    }
    header.extend(["draws", "acceptance_rate", "seed"].map(String::from));
    let rows = est.sets.iter().enumerate().map(|(w, s)| {
        let mut row = vec![w.to_string()];
        row.extend(s.weighting.mean.iter().map(|x| x.to_string()));
        row.extend(s.bandwidth.iter().take(d).map(|x| x.to_string()));
        row.push(s.sample.len().to_string());
        row.push(s.acceptance_rate.to_string());
        row.push(s.seed.to_string());
        row
    });
    write_rows(&run.reports().join("wsre_sets.csv"), &header, rows)?;
    Ok("reports/wsre_sets.csv".into())
}

#[derive(Debug, Serialize)]
struct WsreExtra {
    phi_names: Vec<String>,
    submodel: String,
    total_draws: usize,
}

pub fn wsre(cfg: &ConfigFile, src: &ConfigSource, out: Option<&Path>) -> Result<(), CliError> {
    let (exp, r) = setup(cfg)?;
    let subs = exp.submodels()?;
    let sub = estimated_submodel(exp.as_ref(), &subs);
    r.wsre.validate(sub.phi_dim()).map_err(CliError::from_config)?;
    let est = wsre_pipeline(sub.prior.clone(), &r.wsre)?;
    let run = RunDir::create(out, &format!("wsre-{}-seed{}", r.model, r.seed))?;
    let files = vec![write_estimate(&run, &est)?, write_wsre_sets(&run, &est)?];
    println!(
        "{} WSRE estimate for {}: {} draws over {} weighting functions -> {}",
        r.model,
        sub.name,
        est.total_draws(),
        est.sets.len(),
        run.root.display()
    );
    run.write_meta(&meta(
        "wsre",
        src,
        &r,
        files,
        WsreExtra {
            phi_names: est.phi_names.clone(),
            submodel: sub.name.clone(),
            total_draws: est.total_draws(),
        },
    ))
}

#[derive(Debug, Serialize)]
struct MeldExtra {
    evaluators: [&'static str; 2],
    provenance: meldkit::melding::RunProvenance,
    replicate_seeds: Vec<u64>,
    start_indices: Vec<usize>,
    acceptance: Vec<meldkit::melding::AcceptanceSummary>,
    wsre_fallbacks: Option<u64>,
    phi_stuck: ReplicateGroup,
    chains: Vec<ColumnReport>,
}

pub fn meld(cfg: &ConfigFile, src: &ConfigSource, out: Option<&Path>) -> Result<(), CliError> {
    let (exp, r) = setup(cfg)?;
    let subs = exp.submodels()?;
    let wsre_estimate = match &r.wsre_artifact {
        Some(p) => Some(load_artifact(p)?),
        None => None,
    };
    if r.evaluator == "wsre" && wsre_estimate.is_none() {
        r.wsre
            .validate(estimated_submodel(exp.as_ref(), &subs).phi_dim())
            .map_err(CliError::from_config)?;
    }
    let ctx = BuildContext {
        seed: r.seed,
        naive_draws: r.naive.draws,
        wsre: r.wsre.clone(),
        bandwidth: r.naive.bandwidth.clone(),
        wsre_estimate,
    };
    let built = evaluators_for(exp.as_ref(), &subs, &r.evaluator, &ctx)?;
    let seeds = r.replicate_seeds();
    let result = MeldingRun::execute(
        &subs.0,
        &subs.1,
        &built[0].ratio,
        &built[1].ratio,
        r.lambdas,
        r.mode,
        &r.stage_one,
        &r.stage_two,
        &seeds,
    )?;

    let run = RunDir::create(out, &format!("meld-{}-{}-seed{}", r.model, r.evaluator, r.seed))?;
    let mut files: Vec<String> = result
        .write_chains(&run.chains())?
        .into_iter()
        .map(|f| format!("chains/{f}"))
        .collect();
    let mut fallbacks = None;
    for b in &built {
        if let Some(est) = &b.wsre {
            files.push(write_estimate(&run, est)?);
            files.push(write_wsre_sets(&run, est)?);
            fallbacks = Some(est.combined.fallback_count());
        }
        if let Some(sample) = &b.naive_sample {
            let names = result.stage_one.phi_names.clone();
            write_chain_csv(&run.estimates().join("naive_prior_draws.csv"), &names, &sample.draws)?;
            files.push("estimates/naive_prior_draws.csv".into());
        }
    }
    if r.model == "h1n1" && r.data.data_dir.is_none() {
        let dir = run.root.join("data");
        h1n1_synthetic(r.data.data_seed, r.data.horizon)?.write_dir(&dir)?;
        files.extend(["data/icu.csv".to_string(), "data/virology.csv".to_string()]);
    }

    // Reports are built from the files just written so they match what
    // `meldkit diagnose` would compute.
    let phi_names = &result.stage_one.phi_names;
    let mut chains = Vec::new();
    let s1 = read_chain_csv(&run.chains().join("stage_one.csv"))?;
    chains.extend(column_reports("stage_one", &s1, phi_names, 100)?);
    let mut reps = Vec::new();
    for k in 0..result.stage_two.len() {
        let label = format!("stage_two_{:02}", k + 1);
        let t = read_chain_csv(&run.chains().join(format!("{label}.csv")))?;
        chains.extend(column_reports(&label, &t, phi_names, 100)?);
        reps.push((label, t));
    }
    write_long(&run.reports().join("chains.csv"), &chains)?;
    files.push("reports/chains.csv".into());
    let phi_stuck = replicate_group("stage_two", &reps, Some(&phi_names[0]), 100, 0.1)?;

    println!(
        "{} meld with {} evaluator: {} stage-one draws, {} stage-two chains, median longest {} run {} -> {}",
        r.model,
        r.evaluator,
        result.stage_one.chain.len(),
        result.stage_two.len(),
        phi_names[0],
        phi_stuck.median_longest_run,
        run.root.display()
    );
    run.write_meta(&meta(
        "meld",
        src,
        &r,
        files,
        MeldExtra {
            evaluators: [built[0].name, built[1].name],
            provenance: result.provenance.clone(),
            replicate_seeds: seeds,
            start_indices: result.stage_two.iter().map(|s| s.start_index).collect(),
            acceptance: result.acceptance(),
            wsre_fallbacks: fallbacks,
            phi_stuck,
            chains,
        },
    ))
}

#[derive(Debug, Serialize)]
struct DirectExtra {
    phi_names: Vec<String>,
    acceptance: Vec<(String, f64)>,
    chains: Vec<ColumnReport>,
}

pub fn direct(cfg: &ConfigFile, src: &ConfigSource, out: Option<&Path>) -> Result<(), CliError> {
    let (exp, r) = setup(cfg)?;
    let chain = run_direct(exp.as_ref(), &r.direct)?;
    let run = RunDir::create(out, &format!("direct-{}-seed{}", r.model, r.seed))?;
    let path = run.chains().join("direct.csv");
    chain.write_csv(&path)?;
    let t = read_chain_csv(&path)?;
    let reports = column_reports("direct", &t, &chain.phi_names, 100)?;
    write_long(&run.reports().join("chains.csv"), &reports)?;
    println!(
        "{} direct baseline: {} draws of {} -> {}",
        r.model,
        chain.chain.len(),
        chain.phi_names.join(", "),
        run.root.display()
    );
    run.write_meta(&meta(
        "direct",
        src,
        &r,
        vec!["chains/direct.csv".into(), "reports/chains.csv".into()],
        DirectExtra {
            phi_names: chain.phi_names.clone(),
            acceptance: chain.chain.blocks.iter().map(|b| (b.name.clone(), b.acceptance_rate())).collect(),
            chains: reports,
        },
    ))
}
