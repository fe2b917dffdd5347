//! Acceptance criteria, one line per criterion.
//!
//! Run with `cargo test -p meldkit-cli --test acceptance`. Pass criterion
//! numbers as arguments (`-- 2 3 7`) to run a subset. Failures are printed
//! as `FAIL` lines; the process exits nonzero only if a criterion could not
//! be evaluated at all, or when `MELDKIT_ACCEPTANCE_STRICT` is set.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use meldkit::diagnostics::{default_grid, ks_distance, median, qq_compare, stuck_runs};
use meldkit::kde::{gaussian_product_params, naive_ratio, Kde};
use meldkit::mcmc::{rw_metropolis, Evaluation, MhSettings, Target};
use meldkit::melding::{pooled_ratio, stage_one, MeldingRun, StageOneMode, StageSettings, StageTwoSampler, Submodel};
use meldkit::models::h1n1::h1n1_synthetic;
use meldkit::models::sample_prior_phi;
use meldkit::registry::{evaluators_for, experiment, run_direct, BuildContext, Experiment, ExperimentOptions, H1n1Experiment};
use meldkit::special::{ln_normal_pdf, mean, sample_var};
use meldkit::wsre::{combine, solve_kappa, wsre_pipeline, JonesRatio};
use meldkit::{constant_ratio, DensityModel, Result, SampleSet, SharedRatio, Support};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Outcome>,
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "exact identities", budget: Duration::from_secs(60), run: exact_identities },
        Criterion { id: 2, name: "gaussian product identity", budget: Duration::from_secs(1), run: gaussian_product },
        Criterion { id: 3, name: "kappa solver", budget: Duration::from_secs(5), run: kappa_solver },
        Criterion { id: 4, name: "tail accuracy", budget: Duration::from_secs(120), run: tail_accuracy },
        Criterion { id: 5, name: "hiv quantiles", budget: Duration::from_secs(600), run: hiv_quantiles },
        Criterion { id: 6, name: "h1n1 stuck chains", budget: Duration::from_secs(1200), run: h1n1_stuck_chains },
        Criterion { id: 7, name: "mcmc correctness", budget: Duration::from_secs(30), run: mcmc_correctness },
        Criterion { id: 8, name: "degenerate melding", budget: Duration::from_secs(60), run: degenerate_melding },
        Criterion { id: 9, name: "reproducibility", budget: Duration::from_secs(300), run: reproducibility },
    ];
    let (mut passed, mut failed, mut broken) = (0, 0, 0);
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t = Instant::now();
        let res = (c.run)();
        let took = t.elapsed();
        let in_time = took <= c.budget;
        match res {
            Ok(o) => {
                let ok = o.pass && in_time;
                let status = if ok { "PASS" } else { "FAIL" };
                if ok {
                    passed += 1;
                } else {
                    failed += 1;
                }
                let late = if in_time { String::new() } else { format!(" over budget {:?}", c.budget) };
                println!("{status} {}. {} [{:.1}s{late}] {}", c.id, c.name, took.as_secs_f64(), o.detail);
            }
            Err(e) => {
                broken += 1;
                println!("FAIL {}. {} [{:.1}s] error: {e}", c.id, c.name, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {broken} errored");
    let strict = std::env::var_os("MELDKIT_ACCEPTANCE_STRICT").is_some();
    if broken > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}

struct Normal1;

impl Target for Normal1 {
    fn dim(&self) -> usize {
        1
    }
    fn supports(&self) -> Vec<Support> {
        vec![Support::Real]
    }
    fn evaluate(&self, t: &[f64]) -> Result<Evaluation> {
        Ok(Evaluation::plain(-0.5 * t[0] * t[0]))
    }
}

/// Second submodel with no information about φ.
struct Flat;

impl DensityModel for Flat {
    fn dim(&self) -> usize {
        1
    }
    fn phi_dim(&self) -> usize {
        1
    }
    fn names(&self) -> Vec<String> {
        vec!["phi".into()]
    }
    fn supports(&self) -> Vec<Support> {
        vec![Support::Real]
    }
    fn log_density(&self, _: &[f64]) -> f64 {
        0.0
    }
    fn phi(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
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

fn gaussian() -> Result<Box<dyn Experiment>> {
    experiment("gaussian", &ExperimentOptions::default())
}

fn exact_identities() -> Result<Outcome> {
    let exp = gaussian()?;
    let (sub1, sub2) = exp.submodels()?;
    let mut cfg = exp.default_wsre(21)?;
    cfg.n_per_w = 200;
    let est = wsre_pipeline(sub1.prior.clone(), &cfg)?;
    let sampler = sub1.prior_sampler.as_ref().expect("gaussian prior sampler");
    let naive = naive_ratio(&sample_prior_phi(sampler.as_ref(), sub1.prior.as_ref(), 500, 21, "naive")?, None)?;
    let singles: Vec<SharedRatio> = est
        .sets
        .iter()
        .map(|s| JonesRatio::new(s).map(|j| Arc::new(j) as SharedRatio))
        .collect::<Result<_>>()?;
    let evaluators: Vec<SharedRatio> = [
        sub1.analytic_marginal.clone().expect("analytic"),
        naive,
        est.ratio(),
        Arc::new(combine(&est.sets)?),
        constant_ratio(),
    ]
    .into_iter()
    .chain(singles.iter().cloned())
    .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points: Vec<f64> = (0..200).map(|_| rng.random_range(-6.0..8.0)).collect();
    let mut self_bad = 0;
    for r in &evaluators {
        for &x in &points {
            if r.log_ratio(&[x], &[x])? != 0.0 {
                self_bad += 1;
            }
        }
    }

    // Antisymmetry is exact; additivity holds to the rounding of the
    // subtractions involved.
    let (mut anti_bad, mut add_worst) = (0, 0.0f64);
    for j in &singles {
        for k in 0..100 {
            let (a, b, c) = (points[k], points[k + 1], points[k + 2]);
            let ab = j.log_ratio(&[a], &[b])?;
            if ab != -j.log_ratio(&[b], &[a])? {
                anti_bad += 1;
            }
            let (bc, ac) = (j.log_ratio(&[b], &[c])?, j.log_ratio(&[a], &[c])?);
            let scale = ab.abs().max(bc.abs()).max(ac.abs()).max(1.0);
            add_worst = add_worst.max((ab + bc - ac).abs() / (f64::EPSILON * scale));
        }
    }

    let r1 = sub1.analytic_marginal.clone().expect("analytic");
    let r2 = sub2.analytic_marginal.clone().expect("analytic");
    let run = MeldingRun::execute(
        &sub1,
        &sub2,
        &r1,
        &r2,
        exp.lambdas(),
        exp.mode(),
        &StageSettings::new(MhSettings::new(6_000, 1_000, 3).with_thin(2), false),
        &StageSettings::new(MhSettings::new(4_000, 500, 0), false),
        &[4, 5, 6],
    )?;
    let mut index_bad = 0;
    for r in &run.stage_two {
        let pushed = r.psi1_draws(&run.stage_one);
        let same = r.chain.draws.iter().zip(&pushed).all(|(t, p)| sub1.joint.phi(p)[0] == t[0]);
        if !r.indices_consistent(&run.stage_one) || !same {
            index_bad += 1;
        }
    }

    // Stuck runs on chains with known run lengths.
    let mut stuck_bad = 0;
    for _ in 0..200 {
        let lens: Vec<usize> = (0..rng.random_range(1..30)).map(|_| rng.random_range(1..60)).collect();
        let xs: Vec<f64> = lens.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat(k as f64).take(n)).collect();
        let rep = stuck_runs(&xs, 20);
        let longest = *lens.iter().max().unwrap();
        let long: usize = lens.iter().filter(|&&n| n >= 20).sum();
        if rep.longest_run != longest
            || rep.terminal_run != *lens.last().unwrap()
            || rep.length != xs.len()
            || rep.fraction_in_long_runs != long as f64 / xs.len() as f64
        {
            stuck_bad += 1;
        }
    }

    let pass = self_bad == 0 && anti_bad == 0 && add_worst <= 8.0 && index_bad == 0 && stuck_bad == 0;
    outcome(
        pass,
        format!(
            "self-ratio misses {self_bad}/{}, antisymmetry misses {anti_bad}, additivity worst {add_worst:.1} eps, index faults {index_bad}, stuck-run faults {stuck_bad}",
            evaluators.len() * points.len()
        ),
    )
}

fn gaussian_product() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let phi = rng.random_range(-10.0..10.0);
        let phin = rng.random_range(-10.0..10.0);
        let h = rng.random_range(0.05..3.0);
        let mu = rng.random_range(-10.0..10.0);
        let s2 = rng.random_range(0.05..9.0);
        let g = gaussian_product_params(phin, h, mu, s2)?;
        let lhs = (ln_normal_pdf(phi, phin, h * h) + ln_normal_pdf(phi, mu, s2)).exp();
        let rhs = (g.log_s + ln_normal_pdf(phi, g.mean, g.var)).exp();
        let err = (lhs - rhs).abs() / lhs.max(1e-300);
        worst = worst.max(err);
    }
    outcome(worst <= 1e-12, format!("worst relative error {worst:.2e} over 100 cases"))
}

fn kappa_solver() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let sample = SampleSet::from_scalars(&xs, "kappa", Some(3))?;
    let kde = Kde::new(&sample, None)?;
    let h = kde.bandwidth()[0];
    let sol = solve_kappa(&sample, h, (2.0, 4.0), 0.5, 1.0)?;

    // Composite Simpson over p̂(φ) w(φ; μ, 1), inside the region and overall.
    let integrand = |x: f64| -> Result<f64> { Ok((kde.log_pdf(&[x])? + ln_normal_pdf(x, sol.mu, 1.0)).exp()) };
    let simpson = |a: f64, b: f64, n: usize| -> Result<f64> {
        let dx = (b - a) / n as f64;
        let mut s = integrand(a)? + integrand(b)?;
        for i in 1..n {
            s += integrand(a + i as f64 * dx)? * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        Ok(s * dx / 3.0)
    };
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min) - 12.0 * h;
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 12.0 * h;
    let inside = simpson(2.0, 4.0, 4000)?;
    let total = simpson(lo.min(sol.mu - 12.0), hi.max(sol.mu + 12.0), 40_000)?;
    let mass = inside / total;
    outcome(
        (mass - 0.5).abs() <= 1e-3,
        format!("mu {:.4} ({:?}), quadrature mass {mass:.6}", sol.mu, sol.status),
    )
}

fn tail_accuracy() -> Result<Outcome> {
    let exp = gaussian()?;
    let (sub1, _) = exp.submodels()?;
    let sampler = sub1.prior_sampler.clone().expect("gaussian prior sampler");
    let probes = [2.5, 3.0, 3.5];
    let mut err_w = vec![Vec::new(); probes.len()];
    let mut err_n = vec![Vec::new(); probes.len()];
    for seed in 1..=20u64 {
        let cfg = exp.default_wsre(seed)?;
        let total = cfg.n_per_w * cfg.weighting.len();
        let wsre = wsre_pipeline(sub1.prior.clone(), &cfg)?.ratio();
        let naive = naive_ratio(&sample_prior_phi(sampler.as_ref(), sub1.prior.as_ref(), total, seed, "naive")?, None)?;
        for (k, &x) in probes.iter().enumerate() {
            // Standard-normal marginal: log r(0, x) = x²/2.
            let truth = 0.5 * x * x;
            err_w[k].push((wsre.log_ratio(&[0.0], &[x])? - truth).abs());
            err_n[k].push((naive.log_ratio(&[0.0], &[x])? - truth).abs());
        }
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, x) in probes.iter().enumerate() {
        let (w, n) = (median(&err_w[k]), median(&err_n[k]));
        pass &= w < n;
        parts.push(format!("x={x}: wsre {w:.3} vs naive {n:.3}"));
    }
    outcome(pass, format!("median |log error| over 20 seeds; {}", parts.join(", ")))
}

fn hiv_quantiles() -> Result<Outcome> {
    let exp = experiment("hiv", &ExperimentOptions::default())?;
    let subs = exp.submodels()?;
    let grid = default_grid();
    let mut wins = 0;
    let mut gaps = Vec::new();
    for seed in 1..=10u64 {
        let mut d = exp.default_direct(seed);
        d.mh.iterations = d.mh.warmup + 20_000 * d.mh.thin;
        let direct = run_direct(exp.as_ref(), &d)?.phi_column(0);
        let mut pair = [0.0; 2];
        for (k, ev) in ["naive", "wsre"].iter().enumerate() {
            let ctx = BuildContext {
                seed,
                naive_draws: exp.default_naive_draws(),
                wsre: exp.default_wsre(seed)?,
                bandwidth: None,
                wsre_estimate: None,
            };
            let [r1, r2] = evaluators_for(exp.as_ref(), &subs, ev, &ctx)?;
            let mut s1 = exp.default_stage_one(seed);
            s1.mh.thin = 3;
            s1.mh.iterations = s1.mh.warmup + 5_000 * s1.mh.thin;
            let mut s2 = exp.default_stage_two();
            s2.mh.iterations = s2.mh.warmup + 20_000;
            let run = MeldingRun::execute(&subs.0, &subs.1, &r1.ratio, &r2.ratio, exp.lambdas(), exp.mode(), &s1, &s2, &[seed + 1])?;
            pair[k] = qq_compare(&run.stage_two[0].phi_column(0), &direct, &grid)?.mean_gap;
        }
        if pair[1] < pair[0] {
            wins += 1;
        }
        gaps.push(format!("{:.4}/{:.4}", pair[0], pair[1]));
    }
    outcome(
        wins >= 8,
        format!("wsre closer in {wins}/10 seeds (need 8); naive/wsre mean gaps {}", gaps.join(" ")),
    )
}

fn h1n1_stuck_chains() -> Result<Outcome> {
    let mut majority = 0;
    let mut parts = Vec::new();
    for data_seed in 1..=5u64 {
        let exp = H1n1Experiment { data: h1n1_synthetic(data_seed, 28)? };
        let subs = exp.submodels()?;
        let s1 = stage_one(&subs.0, constant_ratio().as_ref(), exp.mode(), &exp.default_stage_one(data_seed))?;
        let seeds: Vec<u64> = (1..=15).map(|r| data_seed + r).collect();
        let mut summary = Vec::new();
        for ev in ["naive", "wsre"] {
            let ctx = BuildContext {
                seed: data_seed,
                naive_draws: exp.default_naive_draws(),
                wsre: exp.default_wsre(data_seed)?,
                bandwidth: None,
                wsre_estimate: None,
            };
            let [r1, r2] = evaluators_for(&exp, &subs, ev, &ctx)?;
            let pooled = pooled_ratio(vec![r1.ratio.clone(), r2.ratio.clone()], exp.lambdas().to_vec())?;
            let sampler = StageTwoSampler::new(&s1, &subs.1, &pooled, &r1.ratio, &r2.ratio)?;
            let runs = sampler.run_replicates(&exp.default_stage_two(), &seeds)?;
            let reports: Vec<_> = runs.iter().map(|r| stuck_runs(&r.phi_column(0), 100)).collect();
            let longest: Vec<f64> = reports.iter().map(|r| r.longest_run as f64).collect();
            let terminal = reports.iter().filter(|r| r.terminal_stuck(0.1)).count();
            summary.push((median(&longest), terminal));
        }
        let [(n_med, n_term), (w_med, w_term)] = [summary[0], summary[1]];
        let ok = w_med < n_med && n_term >= 1 && w_term == 0;
        if ok {
            majority += 1;
        }
        parts.push(format!(
            "data {data_seed}: longest {n_med:.0}/{w_med:.0}, terminal {n_term}/{w_term}{}",
            if ok { "" } else { " (miss)" }
        ));
    }
    outcome(majority >= 3, format!("{majority}/5 datasets (naive/wsre); {}", parts.join("; ")))
}

fn mcmc_correctness() -> Result<Outcome> {
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for seed in [11, 12, 13] {
        let x = rw_metropolis(&Normal1, &[0.0], &MhSettings::new(22_000, 2_000, seed))?.column(0);
        worst_mean = worst_mean.max(mean(&x).abs());
        worst_var = worst_var.max((sample_var(&x) - 1.0).abs());
    }

    // A reversible chain crosses each bin boundary equally often both ways.
    let s = MhSettings::new(202_000, 2_000, 77).with_step(vec![1.0]).with_adapt(false);
    let x = rw_metropolis(&Normal1, &[0.0], &s)?.column(0);
    let edges = [-1.5, -0.5, 0.5, 1.5];
    let bin = |v: f64| edges.iter().filter(|e| v > **e).count();
    let mut counts = [[0u64; 5]; 5];
    for w in x.windows(2) {
        counts[bin(w[0])][bin(w[1])] += 1;
    }
    let mut balance_bad = 0;
    for i in 0..5 {
        for j in (i + 1)..5 {
            let (a, b) = (counts[i][j] as f64, counts[j][i] as f64);
            if a + b >= 100.0 && (a - b).abs() > 4.0 * (a + b).sqrt() {
                balance_bad += 1;
            }
        }
    }
    outcome(
        worst_mean <= 0.05 && worst_var <= 0.1 && balance_bad == 0,
        format!("worst |mean| {worst_mean:.4}, worst |var-1| {worst_var:.4}, unbalanced bin pairs {balance_bad}"),
    )
}

fn degenerate_melding() -> Result<Outcome> {
    let exp = gaussian()?;
    let (sub1, _) = exp.submodels()?;
    let flat = Submodel::new("flat", Arc::new(Flat), Arc::new(Flat));
    let c = constant_ratio();
    let st = StageSettings::new(MhSettings::new(41_000, 1_000, 8).with_thin(4), false);
    let s1 = stage_one(&sub1, c.as_ref(), StageOneMode::PlainPosterior, &st)?;
    let pooled = pooled_ratio(vec![c.clone(), c.clone()], vec![0.5, 0.5])?;
    let sampler = StageTwoSampler::new(&s1, &flat, &pooled, &c, &c)?;
    let run = sampler.run(&StageSettings::new(MhSettings::new(11_000, 1_000, 0), false), 9)?;
    let ks = ks_distance(&run.phi_column(0), &s1.phi_column(0))?;
    outcome(
        ks < 0.03 && run.indices_consistent(&s1),
        format!("KS {ks:.4} at {} stage-two draws", run.indices.len()),
    )
}

const SMALL: &str = r#"
model = "gaussian"
seed = 4
replicates = 2

[wsre]
n_per_w = 60

[naive]
draws = 300

[stage_one]
iterations = 2000
warmup = 500

[stage_two]
iterations = 1500
warmup = 200

[direct]
iterations = 2000
warmup = 500
"#;

fn chain_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir.join("chains"))
        .map(|it| {
            it.filter_map(|e| e.ok())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

fn reproducibility() -> Result<Outcome> {
    let tmp = std::env::temp_dir().join(format!("meldkit-acceptance-{}", std::process::id()));
    fs::create_dir_all(&tmp).map_err(|e| meldkit::Error::InvalidArgument(e.to_string()))?;
    fs::write(tmp.join("run.toml"), SMALL).map_err(|e| meldkit::Error::InvalidArgument(e.to_string()))?;
    let runs: [&[&str]; 4] = [
        &["meld", "--config", "run.toml", "--evaluator", "wsre"],
        &["meld", "--config", "run.toml", "--evaluator", "naive"],
        &["direct", "--config", "run.toml"],
        &["meld", "--model", "hiv", "--evaluator", "naive", "--seed", "2", "--naive-draws", "400",
          "--stage-one-iterations", "3000", "--stage-one-warmup", "500", "--stage-two-iterations", "1500", "--stage-two-warmup", "200"],
    ];
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for (k, args) in runs.iter().enumerate() {
        let mut files = Vec::new();
        for rep in ["a", "b"] {
            let out = format!("{rep}{k}");
            let status = Command::new(env!("CARGO_BIN_EXE_meldkit"))
                .args(*args)
                .args(["--out", &out])
                .current_dir(&tmp)
                .output()
                .map_err(|e| meldkit::Error::InvalidArgument(e.to_string()))?;
            if !status.status.success() {
                return Err(meldkit::Error::InvalidArgument(format!(
                    "{} failed: {}",
                    args.join(" "),
                    String::from_utf8_lossy(&status.stderr)
                )));
            }
            files.push(chain_files(&tmp.join(&out)));
        }
        if files[0].is_empty() || files[0] != files[1] {
            mismatched.push(args[..2].join(" "));
        }
        compared += files[0].len();
    }
    let _ = fs::remove_dir_all(&tmp);
    outcome(
        mismatched.is_empty(),
        format!("{compared} chain files rerun byte-identically; mismatches: {mismatched:?}"),
    )
}
