//! `meldkit diagnose`: per-chain ESS and stuck runs, QQ tables for chain
//! pairs, and stuck-run aggregation over replicate directories.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use meldkit::diagnostics::{
    default_grid, ess, median, nearly_equal, qq_compare, stuck_runs, stuck_runs_by, QqTable, StuckReport,
};
use meldkit::io::{read_chain_csv, write_rows, ChainTable};
use serde::Serialize;

use crate::error::CliError;
use crate::output::{RunDir, META_FORMAT, META_VERSION};

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Chain CSV files; two files also get a QQ comparison.
    files: Vec<PathBuf>,
    /// Run or chains directory whose stage_two_*.csv files are compared as
    /// one group. Repeatable.
    #[arg(long = "dir", value_name = "DIR")]
    dirs: Vec<PathBuf>,
    /// Columns to report; all but `index` by default. Replicate
    /// aggregation uses the first.
    #[arg(long = "column")]
    columns: Vec<String>,
    /// Runs at least this long count toward the long-run fraction.
    #[arg(long, default_value_t = 100)]
    threshold: usize,
    /// A chain is terminally stuck when its final run covers this share.
    #[arg(long, default_value_t = 0.1)]
    terminal_share: f64,
}

/// Stage-two files carry an `index` column; their φ repeats bit for bit.
fn is_index_chain(t: &ChainTable) -> bool {
    t.names.iter().any(|n| n == "index")
}

pub fn stuck_for(t: &ChainTable, j: usize, threshold: usize) -> StuckReport {
    let xs = t.column(j);
    if is_index_chain(t) {
        stuck_runs(&xs, threshold)
    } else {
        stuck_runs_by(&xs, threshold, nearly_equal)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnReport {
    pub chain: String,
    pub column: String,
    pub ess: Option<f64>,
    pub ess_flag: Option<meldkit::diagnostics::EssFlag>,
    pub stuck: StuckReport,
}

pub fn column_reports(label: &str, t: &ChainTable, columns: &[String], threshold: usize) -> Result<Vec<ColumnReport>, CliError> {
    let picked: Vec<usize> = if columns.is_empty() {
        (0..t.names.len()).filter(|&j| t.names[j] != "index").collect()
    } else {
        columns
            .iter()
            .map(|c| {
                t.names
                    .iter()
                    .position(|n| n == c)
                    .ok_or_else(|| CliError::Usage(format!("{label} has no column `{c}`")))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(picked
        .into_iter()
        .map(|j| {
            let e = ess(&t.column(j)).ok();
            ColumnReport {
                chain: label.to_string(),
                column: t.names[j].clone(),
                ess: e.map(|e| e.value),
                ess_flag: e.and_then(|e| e.flag),
                stuck: stuck_for(t, j, threshold),
            }
        })
        .collect())
}

/// Rows `chain, column, statistic, value`.
pub fn write_long(path: &Path, reports: &[ColumnReport]) -> Result<(), CliError> {
    let header: Vec<String> = ["chain", "column", "statistic", "value"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for r in reports {
        let mut push = |stat: &str, v: String| rows.push(vec![r.chain.clone(), r.column.clone(), stat.to_string(), v]);
        push("ess", r.ess.map_or_else(|| "NA".into(), |v| v.to_string()));
        push("length", r.stuck.length.to_string());
        push("longest_run", r.stuck.longest_run.to_string());
        push("longest_start", r.stuck.longest_start.to_string());
        push("terminal_run", r.stuck.terminal_run.to_string());
        push("fraction_in_long_runs", r.stuck.fraction_in_long_runs.to_string());
    }
    write_rows(path, &header, rows)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateGroup {
    pub source: String,
    pub column: String,
    pub chains: Vec<String>,
    pub longest_runs: Vec<usize>,
    pub terminal_runs: Vec<usize>,
    pub lengths: Vec<usize>,
    pub median_longest_run: f64,
    pub terminal_stuck: usize,
    pub terminal_share: f64,
}

/// `stage_two_*.csv` in `dir/chains` or `dir`, sorted by name.
pub fn replicate_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let base = if dir.join("chains").is_dir() { dir.join("chains") } else { dir.to_path_buf() };
    let entries = fs::read_dir(&base).map_err(|e| CliError::io(format!("cannot list {}", base.display()), e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("stage_two_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no stage_two_*.csv files under {}", base.display())));
    }
    Ok(files)
}

pub fn replicate_group(
    source: &str,
    tables: &[(String, ChainTable)],
    column: Option<&str>,
    threshold: usize,
    share: f64,
) -> Result<ReplicateGroup, CliError> {
    let mut g = ReplicateGroup {
        source: source.to_string(),
        column: String::new(),
        chains: Vec::new(),
        longest_runs: Vec::new(),
        terminal_runs: Vec::new(),
        lengths: Vec::new(),
        median_longest_run: 0.0,
        terminal_stuck: 0,
        terminal_share: share,
    };
    for (label, t) in tables {
        let j = match column {
            Some(c) => t
                .names
                .iter()
                .position(|n| n == c)
                .ok_or_else(|| CliError::Usage(format!("{label} has no column `{c}`")))?,
            None => 0,
        };
        g.column = t.names[j].clone();
        let r = stuck_for(t, j, threshold);
        g.terminal_stuck += r.terminal_stuck(share) as usize;
        g.chains.push(label.clone());
        g.longest_runs.push(r.longest_run);
        g.terminal_runs.push(r.terminal_run);
        g.lengths.push(r.length);
    }
    let runs: Vec<f64> = g.longest_runs.iter().map(|&x| x as f64).collect();
    g.median_longest_run = median(&runs);
    Ok(g)
}

#[derive(Debug, Serialize)]
struct QqReport {
    a: String,
    b: String,
    column: String,
    table: QqTable,
}

#[derive(Debug, Serialize)]
struct DiagnoseMeta {
    format: &'static str,
    version: u32,
    command: &'static str,
    inputs: Vec<String>,
    columns: Vec<ColumnReport>,
    qq: Vec<QqReport>,
    replicates: Vec<ReplicateGroup>,
    /// Group with the smallest median longest run, when several are given.
    lowest_median_longest_run: Option<String>,
}

fn load(p: &Path) -> Result<ChainTable, CliError> {
    read_chain_csv(p).map_err(|e| match e {
        meldkit::Error::Parse { line, message } => {
            CliError::Runtime(meldkit::Error::Parse {
                line,
                message: format!("{}: {message}", p.display()),
            })
        }
        other => other.into(),
    })
}

pub fn run(args: &DiagnoseArgs, out: Option<&Path>) -> Result<(), CliError> {
    if args.files.is_empty() && args.dirs.is_empty() {
        return Err(CliError::Usage("diagnose needs chain files or --dir".into()));
    }
    if !(args.terminal_share > 0.0 && args.terminal_share <= 1.0) {
        return Err(CliError::Usage("--terminal-share must lie in (0, 1]".into()));
    }
    let tables: Vec<(String, ChainTable)> = args
        .files
        .iter()
        .map(|p| Ok((p.display().to_string(), load(p)?)))
        .collect::<Result<_, CliError>>()?;
    let mut groups = Vec::new();
    for dir in &args.dirs {
        let reps = replicate_files(dir)?
            .iter()
            .map(|p| Ok((p.display().to_string(), load(p)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        groups.push(replicate_group(
            &dir.display().to_string(),
            &reps,
            args.columns.first().map(String::as_str),
            args.threshold,
            args.terminal_share,
        )?);
    }

    let run = RunDir::create(out, "diagnose")?;
    let reports_dir = run.reports();

    let mut columns = Vec::new();
    for (label, t) in &tables {
        columns.extend(column_reports(label, t, &args.columns, args.threshold)?);
    }
    if !columns.is_empty() {
        write_long(&reports_dir.join("chains.csv"), &columns)?;
    }

    let mut qq = Vec::new();
    if let [(la, a), (lb, b)] = tables.as_slice() {
        let header: Vec<String> = ["column", "p", "a", "b"].map(String::from).to_vec();
        let mut rows = Vec::new();
        for (ja, name) in a.names.iter().enumerate() {
            if name == "index" || !(args.columns.is_empty() || args.columns.contains(name)) {
                continue;
            }
            let Some(jb) = b.names.iter().position(|n| n == name) else {
                continue;
            };
            let table = qq_compare(&a.column(ja), &b.column(jb), &default_grid())?;
            let probs = table.grid.iter().chain(&table.tail_grid);
            let qa = table.a.iter().chain(&table.tail_a);
            let qb = table.b.iter().chain(&table.tail_b);
            for ((p, x), y) in probs.zip(qa).zip(qb) {
                rows.push(vec![name.clone(), p.to_string(), x.to_string(), y.to_string()]);
            }
            qq.push(QqReport {
                a: la.clone(),
                b: lb.clone(),
                column: name.clone(),
                table,
            });
        }
        write_rows(&reports_dir.join("qq.csv"), &header, rows)?;
    }

    if !groups.is_empty() {
        let header: Vec<String> = ["group", "chain", "length", "longest_run", "terminal_run", "terminal_stuck"]
            .map(String::from)
            .to_vec();
        let mut rows = Vec::new();
        for g in &groups {
            for k in 0..g.chains.len() {
                let stuck = g.terminal_runs[k] as f64 >= g.terminal_share * g.lengths[k] as f64;
                rows.push(vec![
                    g.source.clone(),
                    g.chains[k].clone(),
                    g.lengths[k].to_string(),
                    g.longest_runs[k].to_string(),
                    g.terminal_runs[k].to_string(),
                    stuck.to_string(),
                ]);
            }
        }
        write_rows(&reports_dir.join("replicates.csv"), &header, rows)?;
    }

    let lowest = (groups.len() > 1).then(|| {
        groups
            .iter()
            .min_by(|a, b| a.median_longest_run.total_cmp(&b.median_longest_run))
            .map(|g| g.source.clone())
            .unwrap_or_default()
    });
    for g in &groups {
        println!(
            "{}: median longest run {} over {} chains, {} terminally stuck",
            g.source,
            g.median_longest_run,
            g.chains.len(),
            g.terminal_stuck
        );
    }
    for q in &qq {
        println!("qq {}: mean gap {}, max gap {}", q.column, q.table.mean_gap, q.table.max_gap);
    }
    run.write_meta(&DiagnoseMeta {
        format: META_FORMAT,
        version: META_VERSION,
        command: "diagnose",
        inputs: args
            .files
            .iter()
            .chain(&args.dirs)
            .map(|p| p.display().to_string())
            .collect(),
        columns,
        qq,
        replicates: groups,
        lowest_median_longest_run: lowest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(names: &[&str], rows: Vec<Vec<f64>>) -> ChainTable {
        ChainTable {
            names: names.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    #[test]
    fn replicate_medians_are_exact() {
        let a = table(&["phi", "index"], vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![2.0, 1.0], vec![2.0, 1.0], vec![2.0, 1.0]]);
        let b = table(&["phi", "index"], vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![4.0, 3.0], vec![5.0, 4.0], vec![5.0, 4.0]]);
        let c = table(&["phi", "index"], vec![vec![7.0, 0.0]; 5]);
        let g = replicate_group("g", &[("a".into(), a), ("b".into(), b), ("c".into(), c)], None, 2, 0.5).unwrap();
        assert_eq!(g.longest_runs, vec![3, 2, 5]);
        assert_eq!(g.median_longest_run, 3.0);
        // a ends in 3 of 5, c in 5 of 5; b ends in 2 of 5.
        assert_eq!(g.terminal_stuck, 2);
    }

    #[test]
    fn continuous_chains_use_relative_equality() {
        let t = table(&["x"], vec![vec![1.0], vec![1.0 + 1e-15], vec![2.0]]);
        assert_eq!(stuck_for(&t, 0, 2).longest_run, 2);
        let s = table(&["x", "index"], vec![vec![1.0, 0.0], vec![1.0 + 1e-15, 1.0], vec![2.0, 2.0]]);
        assert_eq!(stuck_for(&s, 0, 2).longest_run, 1);
    }

    #[test]
    fn unknown_column_is_a_usage_error() {
        let t = table(&["x"], vec![vec![1.0]; 20]);
        assert!(matches!(column_reports("t", &t, &["y".into()], 5), Err(CliError::Usage(_))));
        let r = column_reports("t", &t, &[], 5).unwrap();
        assert_eq!(r[0].stuck.longest_run, 20);
    }
}
