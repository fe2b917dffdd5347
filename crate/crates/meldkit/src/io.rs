//! Chain CSV files and JSON sidecars.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! rerun with the same seed produces byte-identical files and reading a file
//! back recovers every value exactly.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Column names plus numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ChainTable {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn column_named(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }
}

/// Write rows of already formatted fields under `header`.
pub fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per draw, one column per name.
pub fn write_chain_csv(path: &Path, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    write_rows(path, names, rows.iter().map(|r| r.iter().map(|x| x.to_string()).collect()))
}

/// Read a numeric CSV with a header row. Errors carry the 1-based file line.
pub fn read_chain_csv(path: &Path) -> Result<ChainTable> {
    let text = fs::read_to_string(path)?;
    parse_chain_csv(&text)
}

pub fn parse_chain_csv(text: &str) -> Result<ChainTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != names.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(ChainTable { names, rows })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let names = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec![0.1 + 0.2, -1e-300], vec![std::f64::consts::PI, 12345.0]];
        write_chain_csv(&p, &names, &rows).unwrap();
        let t = read_chain_csv(&p).unwrap();
        assert_eq!(t.names, names);
        assert_eq!(t.rows, rows);
        assert_eq!(t.column_named("b").unwrap(), vec![-1e-300, 12345.0]);
    }

    #[test]
    fn parse_errors_report_lines() {
        match parse_chain_csv("x,y\n1,2\n3,oops\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_chain_csv("x,y\n1,2\n3\n"), Err(Error::Parse { line: 3, .. })));
        assert!(parse_chain_csv("").is_err());
    }
}
