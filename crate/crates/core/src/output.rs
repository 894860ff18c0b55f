//! Experiment reports and their files: `summary.json`, RFC-4180 tables and whitespace
//! separated plot data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Everything an experiment produces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub experiment: String,
    pub results: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub plots: Vec<Plot>,
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.into(),
            ..Default::default()
        }
    }

    pub fn result(&mut self, name: &str, value: impl Serialize) -> Result<()> {
        self.results
            .insert(name.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) {
        self.tables.push(Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows,
        });
    }

    pub fn plot(&mut self, name: &str, columns: &[&str], rows: Vec<Vec<f64>>) {
        self.plots.push(Plot {
            name: name.into(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn file_stem(name: &str) -> Result<String> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(name.to_string())
    } else {
        Err(Error::Argument(format!("invalid output name '{name}'")))
    }
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dat(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# ");
    out.push_str(&columns.join(" "));
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| num(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes every file of `report` into `dir`, with `config` echoed in the summary. Returns
/// the written paths.
pub fn write_report(
    dir: &Path,
    report: &Report,
    seed: u64,
    config: &impl Serialize,
) -> Result<Vec<PathBuf>> {
    let mut stems = Vec::new();
    for t in &report.tables {
        stems.push(format!("{}.csv", file_stem(&t.name)?));
    }
    for p in &report.plots {
        stems.push(format!("{}.dat", file_stem(&p.name)?));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = stems.iter().find(|s| !seen.insert(s.as_str())) {
        return Err(Error::Argument(format!("duplicate output file {dup}")));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in &report.tables {
        let path = dir.join(format!("{}.csv", t.name));
        write_csv(&path, &t.header, &t.rows)?;
        written.push(path);
    }
    for p in &report.plots {
        let path = dir.join(format!("{}.dat", p.name));
        write_dat(&path, &p.columns, &p.rows)?;
        written.push(path);
    }
    let mut summary: BTreeMap<&str, Value> = BTreeMap::new();
    summary.insert("experiment", Value::from(report.experiment.clone()));
    summary.insert("seed", Value::from(seed));
    summary.insert("config", serde_json::to_value(config)?);
    summary.insert("results", serde_json::to_value(&report.results)?);
    summary.insert("checks", serde_json::to_value(&report.checks)?);
    summary.insert("all_passed", Value::from(report.all_passed()));
    summary.insert("files", serde_json::to_value(&stems)?);
    let path = dir.join("summary.json");
    let mut f = fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    written.push(path);
    Ok(written)
}
