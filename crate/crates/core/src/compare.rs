//! Side-by-side comparison of finished runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{ReportRow, Split, CSV_HEADER, CSV_VERSION};
use crate::metrics::MetricsRecord;

pub const METRICS: [&str; 6] = [
    "a1",
    "a2",
    "a3",
    "sparsity",
    "channel_sparsity",
    "lagrangian",
];

/// Parses a results file written by the harness.
pub fn parse_results(text: &str, origin: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_VERSION) {
        return Err(Error::Format(format!(
            "{origin}: missing '{CSV_VERSION}' line"
        )));
    }
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format(format!("{origin}: unexpected column header")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{origin}:{}", i + 3);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::Format(format!(
                "{}: {} fields, expected 12",
                loc(),
                f.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("{}: bad number '{s}'", loc())))
        };
        let flag = |s: &str| {
            s.parse::<bool>()
                .map_err(|_| Error::Format(format!("{}: bad flag '{s}'", loc())))
        };
        let split = match f[2] {
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(Error::Format(format!("{}: unknown split '{other}'", loc()))),
        };
        rows.push(ReportRow {
            config_hash: f[0].to_string(),
            pruner: f[1].to_string(),
            split,
            record: MetricsRecord {
                epoch: f[3]
                    .parse()
                    .map_err(|_| Error::Format(format!("{}: bad epoch '{}'", loc(), f[3])))?,
                a1: num(f[4])?,
                a2: num(f[5])?,
                a3: num(f[6])?,
                sparsity: num(f[7])?,
                channel_sparsity: num(f[8])?,
                lagrangian: num(f[9])?,
                seconds: 0.0,
            },
            best_val: flag(f[10])?,
            descent_ok: flag(f[11])?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub source: String,
    pub config_hash: String,
    pub pruner: String,
    pub epoch: usize,
    /// In the order of [`METRICS`].
    pub values: [f64; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
}

impl Comparison {
    /// `runs[i].values − runs[0].values`.
    pub fn deltas(&self, i: usize) -> [f64; 6] {
        let base = &self.runs[0].values;
        let mut d = [0.0; 6];
        for (k, v) in self.runs[i].values.iter().enumerate() {
            d[k] = v - base[k];
        }
        d
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,config_hash,pruner,epoch");
        for m in METRICS {
            let _ = write!(s, ",{m}");
        }
        for m in METRICS {
            let _ = write!(s, ",delta_{m}");
        }
        s.push('\n');
        for (i, r) in self.runs.iter().enumerate() {
            let _ = write!(s, "{},{},{},{}", r.source, r.config_hash, r.pruner, r.epoch);
            for v in r.values {
                let _ = write!(s, ",{v}");
            }
            for d in self.deltas(i) {
                let _ = write!(s, ",{d}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<24} {:<6} {:>5}", "run", "pruner", "epoch");
        for m in METRICS {
            let _ = write!(s, " {m:>16}");
        }
        s.push('\n');
        for (i, r) in self.runs.iter().enumerate() {
            let _ = write!(s, "{:<24} {:<6} {:>5}", r.source, r.pruner, r.epoch);
            for (v, d) in r.values.iter().zip(self.deltas(i)) {
                let cell = if i == 0 {
                    format!("{v:.2}")
                } else {
                    format!("{v:.2} ({d:+.2})")
                };
                let _ = write!(s, " {cell:>16}");
            }
            s.push('\n');
        }
        s
    }
}

fn summarize(rows: &[ReportRow], source: String) -> Result<RunSummary> {
    let row = rows
        .iter()
        .find(|r| r.split == Split::Test)
        .or_else(|| rows.iter().find(|r| r.best_val))
        .ok_or_else(|| Error::Format(format!("{source}: no test or best-validation row")))?;
    let r = &row.record;
    Ok(RunSummary {
        source,
        config_hash: row.config_hash.clone(),
        pruner: row.pruner.clone(),
        epoch: r.epoch,
        values: [
            r.a1,
            r.a2,
            r.a3,
            r.sparsity,
            r.channel_sparsity,
            r.lagrangian,
        ],
    })
}

/// Best-epoch rows of each file with deltas against the first.
pub fn compare_runs(paths: &[PathBuf]) -> Result<Comparison> {
    if paths.len() < 2 {
        return Err(Error::Parameter(format!(
            "compare needs at least two result files, got {}",
            paths.len()
        )));
    }
    let runs = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let name = display_name(p);
            summarize(&parse_results(&text, &name)?, name)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { runs })
}

/// The run directory name for `…/<run>/results.csv`, else the path itself.
fn display_name(p: &Path) -> String {
    match (p.file_name(), p.parent().and_then(Path::file_name)) {
        (Some(f), Some(dir)) if f == "results.csv" => dir.to_string_lossy().into_owned(),
        _ => p.display().to_string(),
    }
}
