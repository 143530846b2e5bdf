//! Manifest runs: many experiments, one summary.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::experiments;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    #[serde(default)]
    pub name: Option<String>,
    pub experiment: String,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RowStatus {
    Ok,
    Violated,
    Error,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub index: usize,
    pub name: String,
    pub experiment: String,
    pub status: RowStatus,
    pub checks: usize,
    pub violated: usize,
    pub error: Option<String>,
    pub wall_time_s: f64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub exit_code: i32,
}

/// A JSON array of entries, or an object with an `experiments` array.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Manifest {
        List(Vec<ManifestEntry>),
        Wrapped { experiments: Vec<ManifestEntry> },
    }
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))?;
    let entries = match m {
        Manifest::List(v) | Manifest::Wrapped { experiments: v } => v,
    };
    for (i, e) in entries.iter().enumerate() {
        if !experiments::EXPERIMENTS.contains(&e.experiment.as_str()) {
            bail!("{}: entry {i} names unknown experiment {:?}", path.display(), e.experiment);
        }
    }
    Ok(entries)
}

/// Runs every entry into `out/<index>-<name>`; with `fail_fast` the first
/// error skips all entries not yet started. `parallel` experiments run at once.
pub fn run_suite(entries: &[ManifestEntry], out: &Path, fail_fast: bool, parallel: usize) -> Result<Summary> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stop = AtomicBool::new(false);
    let run_one = |(i, e): (usize, &ManifestEntry)| -> SummaryRow {
        let name = e.name.clone().unwrap_or_else(|| e.experiment.clone());
        let dir = out.join(format!("{i:03}-{}", sanitize(&name)));
        let mut row = SummaryRow {
            index: i,
            name,
            experiment: e.experiment.clone(),
            status: RowStatus::Skipped,
            checks: 0,
            violated: 0,
            error: None,
            wall_time_s: 0.0,
            output_dir: dir.clone(),
        };
        if stop.load(Ordering::SeqCst) {
            return row;
        }
        match experiments::run(&e.experiment, e.params.clone(), &dir) {
            Ok(rep) => {
                row.checks = rep.checks.len();
                row.violated = rep.checks.iter().filter(|c| c.status == crate::report::Status::Violated).count();
                row.status = if rep.violated() { RowStatus::Violated } else { RowStatus::Ok };
                row.wall_time_s = rep.wall_time_s;
            }
            Err(err) => {
                row.status = RowStatus::Error;
                row.error = Some(format!("{err:#}"));
                if fail_fast {
                    stop.store(true, Ordering::SeqCst);
                }
            }
        }
        row
    };
    let rows: Vec<SummaryRow> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(parallel).build()?;
        pool.install(|| entries.par_iter().enumerate().map(run_one).collect())
    } else {
        entries.iter().enumerate().map(run_one).collect()
    };
    let exit_code = if rows.iter().any(|r| r.status == RowStatus::Error) {
        1
    } else if rows.iter().any(|r| r.status == RowStatus::Violated) {
        2
    } else {
        0
    };
    let summary = Summary { rows, exit_code };
    crate::report::write(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}
