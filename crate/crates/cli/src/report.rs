//! Reports, checks and the files written next to them.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use polylab::orders::{OrderVerdict, Outcome};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::svg::LinePlot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Consistent,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    /// Decided by exact enumeration rather than sampling.
    pub exact: bool,
    /// Largest violation z-score; absent for exact checks.
    pub z: Option<f64>,
    pub detail: String,
}

impl Check {
    pub fn from_verdict(name: impl Into<String>, v: &OrderVerdict) -> Self {
        let status = match v.outcome {
            Outcome::Consistent => Status::Consistent,
            Outcome::Violated { .. } => Status::Violated,
            Outcome::Inconclusive => Status::Inconclusive,
        };
        let detail = match v.outcome {
            Outcome::Violated { t, z } => format!("{} {}: violated at t = {t} with z = {z:.3}", v.order.symbol(), v.direction),
            _ => format!("{} {}: max z = {:.3} against z_crit = {:.3}", v.order.symbol(), v.direction, v.max_z(), v.z_crit),
        };
        Check { name: name.into(), status, exact: false, z: Some(v.max_z()), detail }
    }

    /// A sampled check that fails when `z` exceeds `z_crit`.
    pub fn threshold(name: impl Into<String>, z: f64, z_crit: f64, detail: impl Into<String>) -> Self {
        let status = if z > z_crit { Status::Violated } else { Status::Consistent };
        Check { name: name.into(), status, exact: false, z: Some(z), detail: detail.into() }
    }

    pub fn exact(name: impl Into<String>, holds: bool, detail: impl Into<String>) -> Self {
        let status = if holds { Status::Consistent } else { Status::Violated };
        Check { name: name.into(), status, exact: true, z: None, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub tag: String,
    pub seed: u64,
}

impl SeedEntry {
    pub fn new(tag: impl Into<String>, seed: u64) -> Self {
        SeedEntry { tag: tag.into(), seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub params: Value,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub results: Value,
    pub tables: Vec<String>,
    pub plots: Vec<String>,
    pub seed_lineage: Vec<SeedEntry>,
    pub wall_time_s: f64,
    pub version: String,
}

impl ExperimentReport {
    pub fn violated(&self) -> bool {
        self.checks.iter().any(|c| c.status == Status::Violated)
    }

    /// 0 when no check is violated, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.violated() {
            2
        } else {
            0
        }
    }
}

/// Collects the tables and plots an experiment writes into its directory.
#[derive(Debug)]
pub struct Output {
    dir: PathBuf,
    pub tables: Vec<String>,
    pub plots: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output { dir: dir.to_path_buf(), tables: Vec::new(), plots: Vec::new() })
    }

    pub fn csv(&mut self, name: &str, content: &str) -> Result<()> {
        let file = format!("{name}.csv");
        write(&self.dir.join(&file), content)?;
        self.tables.push(file);
        Ok(())
    }

    pub fn svg(&mut self, name: &str, plot: &LinePlot) -> Result<()> {
        let file = format!("{name}.svg");
        write(&self.dir.join(&file), &plot.render())?;
        self.plots.push(file);
        Ok(())
    }
}

pub fn write(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}
