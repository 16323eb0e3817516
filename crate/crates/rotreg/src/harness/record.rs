//! Run outputs: the JSON run record and the CSV trace files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::config::{Method, TaskKind};
use crate::metrics::OrdinalityReport;
use crate::models::Activation;
use crate::ndnum::Matrix;

/// Every knob of a run with all defaults resolved to concrete values; embedded
/// in the run record so any result is reproducible from its own output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub task: TaskKind,
    pub method: Method,
    pub n_points: usize,
    pub ambient_dim: usize,
    pub noise_sigma: f64,
    /// Full layer stack, input through feature dimension.
    pub encoder_widths: Vec<usize>,
    pub d: usize,
    pub activation: Activation,
    /// Target copies actually used (1 for non-MT methods).
    pub m: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub scalar_target: bool,
    pub noise_targets: bool,
    /// Class count and discretization range for classification runs.
    pub classification_k: Option<usize>,
    pub class_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub train_mae: f64,
    pub test_mse: f64,
    pub test_mae: f64,
    /// Mean per-batch task loss over the epoch (absent for the initial row).
    pub task_loss: Option<f64>,
    /// Mean per-batch transport loss (transport methods only).
    pub ot_loss: Option<f64>,
    /// Fraction of Sinkhorn solves that converged this epoch.
    pub sinkhorn_converged_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpread {
    pub per_head_mae: Vec<f64>,
    pub mean: f64,
    /// Sample std across heads; absent for a single head.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ResolvedConfig,
    pub epochs: Vec<EpochRecord>,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
    pub final_test_mae: f64,
    pub ordinality: Vec<OrdinalityReport>,
    /// Per-head maximum cosine distance to the final-epoch direction.
    pub theta_drift_max: Vec<f64>,
    /// Cosine distance between the principal update direction of the probe
    /// representations and the head direction (single-output runs only).
    pub z_update_alignment: Option<f64>,
    pub head_spread: Option<HeadSpread>,
    pub sinkhorn_converged_fraction: Option<f64>,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("run.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("run.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Equality modulo the wall clock, which is the one nondeterministic field.
    pub fn equals_ignoring_wall_clock(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_clock_seconds = 0.0;
        b.wall_clock_seconds = 0.0;
        a == b
    }
}

pub fn write_metrics_csv(dir: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,split,mse,mae\n");
    for e in epochs {
        out.push_str(&format!("{},train,{},{}\n", e.epoch, e.train_mse, e.train_mae));
        out.push_str(&format!("{},test,{},{}\n", e.epoch, e.test_mse, e.test_mae));
    }
    std::fs::write(dir.join("metrics.csv"), out)?;
    Ok(())
}

pub fn write_ordinality_json(dir: &Path, reports: &[OrdinalityReport]) -> Result<()> {
    let json = serde_json::to_string_pretty(reports)?;
    std::fs::write(dir.join("ordinality.json"), json)?;
    Ok(())
}

/// `trace_theta.csv`: one row per (head, epoch) with the head's weight vector.
pub fn write_theta_trace(dir: &Path, head_names: &[String], snapshots: &[Vec<Vec<f64>>]) -> Result<()> {
    let d = snapshots
        .first()
        .and_then(|s| s.first())
        .map(|v| v.len())
        .unwrap_or(0);
    let mut out = String::from("head,epoch");
    for k in 0..d {
        out.push_str(&format!(",c{k}"));
    }
    out.push('\n');
    for (epoch, snapshot) in snapshots.iter().enumerate() {
        for (name, theta) in head_names.iter().zip(snapshot) {
            out.push_str(&format!("{name},{epoch}"));
            for v in theta {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    std::fs::write(dir.join("trace_theta.csv"), out)?;
    Ok(())
}

/// `trace_z.csv`: one row per (probe, epoch) with the probe's representation.
pub fn write_z_trace(dir: &Path, probe_ids: &[usize], snapshots: &[Matrix]) -> Result<()> {
    let d = snapshots.first().map(|m| m.cols()).unwrap_or(0);
    let mut out = String::from("probe,epoch");
    for k in 0..d {
        out.push_str(&format!(",z{k}"));
    }
    out.push('\n');
    for (epoch, z) in snapshots.iter().enumerate() {
        for (row, &probe) in probe_ids.iter().enumerate() {
            out.push_str(&format!("{probe},{epoch}"));
            for v in z.row(row) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    std::fs::write(dir.join("trace_z.csv"), out)?;
    Ok(())
}

/// Read back a theta trace as (head name, epoch, vector) rows.
pub fn read_theta_trace(path: &Path) -> Result<Vec<(String, usize, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let err = |msg: String| crate::error::Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg,
        };
        let head = fields.next().ok_or_else(|| err("missing head".into()))?.to_string();
        let epoch: usize = fields
            .next()
            .ok_or_else(|| err("missing epoch".into()))?
            .parse()
            .map_err(|e| err(format!("bad epoch: {e}")))?;
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad value: {e}"))))
            .collect::<Result<_>>()?;
        rows.push((head, epoch, values));
    }
    Ok(rows)
}
