//! Multi-seed sweeps and hyperparameter ablation grids. Individual runs are
//! deterministic and own their output directories, so they execute in
//! parallel.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::record::RunRecord;
use crate::harness::trainer::run_experiment;
use crate::metrics::DistanceKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and (n-1)-denominator standard deviation.
pub fn mean_std(values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n >= 2 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, std }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    /// Per-seed values of each metric, in seed order.
    pub per_seed: BTreeMap<String, Vec<f64>>,
    pub metrics: BTreeMap<String, MetricSummary>,
}

fn collect_metrics(record: &RunRecord) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("final_test_mse".into(), record.final_test_mse);
    m.insert("final_test_mae".into(), record.final_test_mae);
    m.insert("final_train_mse".into(), record.final_train_mse);
    for report in &record.ordinality {
        let kind = match report.distance_kind {
            DistanceKind::Cosine => "cosine",
            DistanceKind::Euclidean => "euclidean",
        };
        m.insert(format!("spearman_{kind}"), report.spearman);
        m.insert(format!("kendall_{kind}"), report.kendall);
        m.insert(format!("volume_{kind}"), report.volume);
    }
    if let Some(f) = record.sinkhorn_converged_fraction {
        m.insert("sinkhorn_converged_fraction".into(), f);
    }
    if let Some(a) = record.z_update_alignment {
        m.insert("z_update_alignment".into(), a);
    }
    m
}

fn summarize(seeds: &[u64], records: &[RunRecord]) -> SweepSummary {
    let mut per_seed: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for record in records {
        for (k, v) in collect_metrics(record) {
            per_seed.entry(k).or_default().push(v);
        }
    }
    // Keep only metrics present in every run so means are comparable.
    per_seed.retain(|_, v| v.len() == records.len());
    let metrics = per_seed
        .iter()
        .map(|(k, v)| (k.clone(), mean_std(v)))
        .collect();
    SweepSummary {
        seeds: seeds.to_vec(),
        per_seed,
        metrics,
    }
}

/// Run the same configuration over several seeds (in parallel) and aggregate
/// mean +- std per metric. Writes each run under `<output_dir>/seed_<s>/` and
/// the aggregate to `<output_dir>/sweep.json`.
pub fn run_seed_sweep(config: &ExperimentConfig, seeds: &[u64]) -> Result<SweepSummary> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!(
            "a seed sweep needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let records = run_over_seeds(config, seeds)?;
    let summary = summarize(seeds, &records);
    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(
        config.output_dir.join("sweep.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Run one configuration per seed, each in `<output_dir>/seed_<s>/`.
pub fn run_over_seeds(config: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    config.validate()?;
    seeds
        .par_iter()
        .map(|&s| {
            let mut cfg = config.clone();
            cfg.seed = s;
            cfg.output_dir = config.output_dir.join(format!("seed_{s}"));
            run_experiment(&cfg)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationParam {
    Lambda,
    Gamma,
    M,
}

impl std::str::FromStr for AblationParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(AblationParam::Lambda),
            "gamma" => Ok(AblationParam::Gamma),
            "m" => Ok(AblationParam::M),
            other => Err(Error::Config(format!(
                "unknown ablation parameter '{other}' (expected lambda|gamma|m)"
            ))),
        }
    }
}

impl fmt::Display for AblationParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationParam::Lambda => write!(f, "lambda"),
            AblationParam::Gamma => write!(f, "gamma"),
            AblationParam::M => write!(f, "m"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub value: f64,
    pub seeds: Vec<u64>,
    pub test_mse: MetricSummary,
    pub test_mae: MetricSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSummary {
    pub param: AblationParam,
    pub cells: Vec<AblationCell>,
}

fn apply_ablation(config: &mut ExperimentConfig, param: AblationParam, value: f64) -> Result<()> {
    match param {
        AblationParam::Lambda => config.lambda = Some(value),
        AblationParam::Gamma => config.gamma = Some(value),
        AblationParam::M => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "m ablation values must be positive integers, got {value}"
                )));
            }
            config.m = value as usize;
        }
    }
    Ok(())
}

/// Run a grid over one hyperparameter; each grid point runs every seed.
/// Outputs land in `<output_dir>/<param>_<value>/seed_<s>/` plus an
/// `ablate.json` aggregate.
pub fn run_ablation(
    config: &ExperimentConfig,
    param: AblationParam,
    values: &[f64],
    seeds: &[u64],
) -> Result<AblationSummary> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut cells = Vec::new();
    for &value in values {
        let mut cfg = config.clone();
        apply_ablation(&mut cfg, param, value)?;
        cfg.output_dir = config.output_dir.join(format!("{param}_{value}"));
        cfg.validate()?;
        let records = run_over_seeds(&cfg, seeds)?;
        let mses: Vec<f64> = records.iter().map(|r| r.final_test_mse).collect();
        let maes: Vec<f64> = records.iter().map(|r| r.final_test_mae).collect();
        cells.push(AblationCell {
            value,
            seeds: seeds.to_vec(),
            test_mse: mean_std(&mses),
            test_mae: mean_std(&maes),
        });
    }
    let summary = AblationSummary { param, cells };
    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(
        config.output_dir.join("ablate.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}
