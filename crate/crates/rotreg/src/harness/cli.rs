//! Command-line entry point: `run`, `sweep`, `ablate`, `analyze`, `gen-data`.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 missing or
//! malformed files, 5 numerical failure, 1 anything else.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::record::{read_theta_trace, RunRecord};
use crate::harness::sweep::{run_ablation, run_seed_sweep, AblationParam};
use crate::harness::trainer::{build_dataset, run_experiment};
use crate::manifolds::save_point_cloud;
use crate::metrics::DirectionTrace;

#[derive(Parser)]
#[command(
    name = "rotreg",
    about = "Coordinate-prediction experiments with self-OT regularization and multi-target heads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its run record.
    Run(RunArgs),
    /// Run one configuration over several seeds and aggregate.
    Sweep(SweepArgs),
    /// Grid over lambda, gamma, or m.
    Ablate(AblateArgs),
    /// Summarize an existing run directory.
    Analyze { dir: PathBuf },
    /// Generate a dataset and write it as point-cloud CSVs.
    GenData(GenDataArgs),
}

/// Configuration source: defaults, then `--config` file, then flags.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    n_points: Option<usize>,
    /// Ambient input dimension (3 = plain noisy coordinates).
    #[arg(long)]
    ambient_dim: Option<usize>,
    /// Gaussian noise level; "auto" = 0.05 x target scale.
    #[arg(long)]
    noise_sigma: Option<String>,
    /// Comma-separated hidden widths, e.g. 128,128.
    #[arg(long)]
    encoder_widths: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    classification_k: Option<usize>,
    #[arg(long)]
    scalar_target: Option<bool>,
    #[arg(long)]
    noise_targets: Option<bool>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.merge_file(path)?;
        }
        if let Some(v) = &self.task {
            cfg.apply_kv("task", v)?;
        }
        if let Some(v) = &self.method {
            cfg.apply_kv("method", v)?;
        }
        if let Some(v) = self.n_points {
            cfg.n_points = v;
        }
        if let Some(v) = self.ambient_dim {
            cfg.ambient_dim = v;
        }
        if let Some(v) = &self.noise_sigma {
            cfg.apply_kv("noise_sigma", v)?;
        }
        if let Some(v) = &self.encoder_widths {
            cfg.apply_kv("encoder_widths", v)?;
        }
        if let Some(v) = self.d {
            cfg.d = v;
        }
        if let Some(v) = &self.activation {
            cfg.apply_kv("activation", v)?;
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = Some(v);
        }
        if let Some(v) = self.gamma {
            cfg.gamma = Some(v);
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.classification_k {
            cfg.classification_k = v;
        }
        if let Some(v) = self.scalar_target {
            cfg.scalar_target = v;
        }
        if let Some(v) = self.noise_targets {
            cfg.noise_targets = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated seed list, e.g. 1,2,3.
    #[arg(long)]
    seeds: String,
}

#[derive(Args)]
struct AblateArgs {
    /// Which hyperparameter to sweep: lambda, gamma, or m.
    param: String,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated grid values, e.g. 0.1,1,10.
    #[arg(long)]
    values: String,
    /// Comma-separated seeds (default: the single configured seed).
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Ambient input dimension (3 writes plain x,y,z point clouds).
    #[arg(long, default_value_t = 3)]
    ambient_dim: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| Error::Config(format!("bad {what} entry '{s}': {e}")))
        })
        .collect()
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) => 3,
        Error::Io(_) | Error::Parse { .. } => 4,
        Error::NumericalFailure { .. } | Error::NonFinite(_) => 5,
        _ => 1,
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.config.build()?;
    let record = run_experiment(&cfg)?;
    println!(
        "task={} method={} seed={} epochs={} test_mse={:.6} test_mae={:.6} -> {}",
        record.config.task,
        record.config.method,
        record.config.seed,
        record.config.epochs,
        record.final_test_mse,
        record.final_test_mae,
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.config.build()?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let summary = run_seed_sweep(&cfg, &seeds)?;
    println!("sweep over {} seeds -> {}", seeds.len(), cfg.output_dir.display());
    for (name, m) in &summary.metrics {
        println!("  {name}: {:.6} +- {:.6}", m.mean, m.std);
    }
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.config.build()?;
    let param: AblationParam = args.param.parse()?;
    let values: Vec<f64> = parse_list(&args.values, "value")?;
    let seeds: Vec<u64> = match &args.seeds {
        Some(s) => parse_list(s, "seed")?,
        None => vec![cfg.seed],
    };
    let summary = run_ablation(&cfg, param, &values, &seeds)?;
    println!("ablation over {param} -> {}", cfg.output_dir.display());
    for cell in &summary.cells {
        println!(
            "  {param}={}: test_mse {:.6} +- {:.6}",
            cell.value, cell.test_mse.mean, cell.test_mse.std
        );
    }
    Ok(())
}

fn cmd_analyze(dir: &Path) -> Result<()> {
    let record = RunRecord::load(dir)?;
    println!("run: task={} method={} seed={}", record.config.task, record.config.method, record.config.seed);
    println!(
        "  final: train_mse={:.6} test_mse={:.6} test_mae={:.6}",
        record.final_train_mse, record.final_test_mse, record.final_test_mae
    );
    for report in &record.ordinality {
        println!(
            "  ordinality[{:?}]: spearman={:.4} kendall={:.4} volume={:.4}",
            report.distance_kind, report.spearman, report.kendall, report.volume
        );
    }
    if let Some(f) = record.sinkhorn_converged_fraction {
        println!("  sinkhorn converged fraction: {f:.4}");
    }
    if let Some(a) = record.z_update_alignment {
        println!("  z-update alignment (cosine distance to theta): {a:.4}");
    }
    if let Some(spread) = &record.head_spread {
        match spread.std {
            Some(std) => println!(
                "  per-head MAE: mean {:.6} std {:.6} over {} heads",
                spread.mean,
                std,
                spread.per_head_mae.len()
            ),
            None => println!("  per-head MAE: {:.6} (single head)", spread.mean),
        }
    }

    // Per-head drift and update-direction agreement from the theta trace.
    let rows = read_theta_trace(&dir.join("trace_theta.csv"))?;
    let mut heads: Vec<String> = Vec::new();
    for (head, _, _) in &rows {
        if !heads.contains(head) {
            heads.push(head.clone());
        }
    }
    let mut components: Vec<(String, Vec<f64>)> = Vec::new();
    for head in &heads {
        let mut checkpoints: Vec<(usize, Vec<f64>)> = rows
            .iter()
            .filter(|(h, _, _)| h == head)
            .map(|(_, e, v)| (*e, v.clone()))
            .collect();
        checkpoints.sort_by_key(|(e, _)| *e);
        let vectors: Vec<Vec<f64>> = checkpoints.into_iter().map(|(_, v)| v).collect();
        if vectors.len() >= 3 {
            let trace = DirectionTrace::from_checkpoints(&vectors)?;
            if let Ok(component) = crate::ndnum::pca_first_component(
                &crate::ndnum::Matrix::from_rows(trace.updates())?,
            ) {
                components.push((head.clone(), component));
            }
        }
    }
    for (head, max_drift) in heads.iter().zip(&record.theta_drift_max) {
        println!("  head {head}: max cosine drift {max_drift:.6}");
    }
    // Pairwise agreement of the principal update directions across heads,
    // sign-insensitive.
    for i in 0..components.len() {
        for j in (i + 1)..components.len() {
            let plus = crate::metrics::cosine_distance(&components[i].1, &components[j].1)?;
            let d = plus.min(2.0 - plus);
            println!(
                "  update-direction cosine distance {} vs {}: {:.6}",
                components[i].0, components[j].0, d
            );
        }
    }
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_kv("task", &args.task)?;
    cfg.n_points = args.n;
    cfg.ambient_dim = args.ambient_dim;
    cfg.seed = args.seed;
    cfg.noise_sigma = args.noise_sigma;
    cfg.validate()?;
    let dataset = build_dataset(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    save_point_cloud(&args.out.join("targets.csv"), &dataset.targets)?;
    if dataset.inputs.cols() == 3 {
        save_point_cloud(&args.out.join("inputs.csv"), &dataset.inputs)?;
    } else {
        crate::manifolds::save_matrix_csv(&args.out.join("inputs.csv"), &dataset.inputs)?;
    }
    let meta = serde_json::json!({
        "task": cfg.task.to_string(),
        "n_points": dataset.targets.rows(),
        "ambient_dim": dataset.inputs.cols(),
        "seed": dataset.seed,
        "noise_sigma": dataset.noise_sigma,
    });
    std::fs::write(
        args.out.join("meta.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    println!(
        "wrote {} points for task {} -> {}",
        dataset.targets.rows(),
        cfg.task,
        args.out.display()
    );
    Ok(())
}

/// Parse and execute; returns the process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version to stdout with status 0; real usage
            // errors exit 2.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Analyze { dir } => cmd_analyze(dir),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
