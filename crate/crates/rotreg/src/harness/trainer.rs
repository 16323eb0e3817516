//! Experiment execution: dataset assembly, the training loop with its
//! per-epoch trackers, and run-record emission.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Method, TaskKind};
use crate::harness::record::{
    write_metrics_csv, write_ordinality_json, write_theta_trace, write_z_trace, EpochRecord,
    HeadSpread, ResolvedConfig, RunRecord,
};
use crate::losses;
use crate::manifolds::{self, ManifoldDataset};
use crate::metrics::{self, DirectionTrace, DistanceKind};
use crate::models::{
    duplicate_targets, ClassificationHead, MlpEncoder, MultiTargetHead, Sgd,
};
use crate::ndnum::{Matrix, Tape};
use crate::sinkhorn::SelfOtConfig;

/// Stable named sub-seed derivation (FNV-1a over the label, mixed with the
/// run seed) so every randomness consumer has its own stream.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x100000001b3);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn plain_mse(pred: &Matrix, target: &Matrix) -> f64 {
    let mut acc = 0.0;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = p - t;
        acc += e * e;
    }
    acc / pred.data().len() as f64
}

fn plain_mae(pred: &Matrix, target: &Matrix) -> f64 {
    let mut acc = 0.0;
    for (p, t) in pred.data().iter().zip(target.data()) {
        acc += (p - t).abs();
    }
    acc / pred.data().len() as f64
}

/// Build the configured dataset. The mammoth cloud is read from
/// `$ROTREG_DATA_DIR/mammoth.csv`; generated manifolds need no files.
pub fn build_dataset(config: &ExperimentConfig) -> Result<ManifoldDataset> {
    let data_seed = sub_seed(config.seed, "data");
    let targets = match config.task {
        TaskKind::Circle => manifolds::sample_circle(config.n_points, 1.0, data_seed)?,
        TaskKind::Torus => manifolds::sample_torus(config.n_points, 1.0, 0.5, data_seed)?,
        TaskKind::Scurve => manifolds::sample_s_curve(config.n_points, data_seed)?,
        TaskKind::Mammoth => {
            let dir = std::env::var("ROTREG_DATA_DIR").map_err(|_| {
                Error::Config(
                    "task mammoth needs ROTREG_DATA_DIR pointing at a directory with mammoth.csv"
                        .into(),
                )
            })?;
            let cloud = manifolds::load_point_cloud(Path::new(&dir).join("mammoth.csv").as_path())?;
            if cloud.rows() > config.n_points {
                let mut ids: Vec<usize> = (0..cloud.rows()).collect();
                ids.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "subsample")));
                ids.truncate(config.n_points);
                cloud.select_rows(&ids)?
            } else {
                cloud
            }
        }
    };
    let noise_sigma = config.noise_sigma.unwrap_or(0.05 * targets.max_abs());
    let inputs = manifolds::embed_with_ambient_noise(
        &targets,
        config.ambient_dim,
        noise_sigma,
        sub_seed(config.seed, "noise"),
    )?;
    Ok(ManifoldDataset {
        inputs,
        targets,
        name: config.task.to_string(),
        noise_sigma,
        seed: config.seed,
    })
}

/// Cosine drift of each head direction against its final-epoch direction;
/// `table[e][h]` corresponds to `snapshots[e]`, head `h`.
pub fn track_theta_drift(snapshots: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    if snapshots.len() < 2 {
        return Err(Error::InstanceTooSmall {
            context: "track_theta_drift",
            min: 2,
            got: snapshots.len(),
        });
    }
    let last = &snapshots[snapshots.len() - 1];
    let mut table = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        if snap.len() != last.len() {
            return Err(Error::Contract(
                "track_theta_drift: snapshots disagree on head count".into(),
            ));
        }
        let mut row = Vec::with_capacity(snap.len());
        for (theta, theta_final) in snap.iter().zip(last) {
            row.push(metrics::cosine_distance(theta, theta_final)?);
        }
        table.push(row);
    }
    Ok(table)
}

/// Pool per-probe displacements between consecutive representation snapshots
/// into a direction trace.
pub fn track_z_updates(snapshots: &[Matrix]) -> Result<DirectionTrace> {
    let mut trace = DirectionTrace::new();
    for w in snapshots.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if !a.same_shape(b) {
            return Err(Error::Contract(
                "track_z_updates: snapshots disagree on shape".into(),
            ));
        }
        for i in 0..a.rows() {
            let diff: Vec<f64> = b.row(i).iter().zip(a.row(i)).map(|(x, y)| x - y).collect();
            trace.push_update(diff)?;
        }
    }
    Ok(trace)
}

/// Per-head MAE of each copy's own prediction against the targets, with the
/// mean and (for M >= 2) sample std across copies.
pub fn report_mt_head_spread(
    head: &MultiTargetHead,
    features: &Matrix,
    targets: &Matrix,
) -> Result<HeadSpread> {
    let (per_target, _) = head.predict(features)?;
    let (n, ky) = targets.shape();
    let copies = head.copies();
    let mut per_head_mae = Vec::with_capacity(copies);
    for t in 0..copies {
        let mut acc = 0.0;
        for i in 0..n {
            for c in 0..ky {
                acc += (per_target.get(i, c * copies + t) - targets.get(i, c)).abs();
            }
        }
        per_head_mae.push(acc / (n * ky) as f64);
    }
    let mean = per_head_mae.iter().sum::<f64>() / copies as f64;
    let std = if copies >= 2 {
        let var = per_head_mae.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (copies - 1) as f64;
        Some(var.sqrt())
    } else {
        None
    };
    Ok(HeadSpread {
        per_head_mae,
        mean,
        std,
    })
}

enum HeadState {
    Mt(MultiTargetHead),
    Class {
        head: ClassificationHead,
        range: (f64, f64),
        labels: Vec<usize>,
    },
}

struct StepStats {
    task_loss: f64,
    ot_loss: Option<f64>,
    solves: usize,
    converged_solves: usize,
}

#[allow(clippy::too_many_arguments)]
fn train_step_mt(
    encoder: &mut MlpEncoder,
    head: &mut MultiTargetHead,
    sgd: &mut Sgd,
    x_batch: &Matrix,
    dup_batch: &Matrix,
    y_batch: &Matrix,
    lambda: f64,
    ot: Option<&SelfOtConfig>,
) -> Result<StepStats> {
    let mut tape = Tape::new();
    let x = tape.leaf(x_batch.clone());
    let enc = encoder.encode_on_tape(&mut tape, x)?;
    let taped_head = head.predict_on_tape(&mut tape, enc.output)?;
    let task = crate::models::mt_training_loss_from(&mut tape, taped_head.per_target, dup_batch)?;

    let mut stats = StepStats {
        task_loss: task.value,
        ot_loss: None,
        solves: 0,
        converged_solves: 0,
    };
    let total = match ot {
        Some(cfg) => {
            let (ot_loss, state) = losses::rot_reg_loss_with(&mut tape, enc.output, y_batch, cfg)?;
            stats.ot_loss = Some(ot_loss.value);
            stats.solves = 2;
            stats.converged_solves =
                state.plan_y.converged as usize + state.plan_z.converged as usize;
            losses::combined_loss(&mut tape, &task, &ot_loss, lambda)?
        }
        None => task,
    };

    let grads = tape.backward(total.node)?;
    let mut params: Vec<&mut Matrix> = Vec::new();
    let mut grad_refs: Vec<&Matrix> = Vec::new();
    for (i, w) in encoder.weights.iter_mut().enumerate() {
        params.push(w);
        grad_refs.push(grads.wrt(enc.weight_nodes[i]));
    }
    for (i, b) in encoder.biases.iter_mut().enumerate() {
        params.push(b);
        grad_refs.push(grads.wrt(enc.bias_nodes[i]));
    }
    params.push(&mut head.weights);
    grad_refs.push(grads.wrt(taped_head.weight_node));
    params.push(&mut head.bias);
    grad_refs.push(grads.wrt(taped_head.bias_node));
    sgd.step(&mut params, &grad_refs)?;
    Ok(stats)
}

fn train_step_class(
    encoder: &mut MlpEncoder,
    head: &mut ClassificationHead,
    sgd: &mut Sgd,
    x_batch: &Matrix,
    labels_batch: &[usize],
) -> Result<StepStats> {
    let mut tape = Tape::new();
    let x = tape.leaf(x_batch.clone());
    let enc = encoder.encode_on_tape(&mut tape, x)?;
    let taped = head.logits_on_tape(&mut tape, enc.output)?;
    let task = losses::cross_entropy(&mut tape, taped.logits, labels_batch)?;

    let grads = tape.backward(task.node)?;
    let mut params: Vec<&mut Matrix> = Vec::new();
    let mut grad_refs: Vec<&Matrix> = Vec::new();
    for (i, w) in encoder.weights.iter_mut().enumerate() {
        params.push(w);
        grad_refs.push(grads.wrt(enc.weight_nodes[i]));
    }
    for (i, b) in encoder.biases.iter_mut().enumerate() {
        params.push(b);
        grad_refs.push(grads.wrt(enc.bias_nodes[i]));
    }
    params.push(&mut head.weights);
    grad_refs.push(grads.wrt(taped.weight_node));
    sgd.step(&mut params, &grad_refs)?;
    Ok(StepStats {
        task_loss: task.value,
        ot_loss: None,
        solves: 0,
        converged_solves: 0,
    })
}

fn evaluate(
    encoder: &MlpEncoder,
    head: &HeadState,
    x: &Matrix,
    y: &Matrix,
) -> Result<(f64, f64)> {
    let z = encoder.encode(x)?;
    match head {
        HeadState::Mt(h) => {
            let (_, mean) = h.predict(&z)?;
            Ok((plain_mse(&mean, y), plain_mae(&mean, y)))
        }
        HeadState::Class { head, range, .. } => {
            let logits = head.logits(&z)?;
            let k = head.classes();
            let span = range.1 - range.0;
            let mut pred = Matrix::zeros(y.rows(), 1);
            for i in 0..logits.rows() {
                let row = logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                pred.set(i, 0, range.0 + (best as f64 + 0.5) * span / k as f64);
            }
            Ok((plain_mse(&pred, y), plain_mae(&pred, y)))
        }
    }
}

fn theta_snapshot(head: &HeadState) -> Vec<Vec<f64>> {
    match head {
        HeadState::Mt(h) => {
            let mut out = Vec::new();
            for c in 0..h.target_dim() {
                for t in 0..h.copies() {
                    out.push(h.theta(c, t));
                }
            }
            out
        }
        HeadState::Class { head, .. } => (0..head.classes()).map(|k| head.theta(k)).collect(),
    }
}

fn head_names(head: &HeadState) -> Vec<String> {
    match head {
        HeadState::Mt(h) => h.head_names(),
        HeadState::Class { head, .. } => (0..head.classes()).map(|k| format!("k{k}")).collect(),
    }
}

/// Extra target copies drawn as uniform noise over each coordinate's observed
/// range; copy 0 keeps the true value.
fn noisy_duplicate_targets(y: &Matrix, copies: usize, seed: u64) -> Matrix {
    let (n, ky) = y.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = duplicate_targets(y, copies);
    for c in 0..ky {
        let col = y.col(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            for t in 1..copies {
                out.set(i, c * copies + t, rng.gen_range(lo..=hi));
            }
        }
    }
    out
}

/// Run one experiment end to end, writing `run.json`, `metrics.csv`,
/// `ordinality.json`, `trace_theta.csv`, and `trace_z.csv` into the
/// configured output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let seed = config.seed;

    let dataset = build_dataset(config)?;
    let n = dataset.targets.rows();
    let scalar = config.effective_scalar_target();
    let targets_eff = if scalar {
        dataset.targets.select_cols(&[0])?
    } else {
        dataset.targets.clone()
    };
    let ky = targets_eff.cols();

    let (train_idx, test_idx) = manifolds::train_test_split(n, sub_seed(seed, "split"));
    let x_train = dataset.inputs.select_rows(&train_idx)?;
    let y_train = targets_eff.select_rows(&train_idx)?;
    let x_test = dataset.inputs.select_rows(&test_idx)?;
    let y_test = targets_eff.select_rows(&test_idx)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "init"));
    let mut widths = vec![dataset.inputs.cols()];
    widths.extend_from_slice(&config.encoder_widths);
    widths.push(config.d);
    let mut encoder = MlpEncoder::new(&widths, config.activation, &mut init_rng)?;

    let m_eff = config.effective_m();
    let mut head = match config.method {
        Method::Classification => {
            let col = targets_eff.col(0);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let labels =
                crate::models::discretize_targets(&col, config.classification_k, lo, hi)?;
            HeadState::Class {
                head: ClassificationHead::new(config.d, config.classification_k, &mut init_rng)?,
                range: (lo, hi),
                labels,
            }
        }
        _ => HeadState::Mt(MultiTargetHead::new(config.d, ky, m_eff, &mut init_rng)?),
    };

    // Duplicated targets for the whole dataset, fixed across epochs.
    let dup_full = if config.noise_targets && m_eff > 1 {
        noisy_duplicate_targets(&targets_eff, m_eff, sub_seed(seed, "noise-targets"))
    } else {
        duplicate_targets(&targets_eff, m_eff)
    };

    // Fixed probe subset of the test split for representation traces.
    let mut probe_ids: Vec<usize> = test_idx.clone();
    probe_ids.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, "probe")));
    probe_ids.truncate(256.min(test_idx.len()));
    probe_ids.sort_unstable();
    let probe_inputs = dataset.inputs.select_rows(&probe_ids)?;

    let mut sgd = Sgd::new(config.learning_rate, config.momentum)?;
    let lambda = config.resolved_lambda();
    let gamma = config.resolved_gamma();
    let ot_config = if config.method.uses_ot() {
        Some(SelfOtConfig::new(gamma)?)
    } else {
        None
    };

    let mut theta_snapshots = vec![theta_snapshot(&head)];
    let mut z_snapshots = vec![encoder.encode(&probe_inputs)?];
    let (mse0_train, mae0_train) = evaluate(&encoder, &head, &x_train, &y_train)?;
    let (mse0_test, mae0_test) = evaluate(&encoder, &head, &x_test, &y_test)?;
    let mut epoch_records = vec![EpochRecord {
        epoch: 0,
        train_mse: mse0_train,
        train_mae: mae0_train,
        test_mse: mse0_test,
        test_mae: mae0_test,
        task_loss: None,
        ot_loss: None,
        sinkhorn_converged_fraction: None,
    }];

    let mut total_solves = 0usize;
    let mut total_converged = 0usize;

    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(
            seed,
            &format!("shuffle{epoch}"),
        )));

        let mut batches = 0usize;
        let mut failures = 0usize;
        let mut task_sum = 0.0;
        let mut ot_sum = 0.0;
        let mut ot_batches = 0usize;
        let mut epoch_solves = 0usize;
        let mut epoch_converged = 0usize;

        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue; // a 1-sample tail cannot feed the transport loss
            }
            batches += 1;
            let x_batch = dataset.inputs.select_rows(chunk)?;
            let result = match &mut head {
                HeadState::Mt(mt) => {
                    let dup_batch = dup_full.select_rows(chunk)?;
                    let y_batch = targets_eff.select_rows(chunk)?;
                    train_step_mt(
                        &mut encoder,
                        mt,
                        &mut sgd,
                        &x_batch,
                        &dup_batch,
                        &y_batch,
                        lambda,
                        ot_config.as_ref(),
                    )
                }
                HeadState::Class { head: cls, labels, .. } => {
                    let labels_batch: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    train_step_class(&mut encoder, cls, &mut sgd, &x_batch, &labels_batch)
                }
            };
            match result {
                Ok(stats) => {
                    task_sum += stats.task_loss;
                    if let Some(ot) = stats.ot_loss {
                        ot_sum += ot;
                        ot_batches += 1;
                    }
                    epoch_solves += stats.solves;
                    epoch_converged += stats.converged_solves;
                }
                Err(Error::NumericalFailure { what, iteration }) => {
                    failures += 1;
                    eprintln!(
                        "warning: epoch {epoch}: skipped batch after numerical failure in {what} (iteration {iteration})"
                    );
                }
                Err(e) => return Err(e),
            }
        }
        if failures * 10 > batches {
            return Err(Error::NumericalFailure {
                what: "training (more than 10% of batches failed)",
                iteration: epoch,
            });
        }

        total_solves += epoch_solves;
        total_converged += epoch_converged;

        let (train_mse, train_mae) = evaluate(&encoder, &head, &x_train, &y_train)?;
        let (test_mse, test_mae) = evaluate(&encoder, &head, &x_test, &y_test)?;
        let ok_batches = batches - failures;
        epoch_records.push(EpochRecord {
            epoch,
            train_mse,
            train_mae,
            test_mse,
            test_mae,
            task_loss: (ok_batches > 0).then(|| task_sum / ok_batches as f64),
            ot_loss: (ot_batches > 0).then(|| ot_sum / ot_batches as f64),
            sinkhorn_converged_fraction: (epoch_solves > 0)
                .then(|| epoch_converged as f64 / epoch_solves as f64),
        });
        theta_snapshots.push(theta_snapshot(&head));
        z_snapshots.push(encoder.encode(&probe_inputs)?);
    }

    // Final diagnostics.
    let mut ord_ids: Vec<usize> = (0..test_idx.len()).collect();
    ord_ids.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, "ordinality")));
    ord_ids.truncate(1000.min(test_idx.len()));
    let ord_features = encoder.encode(&x_test.select_rows(&ord_ids)?)?;
    let ord_targets = y_test.select_rows(&ord_ids)?;
    let mut ordinality = Vec::new();
    for kind in [DistanceKind::Cosine, DistanceKind::Euclidean] {
        match metrics::ordinality_report(
            &ord_features,
            &ord_targets,
            100_000,
            kind,
            sub_seed(seed, "ordinality-pairs"),
        ) {
            Ok(report) => ordinality.push(report),
            Err(Error::DegenerateInput(_)) | Err(Error::InstanceTooSmall { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    // Drift of each head direction, over post-epoch snapshots (the paper's
    // protocol starts at epoch 1).
    let theta_drift_max = if theta_snapshots.len() >= 3 {
        let table = track_theta_drift(&theta_snapshots[1..])?;
        let heads = table[0].len();
        (0..heads)
            .map(|h| table.iter().map(|row| row[h]).fold(0.0f64, f64::max))
            .collect()
    } else {
        vec![0.0; theta_snapshots[0].len()]
    };

    let z_update_alignment = match &head {
        HeadState::Mt(h) if h.output_dim() == 1 && config.epochs >= 1 => {
            let trace = track_z_updates(&z_snapshots)?;
            let theta = h.theta(0, 0);
            match metrics::update_direction_alignment(&trace, &theta) {
                Ok(v) => Some(v),
                Err(Error::DegenerateInput(_)) | Err(Error::InstanceTooSmall { .. }) => None,
                Err(e) => return Err(e),
            }
        }
        _ => None,
    };

    let head_spread = match &head {
        HeadState::Mt(h) if h.copies() >= 2 => {
            let z = encoder.encode(&x_test)?;
            Some(report_mt_head_spread(h, &z, &y_test)?)
        }
        _ => None,
    };

    let last = epoch_records.last().expect("at least the initial record");
    let record = RunRecord {
        config: ResolvedConfig {
            task: config.task,
            method: config.method,
            n_points: config.n_points,
            ambient_dim: config.ambient_dim,
            noise_sigma: dataset.noise_sigma,
            encoder_widths: widths,
            d: config.d,
            activation: config.activation,
            m: m_eff,
            lambda,
            gamma,
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            seed,
            scalar_target: scalar,
            noise_targets: config.noise_targets,
            classification_k: match &head {
                HeadState::Class { head, .. } => Some(head.classes()),
                _ => None,
            },
            class_range: match &head {
                HeadState::Class { range, .. } => Some(*range),
                _ => None,
            },
        },
        final_train_mse: last.train_mse,
        final_test_mse: last.test_mse,
        final_test_mae: last.test_mae,
        epochs: epoch_records,
        ordinality,
        theta_drift_max,
        z_update_alignment,
        head_spread,
        sinkhorn_converged_fraction: (total_solves > 0)
            .then(|| total_converged as f64 / total_solves as f64),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };

    std::fs::create_dir_all(&config.output_dir)?;
    record.save(&config.output_dir)?;
    write_metrics_csv(&config.output_dir, &record.epochs)?;
    write_ordinality_json(&config.output_dir, &record.ordinality)?;
    write_theta_trace(&config.output_dir, &head_names(&head), &theta_snapshots)?;
    write_z_trace(&config.output_dir, &probe_ids, &z_snapshots)?;

    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(dir: &std::path::Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.n_points = 120;
        cfg.encoder_widths = vec![16];
        cfg.d = 4;
        cfg.epochs = 2;
        cfg.batch_size = 32;
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn epochs_zero_changes_nothing_and_writes_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 0;
        let record = run_experiment(&cfg).unwrap();
        assert_eq!(record.epochs.len(), 1);
        assert_eq!(record.epochs[0].epoch, 0);
        assert!(dir.path().join("run.json").exists());
        assert!(dir.path().join("metrics.csv").exists());
        assert!(dir.path().join("trace_theta.csv").exists());
        assert!(dir.path().join("trace_z.csv").exists());
        assert!(dir.path().join("ordinality.json").exists());
    }

    #[test]
    fn identical_config_and_seed_reproduce_identical_records() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_config(dir_a.path());
        cfg_a.method = Method::Rot;
        cfg_a.lambda = Some(5.0);
        let mut cfg_b = cfg_a.clone();
        cfg_b.output_dir = dir_b.path().to_path_buf();
        let a = run_experiment(&cfg_a).unwrap();
        let b = run_experiment(&cfg_b).unwrap();
        assert!(a.equals_ignoring_wall_clock(&b));

        // The on-disk artifacts match byte for byte apart from the wall clock
        // inside run.json.
        for file in ["metrics.csv", "trace_theta.csv", "trace_z.csv", "ordinality.json"] {
            let fa = std::fs::read(dir_a.path().join(file)).unwrap();
            let fb = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(fa, fb, "{file} differs between identical runs");
        }
    }

    #[test]
    fn lambda_zero_rot_equals_baseline() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut baseline = tiny_config(dir_a.path());
        baseline.epochs = 3;
        let mut rot = baseline.clone();
        rot.method = Method::Rot;
        rot.lambda = Some(0.0);
        rot.output_dir = dir_b.path().to_path_buf();

        let a = run_experiment(&baseline).unwrap();
        let b = run_experiment(&rot).unwrap();
        // The transport loss is computed but contributes zero gradient, so
        // the trajectories coincide in exact arithmetic.
        assert_eq!(a.final_test_mse, b.final_test_mse);
        assert_eq!(a.final_train_mse, b.final_train_mse);
        assert_eq!(a.final_test_mae, b.final_test_mae);
        for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ea.train_mse, eb.train_mse);
            assert_eq!(ea.test_mse, eb.test_mse);
        }
    }

    #[test]
    fn theta_drift_trivial_cases() {
        // Frozen head: all distances zero.
        let snap = vec![vec![1.0, 2.0], vec![0.5, -0.5]];
        let snapshots = vec![snap.clone(), snap.clone(), snap];
        let table = track_theta_drift(&snapshots).unwrap();
        for row in &table {
            for &v in row {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
            }
        }
        // Final epoch entry is zero by definition.
        let moving = vec![
            vec![vec![1.0, 0.0]],
            vec![vec![0.8, 0.6]],
            vec![vec![0.0, 1.0]],
        ];
        let table = track_theta_drift(&moving).unwrap();
        assert_abs_diff_eq!(table[2][0], 0.0, epsilon = 1e-15);
        assert!(table[0][0] > table[1][0]);
    }

    #[test]
    fn theta_drift_matches_rotation_angles() {
        // A parameter rotating by 30 degrees per epoch: drift against the
        // final direction is 1 - cos(angle difference).
        let angle = |deg: f64| deg.to_radians();
        let snapshots: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|e| {
                let a = angle(30.0 * e as f64);
                vec![vec![a.cos(), a.sin()]]
            })
            .collect();
        let table = track_theta_drift(&snapshots).unwrap();
        for (e, row) in table.iter().enumerate() {
            let want = 1.0 - angle(30.0 * (3 - e) as f64).cos();
            assert_abs_diff_eq!(row[0], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn z_updates_frozen_encoder_gives_zero_displacements() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let trace = track_z_updates(&[a.clone(), a.clone(), a]).unwrap();
        for u in trace.updates() {
            assert!(u.iter().all(|&v| v == 0.0));
        }
    }

    /// A linear probe model trained one step with a frozen head displaces
    /// every representation exactly along theta.
    #[test]
    fn single_step_linear_probe_displacements_parallel_to_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut encoder = MlpEncoder::new(&[3, 3], crate::models::Activation::Tanh, &mut rng).unwrap();
        let head = MultiTargetHead::new(3, 1, 1, &mut rng).unwrap();
        let x = Matrix::from_rows(&[
            vec![0.4, -0.2, 0.9],
            vec![1.0, 0.5, -0.5],
            vec![-0.3, 0.8, 0.1],
            vec![0.0, -1.0, 0.6],
        ])
        .unwrap();
        let y = Matrix::column_from(&[1.0, -1.0, 0.5, 0.0]).unwrap();

        let before = encoder.encode(&x).unwrap();
        // One SGD step on the encoder only (head frozen).
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let enc = encoder.encode_on_tape(&mut tape, xn).unwrap();
        let taped = head.predict_on_tape(&mut tape, enc.output).unwrap();
        let loss = crate::models::mt_training_loss_from(
            &mut tape,
            taped.per_target,
            &duplicate_targets(&y, 1),
        )
        .unwrap();
        let grads = tape.backward(loss.node).unwrap();
        let mut sgd = Sgd::new(0.05, 0.0).unwrap();
        let mut params: Vec<&mut Matrix> = Vec::new();
        let mut grad_refs: Vec<&Matrix> = Vec::new();
        for (i, w) in encoder.weights.iter_mut().enumerate() {
            params.push(w);
            grad_refs.push(grads.wrt(enc.weight_nodes[i]));
        }
        for (i, b) in encoder.biases.iter_mut().enumerate() {
            params.push(b);
            grad_refs.push(grads.wrt(enc.bias_nodes[i]));
        }
        sgd.step(&mut params, &grad_refs).unwrap();
        let after = encoder.encode(&x).unwrap();

        let theta = head.theta(0, 0);
        let tn: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..4 {
            let disp: Vec<f64> = after.row(i).iter().zip(before.row(i)).map(|(a, b)| a - b).collect();
            let dn: f64 = disp.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dn == 0.0 {
                continue;
            }
            let cos: f64 =
                disp.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() / (dn * tn);
            assert!(
                (cos.abs() - 1.0).abs() < 1e-10,
                "sample {i}: |cos| = {}",
                cos.abs()
            );
        }
    }

    #[test]
    fn head_spread_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Duplicate heads: zero spread.
        let mut head = MultiTargetHead::new(2, 1, 2, &mut rng).unwrap();
        head.weights = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        head.bias = Matrix::zeros(1, 2);
        let z = Matrix::from_rows(&[vec![0.5, 2.0], vec![1.5, -1.0]]).unwrap();
        let y = Matrix::column_from(&[0.0, 1.0]).unwrap();
        let spread = report_mt_head_spread(&head, &z, &y).unwrap();
        assert_eq!(spread.std, Some(0.0));

        // Heads off by constants c1 and c2 on exact features.
        let mut head = MultiTargetHead::new(2, 1, 2, &mut rng).unwrap();
        head.weights = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        head.bias = Matrix::from_rows(&[vec![0.25, -0.75]]).unwrap();
        let z = Matrix::from_rows(&[vec![0.0, 9.0], vec![1.0, -3.0]]).unwrap();
        let y = Matrix::column_from(&[0.0, 1.0]).unwrap();
        let spread = report_mt_head_spread(&head, &z, &y).unwrap();
        assert_abs_diff_eq!(spread.per_head_mae[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(spread.per_head_mae[1], 0.75, epsilon = 1e-12);
    }
}
