//! Diagnostics: rank correlations between feature and label similarities,
//! the volume proxy for tightness, direction-drift tooling, and the
//! numerical check of the solution-space orthogonality property.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnum::{pca_first_component, Matrix, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Cosine,
    Euclidean,
}

/// How well feature distances preserve the ordering of label distances,
/// plus the mean feature distance as a volume proxy for tightness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalityReport {
    pub spearman: f64,
    pub kendall: f64,
    pub volume: f64,
    pub distance_kind: DistanceKind,
}

fn check_paired_vectors(a: &[f64], b: &[f64], context: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context,
            expected: format!("{} values", a.len()),
            got: format!("{}", b.len()),
        });
    }
    if a.len() < 2 {
        return Err(Error::InstanceTooSmall {
            context,
            min: 2,
            got: a.len(),
        });
    }
    Ok(())
}

/// Fractional ranks with ties assigned the average of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; m];
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // 1-based positions start+1 ..= end; their average is exactly
        // representable (a multiple of 0.5).
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let m = a.len() as f64;
    let mean_a: f64 = a.iter().sum::<f64>() / m;
    let mean_b: f64 = b.iter().sum::<f64>() / m;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::DegenerateInput(
            "pearson: constant input has no defined correlation".into(),
        ));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired_vectors(a, b, "spearman_rho")?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Kendall's tau-b (tie-corrected), via sorting and merge-based inversion
/// counting rather than pair enumeration.
///
/// tau_b = (C - D) / sqrt((n0 - n1) (n0 - n2)) with n0 = m(m-1)/2 and n1, n2
/// the tied-pair counts of each argument.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired_vectors(a, b, "kendall_tau")?;
    let m = a.len();
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    let tie_pairs = |t: u64| t * (t - 1) / 2;

    // Tied pairs in a, and pairs tied in both.
    let mut n1: u64 = 0;
    let mut nxy: u64 = 0;
    let mut run_x: u64 = 1;
    let mut run_xy: u64 = 1;
    for w in 1..m {
        if pairs[w].0 == pairs[w - 1].0 {
            run_x += 1;
            if pairs[w].1 == pairs[w - 1].1 {
                run_xy += 1;
            } else {
                nxy += tie_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += tie_pairs(run_x);
            run_x = 1;
            nxy += tie_pairs(run_xy);
            run_xy = 1;
        }
    }
    n1 += tie_pairs(run_x);
    nxy += tie_pairs(run_xy);

    // Merge sort on the second coordinate, counting discordant pairs: within
    // an x-tie group the ys are already ascending, so equal-x pairs are never
    // counted, and y-ties are not inversions under the strict comparison.
    let mut swaps: u64 = 0;
    let mut src: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut dst = vec![0.0f64; m];
    let mut width = 1;
    while width < m {
        let mut offset = 0;
        while offset < m {
            let mid = (offset + width).min(m);
            let end = (offset + 2 * width).min(m);
            let (mut i, mut j, mut k) = (offset, mid, offset);
            while i < mid || j < end {
                if i < mid && (j >= end || src[i] <= src[j]) {
                    dst[k] = src[i];
                    i += 1;
                } else {
                    swaps += (mid - i) as u64;
                    dst[k] = src[j];
                    j += 1;
                }
                k += 1;
            }
            offset = end;
        }
        std::mem::swap(&mut src, &mut dst);
        width *= 2;
    }

    // Tied pairs in b, from the now fully sorted ys.
    let mut n2: u64 = 0;
    let mut run_y: u64 = 1;
    for w in 1..m {
        if src[w] == src[w - 1] {
            run_y += 1;
        } else {
            n2 += tie_pairs(run_y);
            run_y = 1;
        }
    }
    n2 += tie_pairs(run_y);

    let n0 = tie_pairs(m as u64 + 1) - m as u64; // m(m-1)/2
    if n0 == n1 || n0 == n2 {
        return Err(Error::DegenerateInput(
            "kendall_tau: constant input has no defined correlation".into(),
        ));
    }
    let c_minus_d = n0 as i128 - n1 as i128 - n2 as i128 + nxy as i128 - 2 * swaps as i128;
    Ok(c_minus_d as f64 / (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt())
}

/// 1 - cos(u, v).
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_paired_vectors(u, v, "cosine_distance")?;
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine_distance: zero vector".into(),
        ));
    }
    Ok(1.0 - dot / (nu * nv))
}

fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Rank agreement between feature distances and label distances over sampled
/// row pairs (all pairs when there are at most `sample_pairs` of them), plus
/// the mean feature distance as the volume proxy.
///
/// `targets` may have any column count; label distance is the Euclidean
/// distance between target rows (|y_i - y_j| in the scalar case).
pub fn ordinality_report(
    features: &Matrix,
    targets: &Matrix,
    sample_pairs: usize,
    distance_kind: DistanceKind,
    seed: u64,
) -> Result<OrdinalityReport> {
    let n = features.rows();
    if targets.rows() != n {
        return Err(Error::Shape {
            context: "ordinality_report",
            expected: format!("{n} target rows"),
            got: format!("{}", targets.rows()),
        });
    }
    if n < 2 {
        return Err(Error::InstanceTooSmall {
            context: "ordinality_report",
            min: 2,
            got: n,
        });
    }
    if sample_pairs == 0 {
        return Err(Error::Domain("ordinality_report: sample_pairs must be positive".into()));
    }

    let total_pairs = n * (n - 1) / 2;
    let mut pair_list: Vec<(usize, usize)> = Vec::new();
    if total_pairs <= sample_pairs {
        for i in 0..n {
            for j in (i + 1)..n {
                pair_list.push((i, j));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while pair_list.len() < sample_pairs {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                pair_list.push((i.min(j), i.max(j)));
            }
        }
    }

    let mut label_d = Vec::with_capacity(pair_list.len());
    let mut feature_d = Vec::with_capacity(pair_list.len());
    for &(i, j) in &pair_list {
        label_d.push(euclidean(targets.row(i), targets.row(j)));
        let fd = match distance_kind {
            DistanceKind::Euclidean => euclidean(features.row(i), features.row(j)),
            DistanceKind::Cosine => cosine_distance(features.row(i), features.row(j))?,
        };
        feature_d.push(fd);
    }

    let volume = feature_d.iter().sum::<f64>() / feature_d.len() as f64;
    Ok(OrdinalityReport {
        spearman: spearman_rho(&label_d, &feature_d)?,
        kendall: kendall_tau(&label_d, &feature_d)?,
        volume,
        distance_kind,
    })
}

/// A bag of update vectors (parameter or representation displacements).
#[derive(Debug, Clone, Default)]
pub struct DirectionTrace {
    updates: Vec<Vec<f64>>,
}

impl DirectionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_update(&mut self, update: Vec<f64>) -> Result<()> {
        if update.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DirectionTrace::push_update"));
        }
        if let Some(first) = self.updates.first() {
            if first.len() != update.len() {
                return Err(Error::Shape {
                    context: "DirectionTrace::push_update",
                    expected: format!("{} components", first.len()),
                    got: format!("{}", update.len()),
                });
            }
        }
        self.updates.push(update);
        Ok(())
    }

    /// Build from consecutive checkpoints: update_i = checkpoint[i+1] - checkpoint[i].
    pub fn from_checkpoints(checkpoints: &[Vec<f64>]) -> Result<Self> {
        let mut trace = DirectionTrace::new();
        for w in checkpoints.windows(2) {
            let diff = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            trace.push_update(diff)?;
        }
        Ok(trace)
    }

    pub fn updates(&self) -> &[Vec<f64>] {
        &self.updates
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }
}

/// Cosine distance between the first principal component of the update
/// vectors and the reference direction, sign-insensitive (the better of
/// +reference and -reference).
pub fn update_direction_alignment(trace: &DirectionTrace, reference: &[f64]) -> Result<f64> {
    if trace.len() < 2 {
        return Err(Error::InstanceTooSmall {
            context: "update_direction_alignment",
            min: 2,
            got: trace.len(),
        });
    }
    let m = Matrix::from_rows(trace.updates())?;
    let component = pca_first_component(&m)?;
    let plus = cosine_distance(&component, reference)?;
    let minus = 2.0 - plus; // 1 - cos == (1 + cos) with the sign flipped
    Ok(plus.min(minus))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskLoss {
    Mse,
    Mae,
}

/// Gradient of the per-sample regression loss w.r.t. the feature vector for a
/// linear head: L'(theta.z + bias - y) * theta.
pub fn regression_feature_gradient(
    theta: &[f64],
    bias: f64,
    z: &[f64],
    y: f64,
    loss: TaskLoss,
) -> Result<Vec<f64>> {
    if theta.len() != z.len() {
        return Err(Error::Shape {
            context: "regression_feature_gradient",
            expected: format!("{} components", theta.len()),
            got: format!("{}", z.len()),
        });
    }
    let mut tape = Tape::new();
    let zn = tape.leaf(Matrix::from_vec(1, theta.len(), z.to_vec())?);
    let th = tape.leaf(Matrix::from_vec(theta.len(), 1, theta.to_vec())?);
    let b = tape.leaf(Matrix::from_vec(1, 1, vec![bias])?);
    let lin = tape.matmul(zn, th)?;
    let pred = tape.add(lin, b)?;
    let target = tape.leaf(Matrix::from_vec(1, 1, vec![y])?);
    let diff = tape.sub(pred, target)?;
    let loss_node = match loss {
        TaskLoss::Mse => {
            let sq = tape.mul(diff, diff)?;
            tape.sum(sq)?
        }
        TaskLoss::Mae => {
            let a = tape.abs(diff)?;
            tape.sum(a)?
        }
    };
    let grads = tape.backward(loss_node)?;
    Ok(grads.wrt(zn).row(0).to_vec())
}

/// Numerical check of the solution-space orthogonality property: for points
/// z'_i, z'_j that the frozen head maps to the same prediction as z_i, the
/// loss gradient at z_i is orthogonal to z'_i - z'_j.
///
/// Returns |grad(z_i) . (z'_i - z'_j)|; callers assert it is below 1e-10.
/// The same-prediction precondition is verified to 1e-9.
pub fn solution_space_check(
    theta: &[f64],
    bias: f64,
    z_i: &[f64],
    z_prime_i: &[f64],
    z_prime_j: &[f64],
    y_i: f64,
    loss: TaskLoss,
) -> Result<f64> {
    let d = theta.len();
    if z_i.len() != d || z_prime_i.len() != d || z_prime_j.len() != d {
        return Err(Error::Shape {
            context: "solution_space_check",
            expected: format!("{d} components"),
            got: format!("{}/{}/{}", z_i.len(), z_prime_i.len(), z_prime_j.len()),
        });
    }
    let project = |z: &[f64]| -> f64 { theta.iter().zip(z).map(|(t, v)| t * v).sum() };
    let base = project(z_i);
    for (name, z) in [("z'_i", z_prime_i), ("z'_j", z_prime_j)] {
        let drift = (project(z) - base).abs();
        if drift > 1e-9 {
            return Err(Error::Contract(format!(
                "solution_space_check: {name} is not in the solution space of z_i (prediction differs by {drift:e})"
            )));
        }
    }
    let grad = regression_feature_gradient(theta, bias, z_i, y_i, loss)?;
    let dot: f64 = grad
        .iter()
        .zip(z_prime_i.iter().zip(z_prime_j))
        .map(|(g, (a, b))| g * (a - b))
        .sum();
    Ok(dot.abs())
}
