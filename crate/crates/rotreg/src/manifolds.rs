//! Synthetic 3-d manifolds for the coordinate-prediction task, noise
//! injection, an external point-cloud loader, and train/test splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ndnum::Matrix;

/// A coordinate-prediction dataset: noisy inputs, clean targets.
#[derive(Debug, Clone)]
pub struct ManifoldDataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub name: String,
    pub noise_sigma: f64,
    pub seed: u64,
}

const TAU: f64 = std::f64::consts::TAU;

fn require_positive_count(n: usize, context: &'static str) -> Result<()> {
    if n == 0 {
        Err(Error::Domain(format!("{context}: need at least 1 point")))
    } else {
        Ok(())
    }
}

/// Points (r cos t, r sin t, 0) with t uniform on [0, 2pi).
pub fn sample_circle(n: usize, radius: f64, seed: u64) -> Result<Matrix> {
    require_positive_count(n, "sample_circle")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(n, 3);
    for i in 0..n {
        let t = rng.gen_range(0.0..TAU);
        m.set(i, 0, radius * t.cos());
        m.set(i, 1, radius * t.sin());
    }
    Ok(m)
}

/// Deterministic circle with evenly spaced angles t_k = 2 pi k / n.
pub fn sample_circle_stratified(n: usize, radius: f64) -> Result<Matrix> {
    require_positive_count(n, "sample_circle_stratified")?;
    let mut m = Matrix::zeros(n, 3);
    for i in 0..n {
        let t = TAU * i as f64 / n as f64;
        m.set(i, 0, radius * t.cos());
        m.set(i, 1, radius * t.sin());
    }
    Ok(m)
}

fn torus_point(big_r: f64, small_r: f64, u: f64, v: f64) -> [f64; 3] {
    let ring = big_r + small_r * v.cos();
    [ring * u.cos(), ring * u.sin(), small_r * v.sin()]
}

/// Torus ((R + r cos v) cos u, (R + r cos v) sin u, r sin v) with u, v
/// uniform on [0, 2pi). Requires R > r > 0.
pub fn sample_torus(n: usize, big_r: f64, small_r: f64, seed: u64) -> Result<Matrix> {
    require_positive_count(n, "sample_torus")?;
    if !(big_r > small_r && small_r > 0.0) {
        return Err(Error::Domain(format!(
            "sample_torus: need R > r > 0, got R={big_r}, r={small_r}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(n, 3);
    for i in 0..n {
        let u = rng.gen_range(0.0..TAU);
        let v = rng.gen_range(0.0..TAU);
        let p = torus_point(big_r, small_r, u, v);
        m.row_mut(i).copy_from_slice(&p);
    }
    Ok(m)
}

/// Deterministic torus grid: nu x nv evenly spaced (u, v) angles starting at
/// zero, so `nv = 1` yields the v = 0 slice (a circle of radius R + r).
pub fn sample_torus_grid(nu: usize, nv: usize, big_r: f64, small_r: f64) -> Result<Matrix> {
    require_positive_count(nu * nv, "sample_torus_grid")?;
    if !(big_r > small_r && small_r > 0.0) {
        return Err(Error::Domain(format!(
            "sample_torus_grid: need R > r > 0, got R={big_r}, r={small_r}"
        )));
    }
    let mut m = Matrix::zeros(nu * nv, 3);
    for iu in 0..nu {
        for iv in 0..nv {
            let u = TAU * iu as f64 / nu as f64;
            let v = TAU * iv as f64 / nv as f64;
            let p = torus_point(big_r, small_r, u, v);
            m.row_mut(iu * nv + iv).copy_from_slice(&p);
        }
    }
    Ok(m)
}

/// Built-in S-curve so the suite runs with no external downloads:
/// (sin t, u, sign(t) (cos t - 1)) with t uniform on [-3pi/2, 3pi/2] and u
/// uniform on [-1, 1].
pub fn sample_s_curve(n: usize, seed: u64) -> Result<Matrix> {
    require_positive_count(n, "sample_s_curve")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 1.5 * std::f64::consts::PI;
    let mut m = Matrix::zeros(n, 3);
    for i in 0..n {
        let t = rng.gen_range(-half..half);
        m.set(i, 0, t.sin());
        m.set(i, 1, rng.gen_range(-1.0..1.0));
        m.set(i, 2, t.signum() * (t.cos() - 1.0));
    }
    Ok(m)
}

/// Embed targets into a higher-dimensional ambient space through a random
/// orthonormal map and add isotropic Gaussian noise in every ambient
/// coordinate: X = Y Q' + eps with Q an ambient_dim x k_y orthonormal frame.
///
/// With `ambient_dim == targets.cols()` the frame is the identity, so the
/// inputs are exactly the noisy coordinates X = Y + eps. Larger ambient
/// dimensions keep the recoverable information identical (the noise is
/// isotropic) while making the estimation problem harder, which is the
/// regime where representation regularizers matter.
pub fn embed_with_ambient_noise(
    targets: &Matrix,
    ambient_dim: usize,
    sigma: f64,
    seed: u64,
) -> Result<Matrix> {
    let k = targets.cols();
    if ambient_dim < k {
        return Err(Error::Domain(format!(
            "embed_with_ambient_noise: ambient_dim {ambient_dim} below target dimension {k}"
        )));
    }
    if ambient_dim == k {
        return add_noise(targets, sigma, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Orthonormal frame via Gram-Schmidt on Gaussian columns.
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut v: Vec<f64> = (0..ambient_dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z
            })
            .collect();
        for u in &frame {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        frame.push(v);
    }
    let mut embedded = Matrix::zeros(targets.rows(), ambient_dim);
    for i in 0..targets.rows() {
        let y = targets.row(i);
        let row = embedded.row_mut(i);
        for (c, axis) in frame.iter().enumerate() {
            for (r, a) in row.iter_mut().zip(axis) {
                *r += y[c] * a;
            }
        }
    }
    add_noise(&embedded, sigma, rng.gen())
}

/// X = Y + eps with eps i.i.d. Gaussian(0, sigma^2) per coordinate.
pub fn add_noise(targets: &Matrix, sigma: f64, seed: u64) -> Result<Matrix> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "add_noise: sigma must be non-negative, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = targets.clone();
    if sigma > 0.0 {
        for v in out.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    Ok(out)
}

/// Center each coordinate at zero, then scale all coordinates by one global
/// factor so the largest absolute value is 1.
pub fn normalize_point_cloud(points: &mut Matrix) -> Result<()> {
    let (n, d) = points.shape();
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (s, &v) in means.iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for s in &mut means {
        *s /= n as f64;
    }
    for i in 0..n {
        for (v, &m) in points.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let scale = points.max_abs();
    if scale == 0.0 {
        return Err(Error::DegenerateInput(
            "normalize_point_cloud: all points identical".into(),
        ));
    }
    for v in points.data_mut() {
        *v /= scale;
    }
    Ok(())
}

/// Read an `x,y,z` CSV (optional header) and normalize the coordinates to
/// zero mean and max-abs 1. Malformed rows report their line number.
pub fn load_point_cloud(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if values.len() != 3 {
                    return Err(Error::Parse {
                        path: display,
                        line: idx + 1,
                        msg: format!("expected 3 coordinates, got {}", values.len()),
                    });
                }
                rows.push(values);
            }
            Err(e) => {
                if idx == 0 && rows.is_empty() {
                    continue; // header line
                }
                return Err(Error::Parse {
                    path: display,
                    line: idx + 1,
                    msg: format!("bad coordinate: {e}"),
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "{display}: no data rows in point cloud"
        )));
    }
    let mut m = Matrix::from_rows(&rows)?;
    normalize_point_cloud(&mut m)?;
    Ok(m)
}

/// Write points in the same `x,y,z` CSV format (with header).
pub fn save_point_cloud(path: &Path, points: &Matrix) -> Result<()> {
    if points.cols() != 3 {
        return Err(Error::Shape {
            context: "save_point_cloud",
            expected: "3 columns".into(),
            got: format!("{}", points.cols()),
        });
    }
    let mut out = String::from("x,y,z\n");
    for i in 0..points.rows() {
        let r = points.row(i);
        out.push_str(&format!("{},{},{}\n", r[0], r[1], r[2]));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write an arbitrary-width matrix as CSV with `c0..c{d-1}` headers; used for
/// inputs whose ambient dimension exceeds 3.
pub fn save_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    for j in 0..m.cols() {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&format!("c{j}"));
    }
    out.push('\n');
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Seeded 80/20 shuffle split; the two index sets are disjoint and exhaustive.
pub fn train_test_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_train = (n as f64 * 0.8).round() as usize;
    let test = indices.split_off(n_train);
    (indices, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn circle_points_satisfy_equation() {
        let m = sample_circle(200, 1.5, 3).unwrap();
        for i in 0..200 {
            let r = m.row(i);
            assert_abs_diff_eq!(r[0] * r[0] + r[1] * r[1], 1.5 * 1.5, epsilon = 1e-12);
            assert_eq!(r[2], 0.0);
        }
    }

    #[test]
    fn stratified_circle_four_points() {
        let m = sample_circle_stratified(4, 2.0).unwrap();
        let want = [
            [2.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [-2.0, 0.0, 0.0],
            [0.0, -2.0, 0.0],
        ];
        for i in 0..4 {
            for j in 0..3 {
                assert_abs_diff_eq!(m.get(i, j), want[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn circle_sample_mean_is_near_origin() {
        let n = 20_000;
        let m = sample_circle(n, 1.0, 7).unwrap();
        // Per-coordinate std is at most r/sqrt(2); 4 sigma / sqrt(n) bound.
        let bound = 4.0 / (n as f64).sqrt();
        for j in 0..3 {
            let mean: f64 = (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64;
            assert!(mean.abs() < bound, "coordinate {j} mean {mean}");
        }
    }

    #[test]
    fn torus_points_satisfy_implicit_equation() {
        let (big_r, small_r) = (1.0, 0.4);
        let m = sample_torus(300, big_r, small_r, 11).unwrap();
        for i in 0..300 {
            let r = m.row(i);
            let ring = (r[0] * r[0] + r[1] * r[1]).sqrt() - big_r;
            assert_abs_diff_eq!(ring * ring + r[2] * r[2], small_r * small_r, epsilon = 1e-10);
            assert!(r[2].abs() <= small_r + 1e-12);
        }
    }

    #[test]
    fn torus_grid_slice_is_outer_circle() {
        let m = sample_torus_grid(8, 1, 1.0, 0.25).unwrap();
        for i in 0..8 {
            let r = m.row(i);
            assert_abs_diff_eq!((r[0] * r[0] + r[1] * r[1]).sqrt(), 1.25, epsilon = 1e-12);
            assert_abs_diff_eq!(r[2], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn torus_rejects_bad_radii() {
        assert!(matches!(
            sample_torus(10, 0.5, 0.5, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn noise_zero_sigma_is_identity() {
        let y = sample_circle(50, 1.0, 1).unwrap();
        let x = add_noise(&y, 0.0, 2).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn noise_is_deterministic_given_seed() {
        let y = sample_circle(50, 1.0, 1).unwrap();
        let a = add_noise(&y, 0.3, 9).unwrap();
        let b = add_noise(&y, 0.3, 9).unwrap();
        assert_eq!(a, b);
        let c = add_noise(&y, 0.3, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_empirical_std_matches_sigma() {
        let n = 10_000;
        let y = Matrix::zeros(n, 3);
        let sigma = 0.25;
        let x = add_noise(&y, sigma, 5).unwrap();
        for j in 0..3 {
            let var: f64 = (0..n).map(|i| x.get(i, j) * x.get(i, j)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            assert!(
                (std - sigma).abs() / sigma < 0.05,
                "coordinate {j}: std {std} vs sigma {sigma}"
            );
        }
    }

    #[test]
    fn point_cloud_two_point_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        std::fs::write(&path, "x,y,z\n0,0,0\n2,0,0\n").unwrap();
        let m = load_point_cloud(&path).unwrap();
        assert_eq!(m.rows(), 2);
        for j in 0..3 {
            let mean: f64 = (0..2).map(|i| m.get(i, j)).sum::<f64>() / 2.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(m.max_abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn point_cloud_empty_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(load_point_cloud(&path).is_err());
        std::fs::write(&path, "x,y,z\n").unwrap();
        assert!(load_point_cloud(&path).is_err());
    }

    #[test]
    fn point_cloud_malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "0,0,0\n1,oops,2\n").unwrap();
        match load_point_cloud(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn point_cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        // Already normalized data survives the load-time normalization.
        let mut pts = sample_circle(64, 1.0, 21).unwrap();
        normalize_point_cloud(&mut pts).unwrap();
        save_point_cloud(&path, &pts).unwrap();
        let back = load_point_cloud(&path).unwrap();
        for (a, b) in pts.data().iter().zip(back.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn ambient_embedding_is_isometric_plus_noise() {
        let y = sample_circle(400, 1.0, 3).unwrap();
        // Noise-free embedding preserves pairwise distances (orthonormal map).
        let x = embed_with_ambient_noise(&y, 12, 0.0, 5).unwrap();
        assert_eq!(x.cols(), 12);
        let dy = y.pairwise_euclidean().unwrap();
        let dx = x.pairwise_euclidean().unwrap();
        for (a, b) in dy.data().iter().zip(dx.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        // Ambient dim equal to target dim reduces to plain noisy coordinates.
        let plain = embed_with_ambient_noise(&y, 3, 0.1, 7).unwrap();
        assert_eq!(plain, add_noise(&y, 0.1, 7).unwrap());
        // Per-coordinate noise level.
        let noisy = embed_with_ambient_noise(&y, 12, 0.25, 9).unwrap();
        let clean = embed_with_ambient_noise(&y, 12, 0.0, 9).unwrap();
        let n = (noisy.rows() * noisy.cols()) as f64;
        let var: f64 = noisy
            .data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        assert!((var.sqrt() - 0.25).abs() / 0.25 < 0.05);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let (train, test) = train_test_split(103, 4);
        assert_eq!(train.len() + test.len(), 103);
        let mut seen = vec![false; 103];
        for &i in train.iter().chain(&test) {
            assert!(!seen[i], "index {i} appears twice");
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
        // 80/20.
        assert_eq!(train.len(), 82);
    }

    #[test]
    fn samplers_are_deterministic() {
        assert_eq!(sample_circle(10, 1.0, 5).unwrap(), sample_circle(10, 1.0, 5).unwrap());
        assert_eq!(
            sample_torus(10, 1.0, 0.5, 5).unwrap(),
            sample_torus(10, 1.0, 0.5, 5).unwrap()
        );
        assert_eq!(sample_s_curve(10, 5).unwrap(), sample_s_curve(10, 5).unwrap());
    }

    #[test]
    fn s_curve_coordinates_are_bounded() {
        let m = sample_s_curve(500, 2).unwrap();
        for i in 0..500 {
            let r = m.row(i);
            assert!(r[0].abs() <= 1.0);
            assert!(r[1].abs() <= 1.0);
            assert!(r[2].abs() <= 2.0);
        }
    }
}
