//! Leading principal component of a set of vectors.

use crate::error::{Error, Result};
use crate::ndnum::Matrix;

/// Unit-norm leading eigenvector of the mean-centered covariance of the rows.
///
/// The sign is fixed by making the largest-magnitude coordinate positive
/// (lowest index wins ties).
pub fn pca_first_component(vectors: &Matrix) -> Result<Vec<f64>> {
    let (m, d) = vectors.shape();
    if m < 2 {
        return Err(Error::InstanceTooSmall {
            context: "pca_first_component",
            min: 2,
            got: m,
        });
    }

    // Mean-centered covariance, (m - 1) denominator.
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for (s, &v) in mean.iter_mut().zip(vectors.row(i)) {
            *s += v;
        }
    }
    for s in &mut mean {
        *s /= m as f64;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..m {
        let row = vectors.row(i);
        for a in 0..d {
            let va = row[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += va * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / (m - 1) as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }

    if cov.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput(
            "pca_first_component: zero covariance (all rows identical)".into(),
        ));
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(&cov, d);
    let lead = eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("d >= 1");

    let mut component: Vec<f64> = (0..d).map(|r| eigenvectors[r * d + lead]).collect();
    let norm: f64 = component.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut component {
        *v /= norm;
    }

    // Sign convention.
    let mut max_idx = 0;
    for (i, v) in component.iter().enumerate() {
        if v.abs() > component[max_idx].abs() {
            max_idx = i;
        }
    }
    if component[max_idx] < 0.0 {
        for v in &mut component {
            *v = -*v;
        }
    }
    Ok(component)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, d x d).
/// Returns (eigenvalues, eigenvector matrix with eigenvectors as columns).
fn jacobi_eigen(sym: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = sym.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }

    let scale = sym.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(a[p * d + q].abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let eigenvalues = (0..d).map(|i| a[i * d + i]).collect();
    (eigenvalues, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cosine_abs(u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        (dot / (nu * nv)).abs()
    }

    #[test]
    fn exact_line_recovers_direction() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = Matrix::from_rows(&pts).unwrap();
        let c = pca_first_component(&m).unwrap();
        let want = [1.0 / 5.0f64.sqrt(), 2.0 / 5.0f64.sqrt()];
        assert!((c[0] - want[0]).abs() < 1e-12);
        assert!((c[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn antipodal_points() {
        let v = [0.6, -0.8];
        let m = Matrix::from_rows(&[vec![v[0], v[1]], vec![-v[0], -v[1]]]).unwrap();
        let c = pca_first_component(&m).unwrap();
        // Sign convention: largest-magnitude coordinate positive, so (-0.6, 0.8).
        assert!((c[0] + 0.6).abs() < 1e-12);
        assert!((c[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_gaussian_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                vec![10.0 * a, 0.1 * b]
            })
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let c = pca_first_component(&m).unwrap();
        let cos = cosine_abs(&c, &[1.0, 0.0]);
        assert!(1.0 - cos < 0.05, "cosine distance {} too large", 1.0 - cos);
    }

    #[test]
    fn degenerate_input_errors() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            pca_first_component(&m),
            Err(Error::DegenerateInput(_))
        ));
        let single = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            pca_first_component(&single),
            Err(Error::InstanceTooSmall { .. })
        ));
    }

    #[test]
    fn jacobi_reproduces_known_eigensystem() {
        // [[2, 1], [1, 2]] has eigenpairs (3, (1,1)/sqrt2) and (1, (1,-1)/sqrt2).
        let (vals, vecs) = jacobi_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        let mut idx: Vec<usize> = vec![0, 1];
        idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        assert!((vals[idx[0]] - 3.0).abs() < 1e-12);
        assert!((vals[idx[1]] - 1.0).abs() < 1e-12);
        let lead: Vec<f64> = (0..2).map(|r| vecs[r * 2 + idx[0]]).collect();
        assert!(cosine_abs(&lead, &[1.0, 1.0]) > 1.0 - 1e-12);
    }
}
