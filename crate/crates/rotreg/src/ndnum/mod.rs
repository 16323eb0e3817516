//! Dense numeric substrate: matrices, a reverse-mode differentiation tape,
//! and the leading-principal-component helper.

mod matrix;
mod pca;
mod tape;

pub use matrix::Matrix;
pub use pca::pca_first_component;
pub use tape::{Gradients, NodeId, Tape};

/// Central-difference gradient of a scalar function of a flat parameter
/// vector. Used as the independent oracle for gradient checks.
pub fn finite_difference_gradient(params: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Relative L2 error between a gradient and its oracle.
pub fn relative_l2_error(got: &[f64], want: &[f64]) -> f64 {
    let norm: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let err: f64 = got
        .iter()
        .zip(want)
        .map(|(g, w)| (g - w) * (g - w))
        .sum::<f64>()
        .sqrt();
    err / norm
}
