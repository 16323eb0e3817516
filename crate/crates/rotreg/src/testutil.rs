//! Shared oracles for unit tests. Compiled only for `cfg(test)`; each oracle
//! is an independent straightforward implementation, never the production
//! code path it checks.

use crate::ndnum::Matrix;

/// Plain-domain Sinkhorn kernel scaling with a hollow diagonal, run to a
/// 1e-12 L1 marginal violation.
pub fn plain_sinkhorn_oracle(cost: &Matrix, gamma: f64) -> Matrix {
    let n = cost.rows();
    let p = 1.0 / n as f64;
    let mut kernel = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kernel.set(i, j, (-cost.get(i, j) / gamma).exp());
            }
        }
    }
    let mut u = vec![1.0f64; n];
    let mut v = vec![1.0f64; n];
    let materialize = |u: &[f64], v: &[f64]| {
        let mut plan = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                plan.set(i, j, u[i] * kernel.get(i, j) * v[j]);
            }
        }
        plan
    };
    for _ in 0..200_000 {
        for i in 0..n {
            let kv: f64 = (0..n).map(|j| kernel.get(i, j) * v[j]).sum();
            u[i] = p / kv;
        }
        for j in 0..n {
            let ku: f64 = (0..n).map(|i| kernel.get(i, j) * u[i]).sum();
            v[j] = p / ku;
        }
        let plan = materialize(&u, &v);
        let rows: f64 = plan.row_sums().iter().map(|s| (s - p).abs()).sum();
        let cols: f64 = plan.col_sums().iter().map(|s| (s - p).abs()).sum();
        if rows + cols <= 1e-12 {
            return plan;
        }
    }
    materialize(&u, &v)
}

/// Double-loop Frobenius inner product.
pub fn frobenius_oracle(a: &Matrix, b: &Matrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            acc += a.get(i, j) * b.get(i, j);
        }
    }
    acc
}
