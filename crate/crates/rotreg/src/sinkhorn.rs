//! Self entropic optimal transport with a hollow diagonal.
//!
//! Solves, for a point set against itself with uniform marginals p_i = 1/n,
//!
//! ```text
//! min_T  <C, T> + gamma * sum_ij T_ij log T_ij
//! s.t.   T 1 = p,  T' 1 = p,  T_ii = 0
//! ```
//!
//! The no-self-transport constraint is folded into the kernel by assigning the
//! diagonal an effective cost of +inf (log-kernel entry -inf), which keeps the
//! standard Sinkhorn update shape. All scaling runs in the log domain with
//! log-sum-exp, so small gamma values do not overflow the kernel.

use crate::error::{Error, Result};
use crate::ndnum::Matrix;

/// Solver parameters for [`self_transport`].
#[derive(Debug, Clone)]
pub struct SelfOtConfig {
    gamma: f64,
    max_iters: usize,
    tol: f64,
}

impl SelfOtConfig {
    pub const DEFAULT_MAX_ITERS: usize = 1000;
    pub const DEFAULT_TOL: f64 = 1e-9;

    /// gamma must be strictly positive and finite.
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Domain(format!(
                "SelfOtConfig: gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(SelfOtConfig {
            gamma,
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
        })
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters.max(1);
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::Domain(format!(
                "SelfOtConfig: tol must be positive and finite, got {tol}"
            )));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }
}

/// A transport plan together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// n x n plan; zero diagonal, entries >= 0.
    pub plan: Matrix,
    pub iterations_used: usize,
    /// L1 violation of the uniform marginals: sum_i |row_i - 1/n| + sum_j |col_j - 1/n|.
    pub marginal_violation: f64,
    pub converged: bool,
}

fn require_square_cost(cost: &Matrix, context: &'static str) -> Result<usize> {
    let (r, c) = cost.shape();
    if r != c {
        return Err(Error::Shape {
            context,
            expected: "square cost matrix".into(),
            got: format!("{r}x{c}"),
        });
    }
    if r < 2 {
        return Err(Error::InstanceTooSmall {
            context,
            min: 2,
            got: r,
        });
    }
    Ok(r)
}

fn l1_marginal_violation(plan: &Matrix) -> f64 {
    let n = plan.rows();
    let p = 1.0 / n as f64;
    let rows: f64 = plan.row_sums().iter().map(|s| (s - p).abs()).sum();
    let cols: f64 = plan.col_sums().iter().map(|s| (s - p).abs()).sum();
    rows + cols
}

/// Log-sum-exp over a slice; returns -inf for an all--inf slice.
fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Potentials with |value| below this bound exponentiate safely, so the
/// log-sum-exp can be evaluated through the factored form
/// `ln(sum_j exp(log_k_ij) * exp(pot_j))` with the kernel exponentials
/// precomputed. Beyond the bound the max-shifted evaluation takes over.
const FACTORED_LSE_BOUND: f64 = 600.0;

/// One scaling pass: `out[i] = LSE_j(log_k[i*n + j] + pot[j])`.
///
/// `kernel` must hold `exp(log_k)` entrywise. The factored fast path and the
/// shifted slow path compute the same quantity; the fast path is used only
/// while every intermediate stays in range.
fn lse_pass(
    log_k: &[f64],
    kernel: &[f64],
    pot: &[f64],
    out: &mut [f64],
    buf: &mut [f64],
    n: usize,
) {
    let in_range = pot.iter().all(|v| v.abs() <= FACTORED_LSE_BOUND)
        && kernel.iter().all(|v| v.is_finite());
    if in_range {
        for (b, &p) in buf.iter_mut().zip(pot) {
            *b = p.exp();
        }
        let mut ok = true;
        for i in 0..n {
            let row = &kernel[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (&k, &w) in row.iter().zip(buf.iter()) {
                acc += k * w;
            }
            let v = acc.ln();
            out[i] = v;
            // Total underflow or overflow sends this pass to the exact
            // shifted evaluation.
            if !v.is_finite() {
                ok = false;
                break;
            }
        }
        if ok {
            return;
        }
    }
    for i in 0..n {
        let row = &log_k[i * n..(i + 1) * n];
        for ((b, &k), &p) in buf.iter_mut().zip(row).zip(pot) {
            *b = k + p;
        }
        out[i] = logsumexp(buf);
    }
}

/// Entropic self-transport plan for the given cost matrix.
///
/// Returns the current plan with `converged = false` when the marginal
/// violation is still above `tol` after `max_iters`; callers decide whether
/// that is acceptable. NaN or overflow inside the updates is an error
/// carrying the iteration index.
pub fn self_transport(cost: &Matrix, config: &SelfOtConfig) -> Result<TransportPlan> {
    let n = require_square_cost(cost, "self_transport")?;
    let log_p = -(n as f64).ln();

    // log K with the hollow diagonal, its transpose for the column pass, and
    // their entrywise exponentials for the factored log-sum-exp.
    let mut log_k = vec![0.0f64; n * n];
    let mut log_k_t = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = if i == j {
                f64::NEG_INFINITY
            } else {
                -cost.get(i, j) / config.gamma
            };
            log_k[i * n + j] = v;
            log_k_t[j * n + i] = v;
        }
    }
    let kernel: Vec<f64> = log_k.iter().map(|&v| v.exp()).collect();
    let kernel_t: Vec<f64> = log_k_t.iter().map(|&v| v.exp()).collect();

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    // row_lse[i] = LSE_j(log_k[i][j] + g[j]) for the current g.
    let mut row_lse = vec![0.0f64; n];
    let mut col_lse = vec![0.0f64; n];
    let mut buf = vec![0.0f64; n];

    lse_pass(&log_k, &kernel, &g, &mut row_lse, &mut buf, n);

    let mut iterations_used = 0;
    let mut reached_tol = false;
    for iter in 1..=config.max_iters {
        iterations_used = iter;

        // Row scaling.
        for (fi, &lse) in f.iter_mut().zip(&row_lse) {
            *fi = log_p - lse;
        }
        // Column scaling.
        lse_pass(&log_k_t, &kernel_t, &f, &mut col_lse, &mut buf, n);
        for (gj, &lse) in g.iter_mut().zip(&col_lse) {
            *gj = log_p - lse;
        }
        if f.iter().any(|v| !v.is_finite()) || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure {
                what: "self_transport",
                iteration: iter,
            });
        }

        // Columns are exact after the g pass; the residual row violation is
        // available from the next row log-sum-exp at no extra cost.
        lse_pass(&log_k, &kernel, &g, &mut row_lse, &mut buf, n);
        let p = (log_p).exp();
        let mut violation = 0.0;
        for (fi, lse) in f.iter().zip(&row_lse) {
            violation += ((fi + lse).exp() - p).abs();
        }
        if !violation.is_finite() {
            return Err(Error::NumericalFailure {
                what: "self_transport",
                iteration: iter,
            });
        }
        if violation <= config.tol {
            reached_tol = true;
            break;
        }
    }

    // Materialize the plan; diagonal exactly zero.
    let mut plan = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = (f[i] + log_k[i * n + j] + g[j]).exp();
                if !v.is_finite() {
                    return Err(Error::NumericalFailure {
                        what: "self_transport",
                        iteration: iterations_used,
                    });
                }
                plan.set(i, j, v);
            }
        }
    }

    let marginal_violation = l1_marginal_violation(&plan);
    Ok(TransportPlan {
        converged: reached_tol && marginal_violation <= config.tol,
        plan,
        iterations_used,
        marginal_violation,
    })
}

/// Total transport cost `<C, T>`.
pub fn transport_cost(cost: &Matrix, plan: &TransportPlan) -> Result<f64> {
    cost.frobenius_dot(&plan.plan)
}

/// Diagnostic gamma -> 0 reference: each row puts its full mass 1/n on the
/// cheapest off-diagonal destination (ties broken by lowest index). Satisfies
/// row marginals only, so it is generally not a feasible plan; the violation
/// field reports the truth.
pub fn nearest_neighbor_plan(cost: &Matrix) -> Result<TransportPlan> {
    let n = require_square_cost(cost, "nearest_neighbor_plan")?;
    let p = 1.0 / n as f64;
    let mut plan = Matrix::zeros(n, n);
    for i in 0..n {
        let mut best = usize::MAX;
        let mut best_cost = f64::INFINITY;
        for j in 0..n {
            if j != i && cost.get(i, j) < best_cost {
                best = j;
                best_cost = cost.get(i, j);
            }
        }
        plan.set(i, best, p);
    }
    let marginal_violation = l1_marginal_violation(&plan);
    Ok(TransportPlan {
        converged: marginal_violation <= SelfOtConfig::DEFAULT_TOL,
        plan,
        iterations_used: 0,
        marginal_violation,
    })
}

/// Entropy -sum T_ij log T_ij with the 0 log 0 = 0 convention.
pub fn plan_entropy(plan: &Matrix) -> f64 {
    plan.data()
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| -t * t.ln())
        .sum()
}

/// Fraction of each row's mass placed on that row's nearest neighbor,
/// averaged over rows. Approaches 1 as gamma -> 0.
pub fn nearest_neighbor_mass_fraction(cost: &Matrix, plan: &TransportPlan) -> Result<f64> {
    let n = require_square_cost(cost, "nearest_neighbor_mass_fraction")?;
    let reference = nearest_neighbor_plan(cost)?;
    let mut total = 0.0;
    for i in 0..n {
        let row_mass: f64 = plan.plan.row(i).iter().sum();
        if row_mass <= 0.0 {
            continue;
        }
        let nn = reference
            .plan
            .row(i)
            .iter()
            .position(|&v| v > 0.0)
            .expect("nearest neighbor row has mass");
        total += plan.plan.get(i, nn) / row_mass;
    }
    Ok(total / n as f64)
}
