//! Define-by-run reverse-mode differentiation.
//!
//! A `Tape` records primitive matrix operations as they execute; `backward`
//! replays them in reverse topological order (which, for an append-only tape,
//! is simply reverse insertion order) and accumulates vector-Jacobian
//! products. The tape is rebuilt for every training step.

use crate::error::{Error, Result};
use crate::ndnum::Matrix;

/// Handle to a value recorded on a tape.
pub type NodeId = usize;

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    PairwiseEuclidean(NodeId),
    LogSumExpRows(NodeId),
    GatherCols(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by a backward pass. Nodes with no path to the
/// loss have an exactly zero gradient.
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> &Matrix {
        &self.grads[id]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "scalar: node has shape {}x{}",
                v.rows(),
                v.cols()
            )));
        }
        Ok(v.get(0, 0))
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// Record an input value. Leaves carry no dependencies; whether they act
    /// as trainable parameters or constants is decided by who reads their
    /// gradient afterwards.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.value(a).scale(factor)?;
        Ok(self.push(Op::Scale(a, factor), v))
    }

    /// Broadcast-add a 1 x d row (bias) to every row of an n x d node.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row_broadcast(self.value(row))?;
        Ok(self.push(Op::AddRow(a, row), v))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map("tanh", f64::tanh)?;
        Ok(self.push(Op::Tanh(a), v))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map("relu", |x| x.max(0.0))?;
        Ok(self.push(Op::Relu(a), v))
    }

    /// Element-wise absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map("abs", f64::abs)?;
        Ok(self.push(Op::Abs(a), v))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).sum()?;
        let v = Matrix::from_vec(1, 1, vec![s])?;
        Ok(self.push(Op::Sum(a), v))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).mean()?;
        let v = Matrix::from_vec(1, 1, vec![s])?;
        Ok(self.push(Op::Mean(a), v))
    }

    /// n x d points to the n x n matrix of pairwise Euclidean distances.
    /// Coincident pairs use subgradient 0.
    pub fn pairwise_euclidean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).pairwise_euclidean()?;
        Ok(self.push(Op::PairwiseEuclidean(a), v))
    }

    /// Row-wise log(sum(exp(.))): n x k to n x 1, max-shifted for stability.
    pub fn log_sum_exp_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let input = self.value(a);
        let mut out = Matrix::zeros(input.rows(), 1);
        for i in 0..input.rows() {
            let row = input.row(i);
            let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            out.set(i, 0, m + s.ln());
        }
        if !out.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("log_sum_exp_rows"));
        }
        Ok(self.push(Op::LogSumExpRows(a), out))
    }

    /// Pick one column per row: out[i, 0] = a[i, cols[i]].
    pub fn gather_cols(&mut self, a: NodeId, cols: Vec<usize>) -> Result<NodeId> {
        let input = self.value(a);
        if cols.len() != input.rows() {
            return Err(Error::Shape {
                context: "gather_cols",
                expected: format!("{} indices", input.rows()),
                got: format!("{}", cols.len()),
            });
        }
        let mut out = Matrix::zeros(input.rows(), 1);
        for (i, &j) in cols.iter().enumerate() {
            if j >= input.cols() {
                return Err(Error::Domain(format!(
                    "gather_cols: column {j} out of range for {} columns",
                    input.cols()
                )));
            }
            out.set(i, 0, input.get(i, j));
        }
        Ok(self.push(Op::GatherCols(a, cols), out))
    }

    /// Reverse pass from a scalar loss node. Returns gradients for every node
    /// recorded so far; nodes that do not influence the loss get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got {}x{}",
                loss_value.rows(),
                loss_value.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Matrix::from_vec(1, 1, vec![1.0])?);

        for id in (0..=loss).rev() {
            let grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(id, &grad, &mut grads)?;
            grads[id] = Some(grad);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.unwrap_or_else(|| {
                    let (r, c) = self.nodes[id].value.shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) -> Result<()> {
        match &mut grads[id] {
            Some(g) => {
                *g = g.add(&delta)?;
            }
            None => grads[id] = Some(delta),
        }
        Ok(())
    }

    fn backward_op(&self, id: NodeId, grad: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = grad.matmul_nt(self.value(*b))?;
                let db = self.value(*a).matmul_tn(grad)?;
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)?;
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, grad.clone())?;
                Self::accumulate(grads, *b, grad.clone())?;
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, grad.clone())?;
                Self::accumulate(grads, *b, grad.scale(-1.0)?)?;
            }
            Op::Mul(a, b) => {
                let da = grad.hadamard(self.value(*b))?;
                let db = grad.hadamard(self.value(*a))?;
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)?;
            }
            Op::Scale(a, factor) => {
                Self::accumulate(grads, *a, grad.scale(*factor)?)?;
            }
            Op::AddRow(a, row) => {
                Self::accumulate(grads, *a, grad.clone())?;
                let mut row_grad = Matrix::zeros(1, grad.cols());
                for i in 0..grad.rows() {
                    for (rg, &g) in row_grad.row_mut(0).iter_mut().zip(grad.row(i)) {
                        *rg += g;
                    }
                }
                Self::accumulate(grads, *row, row_grad)?;
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                let da = grad.zip3(y, |g, y| g * (1.0 - y * y));
                Self::accumulate(grads, *a, da)?;
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let da = grad.zip3(x, |g, x| if x > 0.0 { g } else { 0.0 });
                Self::accumulate(grads, *a, da)?;
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let da = grad.zip3(x, |g, x| g * sign0(x));
                Self::accumulate(grads, *a, da)?;
            }
            Op::Sum(a) => {
                let g = grad.get(0, 0);
                let (r, c) = self.value(*a).shape();
                let da = Matrix::from_vec(r, c, vec![g; r * c])?;
                Self::accumulate(grads, *a, da)?;
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let g = grad.get(0, 0) / (r * c) as f64;
                let da = Matrix::from_vec(r, c, vec![g; r * c])?;
                Self::accumulate(grads, *a, da)?;
            }
            Op::PairwiseEuclidean(a) => {
                let points = self.value(*a);
                let dist = &self.nodes[id].value;
                let (n, d) = points.shape();
                let mut da = Matrix::zeros(n, d);
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let dij = dist.get(i, j);
                        if dij == 0.0 {
                            continue; // coincident points: subgradient 0
                        }
                        let w = grad.get(i, j) / dij;
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let diff = points.get(i, k) - points.get(j, k);
                            da.set(i, k, da.get(i, k) + w * diff);
                            da.set(j, k, da.get(j, k) - w * diff);
                        }
                    }
                }
                Self::accumulate(grads, *a, da)?;
            }
            Op::LogSumExpRows(a) => {
                let input = self.value(*a);
                let lse = &self.nodes[id].value;
                let (n, k) = input.shape();
                let mut da = Matrix::zeros(n, k);
                for i in 0..n {
                    let g = grad.get(i, 0);
                    let l = lse.get(i, 0);
                    for j in 0..k {
                        da.set(i, j, g * (input.get(i, j) - l).exp());
                    }
                }
                Self::accumulate(grads, *a, da)?;
            }
            Op::GatherCols(a, cols) => {
                let (n, k) = self.value(*a).shape();
                let mut da = Matrix::zeros(n, k);
                for (i, &j) in cols.iter().enumerate() {
                    da.set(i, j, grad.get(i, 0));
                }
                Self::accumulate(grads, *a, da)?;
            }
        }
        Ok(())
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Matrix {
    /// Element-wise combine without finiteness re-checks; gradients of finite
    /// values through these activations stay finite.
    fn zip3(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        debug_assert!(self.same_shape(other));
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::from_raw(self.rows(), self.cols(), data)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        debug_assert_eq!(data.len(), rows * cols);
        // Bypasses the finite check; only for internal values that are finite
        // by construction.
        Matrix::from_vec_unchecked(rows, cols, data)
    }
}
