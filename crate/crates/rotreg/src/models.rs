//! Small trainable networks: MLP encoder, multi-target regression head,
//! discretized classification head, and plain SGD.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, LossValue};
use crate::ndnum::{Matrix, NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Relu => write!(f, "relu"),
        }
    }
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = std * z;
    }
    m
}

/// Fully connected encoder. The activation is applied after every layer
/// except the last, so the feature output is an unbounded linear map of the
/// last hidden activation (and a single-layer encoder is purely linear).
#[derive(Debug, Clone)]
pub struct MlpEncoder {
    widths: Vec<usize>,
    activation: Activation,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

/// Node handles of an encoder forward pass recorded on a tape.
pub struct TapedEncoder {
    pub output: NodeId,
    pub weight_nodes: Vec<NodeId>,
    pub bias_nodes: Vec<NodeId>,
}

impl MlpEncoder {
    /// `widths` is the full layer list `[input, hidden..., feature_dim]`.
    /// Weights are drawn N(0, 1/sqrt(fan_in)); biases start at zero.
    pub fn new(widths: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "encoder needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero layer width in {widths:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            weights.push(gaussian_matrix(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng));
            biases.push(Matrix::zeros(1, fan_out));
        }
        Ok(MlpEncoder {
            widths: widths.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn encode_on_tape(&self, tape: &mut Tape, x: NodeId) -> Result<TapedEncoder> {
        if tape.value(x).cols() != self.input_dim() {
            return Err(Error::Shape {
                context: "encode",
                expected: format!("{} input columns", self.input_dim()),
                got: format!("{}", tape.value(x).cols()),
            });
        }
        let mut weight_nodes = Vec::new();
        let mut bias_nodes = Vec::new();
        let mut h = x;
        let last = self.weights.len() - 1;
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wn = tape.leaf(w.clone());
            let bn = tape.leaf(b.clone());
            weight_nodes.push(wn);
            bias_nodes.push(bn);
            h = tape.matmul(h, wn)?;
            h = tape.add_row(h, bn)?;
            if layer != last {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h)?,
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        Ok(TapedEncoder {
            output: h,
            weight_nodes,
            bias_nodes,
        })
    }

    /// Deterministic forward pass producing the n x d feature matrix.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let taped = self.encode_on_tape(&mut tape, xn)?;
        Ok(tape.value(taped.output).clone())
    }

    pub fn param_blocks(&self) -> Vec<(String, &Matrix)> {
        let mut blocks = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            blocks.push((format!("enc.w{i}"), w));
            blocks.push((format!("enc.b{i}"), b));
        }
        blocks
    }
}

/// Linear regression head with `copies` independent weight vectors per target
/// coordinate; the prediction is the arithmetic mean over the copies. With
/// `copies = 1` this is exactly a single linear regressor.
///
/// Column layout of the c x (target_dim * copies) output: coordinate c, copy t
/// lives at column `c * copies + t`.
#[derive(Debug, Clone)]
pub struct MultiTargetHead {
    copies: usize,
    target_dim: usize,
    pub weights: Matrix,
    pub bias: Matrix,
}

pub struct TapedMtHead {
    pub per_target: NodeId,
    pub mean: NodeId,
    pub weight_node: NodeId,
    pub bias_node: NodeId,
}

impl MultiTargetHead {
    /// Independent random draws at std 1/sqrt(d). Per-copy bias.
    ///
    /// A much smaller init scale starves the encoder of task gradient early
    /// in training, and the transport loss then collapses the representation
    /// before the head can lock on.
    pub fn new(feature_dim: usize, target_dim: usize, copies: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if copies == 0 || target_dim == 0 || feature_dim == 0 {
            return Err(Error::Config(format!(
                "MultiTargetHead dims must be positive: d={feature_dim} k_y={target_dim} M={copies}"
            )));
        }
        let q = target_dim * copies;
        let std = 1.0 / (feature_dim as f64).sqrt();
        Ok(MultiTargetHead {
            copies,
            target_dim,
            weights: gaussian_matrix(feature_dim, q, std, rng),
            bias: Matrix::zeros(1, q),
        })
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.target_dim * self.copies
    }

    /// Weight vector of one regressor (coordinate `coord`, copy `t`).
    pub fn theta(&self, coord: usize, copy: usize) -> Vec<f64> {
        self.weights.col(coord * self.copies + copy)
    }

    pub fn bias_of(&self, coord: usize, copy: usize) -> f64 {
        self.bias.get(0, coord * self.copies + copy)
    }

    /// Names for trace output, one per regressor.
    pub fn head_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for c in 0..self.target_dim {
            for t in 0..self.copies {
                if self.target_dim == 1 {
                    names.push(format!("t{t}"));
                } else {
                    names.push(format!("c{c}t{t}"));
                }
            }
        }
        names
    }

    /// Constant q x target_dim matrix that averages each coordinate's copies.
    fn averaging_matrix(&self) -> Matrix {
        let mut a = Matrix::zeros(self.output_dim(), self.target_dim);
        for c in 0..self.target_dim {
            for t in 0..self.copies {
                a.set(c * self.copies + t, c, 1.0 / self.copies as f64);
            }
        }
        a
    }

    pub fn predict_on_tape(&self, tape: &mut Tape, z: NodeId) -> Result<TapedMtHead> {
        if tape.value(z).cols() != self.feature_dim() {
            return Err(Error::Shape {
                context: "predict_mt",
                expected: format!("{} feature columns", self.feature_dim()),
                got: format!("{}", tape.value(z).cols()),
            });
        }
        let weight_node = tape.leaf(self.weights.clone());
        let bias_node = tape.leaf(self.bias.clone());
        let lin = tape.matmul(z, weight_node)?;
        let per_target = tape.add_row(lin, bias_node)?;
        let avg = tape.leaf(self.averaging_matrix());
        let mean = tape.matmul(per_target, avg)?;
        Ok(TapedMtHead {
            per_target,
            mean,
            weight_node,
            bias_node,
        })
    }

    /// Per-copy predictions (n x M*k_y) and their per-coordinate mean (n x k_y).
    pub fn predict(&self, z: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let zn = tape.leaf(z.clone());
        let taped = self.predict_on_tape(&mut tape, zn)?;
        Ok((
            tape.value(taped.per_target).clone(),
            tape.value(taped.mean).clone(),
        ))
    }

    pub fn param_blocks(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("head.w".to_string(), &self.weights),
            ("head.b".to_string(), &self.bias),
        ]
    }
}

/// Duplicate each target coordinate `copies` times, matching the head's
/// column layout.
pub fn duplicate_targets(y: &Matrix, copies: usize) -> Matrix {
    let (n, ky) = y.shape();
    let mut out = Matrix::zeros(n, ky * copies);
    for i in 0..n {
        for c in 0..ky {
            let v = y.get(i, c);
            for t in 0..copies {
                out.set(i, c * copies + t, v);
            }
        }
    }
    out
}

/// Mean over the M copies of the per-copy MSE against the duplicated target;
/// each regressor independently fits its own copy.
pub fn mt_training_loss(tape: &mut Tape, head: &MultiTargetHead, z: NodeId, y: &Matrix) -> Result<LossValue> {
    let taped = head.predict_on_tape(tape, z)?;
    let dup = duplicate_targets(y, head.copies());
    mt_training_loss_from(tape, taped.per_target, &dup)
}

/// Same loss given an already-recorded per-copy prediction node and an
/// explicit duplicated-target matrix (used by the noise-targets ablation).
pub fn mt_training_loss_from(tape: &mut Tape, per_target: NodeId, duplicated: &Matrix) -> Result<LossValue> {
    // Mean over all n x q entries == mean over copies of per-copy MSE.
    losses::mse(tape, per_target, duplicated)
}

/// Linear classifiers theta_k; logits_ik = theta_k . z_i (no bias).
#[derive(Debug, Clone)]
pub struct ClassificationHead {
    pub weights: Matrix, // d x K
}

pub struct TapedClassifier {
    pub logits: NodeId,
    pub weight_node: NodeId,
}

impl ClassificationHead {
    pub fn new(feature_dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let std = 1.0 / (feature_dim as f64).sqrt();
        Ok(ClassificationHead {
            weights: gaussian_matrix(feature_dim, classes, std, rng),
        })
    }

    pub fn classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn theta(&self, class: usize) -> Vec<f64> {
        self.weights.col(class)
    }

    pub fn logits_on_tape(&self, tape: &mut Tape, z: NodeId) -> Result<TapedClassifier> {
        let weight_node = tape.leaf(self.weights.clone());
        let logits = tape.matmul(z, weight_node)?;
        Ok(TapedClassifier { logits, weight_node })
    }

    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        z.matmul(&self.weights)
    }

    pub fn param_blocks(&self) -> Vec<(String, &Matrix)> {
        vec![("cls.w".to_string(), &self.weights)]
    }
}

/// Uniform discretization of a scalar target range into `classes` bins;
/// values are clamped into `[0, classes - 1]`.
pub fn discretize_targets(values: &[f64], classes: usize, y_min: f64, y_max: f64) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {classes}")));
    }
    if !(y_max > y_min) {
        return Err(Error::Domain(format!(
            "empty target range: [{y_min}, {y_max}]"
        )));
    }
    let span = y_max - y_min;
    Ok(values
        .iter()
        .map(|&y| {
            let raw = (classes as f64 * (y - y_min) / span).floor();
            (raw.max(0.0) as usize).min(classes - 1)
        })
        .collect())
}

/// Plain SGD with optional momentum.
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "sgd step: {} params but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        }
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if self.momentum > 0.0 {
                *vel = vel.scale(self.momentum)?.add(grad)?;
                param.add_assign_scaled(vel, -self.lr)?;
            } else {
                param.add_assign_scaled(grad, -self.lr)?;
            }
        }
        Ok(())
    }
}

/// Serialize named parameter blocks as a flat CSV: `name,rows,cols,values...`.
pub fn save_checkpoint(path: &Path, blocks: &[(String, &Matrix)]) -> Result<()> {
    let mut out = String::from("name,rows,cols,values\n");
    for (name, m) in blocks {
        out.push_str(name);
        out.push_str(&format!(",{},{}", m.rows(), m.cols()));
        for v in m.data() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Matrix)>> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut blocks = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = |msg: String| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg,
        };
        let name = fields
            .next()
            .ok_or_else(|| parse_err("missing name".into()))?
            .to_string();
        let rows: usize = fields
            .next()
            .ok_or_else(|| parse_err("missing rows".into()))?
            .parse()
            .map_err(|e| parse_err(format!("bad rows: {e}")))?;
        let cols: usize = fields
            .next()
            .ok_or_else(|| parse_err("missing cols".into()))?
            .parse()
            .map_err(|e| parse_err(format!("bad cols: {e}")))?;
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("bad value: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != rows * cols {
            return Err(parse_err(format!(
                "expected {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        blocks.push((name, Matrix::from_vec(rows, cols, values)?));
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::{finite_difference_gradient, relative_l2_error};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_encoder_outputs_zeros() {
        let mut r = rng(0);
        let mut enc = MlpEncoder::new(&[3, 4, 2], Activation::Tanh, &mut r).unwrap();
        for w in &mut enc.weights {
            *w = Matrix::zeros(w.rows(), w.cols());
        }
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let z = enc.encode(&x).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut r = rng(1);
        let mut enc = MlpEncoder::new(&[2, 2], Activation::Tanh, &mut r).unwrap();
        enc.weights[0] = Matrix::identity(2);
        let x = Matrix::from_rows(&[vec![0.3, -1.7], vec![2.0, 0.0]]).unwrap();
        let z = enc.encode(&x).unwrap();
        assert_eq!(z, x, "single layer is linear, so I * x == x");
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut r = rng(2);
        let enc = MlpEncoder::new(&[3, 5, 2], Activation::Tanh, &mut r).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.4, -0.2], vec![-0.7, 0.9, 0.3]]).unwrap();
        let target = Matrix::from_rows(&[vec![0.5, -0.5], vec![0.2, 0.1]]).unwrap();

        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let taped = enc.encode_on_tape(&mut tape, xn).unwrap();
        let loss = losses::mse(&mut tape, taped.output, &target).unwrap();
        let grads = tape.backward(loss.node).unwrap();

        for layer in 0..2 {
            let flat: Vec<f64> = enc.weights[layer].data().to_vec();
            let eval = |wv: &[f64]| -> f64 {
                let mut e = enc.clone();
                e.weights[layer] =
                    Matrix::from_vec(e.weights[layer].rows(), e.weights[layer].cols(), wv.to_vec())
                        .unwrap();
                let mut tape = Tape::new();
                let xn = tape.leaf(x.clone());
                let taped = e.encode_on_tape(&mut tape, xn).unwrap();
                losses::mse(&mut tape, taped.output, &target).unwrap().value
            };
            let fd = finite_difference_gradient(&flat, 1e-5, eval);
            let rel = relative_l2_error(grads.wrt(taped.weight_nodes[layer]).data(), &fd);
            assert!(rel < 1e-4, "layer {layer}: relative error {rel}");
        }
    }

    #[test]
    fn predict_mt_m1_is_single_regressor() {
        let mut r = rng(3);
        let head = MultiTargetHead::new(4, 1, 1, &mut r).unwrap();
        let z = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![1.0, -1.0, 0.5, 0.0]]).unwrap();
        let (per, mean) = head.predict(&z).unwrap();
        assert_eq!(per, mean);
    }

    #[test]
    fn predict_mt_duplicate_heads_mean() {
        let mut r = rng(4);
        let mut head = MultiTargetHead::new(3, 1, 2, &mut r).unwrap();
        let col: Vec<f64> = head.weights.col(0);
        for i in 0..3 {
            head.weights.set(i, 1, col[i]);
        }
        head.bias.set(0, 0, 0.7);
        head.bias.set(0, 1, 0.7);
        let z = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (per, mean) = head.predict(&z).unwrap();
        assert_abs_diff_eq!(mean.get(0, 0), per.get(0, 0), epsilon = 1e-12);
        assert_abs_diff_eq!(per.get(0, 0), per.get(0, 1), epsilon = 1e-12);
    }

    #[test]
    fn predict_mt_mean_matches_loop_oracle() {
        let mut r = rng(5);
        let head = MultiTargetHead::new(4, 2, 3, &mut r).unwrap();
        let z = Matrix::from_rows(&[
            vec![0.5, -0.5, 1.0, 0.2],
            vec![0.0, 0.3, -0.9, 1.5],
            vec![2.0, 0.1, 0.1, -0.4],
            vec![-1.0, -1.0, 0.7, 0.8],
        ])
        .unwrap();
        let (per, mean) = head.predict(&z).unwrap();
        for i in 0..4 {
            for c in 0..2 {
                let avg: f64 = (0..3).map(|t| per.get(i, c * 3 + t)).sum::<f64>() / 3.0;
                assert_abs_diff_eq!(mean.get(i, c), avg, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn predict_mt_mean_invariant_to_copy_permutation() {
        let mut r = rng(6);
        let head = MultiTargetHead::new(3, 1, 4, &mut r).unwrap();
        let mut permuted = head.clone();
        // Swap copies 0 and 3 (weights and bias together).
        for i in 0..3 {
            let a = permuted.weights.get(i, 0);
            let b = permuted.weights.get(i, 3);
            permuted.weights.set(i, 0, b);
            permuted.weights.set(i, 3, a);
        }
        let (ba, bb) = (permuted.bias.get(0, 0), permuted.bias.get(0, 3));
        permuted.bias.set(0, 0, bb);
        permuted.bias.set(0, 3, ba);

        let z = Matrix::from_rows(&[vec![0.2, -0.6, 1.1], vec![0.9, 0.9, -0.3]]).unwrap();
        let (_, mean_a) = head.predict(&z).unwrap();
        let (_, mean_b) = permuted.predict(&z).unwrap();
        for (a, b) in mean_a.data().iter().zip(mean_b.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn mt_training_loss_exact_heads_is_zero() {
        let mut r = rng(7);
        let mut head = MultiTargetHead::new(2, 1, 2, &mut r).unwrap();
        // theta = (1, 0) for both copies, bias 0: prediction = z_0.
        head.weights = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        head.bias = Matrix::zeros(1, 2);
        let z = Matrix::from_rows(&[vec![0.5, 9.0], vec![-1.5, 3.0]]).unwrap();
        let y = Matrix::column_from(&[0.5, -1.5]).unwrap();
        let mut tape = Tape::new();
        let zn = tape.leaf(z);
        let loss = mt_training_loss(&mut tape, &head, zn, &y).unwrap();
        assert_eq!(loss.value, 0.0);
    }

    #[test]
    fn mt_training_loss_one_head_off_by_constant() {
        let mut r = rng(8);
        let mut head = MultiTargetHead::new(2, 1, 2, &mut r).unwrap();
        head.weights = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let c = 0.8;
        head.bias = Matrix::from_rows(&[vec![0.0, c]]).unwrap();
        let z = Matrix::from_rows(&[vec![0.5, 9.0], vec![-1.5, 3.0]]).unwrap();
        let y = Matrix::column_from(&[0.5, -1.5]).unwrap();
        let mut tape = Tape::new();
        let zn = tape.leaf(z);
        let loss = mt_training_loss(&mut tape, &head, zn, &y).unwrap();
        assert_abs_diff_eq!(loss.value, c * c / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mt_training_loss_matches_loop_of_mse_oracle() {
        let mut r = rng(9);
        let head = MultiTargetHead::new(3, 2, 4, &mut r).unwrap();
        let z = Matrix::from_rows(&[
            vec![0.5, -0.5, 1.0],
            vec![0.0, 0.3, -0.9],
            vec![2.0, 0.1, 0.1],
        ])
        .unwrap();
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, -0.5], vec![-1.0, 2.0]]).unwrap();
        let mut tape = Tape::new();
        let zn = tape.leaf(z.clone());
        let loss = mt_training_loss(&mut tape, &head, zn, &y).unwrap();

        let (per, _) = head.predict(&z).unwrap();
        let mut total = 0.0;
        for c in 0..2 {
            for t in 0..4 {
                let mut head_mse = 0.0;
                for i in 0..3 {
                    let e = per.get(i, c * 4 + t) - y.get(i, c);
                    head_mse += e * e;
                }
                total += head_mse / 3.0;
            }
        }
        total /= 8.0;
        assert_abs_diff_eq!(loss.value, total, epsilon = 1e-12);
    }

    #[test]
    fn discretize_boundary_and_interior() {
        assert_eq!(discretize_targets(&[0.0], 10, 0.0, 10.0).unwrap(), vec![0]);
        assert_eq!(discretize_targets(&[10.0], 10, 0.0, 10.0).unwrap(), vec![9]);
        assert_eq!(discretize_targets(&[4.3], 10, 0.0, 10.0).unwrap(), vec![4]);
    }

    #[test]
    fn discretize_matches_loop_oracle() {
        let mut r = rng(10);
        let values: Vec<f64> = (0..50).map(|_| r.gen_range(-3.0..7.0)).collect();
        let got = discretize_targets(&values, 7, -3.0, 7.0).unwrap();
        for (&y, &k) in values.iter().zip(&got) {
            let mut want = ((7.0 * (y + 3.0) / 10.0).floor()) as i64;
            if want < 0 {
                want = 0;
            }
            if want > 6 {
                want = 6;
            }
            assert_eq!(k as i64, want);
        }
    }

    #[test]
    fn discretize_rejects_empty_range() {
        assert!(matches!(
            discretize_targets(&[1.0], 10, 2.0, 2.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            discretize_targets(&[1.0], 1, 0.0, 1.0),
            Err(Error::Domain(_))
        ));
    }

    fn span_residual(grad_row: &[f64], basis: &[Vec<f64>]) -> f64 {
        // Gram-Schmidt the basis, then subtract projections.
        let mut ortho: Vec<Vec<f64>> = Vec::new();
        for b in basis {
            let mut v = b.clone();
            for o in &ortho {
                let dot: f64 = v.iter().zip(o).map(|(a, b)| a * b).sum();
                for (vi, oi) in v.iter_mut().zip(o) {
                    *vi -= dot * oi;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for vi in &mut v {
                    *vi /= norm;
                }
                ortho.push(v);
            }
        }
        let mut resid = grad_row.to_vec();
        for o in &ortho {
            let dot: f64 = resid.iter().zip(o).map(|(a, b)| a * b).sum();
            for (ri, oi) in resid.iter_mut().zip(o) {
                *ri -= dot * oi;
            }
        }
        resid.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Frozen M=3 head: every per-sample feature gradient lies in the span of
    /// the three weight vectors.
    #[test]
    fn mt_gradient_span_property() {
        let mut r = rng(11);
        let d = 8;
        let head = MultiTargetHead::new(d, 1, 3, &mut r).unwrap();
        let z = gaussian_matrix(6, d, 1.0, &mut r);
        let y = gaussian_matrix(6, 1, 1.0, &mut r);
        let mut tape = Tape::new();
        let zn = tape.leaf(z);
        let loss = mt_training_loss(&mut tape, &head, zn, &y).unwrap();
        let grads = tape.backward(loss.node).unwrap();
        let basis: Vec<Vec<f64>> = (0..3).map(|t| head.theta(0, t)).collect();
        for i in 0..6 {
            let resid = span_residual(grads.wrt(zn).row(i), &basis);
            assert!(resid < 1e-10, "sample {i}: residual {resid}");
        }
    }

    /// Frozen single head: per-sample gradients are parallel to theta.
    #[test]
    fn single_head_gradient_colinearity() {
        let mut r = rng(12);
        let d = 6;
        let head = MultiTargetHead::new(d, 1, 1, &mut r).unwrap();
        let z = gaussian_matrix(5, d, 1.0, &mut r);
        let y = gaussian_matrix(5, 1, 1.0, &mut r);
        let mut tape = Tape::new();
        let zn = tape.leaf(z);
        let loss = mt_training_loss(&mut tape, &head, zn, &y).unwrap();
        let grads = tape.backward(loss.node).unwrap();
        let theta = head.theta(0, 0);
        let theta_norm: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..5 {
            let g = grads.wrt(zn).row(i);
            let g_norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if g_norm == 0.0 {
                continue;
            }
            let dot: f64 = g.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let cos = (dot / (g_norm * theta_norm)).abs();
            assert!((1.0 - cos) < 1e-10, "sample {i}: |cos| = {cos}");
        }
    }

    /// Frozen classifier: the per-sample feature gradient of the CE loss is
    /// (sum_j p_ij theta_j - theta_{y_i}) / n.
    #[test]
    fn classification_gradient_formula() {
        let mut r = rng(13);
        let d = 5;
        let k = 4;
        let n = 6;
        let head = ClassificationHead::new(d, k, &mut r).unwrap();
        let z = gaussian_matrix(n, d, 1.0, &mut r);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();

        let mut tape = Tape::new();
        let zn = tape.leaf(z.clone());
        let taped = head.logits_on_tape(&mut tape, zn).unwrap();
        let loss = losses::cross_entropy(&mut tape, taped.logits, &labels).unwrap();
        let grads = tape.backward(loss.node).unwrap();

        let logits = head.logits(&z).unwrap();
        for i in 0..n {
            let row = logits.row(i);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let denom: f64 = exps.iter().sum();
            let mut want = vec![0.0; d];
            for j in 0..k {
                let p = exps[j] / denom;
                for (w, &t) in want.iter_mut().zip(&head.theta(j)) {
                    *w += p * t;
                }
            }
            for (w, &t) in want.iter_mut().zip(&head.theta(labels[i])) {
                *w -= t;
            }
            for v in &mut want {
                *v /= n as f64;
            }
            for (g, w) in grads.wrt(zn).row(i).iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "entry mismatch: {g} vs {w}");
            }
        }
    }

    #[test]
    fn sgd_plain_step() {
        let mut sgd = Sgd::new(0.1, 0.0).unwrap();
        let mut p = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![0.5, -0.5]]).unwrap();
        sgd.step(&mut [&mut p], &[&g]).unwrap();
        assert_abs_diff_eq!(p.get(0, 0), 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(p.get(0, 1), 2.05, epsilon = 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.csv");
        let a = Matrix::from_rows(&[vec![1.5, -2.25], vec![0.125, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        save_checkpoint(&path, &[("enc.w0".into(), &a), ("head.w".into(), &b)]).unwrap();
        let blocks = load_checkpoint(&path).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].0, "enc.w0");
        assert_eq!(blocks[0].1, a);
        assert_eq!(blocks[1].1, b);
    }
}
