//! Training objectives: task losses, the self-OT consistency loss, and the
//! combined objective.

use crate::error::{Error, Result};
use crate::ndnum::{Matrix, NodeId, Tape};
use crate::sinkhorn::{self, SelfOtConfig, TransportPlan};

/// A scalar loss recorded on a tape: the forward value plus the node handle
/// that `Tape::backward` differentiates through.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub value: f64,
    pub node: NodeId,
}

fn scalar_loss(tape: &mut Tape, node: NodeId) -> Result<LossValue> {
    Ok(LossValue {
        value: tape.scalar(node)?,
        node,
    })
}

fn check_pred_target(tape: &Tape, pred: NodeId, target: &Matrix, context: &'static str) -> Result<()> {
    let p = tape.value(pred);
    if !p.same_shape(target) {
        return Err(Error::Shape {
            context,
            expected: format!("{}x{}", p.rows(), p.cols()),
            got: format!("{}x{}", target.rows(), target.cols()),
        });
    }
    Ok(())
}

/// Mean squared error over all entries, differentiable w.r.t. `pred`.
pub fn mse(tape: &mut Tape, pred: NodeId, target: &Matrix) -> Result<LossValue> {
    check_pred_target(tape, pred, target, "mse")?;
    let t = tape.leaf(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let node = tape.mean(sq)?;
    scalar_loss(tape, node)
}

/// Mean absolute error; subgradient 0 at zero residual.
pub fn mae(tape: &mut Tape, pred: NodeId, target: &Matrix) -> Result<LossValue> {
    check_pred_target(tape, pred, target, "mae")?;
    let t = tape.leaf(target.clone());
    let diff = tape.sub(pred, t)?;
    let a = tape.abs(diff)?;
    let node = tape.mean(a)?;
    scalar_loss(tape, node)
}

/// Softmax cross-entropy via log-sum-exp; `labels[i]` is a 0-based class id.
pub fn cross_entropy(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<LossValue> {
    let (n, k) = tape.value(logits).shape();
    if labels.len() != n {
        return Err(Error::Shape {
            context: "cross_entropy",
            expected: format!("{n} labels"),
            got: format!("{}", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Domain(format!(
            "cross_entropy: label {bad} out of range for {k} classes"
        )));
    }
    let lse = tape.log_sum_exp_rows(logits)?;
    let picked = tape.gather_cols(logits, labels.to_vec())?;
    let diff = tape.sub(lse, picked)?;
    let node = tape.mean(diff)?;
    scalar_loss(tape, node)
}

/// Per-batch state of the self-OT consistency loss: the plan built from the
/// targets and the (gradient-detached) plan built from the current features.
#[derive(Debug, Clone)]
pub struct RotRegState {
    pub gamma: f64,
    pub plan_y: TransportPlan,
    pub plan_z: TransportPlan,
}

/// Consistency loss `|<Cz, Ty> - <Cz, Tz>|` between the feature-space cost
/// matrix and the two self-transport plans.
///
/// Both plans are solved outside the tape and enter it as constants: the
/// gradient flows only through the feature cost matrix and from there to the
/// features. Solver failures propagate so the caller can skip the batch.
pub fn rot_reg_loss_with(
    tape: &mut Tape,
    features: NodeId,
    targets: &Matrix,
    config: &SelfOtConfig,
) -> Result<(LossValue, RotRegState)> {
    let n = tape.value(features).rows();
    if targets.rows() != n {
        return Err(Error::Shape {
            context: "rot_reg_loss",
            expected: format!("{n} target rows"),
            got: format!("{}", targets.rows()),
        });
    }

    let cost_y = targets.pairwise_euclidean()?;
    let plan_y = sinkhorn::self_transport(&cost_y, config)?;
    let cost_z_detached = tape.value(features).pairwise_euclidean()?;
    let plan_z = sinkhorn::self_transport(&cost_z_detached, config)?;

    let cost_z = tape.pairwise_euclidean(features)?;
    let ty = tape.leaf(plan_y.plan.clone());
    let tz = tape.leaf(plan_z.plan.clone());
    let wy = tape.mul(cost_z, ty)?;
    let target_side = tape.sum(wy)?;
    let wz = tape.mul(cost_z, tz)?;
    let feature_side = tape.sum(wz)?;
    let diff = tape.sub(target_side, feature_side)?;
    let node = tape.abs(diff)?;

    let loss = scalar_loss(tape, node)?;
    let state = RotRegState {
        gamma: config.gamma(),
        plan_y,
        plan_z,
    };
    Ok((loss, state))
}

/// [`rot_reg_loss_with`] at the default solver settings for a given gamma.
pub fn rot_reg_loss(tape: &mut Tape, features: NodeId, targets: &Matrix, gamma: f64) -> Result<LossValue> {
    let config = SelfOtConfig::new(gamma)?;
    Ok(rot_reg_loss_with(tape, features, targets, &config)?.0)
}

/// Final objective `L_f = L_t + lambda * L_ot`.
pub fn combined_loss(tape: &mut Tape, task: &LossValue, ot: &LossValue, lambda: f64) -> Result<LossValue> {
    let scaled = tape.scale(ot.node, lambda)?;
    let node = tape.add(task.node, scaled)?;
    scalar_loss(tape, node)
}
