//! Task losses, the in-batch contrastive loss and the weighted total, each
//! returning its gradient with respect to model outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_task: f64,
    pub lambda_con: f64,
    pub lambda_reg: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_task: 1.0,
            lambda_con: 0.1,
            lambda_reg: 0.01,
            tau: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_task, self.lambda_con, self.lambda_reg];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidConfig(format!("loss weights must be finite and >= 0: {lambdas:?}")));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    Classification { classes: usize },
    PairwiseRanking,
    Regression,
}

impl TaskKind {
    /// Width of the model output this task expects.
    pub fn out_dim(&self) -> usize {
        match self {
            TaskKind::Classification { classes } => *classes,
            TaskKind::PairwiseRanking | TaskKind::Regression => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskKind::Classification { classes } if *classes < 2 => Err(Error::InvalidConfig(format!(
                "classification needs at least 2 classes, got {classes}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Mean of `-log softmax(logits)[target]`; gradient `(softmax - onehot) / B`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<(f64, Tensor<T>)> {
    if logits.shape().len() != 2 {
        return Err(Error::dim("cross_entropy", logits.shape(), &[targets.len()]));
    }
    let (b, k) = (logits.rows(), logits.cols());
    if b != targets.len() {
        return Err(Error::LengthMismatch(b, targets.len()));
    }
    if b == 0 {
        return Err(Error::EmptyData);
    }
    let mut grad = Tensor::zeros(&[b, k]);
    let mut loss = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        if target >= k {
            return Err(Error::TargetOutOfRange { index: target, classes: k });
        }
        let row: Vec<f64> = logits.row(i).iter().map(|x| x.f64()).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
        let log_z = m + z.ln();
        loss += log_z - row[target];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            let onehot = if j == target { 1.0 } else { 0.0 };
            *g = T::of((p - onehot) / b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct RankingLoss<T: Real> {
    pub loss: f64,
    pub grad_pos: Tensor<T>,
    pub grad_neg: Tensor<T>,
}

/// Pairwise logistic loss `mean log(1 + exp(-(s+ - s-)))`.
pub fn ranking_loss<T: Real>(score_pos: &Tensor<T>, score_neg: &Tensor<T>) -> Result<RankingLoss<T>> {
    let b = score_pos.len();
    if b != score_neg.len() {
        return Err(Error::LengthMismatch(b, score_neg.len()));
    }
    if b == 0 {
        return Err(Error::EmptyData);
    }
    let mut loss = 0.0;
    let mut gp = Vec::with_capacity(b);
    let mut gn = Vec::with_capacity(b);
    for (p, n) in score_pos.data().iter().zip(score_neg.data()) {
        let delta = p.f64() - n.f64();
        loss += softplus(-delta);
        let s = sigmoid(-delta) / b as f64;
        gp.push(T::of(-s));
        gn.push(T::of(s));
    }
    Ok(RankingLoss {
        loss: loss / b as f64,
        grad_pos: Tensor::new(score_pos.shape().to_vec(), gp)?,
        grad_neg: Tensor::new(score_neg.shape().to_vec(), gn)?,
    })
}

/// Mean Huber-style loss with transition at `beta`.
pub fn smooth_l1<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, beta: f64) -> Result<(f64, Tensor<T>)> {
    if !(beta > 0.0) {
        return Err(Error::InvalidConfig(format!("smooth_l1 beta must be > 0, got {beta}")));
    }
    let b = pred.len();
    if b != target.len() {
        return Err(Error::LengthMismatch(b, target.len()));
    }
    if b == 0 {
        return Err(Error::EmptyData);
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b);
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = p.f64() - t.f64();
        let (l, g) = if e.abs() < beta {
            (0.5 * e * e / beta, e / beta)
        } else {
            (e.abs() - 0.5 * beta, e.signum())
        };
        loss += l;
        grad.push(T::of(g / b as f64));
    }
    Ok((loss / b as f64, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Image-anchored InfoNCE over a `B × B` score matrix whose diagonal holds
/// the matched pairs.
pub fn contrastive_loss<T: Real>(scores: &Tensor<T>, tau: f64) -> Result<(f64, Tensor<T>)> {
    if scores.shape().len() != 2 || scores.rows() != scores.cols() {
        return Err(Error::dim("contrastive_loss", scores.shape(), &[scores.rows(), scores.rows()]));
    }
    let b = scores.rows();
    if b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")));
    }
    let scaled = scores.map(|x| T::of(x.f64() / tau));
    let targets: Vec<usize> = (0..b).collect();
    let (loss, grad) = cross_entropy(&scaled, &targets)?;
    Ok((loss, grad.map(|g| T::of(g.f64() / tau))))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub contrastive: f64,
    /// `Σθ²` over penalized tensors, before weighting.
    pub reg: f64,
    pub total: f64,
}

/// `λ_task·task + λ_con·con + λ_reg·Σθ²`, the sum running over weights and
/// biases but not LayerNorm parameters.
pub fn total_loss<T: Real, P: ParamSet<T>>(
    task_loss: f64,
    con_loss: f64,
    params: &P,
    weights: &LossWeights,
) -> LossBreakdown {
    let reg: f64 = params
        .tensors()
        .iter()
        .filter(|(k, _)| k.penalized())
        .map(|(_, t)| t.sum_sq())
        .sum();
    LossBreakdown {
        task: task_loss,
        contrastive: con_loss,
        reg,
        total: weights.lambda_task * task_loss + weights.lambda_con * con_loss + weights.lambda_reg * reg,
    }
}

/// Adds `2·λ_reg·θ` to the gradient of every penalized tensor.
pub fn add_reg_grad<T: Real, P: ParamSet<T>>(params: &P, grads: &mut P, lambda_reg: f64) {
    if lambda_reg == 0.0 {
        return;
    }
    for ((kind, p), (_, g)) in params.tensors().into_iter().zip(grads.tensors_mut()) {
        if !kind.penalized() {
            continue;
        }
        for (gi, pi) in g.data_mut().iter_mut().zip(p.data()) {
            *gi = T::of(gi.f64() + 2.0 * lambda_reg * pi.f64());
        }
    }
}
