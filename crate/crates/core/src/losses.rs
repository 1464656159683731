//! Training objectives for both stages, with values and analytic gradients
//! with respect to the student scores.
//!
//! Stage 1 distills the teacher: a smooth-L1 regression to the teacher's
//! soft scores plus a confidence-weighted pair-wise ranking term. Stage 2
//! calibrates to human labels: mean squared error plus a differentiable
//! batch-correlation term. Every function returns both the scalar loss and
//! d(loss)/d(score) per input score so the network backward pass can start
//! from them directly.

use crate::error::{CoreError, Result};
use crate::signals::{sigmoid, SupervisionPair};
use crate::ImageId;
use std::collections::HashMap;

/// A scalar loss plus its gradient with respect to each score that entered.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub score_grads: Vec<f64>,
}

/// Huber-style regression loss on a single prediction:
/// `0.5 d²/beta` for `|d| < beta`, else `|d| − 0.5 beta`, with `d = pred − target`.
/// The gradient is `clamp(d/beta, −1, 1)`.
pub fn smooth_l1(pred: f64, target: f64, beta: f64) -> Result<LossValue> {
    if !(beta > 0.0) {
        return Err(CoreError::Config(format!(
            "smooth_l1 beta must be positive, got {beta}"
        )));
    }
    let d = pred - target;
    let value = if d.abs() < beta {
        0.5 * d * d / beta
    } else {
        d.abs() - 0.5 * beta
    };
    Ok(LossValue {
        value,
        score_grads: vec![(d / beta).clamp(-1.0, 1.0)],
    })
}

/// Mean smooth-L1 over a batch against teacher soft scores.
pub fn reg_loss(scores: &[f64], teacher_scores: &[f64], beta: f64) -> Result<LossValue> {
    if scores.is_empty() {
        return Err(CoreError::EmptyBatch("regression loss over no samples".into()));
    }
    if scores.len() != teacher_scores.len() {
        return Err(CoreError::Shape(format!(
            "scores ({}) vs teacher scores ({})",
            scores.len(),
            teacher_scores.len()
        )));
    }
    let n = scores.len() as f64;
    let mut value = 0.0;
    let mut score_grads = Vec::with_capacity(scores.len());
    for (s, t) in scores.iter().zip(teacher_scores.iter()) {
        let l = smooth_l1(*s, *t, beta)?;
        value += l.value / n;
        score_grads.push(l.score_grads[0] / n);
    }
    Ok(LossValue { value, score_grads })
}

/// Student's preference probability: logistic of the score difference.
pub fn rank_prob(s_a: f64, s_b: f64) -> f64 {
    sigmoid(s_a - s_b)
}

/// Binary cross-entropy in the logits domain: stable for any `z`.
/// Returns (value, d value / d z).
fn bce_with_logits(z: f64, t: f64) -> (f64, f64) {
    let value = z.max(0.0) - t * z + (1.0 + (-z.abs()).exp()).ln();
    (value, sigmoid(z) - t)
}

/// Confidence-weighted pair-wise ranking loss: the mean over pairs of
/// `omega · BCE(P(a ≻ b), t)` where `P(a ≻ b) = sigma(s_a − s_b)`.
///
/// `ids` and `scores` run in parallel; every pair must reference ids from
/// that list. Gradients land in a vector aligned with `scores`, with both
/// endpoints of every pair receiving their share.
pub fn rank_loss(ids: &[ImageId], scores: &[f64], pairs: &[SupervisionPair]) -> Result<LossValue> {
    if ids.len() != scores.len() {
        return Err(CoreError::Shape(format!(
            "ids ({}) vs scores ({})",
            ids.len(),
            scores.len()
        )));
    }
    if pairs.is_empty() {
        return Err(CoreError::EmptyBatch("ranking loss over no pairs".into()));
    }
    let index: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let lookup = |id: &ImageId| -> Result<usize> {
        index.get(id.as_str()).copied().ok_or_else(|| CoreError::DanglingPair {
            id: id.0.clone(),
        })
    };
    let n = pairs.len() as f64;
    let mut value = 0.0;
    let mut score_grads = vec![0.0; scores.len()];
    for pair in pairs {
        let ia = lookup(&pair.a)?;
        let ib = lookup(&pair.b)?;
        let z = scores[ia] - scores[ib];
        let (l, dz) = bce_with_logits(z, pair.t as f64);
        value += pair.omega * l / n;
        let g = pair.omega * dz / n;
        score_grads[ia] += g;
        score_grads[ib] -= g;
    }
    Ok(LossValue { value, score_grads })
}

/// Stage-1 objective: point regression plus `lambda_dis` times the ranking
/// term, over one batch of images and one batch of pairs drawn from them.
pub fn distill_loss(
    ids: &[ImageId],
    scores: &[f64],
    teacher_scores: &[f64],
    pairs: &[SupervisionPair],
    lambda_dis: f64,
    beta: f64,
) -> Result<LossValue> {
    let reg = reg_loss(scores, teacher_scores, beta)?;
    if lambda_dis == 0.0 {
        return Ok(reg);
    }
    let rank = rank_loss(ids, scores, pairs)?;
    let score_grads = reg
        .score_grads
        .iter()
        .zip(rank.score_grads.iter())
        .map(|(r, k)| r + lambda_dis * k)
        .collect();
    Ok(LossValue {
        value: reg.value + lambda_dis * rank.value,
        score_grads,
    })
}

/// Mean squared error against labels; gradient `2(s − y)/n`.
pub fn mse_loss(scores: &[f64], labels: &[f64]) -> Result<LossValue> {
    if scores.is_empty() {
        return Err(CoreError::EmptyBatch("MSE over no samples".into()));
    }
    if scores.len() != labels.len() {
        return Err(CoreError::Shape(format!(
            "scores ({}) vs labels ({})",
            scores.len(),
            labels.len()
        )));
    }
    let n = scores.len() as f64;
    let mut value = 0.0;
    let mut score_grads = Vec::with_capacity(scores.len());
    for (s, y) in scores.iter().zip(labels.iter()) {
        let d = s - y;
        value += d * d / n;
        score_grads.push(2.0 * d / n);
    }
    Ok(LossValue { value, score_grads })
}

const PLCC_EPS: f64 = 1e-8;

/// Differentiable batch-correlation loss `1 − rho(scores, labels)`.
///
/// A batch whose scores are (numerically) constant would divide by zero;
/// that case is defined to return loss 1 with zero gradient and a logged
/// warning, since early training can produce near-constant outputs.
/// A constant *label* batch is a data problem and errors instead.
pub fn plcc_loss(scores: &[f64], labels: &[f64]) -> Result<LossValue> {
    if scores.len() != labels.len() {
        return Err(CoreError::Shape(format!(
            "scores ({}) vs labels ({})",
            scores.len(),
            labels.len()
        )));
    }
    if scores.len() < 2 {
        return Err(CoreError::DegenerateBatch(format!(
            "correlation needs at least 2 samples, got {}",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let ms = scores.iter().sum::<f64>() / n;
    let my = labels.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (s, y) in scores.iter().zip(labels.iter()) {
        let ds = s - ms;
        let dy = y - my;
        sxy += ds * dy;
        sxx += ds * ds;
        syy += dy * dy;
    }
    if syy <= PLCC_EPS * PLCC_EPS {
        return Err(CoreError::DegenerateBatch(
            "labels are constant within the batch; correlation undefined".into(),
        ));
    }
    if sxx <= PLCC_EPS * PLCC_EPS {
        log::warn!("constant score batch in correlation loss; returning loss 1 with zero gradient");
        return Ok(LossValue {
            value: 1.0,
            score_grads: vec![0.0; scores.len()],
        });
    }
    let denom = (sxx * syy).sqrt();
    let rho = (sxy / denom).clamp(-1.0, 1.0);
    // d rho / d s_i = [ (y_i − my) − rho · sqrt(syy/sxx) · (s_i − ms) ] / denom
    let ratio = rho * (syy / sxx).sqrt();
    let score_grads = scores
        .iter()
        .zip(labels.iter())
        .map(|(s, y)| -(((y - my) - ratio * (s - ms)) / denom))
        .collect();
    Ok(LossValue {
        value: 1.0 - rho,
        score_grads,
    })
}

/// Stage-2 objective: MSE plus `lambda_cal` times the correlation loss.
pub fn calib_loss(scores: &[f64], labels: &[f64], lambda_cal: f64) -> Result<LossValue> {
    let mse = mse_loss(scores, labels)?;
    if lambda_cal == 0.0 {
        return Ok(mse);
    }
    let plcc = plcc_loss(scores, labels)?;
    let score_grads = mse
        .score_grads
        .iter()
        .zip(plcc.score_grads.iter())
        .map(|(m, p)| m + lambda_cal * p)
        .collect();
    Ok(LossValue {
        value: mse.value + lambda_cal * plcc.value,
        score_grads,
    })
}
