//! Joint classification + regression objective.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::LabelVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 1.0, reg: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Mean per-label binary cross-entropy.
    pub cls: f64,
    /// Mean squared priority error.
    pub reg: f64,
    /// `w_cls * cls + w_reg * reg`.
    pub total: f64,
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]`, stable for large `|z|`.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn check_shapes(
    logits: &[Vec<f64>],
    priorities: &[f64],
    targets: &[LabelVector],
    gold: &[f64],
) -> Result<(), TrainError> {
    let b = logits.len();
    if b == 0 || priorities.len() != b || targets.len() != b || gold.len() != b {
        return Err(TrainError::Shape(format!(
            "batch of {b} logits, {} priorities, {} targets, {} gold priorities",
            priorities.len(),
            targets.len(),
            gold.len()
        )));
    }
    let k = logits[0].len();
    if logits.iter().any(|l| l.len() != k) || targets.iter().any(|t| t.len() != k) {
        return Err(TrainError::Shape("label width differs between logits and targets".into()));
    }
    let finite = logits.iter().flatten().chain(priorities).chain(gold).all(|x| x.is_finite());
    if !finite {
        return Err(TrainError::NonFinite);
    }
    Ok(())
}

/// `w_cls * mean BCE(logits, targets) + w_reg * mean (priority - gold)^2`.
/// `priorities` are the squashed regression outputs.
pub fn joint_loss(
    logits: &[Vec<f64>],
    priorities: &[f64],
    targets: &[LabelVector],
    gold: &[f64],
    weights: LossWeights,
) -> Result<LossParts, TrainError> {
    check_shapes(logits, priorities, targets, gold)?;
    let b = logits.len() as f64;
    let k = logits[0].len() as f64;
    let mut cls = 0.0;
    for (row, t) in logits.iter().zip(targets) {
        for (i, &z) in row.iter().enumerate() {
            cls += bce_with_logit(z, if t.get(i) { 1.0 } else { 0.0 });
        }
    }
    cls /= b * k;
    let reg = priorities.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / b;
    Ok(LossParts { cls, reg, total: weights.cls * cls + weights.reg * reg })
}

/// Gradients of [`joint_loss`] with respect to the class logits and to the
/// pre-sigmoid regression output.
pub fn joint_loss_grad(
    logits: &[Vec<f64>],
    priorities: &[f64],
    targets: &[LabelVector],
    gold: &[f64],
    weights: LossWeights,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), TrainError> {
    check_shapes(logits, priorities, targets, gold)?;
    let b = logits.len() as f64;
    let k = logits[0].len() as f64;
    let g_logits = logits
        .iter()
        .zip(targets)
        .map(|(row, t)| {
            row.iter()
                .enumerate()
                .map(|(i, &z)| {
                    let y = if t.get(i) { 1.0 } else { 0.0 };
                    weights.cls * (super::model::sigmoid(z) - y) / (b * k)
                })
                .collect()
        })
        .collect();
    let g_reg = priorities
        .iter()
        .zip(gold)
        .map(|(&p, &g)| weights.reg * 2.0 * (p - g) / b * p * (1.0 - p))
        .collect();
    Ok((g_logits, g_reg))
}
