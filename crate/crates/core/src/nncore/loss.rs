//! Training objectives: mean squared error and the reconstruction/contrast
//! ("R-C") hinge used to finetune the per-task baseline network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::field::ChannelField;
use super::real::Real;

/// A scalar loss with its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Weighting of the R-C objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcWeights {
    pub alpha: f64,
    pub margin: f64,
}

impl Default for RcWeights {
    fn default() -> Self {
        RcWeights {
            alpha: 0.5,
            margin: 1.0,
        }
    }
}

impl RcWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(self.margin >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rc loss needs alpha in [0,1] and margin >= 0, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

pub fn l2_loss(pred: &ChannelField, target: &ChannelField) -> Result<LossValue> {
    pred.check_same_shape(target)?;
    let (value, grad) = l2_value_grad(pred.data(), target.data());
    Ok(LossValue { value, grad })
}

/// `alpha·l_same + (1−alpha)·max(0, margin + l_same − l_diff)`, where
/// `l_same` is the l2 loss against the subject's own contrast and `l_diff`
/// the mean l2 loss against other subjects' contrasts.
pub fn rc_loss(
    pred: &ChannelField,
    own_target: &ChannelField,
    other_targets: &[ChannelField],
    weights: RcWeights,
) -> Result<LossValue> {
    weights.validate()?;
    pred.check_same_shape(own_target)?;
    if other_targets.is_empty() {
        return Err(Error::InvalidArgument(
            "rc loss needs at least one other subject's target".into(),
        ));
    }
    for t in other_targets {
        pred.check_same_shape(t)?;
    }
    let others: Vec<&[f64]> = other_targets.iter().map(|t| t.data()).collect();
    let (value, grad) = rc_value_grad(pred.data(), own_target.data(), &others, weights);
    Ok(LossValue { value, grad })
}

pub(crate) fn l2_value_grad<T: Real>(pred: &[T], target: &[T]) -> (f64, Vec<T>) {
    let n = pred.len() as f64;
    let scale = T::from_f64(2.0 / n);
    let mut sum = 0.0f64;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    (sum / n, grad)
}

pub(crate) fn rc_value_grad<T: Real>(
    pred: &[T],
    own: &[T],
    others: &[&[T]],
    weights: RcWeights,
) -> (f64, Vec<T>) {
    let (same, g_same) = l2_value_grad(pred, own);
    let mut diff = 0.0;
    let mut g_diff = vec![T::zero(); pred.len()];
    let inv = T::from_f64(1.0 / others.len() as f64);
    for other in others {
        let (d, g) = l2_value_grad(pred, other);
        diff += d;
        for (acc, gi) in g_diff.iter_mut().zip(g) {
            *acc += gi * inv;
        }
    }
    diff /= others.len() as f64;

    let alpha = weights.alpha;
    let hinge = weights.margin + same - diff;
    let value = alpha * same + (1.0 - alpha) * hinge.max(0.0);
    let a = T::from_f64(alpha);
    let b = T::from_f64(if hinge > 0.0 { 1.0 - alpha } else { 0.0 });
    let grad = g_same
        .iter()
        .zip(&g_diff)
        .map(|(&s, &d)| a * s + b * (s - d))
        .collect();
    (value, grad)
}
