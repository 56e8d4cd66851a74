//! Multi-label weighted loss and the consistency (R-Drop style) extension.
//!
//! The Overall dimension carries weight `w`; the six auxiliary dimensions
//! share `1 - w` equally. The consistency term compares the predictions of
//! `F` stochastic forward passes of the same sample and is averaged over
//! all unordered pairs, so `F = 2` reduces to the plain two-pass form.

use serde::{Deserialize, Serialize};

use crate::corpus::OVERALL_INDEX;
use crate::model::{Prediction, PREDICTION_DIMS};

use super::TrainError;

/// Loss hyperparameters: Overall weight `w`, consistency weight `alpha`,
/// and the number of stochastic forwards `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub overall_weight: f64,
    pub rdrop_alpha: f64,
    pub forwards: usize,
}

impl Default for LossConfig {
    /// The baseline objective: plain MSE on Overall, single forward.
    fn default() -> Self {
        Self {
            overall_weight: 1.0,
            rdrop_alpha: 0.0,
            forwards: 1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.overall_weight) {
            return Err(TrainError::InvalidConfig(format!(
                "overall_weight {} outside [0, 1]",
                self.overall_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.rdrop_alpha) {
            return Err(TrainError::InvalidConfig(format!(
                "rdrop_alpha {} outside [0, 1]",
                self.rdrop_alpha
            )));
        }
        if !(1..=3).contains(&self.forwards) {
            return Err(TrainError::InvalidConfig(format!(
                "forwards {} outside 1..=3",
                self.forwards
            )));
        }
        Ok(())
    }

    /// A single forward has no pair to compare, so `F = 1` forces the
    /// consistency weight to zero.
    pub fn effective_alpha(&self) -> f64 {
        if self.forwards == 1 {
            0.0
        } else {
            self.rdrop_alpha
        }
    }
}

/// Per-dimension loss weights: `w` on Overall, `(1 - w) / 6` elsewhere.
pub fn dimension_weights(overall_weight: f64) -> [f64; PREDICTION_DIMS] {
    let side = (1.0 - overall_weight) / 6.0;
    let mut weights = [side; PREDICTION_DIMS];
    weights[OVERALL_INDEX] = overall_weight;
    weights
}

/// Weighted squared error plus the seven unweighted squared errors.
pub fn multi_label_loss(
    pred: &Prediction,
    label: &[f64; PREDICTION_DIMS],
    overall_weight: f64,
) -> (f64, [f64; PREDICTION_DIMS]) {
    let weights = dimension_weights(overall_weight);
    let mut weighted = 0.0;
    let mut squared_errors = [0.0; PREDICTION_DIMS];
    for i in 0..PREDICTION_DIMS {
        let err = pred[i] - label[i];
        squared_errors[i] = err * err;
        weighted += weights[i] * squared_errors[i];
    }
    (weighted, squared_errors)
}

/// Weighted squared difference between two prediction vectors.
fn weighted_disagreement(a: &Prediction, b: &Prediction, overall_weight: f64) -> f64 {
    let weights = dimension_weights(overall_weight);
    let mut out = 0.0;
    for i in 0..PREDICTION_DIMS {
        let diff = a[i] - b[i];
        out += weights[i] * diff * diff;
    }
    out
}

/// The computed loss components for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Consistency term: mean weighted disagreement over forward pairs.
    pub l_r: f64,
    /// Base term: mean weighted error over forwards.
    pub l_b: f64,
    /// `alpha_eff * l_r + (1 - alpha_eff) * l_b`.
    pub total: f64,
    /// Unweighted squared errors per dimension, averaged over forwards.
    pub per_dimension_l_b: [f64; PREDICTION_DIMS],
}

/// Combines the base loss over `F` forwards with the pairwise consistency
/// term.
pub fn rdrop_loss(
    preds: &[Prediction],
    label: &[f64; PREDICTION_DIMS],
    cfg: &LossConfig,
) -> Result<LossBreakdown, TrainError> {
    cfg.validate()?;
    if preds.len() != cfg.forwards {
        return Err(TrainError::WrongForwardCount {
            got: preds.len(),
            expected: cfg.forwards,
        });
    }
    let f = preds.len();
    let mut l_b = 0.0;
    let mut per_dimension_l_b = [0.0; PREDICTION_DIMS];
    for pred in preds {
        let (weighted, squared) = multi_label_loss(pred, label, cfg.overall_weight);
        l_b += weighted;
        for i in 0..PREDICTION_DIMS {
            per_dimension_l_b[i] += squared[i];
        }
    }
    l_b /= f as f64;
    for v in &mut per_dimension_l_b {
        *v /= f as f64;
    }

    let mut l_r = 0.0;
    let pairs = f * (f - 1) / 2;
    if pairs > 0 {
        for j in 0..f {
            for k in (j + 1)..f {
                l_r += weighted_disagreement(&preds[j], &preds[k], cfg.overall_weight);
            }
        }
        l_r /= pairs as f64;
    }

    let alpha = cfg.effective_alpha();
    Ok(LossBreakdown {
        l_r,
        l_b,
        total: alpha * l_r + (1.0 - alpha) * l_b,
        per_dimension_l_b,
    })
}

/// Exact gradient of [`rdrop_loss`]'s total with respect to each forward's
/// prediction vector.
pub fn rdrop_loss_gradients(
    preds: &[Prediction],
    label: &[f64; PREDICTION_DIMS],
    cfg: &LossConfig,
) -> Result<Vec<Prediction>, TrainError> {
    cfg.validate()?;
    if preds.len() != cfg.forwards {
        return Err(TrainError::WrongForwardCount {
            got: preds.len(),
            expected: cfg.forwards,
        });
    }
    let f = preds.len();
    let weights = dimension_weights(cfg.overall_weight);
    let alpha = cfg.effective_alpha();
    let pairs = f * (f - 1) / 2;

    let mut grads = vec![[0.0; PREDICTION_DIMS]; f];
    for k in 0..f {
        for i in 0..PREDICTION_DIMS {
            let base = 2.0 * weights[i] * (preds[k][i] - label[i]) / f as f64;
            let mut consistency = 0.0;
            if pairs > 0 {
                for j in 0..f {
                    if j != k {
                        consistency += 2.0 * weights[i] * (preds[k][i] - preds[j][i]);
                    }
                }
                consistency /= pairs as f64;
            }
            grads[k][i] = alpha * consistency + (1.0 - alpha) * base;
        }
    }
    Ok(grads)
}
