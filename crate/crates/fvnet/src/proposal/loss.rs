//! Stage-1 loss: multi-label binary cross entropy over coordinates,
//! confidence and class scores, plus Huber regression on sizes and radial
//! distances, with analytic gradients for the network backward pass.
//!
//! Reductions: the coordinate, confidence and class terms are means over
//! their participating elements (2 per positive, 1 per positive and
//! negative, n_class per positive respectively); the regression term sums
//! its four Huber components per positive and averages over positives.
//! Components are returned unweighted; the total applies the lambdas.

use super::{
    sigmoid, AnchorPrior, GtBox, HeadTensor, SlotState, TargetAssignment, CHAN_CLASS0, CHAN_CONF,
    CHAN_TH, CHAN_TR1, CHAN_TR2, CHAN_TW, CHAN_TX, CHAN_TY,
};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Probabilities are clamped to [eps, 1 - eps] before the logs.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, PartialEq)]
pub enum LossError {
    LengthMismatch { p: usize, y: usize },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::LengthMismatch { p, y } => {
                write!(f, "bce length mismatch: {p} probabilities vs {y} targets")
            }
        }
    }
}

impl std::error::Error for LossError {}

fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross entropy of probabilities against targets.
pub fn bce(p: &[f64], y: &[f64]) -> Result<f64, LossError> {
    if p.len() != y.len() {
        return Err(LossError::LengthMismatch {
            p: p.len(),
            y: y.len(),
        });
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = p.iter().zip(y.iter()).map(|(&p, &y)| bce_term(p, y)).sum();
    Ok(sum / p.len() as f64)
}

/// Huber loss: quadratic inside |x| < delta, linear outside.
pub fn huber(x: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    if x.abs() < delta {
        0.5 * x * x
    } else {
        delta * x.abs() - 0.5 * delta * delta
    }
}

fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() < delta {
        x
    } else {
        delta * x.signum()
    }
}

/// d/d_logit of bce_term(sigmoid(logit), y); zero where the clamp is
/// active, since the loss is flat there.
fn bce_logit_grad(p_raw: f64, y: f64) -> f64 {
    if p_raw > BCE_EPSILON && p_raw < 1.0 - BCE_EPSILON {
        p_raw - y
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_coord: f64,
    pub lambda_conf: f64,
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_coord: 1.0,
            lambda_conf: 1.0,
            lambda_cls: 1.0,
            lambda_reg: 1.0,
            huber_delta: 1.0,
        }
    }
}

/// Loss components; `total` is the lambda-weighted sum of the raw parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Loss {
    pub total: f64,
    pub coord: f64,
    pub conf: f64,
    pub cls: f64,
    pub reg: f64,
}

/// Regression targets of one positive slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Target {
    /// Fractional cell offsets in [0, 1), compared on the probability scale.
    pub off_x: f64,
    pub off_y: f64,
    pub t_w: f64,
    pub t_h: f64,
    pub t_r1: f64,
    pub t_r2: f64,
    pub class_index: usize,
}

/// Encode a ground truth as the targets of the slot that owns it.
pub fn stage1_target(
    gt: &GtBox,
    stride: usize,
    row: usize,
    col: usize,
    prior: &AnchorPrior,
    r_max: f64,
) -> Stage1Target {
    let s = stride as f64;
    Stage1Target {
        off_x: gt.rect.cx / s - col as f64,
        off_y: gt.rect.cy / s - row as f64,
        t_w: (gt.rect.w / prior.p_w).ln(),
        t_h: (gt.rect.h / prior.p_h).ln(),
        t_r1: gt.r1 / r_max,
        t_r2: gt.r2 / r_max,
        class_index: gt.class.index(),
    }
}

/// Evaluate the stage-1 loss and its gradient with respect to every head
/// element. `priors_by_scale` must be the same grouping the assignment was
/// built from. Slot iteration is a fixed (scale, row, col, prior) order, so
/// totals are bit-reproducible.
pub fn stage1_loss(
    heads: &[HeadTensor],
    assignment: &TargetAssignment,
    gts: &[GtBox],
    priors_by_scale: &[Vec<AnchorPrior>],
    weights: &LossWeights,
    r_max: f64,
) -> (Stage1Loss, Vec<Vec<f64>>) {
    assert_eq!(heads.len(), assignment.grids.len(), "scale count mismatch");
    for (head, grid) in heads.iter().zip(assignment.grids.iter()) {
        assert_eq!(head.grid, *grid, "head grid mismatch");
        assert_eq!(head.priors, assignment.priors_per_scale, "prior count mismatch");
    }

    let mut n_pos = 0usize;
    let mut n_conf = 0usize;
    for slots in &assignment.slots {
        for s in slots {
            match s {
                SlotState::Positive { .. } => {
                    n_pos += 1;
                    n_conf += 1;
                }
                SlotState::Negative => n_conf += 1,
                SlotState::Ignored => {}
            }
        }
    }

    let mut coord_sum = 0.0;
    let mut conf_sum = 0.0;
    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    let mut grads: Vec<Vec<f64>> = heads.iter().map(|h| vec![0.0; h.data.len()]).collect();

    let coord_scale = if n_pos > 0 {
        weights.lambda_coord / (2 * n_pos) as f64
    } else {
        0.0
    };
    let conf_scale = if n_conf > 0 {
        weights.lambda_conf / n_conf as f64
    } else {
        0.0
    };
    let reg_scale = if n_pos > 0 {
        weights.lambda_reg / n_pos as f64
    } else {
        0.0
    };

    for (scale, head) in heads.iter().enumerate() {
        let g = head.grid;
        let cls_scale = if n_pos > 0 {
            weights.lambda_cls / (n_pos * head.n_class) as f64
        } else {
            0.0
        };
        for row in 0..g.rows {
            for col in 0..g.cols {
                for prior in 0..head.priors {
                    let state = assignment.slot(scale, row, col, prior);
                    let o = head.offset(row, col, prior);
                    match state {
                        SlotState::Ignored => {}
                        SlotState::Negative => {
                            let p = sigmoid(head.data[o + CHAN_CONF]);
                            conf_sum += bce_term(p, 0.0);
                            grads[scale][o + CHAN_CONF] += conf_scale * bce_logit_grad(p, 0.0);
                        }
                        SlotState::Positive { gt } => {
                            let target = stage1_target(
                                &gts[gt],
                                g.stride,
                                row,
                                col,
                                &priors_by_scale[scale][prior],
                                r_max,
                            );

                            for (chan, y) in
                                [(CHAN_TX, target.off_x), (CHAN_TY, target.off_y)]
                            {
                                let p = sigmoid(head.data[o + chan]);
                                coord_sum += bce_term(p, y);
                                grads[scale][o + chan] += coord_scale * bce_logit_grad(p, y);
                            }

                            let p = sigmoid(head.data[o + CHAN_CONF]);
                            conf_sum += bce_term(p, 1.0);
                            grads[scale][o + CHAN_CONF] += conf_scale * bce_logit_grad(p, 1.0);

                            for c in 0..head.n_class {
                                let y = if c == target.class_index { 1.0 } else { 0.0 };
                                let p = sigmoid(head.data[o + CHAN_CLASS0 + c]);
                                cls_sum += bce_term(p, y);
                                grads[scale][o + CHAN_CLASS0 + c] +=
                                    cls_scale * bce_logit_grad(p, y);
                            }

                            for (chan, y) in [
                                (CHAN_TW, target.t_w),
                                (CHAN_TH, target.t_h),
                                (CHAN_TR1, target.t_r1),
                                (CHAN_TR2, target.t_r2),
                            ] {
                                let x = head.data[o + chan] - y;
                                reg_sum += huber(x, weights.huber_delta);
                                grads[scale][o + chan] +=
                                    reg_scale * huber_grad(x, weights.huber_delta);
                            }
                        }
                    }
                }
            }
        }
    }

    let coord = if n_pos > 0 {
        coord_sum / (2 * n_pos) as f64
    } else {
        0.0
    };
    let conf = if n_conf > 0 {
        conf_sum / n_conf as f64
    } else {
        0.0
    };
    let cls = if n_pos > 0 {
        cls_sum / (n_pos * heads[0].n_class) as f64
    } else {
        0.0
    };
    let reg = if n_pos > 0 { reg_sum / n_pos as f64 } else { 0.0 };
    let total = weights.lambda_coord * coord
        + weights.lambda_conf * conf
        + weights.lambda_cls * cls
        + weights.lambda_reg * reg;
    (
        Stage1Loss {
            total,
            coord,
            conf,
            cls,
            reg,
        },
        grads,
    )
}
