//! Loss kernels of the detector objective: focal classification loss, GIoU
//! regression loss and binary cross entropy for center-ness, each with its
//! analytic gradient.
//!
//! The kernels take probabilities, not logits; sigmoid fusion belongs to a
//! training harness. Inputs are clamped to `[EPS, 1 - EPS]` (probabilities)
//! or `[EPS, inf)` (regression distances) before evaluation, so no input
//! produces a non-finite value.

use crate::assignment::RegTarget;
use thiserror::Error;

/// Clamp applied to probabilities and regression distances.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("input arrays must have equal length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class probability rows must all have {expected} entries, row {index} has {got}")]
    RaggedProbs {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("class target {class} at location {index} exceeds the {classes} classes provided")]
    ClassOutOfRange {
        index: usize,
        class: u32,
        classes: usize,
    },
    #[error("location {0} is positive but is missing a regression or center-ness entry")]
    MissingPositiveData(usize),
    #[error("location {0} is background but carries regression or center-ness entries")]
    UnexpectedPositiveData(usize),
}

/// Focal loss parameters and the regression balance weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Weight on the regression term of the total loss.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            lambda: 1.0,
        }
    }
}

/// A scalar loss with its derivative w.r.t. the (clamped) scalar input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLoss {
    pub value: f64,
    pub grad: f64,
}

/// GIoU loss with its gradient w.r.t. the four predicted distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegLoss {
    pub value: f64,
    /// d(loss)/d(l, t, r, b) of the prediction.
    pub grad: [f64; 4],
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Binary focal loss of a predicted probability against a 0/1 label.
///
/// * `y = 1`: `-alpha * (1 - p)^gamma * ln(p)`
/// * `y = 0`: `-(1 - alpha) * p^gamma * ln(1 - p)`
///
/// With `gamma = 0` and `alpha = 0.5` this is exactly half of binary cross
/// entropy.
pub fn focal(p: f64, y: bool, cfg: &LossConfig) -> ScalarLoss {
    let p = clamp_prob(p);
    let (a, g) = (cfg.focal_alpha, cfg.focal_gamma);
    if y {
        let w = (1.0 - p).powf(g);
        let value = -a * w * p.ln();
        // d/dp [-a (1-p)^g ln p] = a [g (1-p)^(g-1) ln p - (1-p)^g / p]
        let dw = if g == 0.0 {
            0.0
        } else {
            g * (1.0 - p).powf(g - 1.0)
        };
        ScalarLoss {
            value,
            grad: a * (dw * p.ln() - w / p),
        }
    } else {
        let w = p.powf(g);
        let value = -(1.0 - a) * w * (1.0 - p).ln();
        let dw = if g == 0.0 { 0.0 } else { g * p.powf(g - 1.0) };
        ScalarLoss {
            value,
            grad: -(1.0 - a) * (dw * (1.0 - p).ln() - w / (1.0 - p)),
        }
    }
}

/// Binary cross entropy of probability `o` against soft target `c`.
pub fn bce(o: f64, c: f64) -> ScalarLoss {
    let o = clamp_prob(o);
    ScalarLoss {
        value: -c * o.ln() - (1.0 - c) * (1.0 - o).ln(),
        grad: -c / o + (1.0 - c) / (1.0 - o),
    }
}

/// L1 alternative to [`bce`] for the center-ness head.
pub fn l1(o: f64, c: f64) -> ScalarLoss {
    ScalarLoss {
        value: (o - c).abs(),
        grad: if o >= c { 1.0 } else { -1.0 },
    }
}

/// GIoU regression loss between predicted and target distance vectors.
///
/// Both vectors describe boxes around a shared location, so the boxes are
/// reconstructed as `(-l, -t, r, b)` and the loss is `1 - giou`. Predicted
/// distances are clamped to at least [`EPS`] so a degenerate prediction
/// stays differentiable. The value lives in `[0, 2)` and is zero exactly
/// when the boxes coincide.
pub fn giou_loss(pred: &RegTarget, target: &RegTarget) -> RegLoss {
    let p = [
        pred.left.max(EPS),
        pred.top.max(EPS),
        pred.right.max(EPS),
        pred.bottom.max(EPS),
    ];
    let t = [target.left, target.top, target.right, target.bottom];

    let pw = p[0] + p[2];
    let ph = p[1] + p[3];
    let tw = t[0] + t[2];
    let th = t[1] + t[3];
    let area_p = pw * ph;
    let area_t = tw * th;

    // Both boxes contain the shared location, so the intersection extents
    // are plain min sums and never clamp.
    let iw = p[0].min(t[0]) + p[2].min(t[2]);
    let ih = p[1].min(t[1]) + p[3].min(t[3]);
    let hw = p[0].max(t[0]) + p[2].max(t[2]);
    let hh = p[1].max(t[1]) + p[3].max(t[3]);

    let inter = iw * ih;
    let union = area_p + area_t - inter;
    let hull = hw * hh;
    // giou = I/U - (H - U)/H = I/U - 1 + U/H
    let giou = inter / union - 1.0 + union / hull;
    let value = 1.0 - giou;

    let mut grad = [0.0; 4];
    for k in 0..4 {
        // min/max pick a branch; at exact ties the left branch is taken.
        let d_inter_ext = if p[k] <= t[k] { 1.0 } else { 0.0 };
        let d_hull_ext = if p[k] >= t[k] { 1.0 } else { 0.0 };
        let horizontal = k == 0 || k == 2;
        let d_inter = d_inter_ext * if horizontal { ih } else { iw };
        let d_area_p = if horizontal { ph } else { pw };
        let d_union = d_area_p - d_inter;
        let d_hull = d_hull_ext * if horizontal { hh } else { hw };
        let d_giou = (d_inter * union - inter * d_union) / (union * union)
            + (d_union * hull - union * d_hull) / (hull * hull);
        grad[k] = -d_giou;
    }
    RegLoss { value, grad }
}

/// Shapes and values for one image's worth of predictions and targets.
///
/// All slices run over the same flat location ordering. Background locations
/// (`class_targets == 0`) must carry `None` regression and center-ness
/// entries; positive locations must carry all four.
#[derive(Debug, Clone, Copy)]
pub struct TotalLossInputs<'a> {
    /// Per location, per class (dense 1..=C order) predicted probability.
    pub class_probs: &'a [Vec<f64>],
    /// Per location class target, 0 for background.
    pub class_targets: &'a [u32],
    pub reg_preds: &'a [Option<RegTarget>],
    pub reg_targets: &'a [Option<RegTarget>],
    pub ctr_preds: &'a [Option<f64>],
    pub ctr_targets: &'a [Option<f64>],
}

/// Breakdown of the combined objective over one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub classification: f64,
    pub regression: f64,
    pub centerness: f64,
    pub num_positive: usize,
}

/// Combined objective: classification over every location plus regression
/// and center-ness over positive locations, each normalized by the positive
/// count (clamped to at least one so an empty image is well defined).
///
/// Classification is realized as independent binary focal terms, one per
/// class per location. Summation runs in location order, then class order,
/// so the reduction is reproducible.
pub fn total_loss(inputs: &TotalLossInputs, cfg: &LossConfig) -> Result<TotalLoss, LossError> {
    let n = inputs.class_probs.len();
    for len in [
        inputs.class_targets.len(),
        inputs.reg_preds.len(),
        inputs.reg_targets.len(),
        inputs.ctr_preds.len(),
        inputs.ctr_targets.len(),
    ] {
        if len != n {
            return Err(LossError::LengthMismatch(n, len));
        }
    }
    let classes = inputs.class_probs.first().map_or(0, Vec::len);

    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    let mut ctr_sum = 0.0;
    let mut num_positive = 0usize;

    for i in 0..n {
        let probs = &inputs.class_probs[i];
        if probs.len() != classes {
            return Err(LossError::RaggedProbs {
                index: i,
                expected: classes,
                got: probs.len(),
            });
        }
        let target = inputs.class_targets[i];
        if target as usize > classes {
            return Err(LossError::ClassOutOfRange {
                index: i,
                class: target,
                classes,
            });
        }
        for (c, &p) in probs.iter().enumerate() {
            let y = target == c as u32 + 1;
            cls_sum += focal(p, y, cfg).value;
        }
        let positive = target > 0;
        let row = (
            inputs.reg_preds[i],
            inputs.reg_targets[i],
            inputs.ctr_preds[i],
            inputs.ctr_targets[i],
        );
        match (positive, row) {
            (true, (Some(rp), Some(rt), Some(op), Some(ot))) => {
                num_positive += 1;
                reg_sum += giou_loss(&rp, &rt).value;
                ctr_sum += bce(op, ot).value;
            }
            (false, (None, None, None, None)) => {}
            (true, _) => return Err(LossError::MissingPositiveData(i)),
            (false, _) => return Err(LossError::UnexpectedPositiveData(i)),
        }
    }

    let norm = num_positive.max(1) as f64;
    let classification = cls_sum / norm;
    let regression = cfg.lambda * reg_sum / norm;
    let centerness = ctr_sum / norm;
    Ok(TotalLoss {
        value: classification + regression + centerness,
        classification,
        regression,
        centerness,
        num_positive,
    })
}
