//! Inference-side pipeline: decode regression vectors into boxes, fuse
//! center-ness into the ranking score, threshold, and suppress duplicates.
//!
//! Suppression compares the fused score and uses a strict `>` IoU test; ties
//! in score break by location id, then class, then insertion order, so the
//! whole pipeline is deterministic.

use crate::assignment::RegTarget;
use crate::geometry::{BBox, FeatureLevel, Location};

/// One decoded detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    /// Category id in the coordinate system of the producing file or
    /// dataset; the pipeline emits dense class indices.
    pub category_id: i64,
    /// Classification score in `[0, 1]`.
    pub score: f64,
    /// Predicted center-ness, when the producer had one.
    pub centerness: Option<f64>,
    /// Ranking score: `sqrt(score * centerness)` when center-ness is
    /// present, plain `score` otherwise.
    pub fused: f64,
    /// Packed source-location identity (see [`Location::id`]); `None` for
    /// detections that did not come through this pipeline.
    pub location_id: Option<u64>,
    /// Prediction slot in `[0, K)` under multiple instance prediction.
    pub slot: u32,
}

impl Detection {
    pub fn new(
        bbox: BBox,
        category_id: i64,
        score: f64,
        centerness: Option<f64>,
        location_id: Option<u64>,
    ) -> Self {
        let fused = match centerness {
            Some(o) => fuse(score, o),
            None => score,
        };
        Self {
            bbox,
            category_id,
            score,
            centerness,
            fused,
            location_id,
            slot: 0,
        }
    }
}

/// Post-processing knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostConfig {
    /// Keep locations with classification score strictly above this.
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
    /// Use Set NMS (same-location suppression skipped) instead of plain NMS.
    pub use_set_nms: bool,
    pub max_detections: usize,
    /// Pool all classes into one suppression group.
    pub class_agnostic_nms: bool,
    /// Score with center-ness recomputed from the predicted regression
    /// vector instead of the dedicated center-ness output.
    pub centerness_from_regression: bool,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou_threshold: 0.6,
            use_set_nms: false,
            max_detections: 100,
            class_agnostic_nms: false,
            centerness_from_regression: false,
        }
    }
}

impl PostConfig {
    /// The crowded-scene preset: NMS threshold 0.5 and Set NMS on.
    pub fn crowd() -> Self {
        Self {
            nms_iou_threshold: 0.5,
            use_set_nms: true,
            ..Self::default()
        }
    }
}

/// Invert the regression encoding at a location:
/// `(x - l*s, y - t*s, x + r*s, y + b*s)` when `scaled`, stride 1 otherwise.
///
/// No clipping happens here; the pipeline clips to the image after decoding.
pub fn decode(location: &Location, reg: &RegTarget, stride: u32, scaled: bool) -> BBox {
    let s = if scaled { stride as f64 } else { 1.0 };
    BBox::new(
        location.image_x - reg.left * s,
        location.image_y - reg.top * s,
        location.image_x + reg.right * s,
        location.image_y + reg.bottom * s,
    )
}

/// Score fusion: `sqrt(p * o)`.
pub fn fuse(p: f64, o: f64) -> f64 {
    (p * o).sqrt()
}

fn rank_key(d: &Detection, index: usize) -> (f64, u64, i64, usize) {
    // Sort helpers compare (-fused, location, class, insertion order).
    (-d.fused, d.location_id.unwrap_or(u64::MAX), d.category_id, index)
}

fn sorted_indices(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        rank_key(&dets[a], a)
            .partial_cmp(&rank_key(&dets[b], b))
            .expect("scores are finite")
    });
    order
}

/// Greedy NMS over one suppression group (the caller groups by class).
///
/// Detections are visited in descending fused score; a candidate is dropped
/// exactly when its IoU with an already-kept detection strictly exceeds the
/// threshold. Kept detections come back in rank order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    suppress(dets, iou_threshold, false).0
}

/// Set NMS: suppression is skipped when suppressor and candidate share a
/// location id, letting multiple predictions from one location coexist.
///
/// Pairs where either side lacks a location id fall back to plain
/// suppression; the second return value counts such pairs.
pub fn set_nms(dets: &[Detection], iou_threshold: f64) -> (Vec<Detection>, usize) {
    suppress(dets, iou_threshold, true)
}

fn suppress(dets: &[Detection], iou_threshold: f64, set_mode: bool) -> (Vec<Detection>, usize) {
    let order = sorted_indices(dets);
    let mut kept: Vec<usize> = Vec::new();
    let mut fallback_pairs = 0usize;
    'candidates: for &i in &order {
        for &k in &kept {
            if set_mode {
                match (dets[k].location_id, dets[i].location_id) {
                    (Some(a), Some(b)) if a == b => continue,
                    (Some(_), Some(_)) => {}
                    _ => fallback_pairs += 1,
                }
            }
            if dets[k].bbox.iou(&dets[i].bbox) > iou_threshold {
                continue 'candidates;
            }
        }
        kept.push(i);
    }
    (kept.into_iter().map(|i| dets[i].clone()).collect(), fallback_pairs)
}

/// Raw network-style outputs for one location.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationPrediction {
    /// Per-class probabilities in dense `1..=C` order.
    pub probs: Vec<f64>,
    pub reg: RegTarget,
    pub centerness: f64,
}

/// All predictions of one feature level, row-major like
/// [`FeatureLevel::locations`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPredictions {
    pub level: FeatureLevel,
    pub preds: Vec<LocationPrediction>,
}

/// Threshold, decode, fuse and suppress one image's raw predictions.
///
/// Scores are thresholded on the raw classification probability before
/// fusion; decoded boxes are clipped to the image; suppression is class-wise
/// unless configured otherwise; the top `max_detections` by fused score
/// survive.
pub fn run_pipeline(
    levels: &[LevelPredictions],
    image_w: u32,
    image_h: u32,
    scaled_targets: bool,
    cfg: &PostConfig,
) -> Vec<Detection> {
    let mut candidates: Vec<Detection> = Vec::new();
    for level in levels {
        debug_assert_eq!(level.preds.len(), level.level.num_locations());
        for (loc, pred) in level.level.locations().zip(&level.preds) {
            for (ci, &p) in pred.probs.iter().enumerate() {
                if p <= cfg.score_threshold {
                    continue;
                }
                let bbox = decode(&loc, &pred.reg, level.level.stride, scaled_targets)
                    .clip(image_w as f64, image_h as f64);
                let o = if cfg.centerness_from_regression {
                    pred.reg.centerness()
                } else {
                    pred.centerness
                };
                candidates.push(Detection::new(
                    bbox,
                    ci as i64 + 1,
                    p,
                    Some(o),
                    Some(loc.id()),
                ));
            }
        }
    }

    let mut kept: Vec<Detection> = Vec::new();
    if cfg.class_agnostic_nms {
        kept = run_group(&candidates, cfg);
    } else {
        let mut classes: Vec<i64> = candidates.iter().map(|d| d.category_id).collect();
        classes.sort_unstable();
        classes.dedup();
        for class in classes {
            let group: Vec<Detection> = candidates
                .iter()
                .filter(|d| d.category_id == class)
                .cloned()
                .collect();
            kept.extend(run_group(&group, cfg));
        }
    }

    let order = sorted_indices(&kept);
    order
        .into_iter()
        .take(cfg.max_detections)
        .map(|i| kept[i].clone())
        .collect()
}

fn run_group(group: &[Detection], cfg: &PostConfig) -> Vec<Detection> {
    if cfg.use_set_nms {
        set_nms(group, cfg.nms_iou_threshold).0
    } else {
        nms(group, cfg.nms_iou_threshold)
    }
}
