//! RetinaNet-style anchor generation and IoU matching, used as the
//! anchor-based baseline for recall studies.
//!
//! Anchors tile every feature-grid location with `scales x ratios` boxes of
//! base size `size_factor * stride`. Matching follows the Detectron lineage
//! with one firm rule: an anchor only ever matches the ground-truth box it
//! has the highest IoU with. Low-quality matching (a ground-truth box
//! claiming its best anchor even below the positive threshold) operates
//! inside that constraint, so a box whose best anchor is owned by another
//! box stays unmatched.

use crate::geometry::{BBox, FeatureLevel};
use crate::ingestion::Annotation;

/// Second step of the matcher: what a ground-truth box may claim beyond the
/// plain IoU-threshold positives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowQualityPolicy {
    /// No low-quality matches.
    None,
    /// A box claims its best-IoU anchor when that IoU reaches the given
    /// floor (and the anchor is owned by the box).
    Threshold(f64),
    /// A box claims its best-IoU anchor at any positive IoU (same ownership
    /// constraint).
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    /// Base anchor size as a multiple of the level stride.
    pub size_factor: f64,
    /// Size multipliers applied to the base size.
    pub scales: Vec<f64>,
    /// Height/width ratios; area is preserved across ratios.
    pub ratios: Vec<f64>,
    /// IoU at which an anchor's best match becomes positive.
    pub positive_iou: f64,
    pub low_quality: LowQualityPolicy,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            size_factor: 4.0,
            scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            ratios: vec![0.5, 1.0, 2.0],
            positive_iou: 0.5,
            low_quality: LowQualityPolicy::Threshold(0.4),
        }
    }
}

impl AnchorConfig {
    pub fn anchors_per_location(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

/// The anchor set of one level: the grid plus the per-location shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLevel {
    pub level: FeatureLevel,
    /// `(width, height)` per anchor slot, scale-major then ratio.
    pub shapes: Vec<(f64, f64)>,
    /// Flat id of this level's first anchor.
    pub first_id: usize,
}

impl AnchorLevel {
    /// Anchor box for a grid cell and shape slot, centered on the cell's
    /// image point.
    pub fn anchor_box(&self, grid_x: usize, grid_y: usize, shape: usize) -> BBox {
        let loc = self.level.location_at(grid_x, grid_y);
        let (w, h) = self.shapes[shape];
        BBox::new(
            loc.image_x - w / 2.0,
            loc.image_y - h / 2.0,
            loc.image_x + w / 2.0,
            loc.image_y + h / 2.0,
        )
    }

    pub fn anchor_id(&self, grid_x: usize, grid_y: usize, shape: usize) -> usize {
        self.first_id
            + (grid_y * self.level.grid_w + grid_x) * self.shapes.len()
            + shape
    }

    pub fn num_anchors(&self) -> usize {
        self.level.num_locations() * self.shapes.len()
    }
}

/// All anchors of an image, indexable by flat id in (level, row-major cell,
/// shape) order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub levels: Vec<AnchorLevel>,
    total: usize,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Every anchor box paired with its flat id.
    pub fn iter_boxes(&self) -> impl Iterator<Item = (usize, BBox)> + '_ {
        self.levels.iter().flat_map(|al| {
            (0..al.level.grid_h).flat_map(move |gy| {
                (0..al.level.grid_w).flat_map(move |gx| {
                    (0..al.shapes.len())
                        .map(move |s| (al.anchor_id(gx, gy, s), al.anchor_box(gx, gy, s)))
                })
            })
        })
    }
}

/// Generate the anchor grid for a set of feature levels.
pub fn generate_anchors(levels: &[FeatureLevel], cfg: &AnchorConfig) -> AnchorGrid {
    let mut out = Vec::with_capacity(levels.len());
    let mut first_id = 0;
    for &level in levels {
        let base = cfg.size_factor * level.stride as f64;
        let mut shapes = Vec::with_capacity(cfg.anchors_per_location());
        for &scale in &cfg.scales {
            let size = base * scale;
            for &ratio in &cfg.ratios {
                // Preserve area: w * h = size^2 with h / w = ratio.
                let w = size / ratio.sqrt();
                let h = size * ratio.sqrt();
                shapes.push((w, h));
            }
        }
        let anchor_level = AnchorLevel {
            level,
            shapes,
            first_id,
        };
        first_id += anchor_level.num_anchors();
        out.push(anchor_level);
    }
    AnchorGrid {
        levels: out,
        total: first_id,
    }
}

/// Matching outcome over one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per anchor: index of the matched annotation, if any.
    pub anchor_match: Vec<Option<u32>>,
    /// Per annotation: whether any anchor matched it.
    pub recalled: Vec<bool>,
}

/// Match anchors to annotations.
///
/// Step one takes each anchor's argmax-IoU annotation (ties to the lowest
/// annotation index) and keeps it when the IoU reaches `positive_iou`. Step
/// two applies the low-quality policy: each annotation looks at its own
/// best-IoU anchor (ties to the lowest anchor id) and claims it when the
/// policy's floor is met *and* that anchor's argmax annotation is the
/// claimant. Zero-IoU pairs never match under any policy.
pub fn match_anchors(
    grid: &AnchorGrid,
    annotations: &[Annotation],
    cfg: &AnchorConfig,
) -> MatchResult {
    // (best IoU, annotation) per anchor; (best IoU, anchor id) per annotation.
    let mut anchor_best: Vec<(f64, u32)> = vec![(0.0, u32::MAX); grid.len()];
    let mut ann_best: Vec<(f64, usize)> = vec![(0.0, usize::MAX); annotations.len()];

    for al in &grid.levels {
        let stride = al.level.stride as f64;
        let half = al.level.half_offset();
        for (ai, ann) in annotations.iter().enumerate() {
            let b = &ann.bbox;
            for (si, &(w, h)) in al.shapes.iter().enumerate() {
                // Cells whose anchor of this shape can overlap the box.
                let x_lo = b.x0 - w / 2.0;
                let x_hi = b.x1 + w / 2.0;
                let y_lo = b.y0 - h / 2.0;
                let y_hi = b.y1 + h / 2.0;
                let gx0 = (((x_lo - half) / stride).floor().max(0.0)) as usize;
                let gy0 = (((y_lo - half) / stride).floor().max(0.0)) as usize;
                let gx1 = ((x_hi - half) / stride).ceil().max(0.0) as usize;
                let gy1 = ((y_hi - half) / stride).ceil().max(0.0) as usize;
                for gy in gy0..=gy1.min(al.level.grid_h.saturating_sub(1)) {
                    for gx in gx0..=gx1.min(al.level.grid_w.saturating_sub(1)) {
                        let anchor = al.anchor_box(gx, gy, si);
                        let iou = anchor.iou(b);
                        if iou <= 0.0 {
                            continue;
                        }
                        let id = al.anchor_id(gx, gy, si);
                        // Each (anchor, annotation) pair is visited once and
                        // annotations ascend, so strict > keeps the lowest
                        // annotation index on IoU ties.
                        if iou > anchor_best[id].0 {
                            anchor_best[id] = (iou, ai as u32);
                        }
                        // Shape-major visiting does not ascend in anchor id,
                        // so lowest-id ties need the explicit comparison.
                        if iou > ann_best[ai].0 || (iou == ann_best[ai].0 && id < ann_best[ai].1) {
                            ann_best[ai] = (iou, id);
                        }
                    }
                }
            }
        }
    }

    let mut anchor_match: Vec<Option<u32>> = vec![None; grid.len()];
    let mut recalled = vec![false; annotations.len()];

    for (id, &(iou, ai)) in anchor_best.iter().enumerate() {
        if ai != u32::MAX && iou >= cfg.positive_iou {
            anchor_match[id] = Some(ai);
            recalled[ai as usize] = true;
        }
    }

    let floor = match cfg.low_quality {
        LowQualityPolicy::None => None,
        LowQualityPolicy::Threshold(t) => Some(t),
        LowQualityPolicy::All => Some(f64::MIN_POSITIVE),
    };
    if let Some(floor) = floor {
        for (ai, &(iou, id)) in ann_best.iter().enumerate() {
            if id == usize::MAX || iou < floor {
                continue;
            }
            // The claim only stands when the anchor is owned by this box.
            if anchor_best[id].1 == ai as u32 {
                anchor_match[id] = Some(ai as u32);
                recalled[ai] = true;
            }
        }
    }

    MatchResult {
        anchor_match,
        recalled,
    }
}
