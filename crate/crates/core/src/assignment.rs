//! Per-location label assignment.
//!
//! Every feature-grid location either is background or carries one (or, with
//! multiple instance prediction, up to `K`) ground-truth targets: a class, a
//! 4-D left/top/right/bottom regression vector and a center-ness score. A
//! ground-truth box makes a location *eligible* when
//!
//! 1. the location falls inside the box — or inside its center sub-box when
//!    center sampling is on — using closed containment, and
//! 2. the level's range test accepts the pairing (see [`LevelStrategy`]).
//!
//! Eligibility is recorded per location as `candidate_count` before any
//! tie-breaking; the ambiguity policy then picks the winner(s). Losing a
//! tie-break never turns a location negative for recall purposes — the box
//! simply isn't represented at that location.

use crate::geometry::{BBox, FeatureLevel, Location};
use crate::ingestion::Annotation;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("location ({x}, {y}) lies outside the box ({x0}, {y0}, {x1}, {y1})")]
    LocationOutsideBox {
        x: f64,
        y: f64,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
}

/// How a location eligible for several boxes picks its target(s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmbiguityPolicy {
    /// Smallest box area wins; the usual COCO rule.
    MinArea,
    /// Smallest distance from the location to the box center wins; the
    /// crowded-scene rule.
    MinDistance,
    /// The `K` nearest box centers all become targets (multiple instance
    /// prediction). Fewer than `K` eligible boxes yield all of them.
    KClosest(usize),
}

/// How ground-truth boxes are routed to pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelStrategy {
    /// Accept when `max(l, t, r, b)` in pixels lies strictly inside the
    /// level's `(range_lo, range_hi)`.
    MaxLtrb,
    /// The ROI-pooling rule: the whole box goes to pyramid level
    /// `clamp(floor(k0 + log2(sqrt(w*h) / 224)), 3, 7)`.
    FpnRoi { k0: i32 },
    /// Accept when `sqrt(w*h) / 2` lies strictly inside the level range.
    SqrtHwHalf,
    /// Accept when `max(w, h) / 2` lies strictly inside the level range.
    MaxHwHalf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignConfig {
    pub center_sampling: bool,
    /// Center-sampling radius in strides.
    pub radius: f64,
    pub ambiguity_policy: AmbiguityPolicy,
    pub level_strategy: LevelStrategy,
    /// Divide stored regression targets by the level stride.
    pub scale_targets_by_stride: bool,
    /// Let crowd-region annotations become targets. Off by default: crowd
    /// regions neither produce positives nor count as ambiguity.
    pub include_crowd: bool,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            center_sampling: true,
            radius: 1.5,
            ambiguity_policy: AmbiguityPolicy::MinArea,
            level_strategy: LevelStrategy::MaxLtrb,
            scale_targets_by_stride: true,
            include_crowd: false,
        }
    }
}

impl AssignConfig {
    /// Whether an annotation can produce training targets at all.
    pub fn annotation_eligible(&self, ann: &Annotation) -> bool {
        (!ann.iscrowd || self.include_crowd) && !ann.bbox.is_degenerate()
    }
}

/// Distances from a location to the four box sides, in pixels or in strides
/// depending on how they were produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegTarget {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl RegTarget {
    pub fn max_component(&self) -> f64 {
        self.left.max(self.top).max(self.right).max(self.bottom)
    }

    pub fn scaled_by(&self, factor: f64) -> RegTarget {
        RegTarget {
            left: self.left * factor,
            top: self.top * factor,
            right: self.right * factor,
            bottom: self.bottom * factor,
        }
    }

    /// Center-ness of the distance vector:
    /// `sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b))`.
    ///
    /// 1 exactly when `l == r` and `t == b`, 0 on a box edge, and invariant
    /// to uniform scaling, so stride-scaled and pixel vectors agree. A
    /// degenerate axis (both distances zero) yields 0.
    pub fn centerness(&self) -> f64 {
        let horiz_max = self.left.max(self.right);
        let vert_max = self.top.max(self.bottom);
        if horiz_max <= 0.0 || vert_max <= 0.0 {
            return 0.0;
        }
        let horiz = self.left.min(self.right) / horiz_max;
        let vert = self.top.min(self.bottom) / vert_max;
        (horiz * vert).sqrt()
    }
}

/// Center sub-box of `bbox` for stride `s` and radius `r`: the window of
/// half-size `r * s` around the box center, clipped to the box itself.
pub fn center_subbox(bbox: &BBox, stride: u32, radius: f64) -> BBox {
    let (cx, cy) = bbox.center();
    let half = radius * stride as f64;
    BBox::new(
        (cx - half).max(bbox.x0),
        (cy - half).max(bbox.y0),
        (cx + half).min(bbox.x1),
        (cy + half).min(bbox.y1),
    )
}

/// Distances from `location` to the sides of `bbox`, divided by the stride
/// when `scale_by_stride` is set. Errors when the location lies outside the
/// box (some distance would be negative).
pub fn encode(
    location: &Location,
    bbox: &BBox,
    stride: u32,
    scale_by_stride: bool,
) -> Result<RegTarget, AssignError> {
    if !bbox.contains(location.image_x, location.image_y) {
        return Err(AssignError::LocationOutsideBox {
            x: location.image_x,
            y: location.image_y,
            x0: bbox.x0,
            y0: bbox.y0,
            x1: bbox.x1,
            y1: bbox.y1,
        });
    }
    let raw = pixel_distances(location, bbox);
    Ok(if scale_by_stride {
        raw.scaled_by(1.0 / stride as f64)
    } else {
        raw
    })
}

fn pixel_distances(location: &Location, bbox: &BBox) -> RegTarget {
    RegTarget {
        left: location.image_x - bbox.x0,
        top: location.image_y - bbox.y0,
        right: bbox.x1 - location.image_x,
        bottom: bbox.y1 - location.image_y,
    }
}

/// Level-range test. `distances` must be unscaled pixel distances; the range
/// bounds are pixel-valued, so the test never sees stride-scaled values.
pub fn level_accepts(
    distances: &RegTarget,
    level: &FeatureLevel,
    strategy: LevelStrategy,
    bbox: &BBox,
) -> bool {
    match strategy {
        LevelStrategy::MaxLtrb => level.accepts_distance(distances.max_component()),
        LevelStrategy::FpnRoi { k0 } => {
            let scale = (bbox.width() * bbox.height()).sqrt();
            let k = (k0 as f64 + (scale / 224.0).log2()).floor().clamp(3.0, 7.0) as i32;
            k == level.pyramid_level()
        }
        LevelStrategy::SqrtHwHalf => {
            level.accepts_distance((bbox.width() * bbox.height()).sqrt() / 2.0)
        }
        LevelStrategy::MaxHwHalf => {
            level.accepts_distance(bbox.width().max(bbox.height()) / 2.0)
        }
    }
}

/// One selected target at a location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationTarget {
    /// Dense class index, always >= 1.
    pub class: u32,
    pub reg: RegTarget,
    pub centerness: f64,
    /// Index of the source annotation within the input slice.
    pub source: usize,
}

/// Assignment outcome for one location.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationAssignment {
    pub location: Location,
    /// Ground-truth boxes the location was eligible for before tie-breaking.
    pub candidate_count: u32,
    /// Winning targets; empty means background. At most one entry except
    /// under [`AmbiguityPolicy::KClosest`].
    pub targets: Vec<LocationTarget>,
}

impl LocationAssignment {
    /// Class target of the first slot, 0 for background.
    pub fn class_target(&self) -> u32 {
        self.targets.first().map_or(0, |t| t.class)
    }
}

/// Full assignment over all levels of one image, locations ordered level by
/// level, row-major within each level.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub per_location: Vec<LocationAssignment>,
}

impl AssignmentResult {
    pub fn positives(&self) -> impl Iterator<Item = &LocationAssignment> {
        self.per_location.iter().filter(|a| !a.targets.is_empty())
    }

    /// Per-annotation flag: true when the annotation won at least one
    /// location.
    pub fn recalled_flags(&self, num_annotations: usize) -> Vec<bool> {
        let mut recalled = vec![false; num_annotations];
        for assignment in &self.per_location {
            for target in &assignment.targets {
                recalled[target.source] = true;
            }
        }
        recalled
    }

    /// Histogram of `candidate_count` over locations with at least one
    /// candidate. Index 0 holds count 1, and the final slot aggregates
    /// everything at `capacity` and above.
    pub fn candidate_histogram(&self, capacity: usize) -> Vec<u64> {
        let mut hist = vec![0u64; capacity];
        for assignment in &self.per_location {
            let c = assignment.candidate_count as usize;
            if c >= 1 {
                hist[(c - 1).min(capacity - 1)] += 1;
            }
        }
        hist
    }
}

/// Index range of grid cells whose image coordinate falls in `[lo, hi]`
/// (closed on both ends) for a level with `n` cells.
fn grid_range(lo: f64, hi: f64, half: f64, stride: f64, n: usize) -> Option<(usize, usize)> {
    if hi < lo || n == 0 {
        return None;
    }
    let mut start = ((lo - half) / stride).ceil() as i64;
    // Guard against float rounding in the division: enforce the closed
    // predicate exactly as written.
    while half + start as f64 * stride < lo {
        start += 1;
    }
    while start > 0 && half + (start - 1) as f64 * stride >= lo {
        start -= 1;
    }
    let mut end = ((hi - half) / stride).floor() as i64;
    while half + end as f64 * stride > hi {
        end -= 1;
    }
    while end + 1 < n as i64 && half + (end + 1) as f64 * stride <= hi {
        end += 1;
    }
    let start = start.max(0);
    let end = end.min(n as i64 - 1);
    if start > end {
        None
    } else {
        Some((start as usize, end as usize))
    }
}

/// Assign every location of every level. Annotation boxes must already be in
/// the same (resized) coordinate frame as the levels.
///
/// The walk is box-centric: each annotation visits only the grid cells its
/// (sub-)box spans at each level, so cost scales with covered cells rather
/// than the full grid. Candidate lists per location come out ordered by
/// annotation index, and all tie-breaks are deterministic: equal areas or
/// equal center distances resolve to the lowest annotation index.
pub fn assign(
    annotations: &[Annotation],
    levels: &[FeatureLevel],
    cfg: &AssignConfig,
) -> AssignmentResult {
    let mut per_level_candidates: Vec<Vec<Vec<u32>>> = levels
        .iter()
        .map(|level| vec![Vec::new(); level.num_locations()])
        .collect();

    for (cells, level) in per_level_candidates.iter_mut().zip(levels) {
        let s = level.stride as f64;
        let half = level.half_offset();
        for (ai, ann) in annotations.iter().enumerate() {
            if !cfg.annotation_eligible(ann) {
                continue;
            }
            let bbox = &ann.bbox;
            // Box-level strategies can reject the pairing before touching
            // any cell; MaxLtrb is per-location and is tested below.
            if !matches!(cfg.level_strategy, LevelStrategy::MaxLtrb) {
                let probe = RegTarget {
                    left: 0.0,
                    top: 0.0,
                    right: 0.0,
                    bottom: 0.0,
                };
                if !level_accepts(&probe, level, cfg.level_strategy, bbox) {
                    continue;
                }
            }
            let region = if cfg.center_sampling {
                center_subbox(bbox, level.stride, cfg.radius)
            } else {
                *bbox
            };
            let Some((gx0, gx1)) = grid_range(region.x0, region.x1, half, s, level.grid_w) else {
                continue;
            };
            let Some((gy0, gy1)) = grid_range(region.y0, region.y1, half, s, level.grid_h) else {
                continue;
            };
            for gy in gy0..=gy1 {
                for gx in gx0..=gx1 {
                    let loc = level.location_at(gx, gy);
                    if matches!(cfg.level_strategy, LevelStrategy::MaxLtrb) {
                        let d = pixel_distances(&loc, bbox);
                        if !level_accepts(&d, level, cfg.level_strategy, bbox) {
                            continue;
                        }
                    }
                    cells[gy * level.grid_w + gx].push(ai as u32);
                }
            }
        }
    }

    let mut per_location = Vec::with_capacity(levels.iter().map(FeatureLevel::num_locations).sum());
    for (cells, level) in per_level_candidates.iter().zip(levels) {
        for loc in level.locations() {
            let candidates = &cells[loc.grid_y * level.grid_w + loc.grid_x];
            let winners = select_targets(candidates, annotations, &loc, cfg.ambiguity_policy);
            let targets = winners
                .into_iter()
                .map(|ai| {
                    let bbox = &annotations[ai].bbox;
                    let reg = encode(&loc, bbox, level.stride, cfg.scale_targets_by_stride)
                        .expect("eligible location lies inside its box");
                    LocationTarget {
                        class: annotations[ai].class_id,
                        reg,
                        centerness: reg.centerness(),
                        source: ai,
                    }
                })
                .collect();
            per_location.push(LocationAssignment {
                location: loc,
                candidate_count: candidates.len() as u32,
                targets,
            });
        }
    }
    AssignmentResult { per_location }
}

fn select_targets(
    candidates: &[u32],
    annotations: &[Annotation],
    loc: &Location,
    policy: AmbiguityPolicy,
) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let center_dist2 = |ai: usize| {
        let (cx, cy) = annotations[ai].bbox.center();
        let dx = loc.image_x - cx;
        let dy = loc.image_y - cy;
        dx * dx + dy * dy
    };
    match policy {
        AmbiguityPolicy::MinArea => {
            let mut best = candidates[0] as usize;
            let mut best_area = annotations[best].bbox.area();
            for &ai in &candidates[1..] {
                let area = annotations[ai as usize].bbox.area();
                if area < best_area {
                    best = ai as usize;
                    best_area = area;
                }
            }
            vec![best]
        }
        AmbiguityPolicy::MinDistance => {
            let mut best = candidates[0] as usize;
            let mut best_d = center_dist2(best);
            for &ai in &candidates[1..] {
                let d = center_dist2(ai as usize);
                if d < best_d {
                    best = ai as usize;
                    best_d = d;
                }
            }
            vec![best]
        }
        AmbiguityPolicy::KClosest(k) => {
            let mut ordered: Vec<(f64, usize)> = candidates
                .iter()
                .map(|&ai| (center_dist2(ai as usize), ai as usize))
                .collect();
            ordered.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            ordered.truncate(k.max(1));
            ordered.into_iter().map(|(_, ai)| ai).collect()
        }
    }
}
