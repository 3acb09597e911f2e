//! Detection metrics: COCO-protocol AP/AR, log-average miss rate and the
//! Jaccard index for crowded scenes.
//!
//! The COCO evaluator follows the reference protocol: greedy
//! highest-score-first matching per IoU threshold, 101-point interpolated
//! precision averaged over thresholds `0.50:0.05:0.95`, size buckets at
//! areas `32^2` and `96^2`, and crowd regions acting as ignore regions
//! (overlap with a crowd region is intersection over detection area, and a
//! detection matched to one is neither a true nor a false positive).
//!
//! Every reduction runs in a fixed order (classes ascending, images by id,
//! detections by descending fused score with deterministic tie-breaks), so
//! repeated evaluations are bit-identical.
//!
//! Detections for image ids the dataset does not contain are ignored, like
//! the reference COCO evaluator; detections with unknown category ids are an
//! error.

use crate::geometry::BBox;
use crate::ingestion::{fmt6, sig6, Dataset, DetectionSet, Report};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("detections use category id {0} which the dataset does not define")]
    CategoryMismatch(i64),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
}

/// COCO IoU thresholds 0.50:0.05:0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// COCO recall sample points 0.00:0.01:1.00.
pub fn recall_points() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

pub const MAX_DETS: [usize; 3] = [1, 10, 100];

/// `(lo, hi)` area ranges: all, small, medium, large.
pub const AREA_RANGES: [(f64, f64); 4] = [
    (0.0, 1e10),
    (0.0, 32.0 * 32.0),
    (32.0 * 32.0, 96.0 * 96.0),
    (96.0 * 96.0, 1e10),
];

/// Overlap used for matching: IoU for plain regions, intersection over
/// detection area for crowd regions.
pub fn match_overlap(det: &BBox, gt: &BBox, gt_is_crowd: bool) -> f64 {
    if gt_is_crowd {
        let area = det.area();
        if area > 0.0 {
            det.intersection_area(gt) / area
        } else {
            0.0
        }
    } else {
        det.iou(gt)
    }
}

/// A ground-truth region as the matcher sees it.
#[derive(Debug, Clone, Copy)]
pub struct GtRegion {
    pub bbox: BBox,
    pub iscrowd: bool,
    pub area: f64,
}

/// Per-detection outcome of matching one image at one threshold.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    /// Matched ground-truth index (into the caller's slice), per detection
    /// in rank order.
    pub det_match: Vec<Option<usize>>,
    /// Detection ignored: matched to an ignored region, or unmatched with
    /// area outside the evaluated range.
    pub det_ignore: Vec<bool>,
    /// Rank of the matching detection, per ground truth.
    pub gt_match: Vec<Option<usize>>,
    /// Ground-truth regions that count toward recall.
    pub num_valid_gt: usize,
}

/// Greedy highest-score-first matching of rank-ordered detections against
/// ground truth at one IoU threshold and area range.
///
/// Non-ignored regions are offered first; once a detection holds a match to
/// a non-ignored region it never trades it for an ignored one. Among regions
/// tied at the best overlap, the last one offered wins. Crowd regions can
/// absorb any number of detections.
pub fn greedy_match(
    det_boxes: &[BBox],
    gts: &[GtRegion],
    area_range: (f64, f64),
    thr: f64,
) -> MatchOutcome {
    let gt_ignored: Vec<bool> = gts
        .iter()
        .map(|g| g.iscrowd || g.area < area_range.0 || g.area > area_range.1)
        .collect();
    // Stable: valid regions first, original order within each group.
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&gi| gt_ignored[gi]);

    let effective_thr = thr.min(1.0 - 1e-10);
    let mut det_match = vec![None; det_boxes.len()];
    let mut det_ignore = vec![false; det_boxes.len()];
    let mut gt_match = vec![None; gts.len()];

    for (rank, det) in det_boxes.iter().enumerate() {
        let mut best = effective_thr;
        let mut chosen: Option<usize> = None;
        for &gi in &gt_order {
            if gt_match[gi].is_some() && !gts[gi].iscrowd {
                continue;
            }
            if let Some(c) = chosen {
                if !gt_ignored[c] && gt_ignored[gi] {
                    break;
                }
            }
            let ov = match_overlap(det, &gts[gi].bbox, gts[gi].iscrowd);
            if ov < best {
                continue;
            }
            best = ov;
            chosen = Some(gi);
        }
        if let Some(gi) = chosen {
            det_match[rank] = Some(gi);
            det_ignore[rank] = gt_ignored[gi];
            gt_match[gi] = Some(rank);
        } else {
            let area = det.area();
            det_ignore[rank] = area < area_range.0 || area > area_range.1;
        }
    }
    let num_valid_gt = gt_ignored.iter().filter(|&&ig| !ig).count();
    MatchOutcome {
        det_match,
        det_ignore,
        gt_match,
        num_valid_gt,
    }
}

/// COCO-protocol summary plus the averaged PR curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub ar100: f64,
    pub ar_small: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
    /// Class-averaged interpolated precision at every recall point, per IoU
    /// threshold (area: all, top-100 detections).
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrPoint {
    pub iou_threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

// Per (image, class): rank-ordered scores and per-(area, threshold) flags.
struct ImageClassEval {
    image_pos: usize,
    scores: Vec<f64>,
    // [area][threshold] -> (matched, ignored) per detection rank.
    flags: Vec<Vec<Vec<(bool, bool)>>>,
    // [area] -> valid gt count (threshold-independent).
    valid_gt: Vec<usize>,
}

fn precision_of(tp: u64, fp: u64) -> f64 {
    if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    }
}

/// 101-point interpolated average precision from rank-ordered
/// (tp, fp, ignored) flags and a positive count.
fn average_precision(flags: &[(bool, bool)], npig: usize, points: &[f64]) -> (f64, Vec<f64>) {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for &(matched, ignored) in flags {
        if !ignored {
            if matched {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        recall.push(tp as f64 / npig as f64);
        precision.push(precision_of(tp, fp));
    }
    // Envelope: precision becomes non-increasing from the right.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i] < precision[i + 1] {
            precision[i] = precision[i + 1];
        }
    }
    let mut interpolated = Vec::with_capacity(points.len());
    let mut idx = 0;
    for &r in points {
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        interpolated.push(if idx < precision.len() {
            precision[idx]
        } else {
            0.0
        });
    }
    let ap = interpolated.iter().sum::<f64>() / points.len() as f64;
    (ap, interpolated)
}

/// Evaluate detections against a dataset under the COCO protocol.
pub fn coco_eval(dets: &DetectionSet, dataset: &Dataset) -> Result<CocoSummary, MetricsError> {
    for group in dets.values() {
        for d in group {
            if dataset.class_of_category(d.category_id).is_none() {
                return Err(MetricsError::CategoryMismatch(d.category_id));
            }
        }
    }
    let thresholds = iou_thresholds();
    let points = recall_points();
    let classes = dataset.num_classes();
    let max_det = *MAX_DETS.last().expect("nonempty");

    // AP per [class][area][threshold]; recall per [class][area][threshold][maxdet].
    let mut ap = vec![vec![vec![f64::NAN; thresholds.len()]; AREA_RANGES.len()]; classes];
    let mut rec =
        vec![vec![vec![[f64::NAN; MAX_DETS.len()]; thresholds.len()]; AREA_RANGES.len()]; classes];
    let mut curve_acc = vec![vec![0.0; points.len()]; thresholds.len()];
    let mut curve_classes = 0usize;

    for class in 1..=classes as u32 {
        let per_image: Vec<ImageClassEval> = dataset
            .images
            .par_iter()
            .enumerate()
            .map(|(image_pos, image)| {
                let gts: Vec<GtRegion> = image
                    .annotations
                    .iter()
                    .filter(|a| a.class_id == class)
                    .map(|a| GtRegion {
                        bbox: a.bbox,
                        iscrowd: a.iscrowd,
                        area: a.area,
                    })
                    .collect();
                let mut ranked: Vec<(f64, usize, BBox)> = dets
                    .get(&image.image_id)
                    .map(|group| {
                        group
                            .iter()
                            .enumerate()
                            .filter(|(_, d)| {
                                dataset.class_of_category(d.category_id) == Some(class)
                            })
                            .map(|(i, d)| (d.fused, i, d.bbox))
                            .collect()
                    })
                    .unwrap_or_default();
                ranked.sort_by(|a, b| {
                    (-a.0, a.1).partial_cmp(&(-b.0, b.1)).expect("finite scores")
                });
                ranked.truncate(max_det);
                let det_boxes: Vec<BBox> = ranked.iter().map(|r| r.2).collect();
                let scores: Vec<f64> = ranked.iter().map(|r| r.0).collect();

                let mut flags = Vec::with_capacity(AREA_RANGES.len());
                let mut valid_gt = Vec::with_capacity(AREA_RANGES.len());
                for &area in &AREA_RANGES {
                    let mut per_thr = Vec::with_capacity(thresholds.len());
                    let mut npig = 0;
                    for &thr in &thresholds {
                        let outcome = greedy_match(&det_boxes, &gts, area, thr);
                        npig = outcome.num_valid_gt;
                        per_thr.push(
                            outcome
                                .det_match
                                .iter()
                                .zip(&outcome.det_ignore)
                                .map(|(m, &ig)| (m.is_some(), ig))
                                .collect(),
                        );
                    }
                    flags.push(per_thr);
                    valid_gt.push(npig);
                }
                ImageClassEval {
                    image_pos,
                    scores,
                    flags,
                    valid_gt,
                }
            })
            .collect();

        // Global rank over all images: (-score, image position, image rank).
        let mut order: Vec<(usize, usize)> = Vec::new();
        for (slot, e) in per_image.iter().enumerate() {
            for rank in 0..e.scores.len() {
                order.push((slot, rank));
            }
        }
        order.sort_by(|&(sa, ra), &(sb, rb)| {
            let ka = (-per_image[sa].scores[ra], per_image[sa].image_pos, ra);
            let kb = (-per_image[sb].scores[rb], per_image[sb].image_pos, rb);
            ka.partial_cmp(&kb).expect("finite scores")
        });

        let mut class_has_gt = false;
        for (ai, _) in AREA_RANGES.iter().enumerate() {
            let npig: usize = per_image.iter().map(|e| e.valid_gt[ai]).sum();
            if npig == 0 {
                continue;
            }
            if ai == 0 {
                class_has_gt = true;
            }
            for (ti, _) in thresholds.iter().enumerate() {
                // The maxDet = 100 list drives AP; shorter per-image
                // prefixes drive AR at 1 and 10. Matching is prefix-stable
                // (earlier detections never see later ones), so slicing the
                // top-100 outcome by rank is exact.
                let mut flags = Vec::with_capacity(order.len());
                let mut tp_at = [0u64; MAX_DETS.len()];
                for &(slot, rank) in &order {
                    let f = per_image[slot].flags[ai][ti][rank];
                    flags.push(f);
                    if f.0 && !f.1 {
                        for (mi, &k) in MAX_DETS.iter().enumerate() {
                            if rank < k {
                                tp_at[mi] += 1;
                            }
                        }
                    }
                }
                let (ap_value, interpolated) = average_precision(&flags, npig, &points);
                ap[class as usize - 1][ai][ti] = ap_value;
                if ai == 0 {
                    for (pi, p) in interpolated.iter().enumerate() {
                        curve_acc[ti][pi] += p;
                    }
                }
                for (mi, _) in MAX_DETS.iter().enumerate() {
                    rec[class as usize - 1][ai][ti][mi] = tp_at[mi] as f64 / npig as f64;
                }
            }
        }
        if class_has_gt {
            curve_classes += 1;
        }
    }

    let mean_ap = |area: usize, thr: Option<usize>| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for class_ap in &ap {
            for (ti, &v) in class_ap[area].iter().enumerate() {
                if thr.is_some_and(|want| want != ti) {
                    continue;
                }
                if !v.is_nan() {
                    sum += v;
                    count += 1;
                }
            }
        }
        if count > 0 {
            sum / count as f64
        } else {
            0.0
        }
    };
    let mean_ar = |area: usize, maxdet: usize| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for class_rec in &rec {
            for thr_rec in &class_rec[area] {
                let v = thr_rec[maxdet];
                if !v.is_nan() {
                    sum += v;
                    count += 1;
                }
            }
        }
        if count > 0 {
            sum / count as f64
        } else {
            0.0
        }
    };

    let mut pr_curve = Vec::with_capacity(thresholds.len() * points.len());
    for (ti, &thr) in thresholds.iter().enumerate() {
        for (pi, &r) in points.iter().enumerate() {
            let precision = if curve_classes > 0 {
                curve_acc[ti][pi] / curve_classes as f64
            } else {
                0.0
            };
            pr_curve.push(PrPoint {
                iou_threshold: thr,
                recall: r,
                precision,
            });
        }
    }

    Ok(CocoSummary {
        ap: mean_ap(0, None),
        ap50: mean_ap(0, Some(0)),
        ap75: mean_ap(0, Some(5)),
        ap_small: mean_ap(1, None),
        ap_medium: mean_ap(2, None),
        ap_large: mean_ap(3, None),
        ar1: mean_ar(0, 0),
        ar10: mean_ar(0, 1),
        ar100: mean_ar(0, 2),
        ar_small: mean_ar(1, 2),
        ar_medium: mean_ar(2, 2),
        ar_large: mean_ar(3, 2),
        pr_curve,
    })
}

/// Log-average miss rate over false positives per image in `[1e-2, 1e2]`.
///
/// Detections are evaluated single-class at IoU 0.5 with crowd regions
/// ignored. The miss-rate/FPPI curve is sampled at nine log-spaced anchors;
/// at each anchor the operating point with the largest FPPI not exceeding it
/// is taken (the empty operating point — no detections, full miss — is
/// always available). Miss rates clamp at `1e-10` before the geometric mean.
pub fn mr2(dets: &DetectionSet, dataset: &Dataset) -> Result<f64, MetricsError> {
    let num_images = dataset.images.len();
    let total_gt: usize = dataset
        .images
        .iter()
        .map(|i| i.annotations.iter().filter(|a| !a.iscrowd).count())
        .sum();
    if total_gt == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }

    // Per detection in global rank order: score, tp flag, ignored flag.
    let per_image: Vec<Vec<(f64, bool, bool)>> = dataset
        .images
        .par_iter()
        .map(|image| {
            let gts: Vec<GtRegion> = image
                .annotations
                .iter()
                .map(|a| GtRegion {
                    bbox: a.bbox,
                    iscrowd: a.iscrowd,
                    area: a.area,
                })
                .collect();
            let mut ranked: Vec<(f64, usize, BBox)> = dets
                .get(&image.image_id)
                .map(|group| {
                    group
                        .iter()
                        .enumerate()
                        .map(|(i, d)| (d.fused, i, d.bbox))
                        .collect()
                })
                .unwrap_or_default();
            ranked.sort_by(|a, b| {
                (-a.0, a.1).partial_cmp(&(-b.0, b.1)).expect("finite scores")
            });
            let boxes: Vec<BBox> = ranked.iter().map(|r| r.2).collect();
            let outcome = greedy_match(&boxes, &gts, AREA_RANGES[0], 0.5);
            ranked
                .iter()
                .zip(outcome.det_match.iter().zip(&outcome.det_ignore))
                .map(|(&(score, _, _), (m, &ig))| (score, m.is_some() && !ig, ig))
                .collect()
        })
        .collect();

    let mut order: Vec<(usize, usize)> = Vec::new();
    for (slot, group) in per_image.iter().enumerate() {
        for rank in 0..group.len() {
            order.push((slot, rank));
        }
    }
    order.sort_by(|&(sa, ra), &(sb, rb)| {
        let ka = (-per_image[sa][ra].0, sa, ra);
        let kb = (-per_image[sb][rb].0, sb, rb);
        ka.partial_cmp(&kb).expect("finite scores")
    });

    // Sweep operating points from strictest (no detections) outward. An
    // operating point is a score threshold, so detections tied on score
    // enter together.
    let mut curve = vec![(0.0f64, 1.0f64)]; // (fppi, miss rate)
    let mut tp = 0u64;
    let mut fp = 0u64;
    for (pos, &(slot, rank)) in order.iter().enumerate() {
        let (score, is_tp, ignored) = per_image[slot][rank];
        if !ignored {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let group_end = match order.get(pos + 1) {
            Some(&(ns, nr)) => per_image[ns][nr].0 != score,
            None => true,
        };
        if group_end {
            curve.push((
                fp as f64 / num_images as f64,
                1.0 - tp as f64 / total_gt as f64,
            ));
        }
    }

    let mut log_sum = 0.0;
    const ANCHORS: usize = 9;
    for i in 0..ANCHORS {
        let anchor = 10f64.powf(-2.0 + i as f64 * 0.5);
        let mut miss = 1.0;
        for &(fppi, m) in &curve {
            if fppi <= anchor {
                miss = m;
            } else {
                break;
            }
        }
        log_sum += miss.max(1e-10).ln();
    }
    Ok((log_sum / ANCHORS as f64).exp())
}

/// Jaccard-index outcome at the best scoring threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct JiOutcome {
    pub ji: f64,
    /// The score threshold that maximized the dataset-level JI.
    pub threshold: f64,
    pub matches: u64,
    pub gt_count: u64,
    pub det_count: u64,
}

/// Maximum-cardinality matching size between detections and ground truth
/// with edges where IoU >= `iou_thr` (augmenting-path search).
pub fn max_matching(det_boxes: &[BBox], gt_boxes: &[BBox], iou_thr: f64) -> usize {
    let mut matcher = IncrementalMatcher::new(gt_boxes.to_vec(), iou_thr);
    for det in det_boxes {
        matcher.add_detection(det);
    }
    matcher.matches()
}

struct IncrementalMatcher {
    gts: Vec<BBox>,
    iou_thr: f64,
    // Edges per detection: gt indices with sufficient IoU.
    edges: Vec<Vec<usize>>,
    gt_owner: Vec<Option<usize>>,
    matches: usize,
}

impl IncrementalMatcher {
    fn new(gts: Vec<BBox>, iou_thr: f64) -> Self {
        let n = gts.len();
        Self {
            gts,
            iou_thr,
            edges: Vec::new(),
            gt_owner: vec![None; n],
            matches: 0,
        }
    }

    /// Add the next detection (in descending score order) and re-augment.
    /// Maximum matchings grow by at most one per added vertex, so one
    /// augmenting search keeps the matching maximum.
    fn add_detection(&mut self, det: &BBox) {
        let edges: Vec<usize> = self
            .gts
            .iter()
            .enumerate()
            .filter(|(_, gt)| det.iou(gt) >= self.iou_thr)
            .map(|(gi, _)| gi)
            .collect();
        self.edges.push(edges);
        let di = self.edges.len() - 1;
        let mut visited = vec![false; self.edges.len()];
        if self.try_augment(di, &mut visited) {
            self.matches += 1;
        }
    }

    fn try_augment(&mut self, di: usize, visited: &mut [bool]) -> bool {
        if visited[di] {
            return false;
        }
        visited[di] = true;
        for ei in 0..self.edges[di].len() {
            let gi = self.edges[di][ei];
            match self.gt_owner[gi] {
                None => {
                    self.gt_owner[gi] = Some(di);
                    return true;
                }
                Some(owner) => {
                    if self.try_augment(owner, visited) {
                        self.gt_owner[gi] = Some(di);
                        return true;
                    }
                }
            }
        }
        false
    }

    fn matches(&self) -> usize {
        self.matches
    }
}

/// Dataset-level Jaccard index: per-image maximum-cardinality IoU matching,
/// aggregated as `sum(matches) / (sum(gt) + sum(dets) - sum(matches))`.
///
/// The detection set is chosen by sweeping a score threshold over the
/// observed scores and keeping the threshold that maximizes the aggregate JI
/// (ties resolve to the higher threshold). Crowd regions are excluded.
pub fn jaccard_index(
    dets: &DetectionSet,
    dataset: &Dataset,
    iou_thr: f64,
) -> Result<JiOutcome, MetricsError> {
    // Per image: detections in descending score order, with the matching
    // size after each prefix.
    struct ImageCurve {
        scores: Vec<f64>,    // descending
        matches: Vec<usize>, // matches[i] = matching size using scores[..=i]
        gt_count: usize,
    }

    let curves: Vec<ImageCurve> = dataset
        .images
        .par_iter()
        .map(|image| {
            let gt_boxes: Vec<BBox> = image
                .annotations
                .iter()
                .filter(|a| !a.iscrowd)
                .map(|a| a.bbox)
                .collect();
            let mut ranked: Vec<(f64, usize, BBox)> = dets
                .get(&image.image_id)
                .map(|group| {
                    group
                        .iter()
                        .enumerate()
                        .map(|(i, d)| (d.fused, i, d.bbox))
                        .collect()
                })
                .unwrap_or_default();
            ranked.sort_by(|a, b| {
                (-a.0, a.1).partial_cmp(&(-b.0, b.1)).expect("finite scores")
            });
            let mut matcher = IncrementalMatcher::new(gt_boxes.clone(), iou_thr);
            let mut matches = Vec::with_capacity(ranked.len());
            for &(_, _, bbox) in &ranked {
                matcher.add_detection(&bbox);
                matches.push(matcher.matches());
            }
            ImageCurve {
                scores: ranked.iter().map(|r| r.0).collect(),
                matches,
                gt_count: gt_boxes.len(),
            }
        })
        .collect();

    let total_gt: u64 = curves.iter().map(|c| c.gt_count as u64).sum();

    // Candidate thresholds: unique observed scores, highest first, thinned
    // to a bounded set for very large inputs.
    let mut candidates: Vec<f64> = curves.iter().flat_map(|c| c.scores.iter().copied()).collect();
    candidates.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    candidates.dedup();
    const MAX_CANDIDATES: usize = 512;
    if candidates.len() > MAX_CANDIDATES {
        let step = candidates.len() as f64 / MAX_CANDIDATES as f64;
        let mut thinned: Vec<f64> = (0..MAX_CANDIDATES)
            .map(|i| candidates[(i as f64 * step) as usize])
            .collect();
        if let Some(&last) = candidates.last() {
            if thinned.last() != Some(&last) {
                thinned.push(last);
            }
        }
        candidates = thinned;
    }

    let mut best = JiOutcome {
        ji: 0.0,
        threshold: f64::INFINITY,
        matches: 0,
        gt_count: total_gt,
        det_count: 0,
    };
    for &threshold in &candidates {
        let mut matches = 0u64;
        let mut det_count = 0u64;
        for curve in &curves {
            // Number of detections with score >= threshold.
            let kept = curve.scores.partition_point(|&s| s >= threshold);
            det_count += kept as u64;
            if kept > 0 {
                matches += curve.matches[kept - 1] as u64;
            }
        }
        let denom = total_gt + det_count - matches;
        let ji = if denom > 0 {
            matches as f64 / denom as f64
        } else {
            0.0
        };
        // Strict improvement keeps the highest qualifying threshold.
        if ji > best.ji {
            best = JiOutcome {
                ji,
                threshold,
                matches,
                gt_count: total_gt,
                det_count,
            };
        }
    }
    if best.threshold.is_infinite() && !candidates.is_empty() {
        best.threshold = candidates[0];
    }
    Ok(best)
}

/// The combined metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub coco: CocoSummary,
    pub mr2: f64,
    pub ji: JiOutcome,
}

/// Run all three metric families.
pub fn evaluate(
    dets: &DetectionSet,
    dataset: &Dataset,
    ji_iou: f64,
) -> Result<EvalReport, MetricsError> {
    Ok(EvalReport {
        coco: coco_eval(dets, dataset)?,
        mr2: mr2(dets, dataset)?,
        ji: jaccard_index(dets, dataset, ji_iou)?,
    })
}

impl EvalReport {
    fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("ap", self.coco.ap),
            ("ap50", self.coco.ap50),
            ("ap75", self.coco.ap75),
            ("ap_small", self.coco.ap_small),
            ("ap_medium", self.coco.ap_medium),
            ("ap_large", self.coco.ap_large),
            ("ar1", self.coco.ar1),
            ("ar10", self.coco.ar10),
            ("ar100", self.coco.ar100),
            ("ar_small", self.coco.ar_small),
            ("ar_medium", self.coco.ar_medium),
            ("ar_large", self.coco.ar_large),
            ("mr2", self.mr2),
            ("ji", self.ji.ji),
            ("ji_threshold", self.ji.threshold),
        ]
    }
}

impl Report for EvalReport {
    fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (name, value) in self.fields() {
            map.insert(name.to_string(), serde_json::json!(sig6(value)));
        }
        serde_json::Value::Object(map)
    }

    fn csv_header(&self) -> String {
        "metric,value".into()
    }

    fn csv_rows(&self) -> Vec<String> {
        self.fields()
            .into_iter()
            .map(|(name, value)| format!("{name},{}", fmt6(value)))
            .collect()
    }
}

/// Standalone PR-curve report for plotting.
pub struct PrCurveReport<'a>(pub &'a [PrPoint]);

impl Report for PrCurveReport<'_> {
    fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.0
                .iter()
                .map(|p| {
                    serde_json::json!({
                        "iou_threshold": sig6(p.iou_threshold),
                        "recall": sig6(p.recall),
                        "precision": sig6(p.precision),
                    })
                })
                .collect(),
        )
    }

    fn csv_header(&self) -> String {
        "iou_threshold,recall,precision".into()
    }

    fn csv_rows(&self) -> Vec<String> {
        self.0
            .iter()
            .map(|p| {
                format!(
                    "{},{},{}",
                    fmt6(p.iou_threshold),
                    fmt6(p.recall),
                    fmt6(p.precision)
                )
            })
            .collect()
    }
}
