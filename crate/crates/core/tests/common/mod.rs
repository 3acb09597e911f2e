//! Brute-force reference implementations and scene generators shared by the
//! integration suites. Everything here favors the most literal possible
//! formulation over speed, and stays independent of the optimized paths it
//! is used to check (only geometric primitives are shared).

#![allow(dead_code)]

use fcos_core::anchors::{AnchorConfig, AnchorGrid, LowQualityPolicy, MatchResult};
use fcos_core::assignment::{
    center_subbox, encode, level_accepts, AmbiguityPolicy, AssignConfig, AssignmentResult,
    LocationAssignment, LocationTarget,
};
use fcos_core::geometry::{BBox, FeatureLevel};
use fcos_core::ingestion::{Annotation, Category, Dataset, DetectionSet, ImageRecord, LoadStats};
use fcos_core::metrics::{iou_thresholds, match_overlap, recall_points, AREA_RANGES, MAX_DETS};
use fcos_core::postprocess::Detection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_bbox(rng: &mut ChaCha8Rng, width: f64, height: f64) -> BBox {
    let w = 1.0 + rng.gen::<f64>() * (width * 0.9 - 1.0);
    let h = 1.0 + rng.gen::<f64>() * (height * 0.9 - 1.0);
    let x0 = rng.gen::<f64>() * (width - w);
    let y0 = rng.gen::<f64>() * (height - h);
    BBox::new(x0, y0, x0 + w, y0 + h)
}

pub fn random_annotations(
    rng: &mut ChaCha8Rng,
    width: f64,
    height: f64,
    max_boxes: usize,
    classes: u32,
) -> Vec<Annotation> {
    let count = rng.gen_range(0..=max_boxes);
    (0..count)
        .map(|_| {
            let mut ann = Annotation::simple(
                random_bbox(rng, width, height),
                1 + rng.gen_range(0..classes),
            );
            if rng.gen::<f64>() < 0.1 {
                ann.iscrowd = true;
            }
            ann
        })
        .collect()
}

pub fn random_detections(
    rng: &mut ChaCha8Rng,
    width: f64,
    height: f64,
    count: usize,
    classes: u32,
) -> Vec<Detection> {
    (0..count)
        .map(|_| {
            let with_location = rng.gen::<f64>() < 0.5;
            Detection::new(
                random_bbox(rng, width, height),
                1 + rng.gen_range(0..classes) as i64,
                rng.gen::<f64>(),
                if rng.gen::<f64>() < 0.5 {
                    Some(rng.gen::<f64>())
                } else {
                    None
                },
                if with_location {
                    Some(rng.gen_range(0..40))
                } else {
                    None
                },
            )
        })
        .collect()
}

pub fn single_class_dataset(images: Vec<(i64, u32, u32, Vec<Annotation>)>) -> Dataset {
    Dataset {
        images: images
            .into_iter()
            .map(|(image_id, width, height, annotations)| ImageRecord {
                image_id,
                width,
                height,
                annotations,
            })
            .collect(),
        categories: vec![Category {
            id: 1,
            name: "object".into(),
        }],
        stats: LoadStats::default(),
    }
}

// ---------------------------------------------------------------------------
// Assignment oracle: plain loop over locations x boxes, no spatial indexing
// ---------------------------------------------------------------------------

pub fn brute_assign(
    annotations: &[Annotation],
    levels: &[FeatureLevel],
    cfg: &AssignConfig,
) -> AssignmentResult {
    let mut per_location = Vec::new();
    for level in levels {
        for loc in level.locations() {
            let mut candidates: Vec<usize> = Vec::new();
            for (ai, ann) in annotations.iter().enumerate() {
                if !cfg.annotation_eligible(ann) {
                    continue;
                }
                let region = if cfg.center_sampling {
                    center_subbox(&ann.bbox, level.stride, cfg.radius)
                } else {
                    ann.bbox
                };
                if !region.contains(loc.image_x, loc.image_y) {
                    continue;
                }
                let distances = encode(&loc, &ann.bbox, level.stride, false)
                    .expect("inside the region implies inside the box");
                if !level_accepts(&distances, level, cfg.level_strategy, &ann.bbox) {
                    continue;
                }
                candidates.push(ai);
            }

            let dist2 = |ai: usize| {
                let (cx, cy) = annotations[ai].bbox.center();
                let dx = loc.image_x - cx;
                let dy = loc.image_y - cy;
                dx * dx + dy * dy
            };
            let winners: Vec<usize> = match cfg.ambiguity_policy {
                AmbiguityPolicy::MinArea => {
                    let mut sorted = candidates.clone();
                    sorted.sort_by(|&a, &b| {
                        (annotations[a].bbox.area(), a)
                            .partial_cmp(&(annotations[b].bbox.area(), b))
                            .unwrap()
                    });
                    sorted.into_iter().take(1).collect()
                }
                AmbiguityPolicy::MinDistance => {
                    let mut sorted = candidates.clone();
                    sorted.sort_by(|&a, &b| (dist2(a), a).partial_cmp(&(dist2(b), b)).unwrap());
                    sorted.into_iter().take(1).collect()
                }
                AmbiguityPolicy::KClosest(k) => {
                    let mut sorted = candidates.clone();
                    sorted.sort_by(|&a, &b| (dist2(a), a).partial_cmp(&(dist2(b), b)).unwrap());
                    sorted.into_iter().take(k.max(1)).collect()
                }
            };

            let targets = winners
                .into_iter()
                .map(|ai| {
                    let reg = encode(
                        &loc,
                        &annotations[ai].bbox,
                        level.stride,
                        cfg.scale_targets_by_stride,
                    )
                    .unwrap();
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

// ---------------------------------------------------------------------------
// Anchor matching oracle: full IoU matrix over every anchor
// ---------------------------------------------------------------------------

// Index loops over the full IoU matrix are the point of this reference.
#[allow(clippy::needless_range_loop)]
pub fn brute_match_anchors(
    grid: &AnchorGrid,
    annotations: &[Annotation],
    cfg: &AnchorConfig,
) -> MatchResult {
    let anchors: Vec<BBox> = {
        let mut v = vec![BBox::new(0.0, 0.0, 0.0, 0.0); grid.len()];
        for (id, b) in grid.iter_boxes() {
            v[id] = b;
        }
        v
    };
    let iou: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| annotations.iter().map(|g| a.iou(&g.bbox)).collect())
        .collect();

    let mut anchor_match: Vec<Option<u32>> = vec![None; anchors.len()];
    let mut recalled = vec![false; annotations.len()];

    // Ownership: strictly best annotation per anchor, lowest index on ties.
    let owner: Vec<Option<usize>> = (0..anchors.len())
        .map(|aid| {
            let mut best = 0.0;
            let mut who = None;
            for ai in 0..annotations.len() {
                if iou[aid][ai] > best {
                    best = iou[aid][ai];
                    who = Some(ai);
                }
            }
            who
        })
        .collect();

    for aid in 0..anchors.len() {
        if let Some(ai) = owner[aid] {
            if iou[aid][ai] >= cfg.positive_iou {
                anchor_match[aid] = Some(ai as u32);
                recalled[ai] = true;
            }
        }
    }

    let floor = match cfg.low_quality {
        LowQualityPolicy::None => None,
        LowQualityPolicy::Threshold(t) => Some(t),
        LowQualityPolicy::All => Some(f64::MIN_POSITIVE),
    };
    if let Some(floor) = floor {
        for ai in 0..annotations.len() {
            // The annotation's best anchor, lowest id on ties.
            let mut best = 0.0;
            let mut best_anchor = None;
            for aid in 0..anchors.len() {
                if iou[aid][ai] > best {
                    best = iou[aid][ai];
                    best_anchor = Some(aid);
                }
            }
            if let Some(aid) = best_anchor {
                if best >= floor && owner[aid] == Some(ai) {
                    anchor_match[aid] = Some(ai as u32);
                    recalled[ai] = true;
                }
            }
        }
    }

    MatchResult {
        anchor_match,
        recalled,
    }
}

// ---------------------------------------------------------------------------
// NMS oracles: repeated max-scan over a live pool
// ---------------------------------------------------------------------------

fn det_key(d: &Detection, index: usize) -> (f64, u64, i64, usize) {
    (-d.fused, d.location_id.unwrap_or(u64::MAX), d.category_id, index)
}

pub fn brute_nms(dets: &[Detection], thr: f64, set_mode: bool) -> Vec<Detection> {
    let mut pool: Vec<(usize, &Detection)> = dets.iter().enumerate().collect();
    let mut kept: Vec<Detection> = Vec::new();
    while !pool.is_empty() {
        let best_pos = (0..pool.len())
            .min_by(|&a, &b| {
                det_key(pool[a].1, pool[a].0)
                    .partial_cmp(&det_key(pool[b].1, pool[b].0))
                    .unwrap()
            })
            .unwrap();
        let (_, winner) = pool.remove(best_pos);
        pool.retain(|&(_, other)| {
            if set_mode {
                if let (Some(a), Some(b)) = (winner.location_id, other.location_id) {
                    if a == b {
                        return true;
                    }
                }
            }
            winner.bbox.iou(&other.bbox) <= thr
        });
        kept.push(winner.clone());
    }
    kept
}

// ---------------------------------------------------------------------------
// COCO evaluation oracle: recompute everything per configuration
// ---------------------------------------------------------------------------

#[derive(Debug, PartialEq)]
pub struct NaiveCocoSummary {
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
}

struct NaiveGt {
    bbox: BBox,
    iscrowd: bool,
    ignored: bool,
}

/// Literal re-implementation of the matching contract: regions offered
/// valid-first, last equal overlap wins, crowd regions absorb repeats, a
/// valid match is never traded for an ignored one.
fn naive_match(
    dets: &[(f64, BBox)],
    gts: &mut [NaiveGt],
    thr: f64,
    area: (f64, f64),
) -> (Vec<Option<usize>>, Vec<bool>) {
    let mut offered: Vec<usize> = (0..gts.len()).filter(|&g| !gts[g].ignored).collect();
    offered.extend((0..gts.len()).filter(|&g| gts[g].ignored));
    let mut taken: Vec<bool> = vec![false; gts.len()];
    let mut det_match = vec![None; dets.len()];
    let mut det_ignore = vec![false; dets.len()];
    for (di, &(_, bbox)) in dets.iter().enumerate() {
        let mut best_overlap = thr.min(1.0 - 1e-10);
        let mut best: Option<usize> = None;
        for &gi in &offered {
            if taken[gi] && !gts[gi].iscrowd {
                continue;
            }
            if let Some(b) = best {
                if !gts[b].ignored && gts[gi].ignored {
                    break;
                }
            }
            let ov = match_overlap(&bbox, &gts[gi].bbox, gts[gi].iscrowd);
            if ov < best_overlap {
                continue;
            }
            best_overlap = ov;
            best = Some(gi);
        }
        match best {
            Some(gi) => {
                taken[gi] = true;
                det_match[di] = Some(gi);
                det_ignore[di] = gts[gi].ignored;
            }
            None => {
                let a = bbox.area();
                det_ignore[di] = a < area.0 || a > area.1;
            }
        }
    }
    (det_match, det_ignore)
}

pub fn naive_coco_eval(dets: &DetectionSet, dataset: &Dataset) -> NaiveCocoSummary {
    let thresholds = iou_thresholds();
    let points = recall_points();
    let classes = dataset.num_classes();

    // [class][area][thr] AP and [class][area][thr][maxdet] recall, NaN when
    // the class has no valid ground truth in the range.
    let mut ap = vec![vec![vec![f64::NAN; thresholds.len()]; AREA_RANGES.len()]; classes];
    let mut rec =
        vec![vec![vec![[f64::NAN; MAX_DETS.len()]; thresholds.len()]; AREA_RANGES.len()]; classes];

    for class in 1..=classes as u32 {
        for (ai_range, &area) in AREA_RANGES.iter().enumerate() {
            for (ti, &thr) in thresholds.iter().enumerate() {
                for (mi, &maxdet) in MAX_DETS.iter().enumerate() {
                    // Fresh matching for every single configuration.
                    let mut scored: Vec<(f64, usize, usize, bool, bool)> = Vec::new();
                    let mut npig = 0usize;
                    for (image_pos, image) in dataset.images.iter().enumerate() {
                        let mut gts: Vec<NaiveGt> = image
                            .annotations
                            .iter()
                            .filter(|a| a.class_id == class)
                            .map(|a| NaiveGt {
                                bbox: a.bbox,
                                iscrowd: a.iscrowd,
                                ignored: a.iscrowd || a.area < area.0 || a.area > area.1,
                            })
                            .collect();
                        npig += gts.iter().filter(|g| !g.ignored).count();
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
                            (-a.0, a.1).partial_cmp(&(-b.0, b.1)).unwrap()
                        });
                        ranked.truncate(maxdet);
                        let flat: Vec<(f64, BBox)> =
                            ranked.iter().map(|&(s, _, b)| (s, b)).collect();
                        let (m, ig) = naive_match(&flat, &mut gts, thr, area);
                        for (rank, &(score, _, _)) in ranked.iter().enumerate() {
                            scored.push((score, image_pos, rank, m[rank].is_some(), ig[rank]));
                        }
                    }
                    if npig == 0 {
                        continue;
                    }
                    scored.sort_by(|a, b| {
                        (-a.0, a.1, a.2).partial_cmp(&(-b.0, b.1, b.2)).unwrap()
                    });

                    let mut tp = 0u64;
                    let mut fp = 0u64;
                    let mut curve: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
                    for &(_, _, _, matched, ignored) in &scored {
                        if !ignored {
                            if matched {
                                tp += 1;
                            } else {
                                fp += 1;
                            }
                        }
                        let precision = if tp + fp > 0 {
                            tp as f64 / (tp + fp) as f64
                        } else {
                            0.0
                        };
                        curve.push((tp as f64 / npig as f64, precision));
                    }

                    if mi == MAX_DETS.len() - 1 {
                        // AP uses the full-depth list by definition.
                        let mut sum = 0.0;
                        for &r in &points {
                            let q = curve
                                .iter()
                                .filter(|&&(recall, _)| recall >= r)
                                .map(|&(_, p)| p)
                                .fold(0.0f64, f64::max);
                            sum += q;
                        }
                        ap[class as usize - 1][ai_range][ti] = sum / points.len() as f64;
                    }
                    rec[class as usize - 1][ai_range][ti][mi] = tp as f64 / npig as f64;
                }
            }
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
                if !thr_rec[maxdet].is_nan() {
                    sum += thr_rec[maxdet];
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

    NaiveCocoSummary {
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
    }
}

// ---------------------------------------------------------------------------
// Miss-rate oracle: full re-match at every distinct threshold
// ---------------------------------------------------------------------------

pub fn naive_mr2(dets: &DetectionSet, dataset: &Dataset) -> f64 {
    let num_images = dataset.images.len();
    let total_gt: usize = dataset
        .images
        .iter()
        .map(|i| i.annotations.iter().filter(|a| !a.iscrowd).count())
        .sum();
    assert!(total_gt > 0);

    let mut scores: Vec<f64> = dets.values().flatten().map(|d| d.fused).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.dedup();

    // Operating points from strictest to loosest.
    let mut curve = vec![(0.0, 1.0)];
    for &threshold in &scores {
        let mut tp = 0u64;
        let mut fp = 0u64;
        for image in &dataset.images {
            let mut gts: Vec<NaiveGt> = image
                .annotations
                .iter()
                .map(|a| NaiveGt {
                    bbox: a.bbox,
                    iscrowd: a.iscrowd,
                    ignored: a.iscrowd,
                })
                .collect();
            let mut ranked: Vec<(f64, usize, BBox)> = dets
                .get(&image.image_id)
                .map(|group| {
                    group
                        .iter()
                        .enumerate()
                        .filter(|(_, d)| d.fused >= threshold)
                        .map(|(i, d)| (d.fused, i, d.bbox))
                        .collect()
                })
                .unwrap_or_default();
            ranked.sort_by(|a, b| (-a.0, a.1).partial_cmp(&(-b.0, b.1)).unwrap());
            let flat: Vec<(f64, BBox)> = ranked.iter().map(|&(s, _, b)| (s, b)).collect();
            let (m, ig) = naive_match(&flat, &mut gts, 0.5, AREA_RANGES[0]);
            for rank in 0..flat.len() {
                if ig[rank] {
                    continue;
                }
                if m[rank].is_some() {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        curve.push((
            fp as f64 / num_images as f64,
            1.0 - tp as f64 / total_gt as f64,
        ));
    }

    let mut log_sum = 0.0;
    for i in 0..9 {
        let anchor = 10f64.powf(-2.0 + i as f64 * 0.5);
        let mut miss = 1.0;
        for &(fppi, m) in &curve {
            if fppi <= anchor {
                miss = m;
            }
        }
        log_sum += miss.max(1e-10).ln();
    }
    (log_sum / 9.0).exp()
}

// ---------------------------------------------------------------------------
// Exhaustive maximum bipartite matching for small scenes
// ---------------------------------------------------------------------------

pub fn exhaustive_max_matching(det_boxes: &[BBox], gt_boxes: &[BBox], iou_thr: f64) -> usize {
    fn recurse(edges: &[Vec<usize>], di: usize, used: &mut [bool]) -> usize {
        if di == edges.len() {
            return 0;
        }
        // Either leave this detection unmatched...
        let mut best = recurse(edges, di + 1, used);
        // ...or try every compatible ground truth.
        for &gi in &edges[di] {
            if !used[gi] {
                used[gi] = true;
                best = best.max(1 + recurse(edges, di + 1, used));
                used[gi] = false;
            }
        }
        best
    }
    let edges: Vec<Vec<usize>> = det_boxes
        .iter()
        .map(|d| {
            gt_boxes
                .iter()
                .enumerate()
                .filter(|(_, g)| d.iou(g) >= iou_thr)
                .map(|(gi, _)| gi)
                .collect()
        })
        .collect();
    let mut used = vec![false; gt_boxes.len()];
    recurse(&edges, 0, &mut used)
}

/// Greedy IoU matching (descending IoU pairs), for the optimality property.
pub fn greedy_iou_matching(det_boxes: &[BBox], gt_boxes: &[BBox], iou_thr: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (di, d) in det_boxes.iter().enumerate() {
        for (gi, g) in gt_boxes.iter().enumerate() {
            let iou = d.iou(g);
            if iou >= iou_thr {
                pairs.push((iou, di, gi));
            }
        }
    }
    pairs.sort_by(|a, b| (-a.0, a.1, a.2).partial_cmp(&(-b.0, b.1, b.2)).unwrap());
    let mut det_used = vec![false; det_boxes.len()];
    let mut gt_used = vec![false; gt_boxes.len()];
    let mut matched = 0;
    for (_, di, gi) in pairs {
        if !det_used[di] && !gt_used[gi] {
            det_used[di] = true;
            gt_used[gi] = true;
            matched += 1;
        }
    }
    matched
}
