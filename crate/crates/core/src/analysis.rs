//! Annotation-only studies: best possible recall and ambiguous-sample
//! ratios, computed over a dataset for any assignment or matching
//! configuration.
//!
//! *Best possible recall* (BPR) is the fraction of ground-truth boxes that
//! receive at least one training sample — a location for the anchor-free
//! assigner, an anchor for the baseline matcher — under the rule that one
//! sample serves at most one box.
//!
//! *Ambiguity* counts, per positive location, how many boxes the location
//! was eligible for before tie-breaking, bucketed as 1 / 2 / >=3 (a finer
//! 1 / 2 / 3 / >=4 view is kept for heavily crowded data).
//!
//! Images are processed in parallel and reduced in image order with integer
//! counters, so reports are byte-identical across runs and thread counts.

use crate::anchors::{generate_anchors, match_anchors, AnchorConfig};
use crate::assignment::{assign, AssignConfig};
use crate::geometry::{
    build_levels, default_ranges, resize, FeatureLevel, GeometryError, ResizeSpec, DEFAULT_STRIDES,
};
use crate::ingestion::{fmt6, sig6, Annotation, Dataset, ImageRecord, Report};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("dataset has no images")]
    EmptyDataset,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Stride/range layout plus the resize policy applied before assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelsConfig {
    pub strides: Vec<u32>,
    pub ranges: Vec<(f64, f64)>,
    /// `None` computes at native resolution.
    pub resize: Option<ResizeSpec>,
}

impl LevelsConfig {
    /// The five-level pyramid with its default regression ranges.
    pub fn fpn() -> Self {
        Self {
            strides: DEFAULT_STRIDES.to_vec(),
            ranges: default_ranges(),
            resize: Some(ResizeSpec::default()),
        }
    }

    /// The single-level baseline: stride 16, unbounded regression range.
    pub fn single_level_p4() -> Self {
        Self {
            strides: vec![16],
            ranges: vec![(0.0, f64::INFINITY)],
            resize: Some(ResizeSpec::default()),
        }
    }

    pub fn is_fpn(&self) -> bool {
        self.strides.len() > 1
    }

    pub fn without_resize(mut self) -> Self {
        self.resize = None;
        self
    }

    /// Scale and clip one image's annotations, and build its level grids.
    pub fn prepare(
        &self,
        image: &ImageRecord,
    ) -> Result<(Vec<Annotation>, Vec<FeatureLevel>), GeometryError> {
        let (w, h, scale) = match &self.resize {
            Some(spec) => resize(image.width, image.height, spec),
            None => (image.width, image.height, 1.0),
        };
        let levels = build_levels(w, h, &self.strides, &self.ranges)?;
        let annotations = image
            .annotations
            .iter()
            .map(|a| {
                let mut scaled = a.clone();
                scaled.bbox = a.bbox.scaled(scale).clip(w as f64, h as f64);
                scaled
            })
            .collect();
        Ok((annotations, levels))
    }
}

/// Best-possible-recall outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct BPRReport {
    /// Descriptor of the sampling rule, e.g. `fcos-fpn` or `retinanet-all`.
    pub matching_rule: String,
    pub recalled: u64,
    pub total: u64,
}

impl BPRReport {
    pub fn bpr_percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.recalled as f64 / self.total as f64
        }
    }
}

impl Report for BPRReport {
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "matching_rule": self.matching_rule,
            "bpr_percent": sig6(self.bpr_percent()),
            "recalled": self.recalled,
            "total": self.total,
        })
    }

    fn csv_header(&self) -> String {
        "matching_rule,bpr_percent,recalled,total".into()
    }

    fn csv_rows(&self) -> Vec<String> {
        vec![format!(
            "{},{},{},{}",
            self.matching_rule,
            fmt6(self.bpr_percent()),
            self.recalled,
            self.total
        )]
    }
}

/// Ambiguous-sample histogram over positive locations.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityReport {
    pub center_sampling: bool,
    pub fpn: bool,
    /// Locations eligible for exactly `i + 1` boxes; the last slot
    /// aggregates everything at `HISTOGRAM_SLOTS` and above.
    pub histogram: Vec<u64>,
}

/// Exact candidate counts tracked before the overflow bucket.
pub const HISTOGRAM_SLOTS: usize = 8;

impl AmbiguityReport {
    pub fn positives(&self) -> u64 {
        self.histogram.iter().sum()
    }

    fn percent(&self, count: u64) -> f64 {
        let total = self.positives();
        if total == 0 {
            0.0
        } else {
            100.0 * count as f64 / total as f64
        }
    }

    /// Percentages for candidate counts 1, 2 and >= 3.
    pub fn buckets_3(&self) -> [f64; 3] {
        let rest: u64 = self.histogram[2..].iter().sum();
        [
            self.percent(self.histogram[0]),
            self.percent(self.histogram[1]),
            self.percent(rest),
        ]
    }

    /// Percentages for candidate counts 1, 2, 3 and >= 4, for crowded data.
    pub fn buckets_4(&self) -> [f64; 4] {
        let rest: u64 = self.histogram[3..].iter().sum();
        [
            self.percent(self.histogram[0]),
            self.percent(self.histogram[1]),
            self.percent(self.histogram[2]),
            self.percent(rest),
        ]
    }
}

impl Report for AmbiguityReport {
    fn to_json(&self) -> serde_json::Value {
        let [one, two, three_plus] = self.buckets_3();
        serde_json::json!({
            "center_sampling": self.center_sampling,
            "fpn": self.fpn,
            "positives": self.positives(),
            "percent_1": sig6(one),
            "percent_2": sig6(two),
            "percent_3_plus": sig6(three_plus),
            "histogram": self.histogram,
        })
    }

    fn csv_header(&self) -> String {
        "center_sampling,fpn,bucket,percent".into()
    }

    fn csv_rows(&self) -> Vec<String> {
        let [one, two, three_plus] = self.buckets_3();
        [("1", one), ("2", two), ("3+", three_plus)]
            .into_iter()
            .map(|(bucket, pct)| {
                format!(
                    "{},{},{},{}",
                    self.center_sampling,
                    self.fpn,
                    bucket,
                    fmt6(pct)
                )
            })
            .collect()
    }
}

fn check_dataset(dataset: &Dataset) -> Result<(), AnalysisError> {
    if dataset.images.is_empty() {
        return Err(AnalysisError::EmptyDataset);
    }
    Ok(())
}

/// Count a box toward the recall denominator?
fn counts_toward_total(ann: &Annotation, include_crowd: bool) -> bool {
    !ann.iscrowd || include_crowd
}

/// Best possible recall of the anchor-free assigner.
pub fn bpr_fcos(
    dataset: &Dataset,
    levels_cfg: &LevelsConfig,
    assign_cfg: &AssignConfig,
    include_crowd: bool,
) -> Result<BPRReport, AnalysisError> {
    check_dataset(dataset)?;
    let mut cfg = *assign_cfg;
    cfg.include_crowd = include_crowd;
    let per_image: Vec<Result<(u64, u64), GeometryError>> = dataset
        .images
        .par_iter()
        .map(|image| {
            let (annotations, levels) = levels_cfg.prepare(image)?;
            let result = assign(&annotations, &levels, &cfg);
            let recalled_flags = result.recalled_flags(annotations.len());
            let mut recalled = 0;
            let mut total = 0;
            for (ann, &hit) in annotations.iter().zip(&recalled_flags) {
                if counts_toward_total(ann, include_crowd) {
                    total += 1;
                    if hit {
                        recalled += 1;
                    }
                }
            }
            Ok((recalled, total))
        })
        .collect();

    let mut recalled = 0;
    let mut total = 0;
    for r in per_image {
        let (hit, all) = r?;
        recalled += hit;
        total += all;
    }
    let rule = if levels_cfg.is_fpn() {
        "fcos-fpn".to_string()
    } else {
        format!("fcos-p{}", (levels_cfg.strides[0] as f64).log2().round() as i32)
    };
    Ok(BPRReport {
        matching_rule: rule,
        recalled,
        total,
    })
}

/// Best possible recall of the anchor-based baseline matcher.
pub fn bpr_anchor(
    dataset: &Dataset,
    levels_cfg: &LevelsConfig,
    anchor_cfg: &AnchorConfig,
    include_crowd: bool,
) -> Result<BPRReport, AnalysisError> {
    check_dataset(dataset)?;
    let per_image: Vec<Result<(u64, u64), GeometryError>> = dataset
        .images
        .par_iter()
        .map(|image| {
            let (annotations, levels) = levels_cfg.prepare(image)?;
            // Crowd regions are not matchable targets unless included.
            let candidates: Vec<Annotation> = annotations
                .iter()
                .filter(|a| counts_toward_total(a, include_crowd))
                .cloned()
                .collect();
            let grid = generate_anchors(&levels, anchor_cfg);
            let result = match_anchors(&grid, &candidates, anchor_cfg);
            let recalled = result.recalled.iter().filter(|&&r| r).count() as u64;
            Ok((recalled, candidates.len() as u64))
        })
        .collect();

    let mut recalled = 0;
    let mut total = 0;
    for r in per_image {
        let (hit, all) = r?;
        recalled += hit;
        total += all;
    }
    let rule = match anchor_cfg.low_quality {
        crate::anchors::LowQualityPolicy::None => "retinanet-none".to_string(),
        crate::anchors::LowQualityPolicy::Threshold(t) => format!("retinanet-threshold-{t:.2}"),
        crate::anchors::LowQualityPolicy::All => "retinanet-all".to_string(),
    };
    Ok(BPRReport {
        matching_rule: rule,
        recalled,
        total,
    })
}

/// Ambiguous-sample ratios under an assignment configuration.
pub fn ambiguity(
    dataset: &Dataset,
    levels_cfg: &LevelsConfig,
    assign_cfg: &AssignConfig,
    include_crowd: bool,
) -> Result<AmbiguityReport, AnalysisError> {
    check_dataset(dataset)?;
    let mut cfg = *assign_cfg;
    cfg.include_crowd = include_crowd;
    let per_image: Vec<Result<Vec<u64>, GeometryError>> = dataset
        .images
        .par_iter()
        .map(|image| {
            let (annotations, levels) = levels_cfg.prepare(image)?;
            let result = assign(&annotations, &levels, &cfg);
            Ok(result.candidate_histogram(HISTOGRAM_SLOTS))
        })
        .collect();

    let mut histogram = vec![0u64; HISTOGRAM_SLOTS];
    for r in per_image {
        for (slot, count) in r?.into_iter().enumerate() {
            histogram[slot] += count;
        }
    }
    Ok(AmbiguityReport {
        center_sampling: cfg.center_sampling,
        fpn: levels_cfg.is_fpn(),
        histogram,
    })
}
