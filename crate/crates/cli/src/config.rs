//! Run configuration: every knob of every subsystem, with defaults matching
//! the published detector settings, loadable from a flat dotted-key JSON
//! file and overridable from the command line.
//!
//! The file format is deliberately flat — `{"assign.radius": 2.0}` — so
//! configs diff cleanly. Unknown keys are rejected.

use crate::CliError;
use fcos_core::anchors::{AnchorConfig, LowQualityPolicy};
use fcos_core::assignment::{AmbiguityPolicy, AssignConfig, LevelStrategy};
use fcos_core::geometry::ResizeSpec;
use fcos_core::losses::LossConfig;
use fcos_core::postprocess::PostConfig;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub resize: ResizeSpec,
    pub strides: Vec<u32>,
    /// Boundaries between adjacent level ranges; the first level starts at 0
    /// and the last is unbounded.
    pub range_splits: Vec<f64>,
    pub center_sampling: bool,
    pub radius: f64,
    pub ambiguity_policy: String,
    pub k_closest: usize,
    pub level_strategy: String,
    pub fpn_roi_k0: i32,
    pub scale_targets_by_stride: bool,
    pub include_crowd: bool,
    pub anchor_size_factor: f64,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub anchor_positive_iou: f64,
    pub anchor_low_quality: String,
    pub anchor_low_quality_iou: f64,
    pub loss: LossConfig,
    pub post: PostConfig,
    pub ji_iou: f64,
    pub apply_resize: bool,
    pub threads: usize,
    pub annotations: Option<PathBuf>,
    pub detections: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            resize: ResizeSpec::default(),
            strides: vec![8, 16, 32, 64, 128],
            range_splits: vec![64.0, 128.0, 256.0, 512.0],
            center_sampling: true,
            radius: 1.5,
            ambiguity_policy: "min_area".into(),
            k_closest: 2,
            level_strategy: "max_ltrb".into(),
            fpn_roi_k0: 5,
            scale_targets_by_stride: true,
            include_crowd: false,
            anchor_size_factor: 4.0,
            anchor_scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            anchor_positive_iou: 0.5,
            anchor_low_quality: "threshold".into(),
            anchor_low_quality_iou: 0.4,
            loss: LossConfig::default(),
            post: PostConfig::default(),
            ji_iou: 0.5,
            apply_resize: true,
            threads: 0,
            annotations: None,
            detections: None,
        }
    }
}

/// `(key, default, description)` for every settable key; drives both the
/// parser and the `--help` listing so they cannot drift apart.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    ("resize.target_short", "800", "short side after resize"),
    ("resize.max_long", "1333", "long-side cap after resize"),
    ("levels.strides", "[8,16,32,64,128]", "pyramid strides P3..P7"),
    (
        "levels.range_splits",
        "[64,128,256,512]",
        "regression-range boundaries between adjacent levels",
    ),
    ("assign.center_sampling", "true", "restrict positives to center sub-boxes"),
    ("assign.radius", "1.5", "center-sampling radius in strides"),
    (
        "assign.ambiguity_policy",
        "\"min_area\"",
        "min_area | min_distance | k_closest",
    ),
    ("assign.k", "2", "K for the k_closest policy"),
    (
        "assign.level_strategy",
        "\"max_ltrb\"",
        "max_ltrb | fpn_roi | sqrt_hw_half | max_hw_half",
    ),
    ("assign.fpn_roi_k0", "5", "k0 of the fpn_roi strategy"),
    (
        "assign.scale_targets_by_stride",
        "true",
        "divide stored regression targets by the stride",
    ),
    ("assign.include_crowd", "false", "let crowd regions become targets"),
    ("anchors.size_factor", "4.0", "anchor base size in strides"),
    ("anchors.scales", "[1,1.2599,1.5874]", "anchor size multipliers (2^{0,1/3,2/3})"),
    ("anchors.ratios", "[0.5,1,2]", "anchor height/width ratios"),
    ("anchors.positive_iou", "0.5", "IoU making an anchor positive"),
    ("anchors.low_quality", "\"threshold\"", "none | threshold | all"),
    ("anchors.low_quality_iou", "0.4", "floor for the threshold policy"),
    ("loss.alpha", "0.25", "focal loss alpha"),
    ("loss.gamma", "2.0", "focal loss gamma"),
    ("loss.lambda", "1.0", "regression loss weight"),
    ("post.score_threshold", "0.05", "keep scores strictly above this"),
    ("post.nms_iou_threshold", "0.6", "NMS IoU threshold (0.5 for crowds)"),
    ("post.use_set_nms", "false", "skip suppression for same-location boxes"),
    ("post.max_detections", "100", "detections kept per image"),
    ("post.class_agnostic_nms", "false", "one suppression pool for all classes"),
    (
        "post.centerness_from_regression",
        "false",
        "recompute center-ness from the predicted vector",
    ),
    ("eval.ji_iou", "0.5", "IoU threshold of the Jaccard-index matching"),
    ("analysis.apply_resize", "true", "resize before building grids"),
    ("runtime.threads", "0", "worker threads (0 = all cores)"),
    ("data.annotations", "null", "COCO instances JSON path"),
    ("data.detections", "null", "COCO results JSON path"),
];

/// The `--help` epilogue listing every key.
pub fn config_help() -> String {
    let mut out = String::from(
        "Config keys (JSON file with flat dotted keys, or repeated --set key=value):\n",
    );
    for (key, default, description) in CONFIG_KEYS {
        let _ = writeln!(out, "  {key:34} default {default:18} {description}");
    }
    out
}

fn expect_f64(key: &str, value: &serde_json::Value) -> Result<f64, CliError> {
    value
        .as_f64()
        .ok_or_else(|| CliError::config(format!("`{key}` expects a number, got {value}")))
}

fn expect_usize(key: &str, value: &serde_json::Value) -> Result<usize, CliError> {
    value
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| CliError::config(format!("`{key}` expects a non-negative integer, got {value}")))
}

fn expect_bool(key: &str, value: &serde_json::Value) -> Result<bool, CliError> {
    value
        .as_bool()
        .ok_or_else(|| CliError::config(format!("`{key}` expects a boolean, got {value}")))
}

fn expect_str(key: &str, value: &serde_json::Value) -> Result<String, CliError> {
    value
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| CliError::config(format!("`{key}` expects a string, got {value}")))
}

fn expect_f64_array(key: &str, value: &serde_json::Value) -> Result<Vec<f64>, CliError> {
    value
        .as_array()
        .and_then(|a| a.iter().map(serde_json::Value::as_f64).collect())
        .ok_or_else(|| CliError::config(format!("`{key}` expects an array of numbers, got {value}")))
}

impl RunConfig {
    /// Load defaults, then the optional config file, then `--set` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
            let root: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
            let object = root
                .as_object()
                .ok_or_else(|| CliError::config("config file must be a JSON object".into()))?;
            for (key, value) in object {
                cfg.apply(key, value)?;
            }
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects key=value, got `{item}`")))?;
            let value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            cfg.apply(key.trim(), &value)?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &serde_json::Value) -> Result<(), CliError> {
        match key {
            "resize.target_short" => self.resize.target_short = expect_usize(key, value)? as u32,
            "resize.max_long" => self.resize.max_long = expect_usize(key, value)? as u32,
            "levels.strides" => {
                self.strides = expect_f64_array(key, value)?
                    .into_iter()
                    .map(|v| v as u32)
                    .collect();
            }
            "levels.range_splits" => self.range_splits = expect_f64_array(key, value)?,
            "assign.center_sampling" => self.center_sampling = expect_bool(key, value)?,
            "assign.radius" => self.radius = expect_f64(key, value)?,
            "assign.ambiguity_policy" => {
                let policy = expect_str(key, value)?;
                if !matches!(policy.as_str(), "min_area" | "min_distance" | "k_closest") {
                    return Err(CliError::config(format!("unknown ambiguity policy `{policy}`")));
                }
                self.ambiguity_policy = policy;
            }
            "assign.k" => self.k_closest = expect_usize(key, value)?.max(1),
            "assign.level_strategy" => {
                let strategy = expect_str(key, value)?;
                if !matches!(
                    strategy.as_str(),
                    "max_ltrb" | "fpn_roi" | "sqrt_hw_half" | "max_hw_half"
                ) {
                    return Err(CliError::config(format!("unknown level strategy `{strategy}`")));
                }
                self.level_strategy = strategy;
            }
            "assign.fpn_roi_k0" => self.fpn_roi_k0 = expect_f64(key, value)? as i32,
            "assign.scale_targets_by_stride" => {
                self.scale_targets_by_stride = expect_bool(key, value)?;
            }
            "assign.include_crowd" => self.include_crowd = expect_bool(key, value)?,
            "anchors.size_factor" => self.anchor_size_factor = expect_f64(key, value)?,
            "anchors.scales" => self.anchor_scales = expect_f64_array(key, value)?,
            "anchors.ratios" => self.anchor_ratios = expect_f64_array(key, value)?,
            "anchors.positive_iou" => self.anchor_positive_iou = expect_f64(key, value)?,
            "anchors.low_quality" => {
                let policy = expect_str(key, value)?;
                if !matches!(policy.as_str(), "none" | "threshold" | "all") {
                    return Err(CliError::config(format!("unknown low-quality policy `{policy}`")));
                }
                self.anchor_low_quality = policy;
            }
            "anchors.low_quality_iou" => self.anchor_low_quality_iou = expect_f64(key, value)?,
            "loss.alpha" => self.loss.focal_alpha = expect_f64(key, value)?,
            "loss.gamma" => self.loss.focal_gamma = expect_f64(key, value)?,
            "loss.lambda" => self.loss.lambda = expect_f64(key, value)?,
            "post.score_threshold" => self.post.score_threshold = expect_f64(key, value)?,
            "post.nms_iou_threshold" => self.post.nms_iou_threshold = expect_f64(key, value)?,
            "post.use_set_nms" => self.post.use_set_nms = expect_bool(key, value)?,
            "post.max_detections" => self.post.max_detections = expect_usize(key, value)?,
            "post.class_agnostic_nms" => self.post.class_agnostic_nms = expect_bool(key, value)?,
            "post.centerness_from_regression" => {
                self.post.centerness_from_regression = expect_bool(key, value)?;
            }
            "eval.ji_iou" => self.ji_iou = expect_f64(key, value)?,
            "analysis.apply_resize" => self.apply_resize = expect_bool(key, value)?,
            "runtime.threads" => self.threads = expect_usize(key, value)?,
            "data.annotations" => self.annotations = Some(PathBuf::from(expect_str(key, value)?)),
            "data.detections" => self.detections = Some(PathBuf::from(expect_str(key, value)?)),
            _ => return Err(CliError::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn assign_config(&self) -> AssignConfig {
        AssignConfig {
            center_sampling: self.center_sampling,
            radius: self.radius,
            ambiguity_policy: match self.ambiguity_policy.as_str() {
                "min_distance" => AmbiguityPolicy::MinDistance,
                "k_closest" => AmbiguityPolicy::KClosest(self.k_closest),
                _ => AmbiguityPolicy::MinArea,
            },
            level_strategy: match self.level_strategy.as_str() {
                "fpn_roi" => LevelStrategy::FpnRoi { k0: self.fpn_roi_k0 },
                "sqrt_hw_half" => LevelStrategy::SqrtHwHalf,
                "max_hw_half" => LevelStrategy::MaxHwHalf,
                _ => LevelStrategy::MaxLtrb,
            },
            scale_targets_by_stride: self.scale_targets_by_stride,
            include_crowd: self.include_crowd,
        }
    }

    pub fn anchor_config(&self) -> AnchorConfig {
        AnchorConfig {
            size_factor: self.anchor_size_factor,
            scales: self.anchor_scales.clone(),
            ratios: self.anchor_ratios.clone(),
            positive_iou: self.anchor_positive_iou,
            low_quality: match self.anchor_low_quality.as_str() {
                "none" => LowQualityPolicy::None,
                "all" => LowQualityPolicy::All,
                _ => LowQualityPolicy::Threshold(self.anchor_low_quality_iou),
            },
        }
    }

    /// `(lo, hi)` ranges derived from the splits.
    pub fn ranges(&self) -> Result<Vec<(f64, f64)>, CliError> {
        if self.range_splits.len() + 1 != self.strides.len() {
            return Err(CliError::config(format!(
                "levels.range_splits needs {} entries for {} strides, got {}",
                self.strides.len() - 1,
                self.strides.len(),
                self.range_splits.len()
            )));
        }
        let mut bounds = vec![0.0];
        bounds.extend_from_slice(&self.range_splits);
        bounds.push(f64::INFINITY);
        Ok(bounds.windows(2).map(|w| (w[0], w[1])).collect())
    }

    pub fn annotations_path(&self) -> Result<&Path, CliError> {
        self.annotations
            .as_deref()
            .ok_or_else(|| CliError::config("no annotation file set (data.annotations or --annotations)".into()))
    }
}
