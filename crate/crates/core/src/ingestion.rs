//! COCO-style annotation and detection JSON, plus report serialization.
//!
//! # File formats
//!
//! *Annotations* follow the COCO "instances" layout: top-level `images`,
//! `annotations` and `categories` arrays, boxes as `[x, y, w, h]`. On load,
//! boxes are converted to corner form, clipped to the image, and category
//! ids are remapped to a dense `1..=C` index (original ids are kept for
//! output). Boxes with no area left after clipping are dropped and counted;
//! annotations that fail to parse are counted as malformed and skipped.
//!
//! *Detections* follow the COCO results layout — a flat array of
//! `{image_id, category_id, bbox, score}` — extended with two optional
//! fields:
//!
//! * `centerness`: the predicted center-ness in `[0, 1]`; when present, the
//!   ranking score becomes `sqrt(score * centerness)`;
//! * `location_id`: opaque source-location identity used by Set NMS.
//!
//! Unknown fields are ignored in both formats.
//!
//! *Reports* serialize to JSON (fixed field order) or CSV with numbers
//! rounded to six significant digits, so equal inputs produce byte-identical
//! files.

use crate::geometry::BBox;
use crate::postprocess::Detection;
use serde::Deserialize;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("duplicate image id {0}")]
    DuplicateImage(i64),
    #[error("image {0} has zero width or height")]
    EmptyImage(i64),
    #[error("duplicate category id {0}")]
    DuplicateCategory(i64),
    #[error("annotation references unknown image id {0}")]
    UnknownImage(i64),
    #[error("detection for image {image_id} has negative score {score}")]
    NegativeScore { image_id: i64, score: f64 },
}

/// One ground-truth region.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Corner-form box, clipped to the image.
    pub bbox: BBox,
    /// Dense class index in `1..=C`.
    pub class_id: u32,
    /// Original category id from the file.
    pub category_id: i64,
    pub iscrowd: bool,
    /// Region area: the file's `area` field when present, box area otherwise.
    pub area: f64,
    /// The `[x, y, w, h]` exactly as loaded, for lossless re-serialization.
    pub raw_bbox: [f64; 4],
}

impl Annotation {
    /// Plain single-class annotation, mostly for tests and synthetic scenes.
    pub fn simple(bbox: BBox, class_id: u32) -> Self {
        Self {
            bbox,
            class_id,
            category_id: class_id as i64,
            iscrowd: false,
            area: bbox.area(),
            raw_bbox: [bbox.x0, bbox.y0, bbox.width(), bbox.height()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: i64,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoadStats {
    /// Annotation entries that failed to parse and were skipped.
    pub malformed: usize,
    /// Annotations dropped because clipping left them with no area.
    pub dropped_zero_area: usize,
}

/// A full annotation set: images sorted by id, categories sorted by id and
/// densely indexed `1..=C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub categories: Vec<Category>,
    pub stats: LoadStats,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn total_annotations(&self) -> usize {
        self.images.iter().map(|i| i.annotations.len()).sum()
    }

    /// Dense class index for an original category id.
    pub fn class_of_category(&self, category_id: i64) -> Option<u32> {
        self.categories
            .binary_search_by_key(&category_id, |c| c.id)
            .ok()
            .map(|i| i as u32 + 1)
    }
}

#[derive(Deserialize)]
struct ImageJson {
    id: i64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct AnnotationJson {
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
    #[serde(default)]
    area: Option<f64>,
}

#[derive(Deserialize)]
struct CategoryJson {
    id: i64,
    #[serde(default)]
    name: Option<String>,
}

fn read_json(path: &Path) -> Result<serde_json::Value, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IngestError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Load a COCO instances file.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Dataset, IngestError> {
    let root = read_json(path.as_ref())?;
    let images_json = root.get("images").ok_or(IngestError::MissingKey("images"))?;
    let annotations_json = root
        .get("annotations")
        .ok_or(IngestError::MissingKey("annotations"))?;
    let categories_json = root
        .get("categories")
        .ok_or(IngestError::MissingKey("categories"))?;

    let mut categories: Vec<Category> = Vec::new();
    for value in categories_json.as_array().into_iter().flatten() {
        if let Ok(c) = serde_json::from_value::<CategoryJson>(value.clone()) {
            categories.push(Category {
                id: c.id,
                name: c.name.unwrap_or_default(),
            });
        }
    }
    categories.sort_by_key(|c| c.id);
    for pair in categories.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(IngestError::DuplicateCategory(pair[0].id));
        }
    }
    let class_of: HashMap<i64, u32> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id, i as u32 + 1))
        .collect();

    let mut images: Vec<ImageRecord> = Vec::new();
    let mut image_index: HashMap<i64, usize> = HashMap::new();
    for value in images_json.as_array().into_iter().flatten() {
        let parsed: ImageJson = serde_json::from_value(value.clone())
            .map_err(|_| IngestError::MissingKey("images[].id/width/height"))?;
        if image_index.contains_key(&parsed.id) {
            return Err(IngestError::DuplicateImage(parsed.id));
        }
        if parsed.width == 0 || parsed.height == 0 {
            return Err(IngestError::EmptyImage(parsed.id));
        }
        image_index.insert(parsed.id, images.len());
        images.push(ImageRecord {
            image_id: parsed.id,
            width: parsed.width,
            height: parsed.height,
            annotations: Vec::new(),
        });
    }

    let mut stats = LoadStats::default();
    for value in annotations_json.as_array().into_iter().flatten() {
        let parsed: AnnotationJson = match serde_json::from_value(value.clone()) {
            Ok(a) => a,
            Err(_) => {
                stats.malformed += 1;
                continue;
            }
        };
        let Some(&class_id) = class_of.get(&parsed.category_id) else {
            stats.malformed += 1;
            continue;
        };
        let &slot = image_index
            .get(&parsed.image_id)
            .ok_or(IngestError::UnknownImage(parsed.image_id))?;
        let image = &mut images[slot];
        let [x, y, w, h] = parsed.bbox;
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            stats.malformed += 1;
            continue;
        }
        let clipped = BBox::from_xywh(x, y, w, h).clip(image.width as f64, image.height as f64);
        if clipped.is_degenerate() {
            stats.dropped_zero_area += 1;
            continue;
        }
        image.annotations.push(Annotation {
            bbox: clipped,
            class_id,
            category_id: parsed.category_id,
            iscrowd: parsed.iscrowd != 0,
            area: parsed.area.unwrap_or_else(|| clipped.area()),
            raw_bbox: parsed.bbox,
        });
    }

    images.sort_by_key(|i| i.image_id);
    Ok(Dataset {
        images,
        categories,
        stats,
    })
}

/// Serialize a dataset back to COCO instances JSON. Boxes are written from
/// their originally-loaded `[x, y, w, h]`, so load -> write -> load is the
/// identity.
pub fn write_annotations(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let mut annotations = Vec::new();
    let mut next_id = 1i64;
    for image in &dataset.images {
        for ann in &image.annotations {
            annotations.push(serde_json::json!({
                "id": next_id,
                "image_id": image.image_id,
                "category_id": ann.category_id,
                "bbox": ann.raw_bbox,
                "area": ann.area,
                "iscrowd": u8::from(ann.iscrowd),
            }));
            next_id += 1;
        }
    }
    let root = serde_json::json!({
        "images": dataset.images.iter().map(|i| serde_json::json!({
            "id": i.image_id, "width": i.width, "height": i.height,
        })).collect::<Vec<_>>(),
        "annotations": annotations,
        "categories": dataset.categories.iter().map(|c| serde_json::json!({
            "id": c.id, "name": c.name,
        })).collect::<Vec<_>>(),
    });
    write_bytes(path.as_ref(), &pretty_json(&root))
}

#[derive(Deserialize)]
struct DetectionJson {
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
    score: f64,
    #[serde(default)]
    centerness: Option<f64>,
    #[serde(default)]
    location_id: Option<u64>,
}

/// Detections grouped by image id, each group in file order.
pub type DetectionSet = BTreeMap<i64, Vec<Detection>>;

/// Load a COCO results file (see the module docs for the extension fields).
pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionSet, IngestError> {
    let path = path.as_ref();
    let root = read_json(path)?;
    let array = root
        .as_array()
        .ok_or(IngestError::MissingKey("top-level array"))?;
    let mut out: DetectionSet = BTreeMap::new();
    for value in array {
        let parsed: DetectionJson = serde_json::from_value(value.clone())
            .map_err(|source| IngestError::Json {
                path: path.display().to_string(),
                source,
            })?;
        if parsed.score < 0.0 {
            return Err(IngestError::NegativeScore {
                image_id: parsed.image_id,
                score: parsed.score,
            });
        }
        let [x, y, w, h] = parsed.bbox;
        out.entry(parsed.image_id).or_default().push(Detection::new(
            BBox::from_xywh(x, y, w, h),
            parsed.category_id,
            parsed.score,
            parsed.centerness,
            parsed.location_id,
        ));
    }
    Ok(out)
}

/// Write detections in the COCO results layout with the extension fields.
pub fn write_detections(
    detections: &DetectionSet,
    path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    let mut array = Vec::new();
    for (&image_id, dets) in detections {
        for d in dets {
            let mut obj = serde_json::json!({
                "image_id": image_id,
                "category_id": d.category_id,
                "bbox": [d.bbox.x0, d.bbox.y0, d.bbox.width(), d.bbox.height()],
                "score": d.score,
            });
            let map = obj.as_object_mut().expect("object literal");
            if let Some(c) = d.centerness {
                map.insert("centerness".into(), serde_json::json!(c));
            }
            if let Some(id) = d.location_id {
                map.insert("location_id".into(), serde_json::json!(id));
            }
            array.push(obj);
        }
    }
    write_bytes(path.as_ref(), &pretty_json(&serde_json::Value::Array(array)))
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Anything the toolkit can write as a standalone report file.
pub trait Report {
    /// JSON object with fields in their documented order, numbers already
    /// rounded to six significant digits.
    fn to_json(&self) -> serde_json::Value;
    /// CSV header line (no trailing newline).
    fn csv_header(&self) -> String;
    /// CSV data rows (no trailing newlines).
    fn csv_rows(&self) -> Vec<String>;
}

/// Round to six significant digits for stable report output.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor();
    let scale = 10f64.powf(5.0 - magnitude);
    (x * scale).round() / scale
}

/// Format a float the way reports do: six significant digits, no exponent
/// for the magnitudes we emit.
pub fn fmt6(x: f64) -> String {
    let r = sig6(x);
    let mut s = format!("{r}");
    if s.contains('e') {
        s = format!("{r:.10}");
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Write `report` to `path` in the requested format.
pub fn write_report<R: Report>(
    report: &R,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), IngestError> {
    let bytes = match format {
        ReportFormat::Json => pretty_json(&report.to_json()),
        ReportFormat::Csv => {
            let mut text = report.csv_header();
            for row in report.csv_rows() {
                text.push('\n');
                text.push_str(&row);
            }
            text.push('\n');
            text.into_bytes()
        }
    };
    write_bytes(path.as_ref(), &bytes)
}

fn pretty_json(value: &serde_json::Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report JSON is always serializable");
    bytes.push(b'\n');
    bytes
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let mut file = fs::File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}
