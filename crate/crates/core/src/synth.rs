//! Deterministic synthetic scenes: annotation sets with controlled overlap
//! statistics plus matching detection files, for fixtures and self-checks.
//!
//! Everything is driven by a seeded ChaCha stream, so equal configurations
//! produce identical datasets (and therefore byte-identical files).

use crate::geometry::BBox;
use crate::ingestion::{Annotation, Category, Dataset, DetectionSet, ImageRecord, LoadStats};
use crate::postprocess::Detection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scenes: usize,
    pub seed: u64,
    /// Crowded mode: one cluster of heavily overlapping single-class boxes
    /// per scene, detections carrying shared location ids.
    pub crowd: bool,
    /// Upper bound on boxes per scene (ignored in crowd mode).
    pub max_boxes: usize,
    /// Number of categories (crowd mode always uses one).
    pub categories: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenes: 20,
            seed: 7,
            crowd: false,
            max_boxes: 8,
            categories: 3,
        }
    }
}

fn random_box(rng: &mut ChaCha8Rng, width: f64, height: f64) -> BBox {
    // Log-uniform size so every pyramid level sees traffic.
    let max_dim = width.min(height) * 0.8;
    let size = (6.0f64.ln() + rng.gen::<f64>() * (max_dim.ln() - 6.0f64.ln())).exp();
    let aspect = 0.5 + rng.gen::<f64>() * 1.5;
    let w = (size * aspect.sqrt()).min(width - 2.0);
    let h = (size / aspect.sqrt()).min(height - 2.0);
    let x0 = rng.gen::<f64>() * (width - w);
    let y0 = rng.gen::<f64>() * (height - h);
    BBox::new(x0, y0, x0 + w, y0 + h)
}

fn jittered(rng: &mut ChaCha8Rng, b: &BBox, relative: f64, width: f64, height: f64) -> BBox {
    let jw = b.width() * relative;
    let jh = b.height() * relative;
    let mut j = |extent: f64| (rng.gen::<f64>() * 2.0 - 1.0) * extent;
    BBox::new(
        (b.x0 + j(jw)).max(0.0),
        (b.y0 + j(jh)).max(0.0),
        (b.x1 + j(jw)).min(width),
        (b.y1 + j(jh)).min(height),
    )
}

/// Generate a dataset and a matching detection set.
///
/// Detections are plausible: most ground-truth boxes get a jittered true
/// positive with a high score and a center-ness value, and each scene gains
/// a few low-score false positives. Crowd mode emits one tight cluster per
/// scene and detection pairs share a location id, mimicking multiple
/// instance prediction.
pub fn generate(cfg: &SynthConfig) -> (Dataset, DetectionSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let categories = if cfg.crowd { 1 } else { cfg.categories.max(1) };

    let mut images = Vec::with_capacity(cfg.scenes);
    let mut detections: DetectionSet = DetectionSet::new();

    for scene in 0..cfg.scenes {
        let image_id = scene as i64 + 1;
        let width = 320.0 + rng.gen::<f64>() * 480.0;
        let height = 320.0 + rng.gen::<f64>() * 480.0;

        let boxes: Vec<BBox> = if cfg.crowd {
            // One cluster of 2..=6 near-coincident people.
            let count = 2 + rng.gen_range(0..5);
            let base = random_box(&mut rng, width, height);
            (0..count)
                .map(|_| jittered(&mut rng, &base, 0.12, width, height))
                .collect()
        } else {
            let count = 1 + rng.gen_range(0..cfg.max_boxes.max(1));
            (0..count)
                .map(|_| random_box(&mut rng, width, height))
                .collect()
        };

        let annotations: Vec<Annotation> = boxes
            .iter()
            .map(|b| {
                let class = 1 + rng.gen_range(0..categories) as u32;
                Annotation::simple(*b, class)
            })
            .collect();

        let mut dets: Vec<Detection> = Vec::new();
        let cluster_location: u64 = rng.gen_range(0..1 << 20);
        for (i, ann) in annotations.iter().enumerate() {
            if rng.gen::<f64>() < 0.85 {
                let bbox = jittered(&mut rng, &ann.bbox, 0.08, width, height);
                let score = 0.4 + rng.gen::<f64>() * 0.6;
                let centerness = 0.2 + rng.gen::<f64>() * 0.8;
                let location_id = if cfg.crowd {
                    Some(cluster_location + (i / 2) as u64)
                } else {
                    None
                };
                let mut d = Detection::new(
                    bbox,
                    ann.category_id,
                    score,
                    Some(centerness),
                    location_id,
                );
                d.slot = (i % 2) as u32;
                dets.push(d);
            }
        }
        for _ in 0..rng.gen_range(0..3) {
            let bbox = random_box(&mut rng, width, height);
            let class = 1 + rng.gen_range(0..categories) as i64;
            let score = 0.05 + rng.gen::<f64>() * 0.45;
            dets.push(Detection::new(bbox, class, score, None, None));
        }
        if !dets.is_empty() {
            detections.insert(image_id, dets);
        }

        images.push(ImageRecord {
            image_id,
            width: width as u32,
            height: height as u32,
            annotations,
        });
    }

    let dataset = Dataset {
        images,
        categories: (1..=categories as i64)
            .map(|id| Category {
                id,
                name: if cfg.crowd {
                    "person".into()
                } else {
                    format!("class-{id}")
                },
            })
            .collect(),
        stats: LoadStats::default(),
    };
    (dataset, detections)
}
