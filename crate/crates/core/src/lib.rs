//! Non-neural machinery of the FCOS anchor-free object detector.
//!
//! FCOS treats every feature-map location as a training sample: each location
//! is labeled with a class, a 4-D left/top/right/bottom regression target and
//! a center-ness score, with no anchor boxes anywhere. This crate implements
//! everything around that idea that does *not* require a network:
//!
//! * [`geometry`] — boxes, IoU/GIoU, image resizing and feature-grid layout;
//! * [`ingestion`] — COCO-style annotation and detection JSON, report output;
//! * [`assignment`] — per-location label assignment (center sampling,
//!   FPN range routing, ambiguity resolution, center-ness targets);
//! * [`anchors`] — the RetinaNet-style anchor grid and IoU matcher used as
//!   the anchor-based baseline;
//! * [`losses`] — focal / GIoU / BCE loss kernels with analytic gradients;
//! * [`postprocess`] — decoding, score fusion, NMS and Set NMS;
//! * [`analysis`] — best-possible-recall and ambiguity studies computed from
//!   annotations alone;
//! * [`metrics`] — COCO AP/AR, log-average miss rate and Jaccard index;
//! * [`synth`] — deterministic synthetic scene generation for fixtures.
//!
//! All computations are in `f64`, all public operations are pure functions of
//! their inputs, and every batch computation reduces in a fixed order so that
//! results are reproducible bit-for-bit regardless of thread count.

pub mod analysis;
pub mod anchors;
pub mod assignment;
pub mod geometry;
pub mod ingestion;
pub mod losses;
pub mod metrics;
pub mod postprocess;
pub mod synth;

pub use geometry::{BBox, FeatureLevel, Location, ResizeSpec};
