//! Boxes, overlap measures, image resizing and feature-grid geometry.
//!
//! Everything downstream works in resized input-image pixel coordinates.
//! This module owns the conventions:
//!
//! * boxes are `(x0, y0, x1, y1)` corner pairs, `x0 <= x1` and `y0 <= y1`,
//!   in continuous pixels;
//! * a feature level with stride `s` places grid cell `(gx, gy)` at image
//!   point `(floor(s/2) + gx*s, floor(s/2) + gy*s)`;
//! * feature level `i` is responsible for regression distances strictly
//!   inside its `(range_lo, range_hi)` interval; a distance exactly equal to
//!   a range bound is rejected on both sides of the bound.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("at least one stride is required")]
    EmptyStrides,
    #[error("strides must be strictly ascending ({0} followed by {1})")]
    UnorderedStrides(u32, u32),
    #[error("expected one (lo, hi) range per stride: {strides} strides, {ranges} ranges")]
    RangeCountMismatch { strides: usize, ranges: usize },
    #[error("regression range must satisfy lo < hi, got ({0}, {1})")]
    InvalidRange(f64, f64),
    #[error("ranges must be contiguous: level {0} ends at {1}, level {2} starts at {3}")]
    NonContiguousRanges(usize, f64, usize, f64),
    #[error("image dimensions must be positive")]
    EmptyImage,
}

/// Axis-aligned box in input-image pixels.
///
/// Degenerate (zero-area) boxes are legal inputs to every operation here;
/// overlap measures treat them as having no interior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// From COCO `[x, y, w, h]`, converted as `(x, y, x+w, y+h)`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    pub fn is_degenerate(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    /// Closed containment test on continuous coordinates.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.x1.min(other.x1) - self.x0.max(other.x0);
        let ih = self.y1.min(other.y1) - self.y0.max(other.y0);
        if iw > 0.0 && ih > 0.0 {
            iw * ih
        } else {
            0.0
        }
    }

    /// Smallest box enclosing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    /// Intersection over union. Returns 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Generalized IoU: `iou - (hull - union) / hull`, in `(-1, 1]`.
    ///
    /// Equals plain IoU whenever the enclosing hull has no area beyond the
    /// union. An empty hull (two coincident degenerate boxes) contributes no
    /// penalty.
    pub fn giou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        let hull = self.hull(other).area();
        let iou = if union > 0.0 { inter / union } else { 0.0 };
        if hull > 0.0 {
            iou - (hull - union) / hull
        } else {
            iou
        }
    }

    /// Clip to `[0, w] x [0, h]`.
    pub fn clip(&self, w: f64, h: f64) -> BBox {
        BBox::new(
            self.x0.clamp(0.0, w),
            self.y0.clamp(0.0, h),
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
        )
    }

    pub fn scaled(&self, factor: f64) -> BBox {
        BBox::new(
            self.x0 * factor,
            self.y0 * factor,
            self.x1 * factor,
            self.y1 * factor,
        )
    }
}

/// Short-side / long-side resize rule.
///
/// The scale factor is `min(target_short / short, max_long / long)`: the
/// short side is brought to `target_short` unless that would push the long
/// side past `max_long`, in which case the long side is pinned to `max_long`
/// instead. Aspect ratio is always preserved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizeSpec {
    pub target_short: u32,
    pub max_long: u32,
}

impl Default for ResizeSpec {
    fn default() -> Self {
        Self {
            target_short: 800,
            max_long: 1333,
        }
    }
}

/// Resize `(width, height)` under `spec`, returning the new dimensions
/// (rounded to the nearest pixel) and the exact scale factor applied.
pub fn resize(width: u32, height: u32, spec: &ResizeSpec) -> (u32, u32, f64) {
    let (w, h) = (width as f64, height as f64);
    let short = w.min(h);
    let long = w.max(h);
    let scale = (spec.target_short as f64 / short).min(spec.max_long as f64 / long);
    let new_w = (w * scale).round().max(1.0) as u32;
    let new_h = (h * scale).round().max(1.0) as u32;
    (new_w, new_h, scale)
}

/// One stride tier of the feature pyramid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureLevel {
    /// Position within the level list (0-based).
    pub index: usize,
    pub stride: u32,
    /// Lower regression-distance bound, exclusive.
    pub range_lo: f64,
    /// Upper regression-distance bound, exclusive. May be `f64::INFINITY`.
    pub range_hi: f64,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl FeatureLevel {
    /// Image coordinate of the first grid column/row: `floor(stride / 2)`.
    pub fn half_offset(&self) -> f64 {
        (self.stride / 2) as f64
    }

    /// Pyramid number `log2(stride)`, so stride 8 is P3 and stride 128 is P7.
    pub fn pyramid_level(&self) -> i32 {
        (self.stride as f64).log2().round() as i32
    }

    pub fn num_locations(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn location_at(&self, grid_x: usize, grid_y: usize) -> Location {
        let s = self.stride as f64;
        Location {
            level_index: self.index,
            grid_x,
            grid_y,
            image_x: self.half_offset() + grid_x as f64 * s,
            image_y: self.half_offset() + grid_y as f64 * s,
        }
    }

    /// All locations of the level in row-major order (`grid_y` outer).
    pub fn locations(&self) -> impl Iterator<Item = Location> + '_ {
        (0..self.grid_h)
            .flat_map(move |gy| (0..self.grid_w).map(move |gx| self.location_at(gx, gy)))
    }

    /// Strict-interior range test for a regression distance in pixels.
    pub fn accepts_distance(&self, d: f64) -> bool {
        self.range_lo < d && d < self.range_hi
    }
}

/// One point of a feature grid mapped back onto the input image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub level_index: usize,
    pub grid_x: usize,
    pub grid_y: usize,
    pub image_x: f64,
    pub image_y: f64,
}

impl Location {
    /// Packed `(level, grid_y, grid_x)` identity used by Set NMS.
    pub fn id(&self) -> u64 {
        ((self.level_index as u64) << 48) | ((self.grid_y as u64) << 24) | self.grid_x as u64
    }
}

/// Default pyramid strides P3..P7.
pub const DEFAULT_STRIDES: [u32; 5] = [8, 16, 32, 64, 128];

/// Default regression ranges paired with [`DEFAULT_STRIDES`].
pub fn default_ranges() -> Vec<(f64, f64)> {
    vec![
        (0.0, 64.0),
        (64.0, 128.0),
        (128.0, 256.0),
        (256.0, 512.0),
        (512.0, f64::INFINITY),
    ]
}

/// Build the per-level grids for a resized image.
///
/// Grid dimensions are `ceil(dim / stride)` so that every image pixel falls
/// inside some grid cell.
pub fn build_levels(
    new_width: u32,
    new_height: u32,
    strides: &[u32],
    ranges: &[(f64, f64)],
) -> Result<Vec<FeatureLevel>, GeometryError> {
    if strides.is_empty() {
        return Err(GeometryError::EmptyStrides);
    }
    if new_width == 0 || new_height == 0 {
        return Err(GeometryError::EmptyImage);
    }
    if strides.len() != ranges.len() {
        return Err(GeometryError::RangeCountMismatch {
            strides: strides.len(),
            ranges: ranges.len(),
        });
    }
    for pair in strides.windows(2) {
        if pair[1] <= pair[0] {
            return Err(GeometryError::UnorderedStrides(pair[0], pair[1]));
        }
    }
    for (i, &(lo, hi)) in ranges.iter().enumerate() {
        if lo >= hi {
            return Err(GeometryError::InvalidRange(lo, hi));
        }
        if i + 1 < ranges.len() && ranges[i + 1].0 != hi {
            return Err(GeometryError::NonContiguousRanges(
                i,
                hi,
                i + 1,
                ranges[i + 1].0,
            ));
        }
    }
    Ok(strides
        .iter()
        .zip(ranges)
        .enumerate()
        .map(|(index, (&stride, &(range_lo, range_hi)))| FeatureLevel {
            index,
            stride,
            range_lo,
            range_hi,
            grid_w: (new_width as usize).div_ceil(stride as usize),
            grid_h: (new_height as usize).div_ceil(stride as usize),
        })
        .collect())
}
