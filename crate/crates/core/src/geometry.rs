//! Axis-aligned page-space boxes.
//!
//! Boxes are stored as corners `(x0, y0, x1, y1)` in page pixels with the
//! origin at the top-left. On the wire they serialize as a 4-element array in
//! the same order.

use serde::{Deserialize, Serialize};

/// Corner-form bounding box in page-pixel coordinates.
///
/// The type itself does not enforce `x0 <= x1` or non-negative coordinates:
/// malformed boxes must be representable so that validation can report them.
/// Use [`BBox::is_well_formed`] to check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Converts COCO `[x, y, w, h]` to corners.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    /// COCO `[x, y, w, h]` form.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x0, self.y0, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Area, zero for inverted boxes.
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x0.is_finite() && self.y0.is_finite() && self.x1.is_finite() && self.y1.is_finite()
    }

    /// Finite, non-negative and not inverted.
    pub fn is_well_formed(&self) -> bool {
        self.is_finite() && self.x0 <= self.x1 && self.y0 <= self.y1 && self.x0 >= 0.0 && self.y0 >= 0.0
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within_page(&self, width: f64, height: f64) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= width && self.y1 <= height
    }

    /// Clamps every coordinate into `[0, width] x [0, height]`.
    pub fn clamp_to_page(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x0.clamp(0.0, width),
            self.y0.clamp(0.0, height),
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
        )
    }

    /// Area of the overlap; zero when the boxes only touch or are disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Positive-area overlap.
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    /// Bounding union of a collection of boxes; `None` when empty.
    pub fn hull_of<'a, I: IntoIterator<Item = &'a BBox>>(boxes: I) -> Option<BBox> {
        boxes.into_iter().fold(None, |acc, b| match acc {
            None => Some(*b),
            Some(h) => Some(h.hull(b)),
        })
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    /// Horizontal and vertical separation between the boxes, each zero when the
    /// projections on that axis overlap or touch.
    pub fn separation(&self, other: &BBox) -> (f64, f64) {
        let dx = (other.x0 - self.x1).max(self.x0 - other.x1).max(0.0);
        let dy = (other.y0 - self.y1).max(self.y0 - other.y1).max(0.0);
        (dx, dy)
    }

    /// Intersection over union; 0 when disjoint or when both boxes are empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}
