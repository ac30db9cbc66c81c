use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Axis-aligned box in continuous pixel coordinates.
///
/// `(x, y)` is the top-left corner; the right and bottom edges at `x + w` and
/// `y + h` are exclusive, which is the convention of the BOP/COCO `[x, y, w, h]`
/// result format.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::InvalidBox(format!(
                "non-finite coordinates [{x}, {y}, {w}, {h}]"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "non-positive extent w={w} h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// Box spanning `[x0, x1) x [y0, y1)`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Box with the same center and both sides multiplied by `factor`.
    pub fn scale_about_center(&self, factor: f64) -> Result<Self, GeometryError> {
        let (cx, cy) = self.center();
        let (w, h) = (self.w * factor, self.h * factor);
        Self::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
    }

    /// Box of the same size whose center sits at `(cx, cy)`.
    pub fn recenter(&self, cx: f64, cy: f64) -> Self {
        Self {
            x: cx - 0.5 * self.w,
            y: cy - 0.5 * self.h,
            ..*self
        }
    }

    /// Intersection with the canvas `[0, width) x [0, height)`; `None` when
    /// nothing of positive area remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<Self> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        Self::from_corners(x0, y0, x1, y1).ok()
    }

    /// Smallest box with integer corners containing this one.
    pub fn snap_outward(&self) -> Self {
        let x0 = self.x.floor();
        let y0 = self.y.floor();
        let x1 = self.right().ceil();
        let y1 = self.bottom().ceil();
        Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn bbox_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
