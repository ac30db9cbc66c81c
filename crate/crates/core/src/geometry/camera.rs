use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use super::{BinaryMask, BoundingBox, GeometryError};

/// Pinhole intrinsics without skew or distortion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if ![self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::InvalidIntrinsics("non-finite entry".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    /// Row-major 3x3 K matrix.
    pub fn to_matrix(&self) -> [f64; 9] {
        [self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0]
    }
}

/// Intrinsics of the image cropped at `crop`'s top-left corner.
pub fn adjust_intrinsics(k: &CameraIntrinsics, crop: &BoundingBox) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx - crop.x(),
        cy: k.cy - crop.y(),
    }
}

pub fn project_point(k: &CameraIntrinsics, p: &Point3<f64>) -> Result<Point2<f64>, GeometryError> {
    if p.z <= 0.0 || !p.z.is_finite() {
        return Err(GeometryError::BehindCamera(p.z));
    }
    Ok(Point2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// A region of interest with the intrinsics of the cropped view.
///
/// `box_` has integer corners so pixel arrays can be cropped exactly; the
/// adjusted intrinsics are always derived from it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiCrop {
    #[serde(rename = "box")]
    box_: BoundingBox,
    adjusted: CameraIntrinsics,
    original: CameraIntrinsics,
}

impl RoiCrop {
    pub fn new(box_: BoundingBox, original: CameraIntrinsics) -> Self {
        Self {
            box_,
            adjusted: adjust_intrinsics(&original, &box_),
            original,
        }
    }

    /// The crop covering a whole `width x height` frame.
    pub fn full_frame(
        width: usize,
        height: usize,
        k: CameraIntrinsics,
    ) -> Result<Self, GeometryError> {
        Ok(Self::new(
            BoundingBox::new(0.0, 0.0, width as f64, height as f64)?,
            k,
        ))
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.box_
    }

    pub fn adjusted(&self) -> &CameraIntrinsics {
        &self.adjusted
    }

    pub fn original(&self) -> &CameraIntrinsics {
        &self.original
    }

    /// Integer pixel rectangle `(x, y, w, h)` of the crop.
    pub fn pixel_rect(&self) -> (usize, usize, usize, usize) {
        let b = self.box_.snap_outward();
        (
            b.x().max(0.0) as usize,
            b.y().max(0.0) as usize,
            b.w() as usize,
            b.h() as usize,
        )
    }

    pub fn is_consistent(&self) -> bool {
        self.adjusted == adjust_intrinsics(&self.original, &self.box_)
    }
}

/// Maps a crop-local box back to original-frame coordinates.
pub fn remap_bbox(b: &BoundingBox, crop: &RoiCrop) -> BoundingBox {
    b.translate(crop.bbox().x(), crop.bbox().y())
}

/// Pastes a crop-local mask into an `orig_w x orig_h` canvas at the crop
/// origin; pixels landing outside the canvas are dropped.
pub fn remap_mask(m: &BinaryMask, crop: &RoiCrop, orig_w: usize, orig_h: usize) -> BinaryMask {
    let (ox, oy) = (crop.bbox().x() as i64, crop.bbox().y() as i64);
    let mut out = BinaryMask::empty(orig_w, orig_h);
    for (x, y) in m.iter_set() {
        let (gx, gy) = (x as i64 + ox, y as i64 + oy);
        if gx >= 0 && gy >= 0 && (gx as usize) < orig_w && (gy as usize) < orig_h {
            out.set(gx as usize, gy as usize, true);
        }
    }
    out
}
