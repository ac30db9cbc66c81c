//! Boxes, binary masks, run-length encoding and pinhole crop geometry.

mod bbox;
mod camera;
mod mask;
mod rle;

use thiserror::Error;

pub use bbox::{bbox_iou, BoundingBox};
pub use camera::{
    adjust_intrinsics, project_point, remap_bbox, remap_mask, CameraIntrinsics, RoiCrop,
};
pub use mask::{mask_iou, mask_to_bbox, BinaryMask};
pub use rle::{rle_decode, rle_encode, Rle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("mask shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("mask bit length {actual} does not match {expected}")]
    MaskLength { expected: usize, actual: usize },
    #[error("mask is empty")]
    EmptyMask,
    #[error("malformed RLE: {0}")]
    MalformedRle(String),
    #[error("point is not in front of the camera (z = {0})")]
    BehindCamera(f64),
}
