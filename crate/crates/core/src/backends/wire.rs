//! JSON wire format shared by the remote adapter and the backend server.
//!
//! Images travel as base64 PNG, masks as COCO RLE, floats as shortest
//! round-trip decimals, so every payload survives the trip bit for bit.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use nalgebra::{Matrix3, Point3, Rotation3};
use serde::{Deserialize, Serialize};

use super::BackendKind;
use crate::dataset::CadModel;
use crate::geometry::{BoundingBox, CameraIntrinsics, Rle};
use crate::matching::PatchGrid;
use crate::roi::ScoredBox;

pub fn encode_png(image: &RgbImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    STANDARD.encode(buf.into_inner())
}

pub fn decode_png(data: &str) -> Result<RgbImage, String> {
    let bytes = STANDARD
        .decode(data)
        .map_err(|e| format!("bad base64: {e}"))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| format!("bad PNG: {e}"))?;
    Ok(img.to_rgb8())
}

/// Everything a renderer needs besides the backend itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub object_id: u32,
    pub vertices: Vec<[f64; 3]>,
    pub color: [u8; 3],
    /// Row-major 3x3.
    pub rotation: [f64; 9],
    pub distance_mm: f64,
    pub intrinsics: CameraIntrinsics,
    pub canvas: [u32; 2],
}

impl RenderRequest {
    pub fn new(
        model: &CadModel,
        rotation: &Rotation3<f64>,
        distance_mm: f64,
        intrinsics: &CameraIntrinsics,
        canvas: (u32, u32),
    ) -> Self {
        let m = rotation.matrix();
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = m[(i, j)];
            }
        }
        Self {
            object_id: model.object_id,
            vertices: model.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            color: model.color,
            rotation: r,
            distance_mm,
            intrinsics: *intrinsics,
            canvas: [canvas.0, canvas.1],
        }
    }

    pub fn model(&self) -> CadModel {
        CadModel {
            object_id: self.object_id,
            vertices: self
                .vertices
                .iter()
                .map(|v| Point3::new(v[0], v[1], v[2]))
                .collect(),
            color: self.color,
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_matrix_unchecked(Matrix3::from_row_slice(&self.rotation))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub kind: BackendKind,
    pub model_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_png_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rle: Option<Rle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderRequest>,
}

impl WireRequest {
    pub fn new(kind: BackendKind, model_tag: &str) -> Self {
        Self {
            kind,
            model_tag: model_tag.to_string(),
            prompt: None,
            points: None,
            image_png_b64: None,
            mask_rle: None,
            render: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_png_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<ScoredBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_rle: Option<Vec<Rle>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patches: Option<PatchGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette_bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireResponse {
    pub fn error(message: impl Into<String>) -> Self {
        Self {
            error: Some(message.into()),
            ..Default::default()
        }
    }
}
