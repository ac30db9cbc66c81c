//! Prompted region-of-interest selection and cropping.

use std::cmp::Ordering;

use image::imageops;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, RoiDetector};
use crate::dataset::SceneFrame;
use crate::geometry::{BoundingBox, CameraIntrinsics, GeometryError, RoiCrop};

pub const DEFAULT_PROMPT: &str = "Parts frame where multiple parts inside it";

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("ROI detector failed: {0}")]
    Backend(#[source] BackendError),
    #[error("no region of interest found")]
    NoRoi,
    #[error("invalid ROI config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiModality {
    Rgb,
    DepthPseudocolor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiFallback {
    FullImage,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    /// When false the whole frame is used and the detector is never called.
    pub enabled: bool,
    pub prompt: String,
    pub modality: RoiModality,
    pub min_confidence: f64,
    pub fallback: RoiFallback,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            prompt: DEFAULT_PROMPT.to_string(),
            modality: RoiModality::Rgb,
            min_confidence: 0.25,
            fallback: RoiFallback::FullImage,
        }
    }
}

impl RoiConfig {
    pub fn validate(&self) -> Result<(), RoiError> {
        if self.prompt.trim().is_empty() {
            return Err(RoiError::Config("prompt is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(RoiError::Config(format!(
                "min_confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Runs the detector, clips its boxes to the image and drops boxes under
/// `min_confidence`.
pub fn detect_roi(
    image: &image::RgbImage,
    cfg: &RoiConfig,
    detector: &dyn RoiDetector,
) -> Result<Vec<ScoredBox>, RoiError> {
    let raw = detector
        .detect(image, &cfg.prompt)
        .map_err(RoiError::Backend)?;
    let (w, h) = (image.width() as f64, image.height() as f64);
    Ok(raw
        .into_iter()
        .filter(|c| c.confidence >= cfg.min_confidence)
        .filter_map(|c| {
            c.bbox.clip(w, h).map(|bbox| ScoredBox {
                bbox,
                confidence: c.confidence,
            })
        })
        .collect())
}

/// Confidence descending, then area descending, then top-left position,
/// then size; gives a total order so selection ignores input order.
fn rank(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(b.bbox.area().total_cmp(&a.bbox.area()))
        .then(a.bbox.x().total_cmp(&b.bbox.x()))
        .then(a.bbox.y().total_cmp(&b.bbox.y()))
        .then(a.bbox.w().total_cmp(&b.bbox.w()))
}

/// Picks the highest-confidence candidate and turns it into a crop. The box
/// is widened to whole pixels and clipped to the image.
pub fn select_roi(
    candidates: &[ScoredBox],
    cfg: &RoiConfig,
    image_size: (usize, usize),
    intrinsics: &CameraIntrinsics,
) -> Result<RoiCrop, RoiError> {
    let (w, h) = image_size;
    let best = candidates.iter().min_by(|a, b| rank(a, b));
    let bbox = best.and_then(|c| c.bbox.snap_outward().clip(w as f64, h as f64));
    match bbox {
        Some(b) => Ok(RoiCrop::new(b, *intrinsics)),
        None => match cfg.fallback {
            RoiFallback::FullImage => Ok(RoiCrop::full_frame(w, h, *intrinsics)?),
            RoiFallback::Error => Err(RoiError::NoRoi),
        },
    }
}

/// Crops rgb and depth to the ROI and swaps in the adjusted intrinsics.
pub fn apply_crop(frame: &SceneFrame, roi: &RoiCrop) -> SceneFrame {
    let (x, y, w, h) = roi.pixel_rect();
    let (x, y, w, h) = (x as u32, y as u32, w as u32, h as u32);
    let rgb = imageops::crop_imm(&frame.rgb, x, y, w, h).to_image();
    let depth = frame
        .depth
        .as_ref()
        .map(|d| imageops::crop_imm(d, x, y, w, h).to_image());
    SceneFrame {
        scene_id: frame.scene_id,
        image_id: frame.image_id,
        rgb,
        depth,
        intrinsics: *roi.adjusted(),
    }
}
