//! Brightness-gated low-light enhancement and depth-window pseudo-colouring.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Enhancer};
use crate::dataset::DepthImage;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid preprocess config: {0}")]
    Config(String),
    #[error("enhancement failed: {0}")]
    Enhancement(#[source] BackendError),
    #[error("enhancer changed image size from {input:?} to {output:?}")]
    ContractViolation {
        input: (u32, u32),
        output: (u32, u32),
    },
    #[error("colour table: {0}")]
    Lut(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Mean 8-bit intensity below which the enhancer runs.
    pub intensity_threshold: f64,
    pub depth_near_mm: f64,
    pub depth_far_mm: f64,
    pub enhancement_enabled: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            intensity_threshold: 50.0,
            depth_near_mm: 1500.0,
            depth_far_mm: 2000.0,
            enhancement_enabled: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(0.0..=255.0).contains(&self.intensity_threshold) {
            return Err(PreprocessError::Config(format!(
                "intensity_threshold {} outside [0, 255]",
                self.intensity_threshold
            )));
        }
        if !(self.depth_near_mm < self.depth_far_mm) {
            return Err(PreprocessError::Config(format!(
                "depth window [{}, {}] is empty",
                self.depth_near_mm, self.depth_far_mm
            )));
        }
        Ok(())
    }
}

/// Mean of the unweighted per-pixel luma `(R + G + B) / 3`.
pub fn mean_intensity(image: &RgbImage) -> f64 {
    let n = image.width() as u64 * image.height() as u64;
    if n == 0 {
        return 0.0;
    }
    let total: u64 = image.as_raw().iter().map(|&v| v as u64).sum();
    total as f64 / (3 * n) as f64
}

/// Whether a frame with this mean intensity counts as dark.
pub fn is_dark(mean: f64, threshold: f64) -> bool {
    mean < threshold
}

pub fn brightness_gate(image: &RgbImage, cfg: &PreprocessConfig) -> bool {
    is_dark(mean_intensity(image), cfg.intensity_threshold)
}

/// Result of the enhancement stage.
#[derive(Clone, Debug)]
pub struct Enhanced {
    pub image: RgbImage,
    pub gate_fired: bool,
}

/// Runs the enhancer when the frame is dark (and enhancement is enabled);
/// otherwise returns the input untouched.
pub fn enhance_if_dark(
    image: &RgbImage,
    cfg: &PreprocessConfig,
    enhancer: &dyn Enhancer,
) -> Result<Enhanced, PreprocessError> {
    if !cfg.enhancement_enabled || !brightness_gate(image, cfg) {
        return Ok(Enhanced {
            image: image.clone(),
            gate_fired: false,
        });
    }
    let out = enhancer
        .enhance(image)
        .map_err(PreprocessError::Enhancement)?;
    if out.dimensions() != image.dimensions() {
        return Err(PreprocessError::ContractViolation {
            input: image.dimensions(),
            output: out.dimensions(),
        });
    }
    Ok(Enhanced {
        image: out,
        gate_fired: true,
    })
}

/// 256-entry RGB lookup table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorLut(Vec<[u8; 3]>);

const PLASMA: &str = include_str!("../assets/plasma.txt");

impl ColorLut {
    /// Parses 256 lines of `R G B`.
    pub fn parse(text: &str) -> Result<Self, PreprocessError> {
        let mut entries = Vec::with_capacity(256);
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let vals: Vec<u8> = line
                .split_whitespace()
                .map(|t| t.parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|e| PreprocessError::Lut(format!("line {}: {e}", i + 1)))?;
            if vals.len() != 3 {
                return Err(PreprocessError::Lut(format!(
                    "line {}: expected 3 values, got {}",
                    i + 1,
                    vals.len()
                )));
            }
            entries.push([vals[0], vals[1], vals[2]]);
        }
        if entries.len() != 256 {
            return Err(PreprocessError::Lut(format!(
                "expected 256 entries, got {}",
                entries.len()
            )));
        }
        Ok(Self(entries))
    }

    pub fn plasma() -> Self {
        Self::parse(PLASMA).expect("bundled plasma table is valid")
    }

    pub fn get(&self, idx: u8) -> [u8; 3] {
        self.0[idx as usize]
    }
}

/// Pseudo-colours depth inside `[near, far]`; everything else (including
/// missing depth) becomes black.
pub fn depth_to_pseudocolor(
    depth: &DepthImage,
    cfg: &PreprocessConfig,
    lut: &ColorLut,
) -> Result<RgbImage, PreprocessError> {
    let (near, far) = (cfg.depth_near_mm, cfg.depth_far_mm);
    if !(near < far) {
        return Err(PreprocessError::Config(format!(
            "depth window [{near}, {far}] is empty"
        )));
    }
    let span = far - near;
    Ok(RgbImage::from_fn(depth.width(), depth.height(), |x, y| {
        let d = depth.get_pixel(x, y).0[0] as f64;
        if d <= 0.0 || d < near || d > far || !d.is_finite() {
            return Rgb([0, 0, 0]);
        }
        let t = (d - near) / span;
        Rgb(lut.get((t * 255.0).round() as u8))
    }))
}
