//! Template banks and proposal labelling.
//!
//! Every proposal is encoded with the same feature extractor as the
//! templates, then compared with each object's bank on three channels:
//!
//! * semantic: best clamped cosine between global embeddings,
//! * appearance: mean best-patch clamped cosine against the top semantic views,
//! * geometric: IoU of the proposal box with the depth-rescaled silhouette box.
//!
//! The weighted sum picks the object; low sums are rejected.

mod bank;
mod embedding;
mod scores;
mod viewpoints;

use image::imageops;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bank::{
    bank_cache_path, build_template_bank, load_bank, save_bank, BankCacheKey, RenderSettings,
    Template, TemplateBank,
};
pub use embedding::{clamped_cosine, cosine, l2_norm, normalized, Features, PatchGrid};
pub use scores::{
    aggregate_score, appearance_score, geometric_score, rank_templates, semantic_score,
    NEUTRAL_GEOMETRIC_SCORE,
};
pub use viewpoints::{
    icosphere_directions, look_at_origin, sample_viewpoints, SUPPORTED_VIEW_COUNTS,
};

use crate::backends::{BackendError, FeatureExtractor};
use crate::dataset::{DepthImage, SceneFrame};
use crate::geometry::{remap_bbox, remap_mask, BinaryMask, BoundingBox, RoiCrop};
use crate::proposals::MaskProposal;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("invalid matching config: {0}")]
    Config(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-positive mean depth {0}")]
    InvalidDepth(f64),
    #[error("building bank for object {object_id} failed at view {view_index}: {message}")]
    BankBuild {
        object_id: u32,
        view_index: usize,
        message: String,
    },
    #[error("feature extraction failed: {0}")]
    Backend(#[source] BackendError),
    #[error("template cache: {0}")]
    Cache(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub w_sem: f64,
    pub w_appe: f64,
    pub w_geo: f64,
    pub accept_threshold: f64,
    pub view_count: usize,
    /// Number of top semantic views the appearance score is evaluated against.
    pub appearance_top_k: usize,
    pub render: RenderSettings,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            w_sem: 1.0 / 3.0,
            w_appe: 1.0 / 3.0,
            w_geo: 1.0 / 3.0,
            accept_threshold: 0.4,
            view_count: 42,
            appearance_top_k: 1,
            render: RenderSettings::default(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        let w = [self.w_sem, self.w_appe, self.w_geo];
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err(MatchError::Config(format!(
                "weights must be non-negative: {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MatchError::Config(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.accept_threshold) {
            return Err(MatchError::Config(format!(
                "accept_threshold {} outside [0, 1]",
                self.accept_threshold
            )));
        }
        if self.appearance_top_k == 0 {
            return Err(MatchError::Config("appearance_top_k must be >= 1".into()));
        }
        if !SUPPORTED_VIEW_COUNTS.contains(&self.view_count) {
            return Err(MatchError::Config(format!(
                "unsupported view_count {}; valid counts are {SUPPORTED_VIEW_COUNTS:?}",
                self.view_count
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub s_sem: f64,
    pub s_appe: f64,
    pub s_geo: f64,
    pub aggregate: f64,
    pub best_template: usize,
}

/// A labelled proposal in original-frame coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub object_id: u32,
    pub score: f64,
    pub bbox: BoundingBox,
    pub mask: BinaryMask,
    pub match_score: MatchScore,
}

/// Proposal features: normalised global embedding plus the patches lying on the mask.
#[derive(Clone, Debug)]
pub struct ProposalEncoding {
    pub global: Vec<f64>,
    pub patches: Vec<Vec<f64>>,
}

/// Encodes the proposal's bounding-box crop with its mask.
pub fn encode_proposal(
    image: &image::RgbImage,
    proposal: &MaskProposal,
    extractor: &dyn FeatureExtractor,
) -> Result<ProposalEncoding, MatchError> {
    let b = proposal.bbox;
    let (x, y, w, h) = (b.x() as u32, b.y() as u32, b.w() as u32, b.h() as u32);
    let crop = imageops::crop_imm(image, x, y, w, h).to_image();
    let mask = proposal
        .mask
        .crop(x as usize, y as usize, w as usize, h as usize);
    let feats = extractor
        .extract(&crop, Some(&mask))
        .map_err(MatchError::Backend)?;
    let grid = feats.patches.normalized();
    Ok(ProposalEncoding {
        global: normalized(&feats.global),
        patches: grid
            .select_by_mask(&mask)
            .into_iter()
            .map(|p| p.to_vec())
            .collect(),
    })
}

/// Mean of valid (positive) depth under the mask.
pub fn mean_masked_depth(depth: &DepthImage, mask: &BinaryMask) -> Option<f64> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (x, y) in mask.iter_set() {
        if x as u32 >= depth.width() || y as u32 >= depth.height() {
            continue;
        }
        let d = depth.get_pixel(x as u32, y as u32).0[0] as f64;
        if d > 0.0 && d.is_finite() {
            sum += d;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Scores one encoded proposal against one bank.
pub fn score_against_bank(
    proposal: &MaskProposal,
    encoding: &ProposalEncoding,
    bank: &TemplateBank,
    mean_depth_mm: Option<f64>,
    crop_intrinsics: &crate::geometry::CameraIntrinsics,
    cfg: &MatchConfig,
) -> Result<MatchScore, MatchError> {
    let ranked = rank_templates(&encoding.global, bank)?;
    let &(s_sem, best_idx) = ranked
        .first()
        .ok_or_else(|| MatchError::Config(format!("object {}: empty bank", bank.object_id)))?;
    let patch_refs: Vec<&[f64]> = encoding.patches.iter().map(|p| p.as_slice()).collect();
    let mut s_appe = 0.0f64;
    for &(_, idx) in ranked.iter().take(cfg.appearance_top_k) {
        s_appe = s_appe.max(appearance_score(&patch_refs, &bank.templates[idx])?);
    }
    let best = &bank.templates[best_idx];
    let s_geo = geometric_score(proposal, best, mean_depth_mm, crop_intrinsics)?;
    Ok(MatchScore {
        s_sem,
        s_appe,
        s_geo,
        aggregate: aggregate_score(s_sem, s_appe, s_geo, cfg),
        best_template: best.view_index,
    })
}

/// Labels each proposal with the best-scoring object, drops proposals under
/// the acceptance threshold, and maps the survivors back to the original frame.
///
/// `frame` is the cropped frame the proposals were computed on. Ties between
/// objects go to the lower object id.
pub fn assign_labels(
    proposals: &[MaskProposal],
    banks: &[TemplateBank],
    frame: &SceneFrame,
    roi: &RoiCrop,
    original_size: (usize, usize),
    cfg: &MatchConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<Vec<Detection>, MatchError> {
    if banks.is_empty() {
        return Err(MatchError::Config("no template banks".into()));
    }
    let mut ordered: Vec<&TemplateBank> = banks.iter().collect();
    ordered.sort_by_key(|b| b.object_id);

    let labelled: Vec<Option<Detection>> = proposals
        .par_iter()
        .map(|p| {
            let enc = encode_proposal(&frame.rgb, p, extractor)?;
            let depth = frame
                .depth
                .as_ref()
                .and_then(|d| mean_masked_depth(d, &p.mask));
            let mut best: Option<(u32, MatchScore)> = None;
            for bank in &ordered {
                let s = score_against_bank(p, &enc, bank, depth, &frame.intrinsics, cfg)?;
                if best.map_or(true, |(_, b)| s.aggregate > b.aggregate) {
                    best = Some((bank.object_id, s));
                }
            }
            let (object_id, score) = best.expect("at least one bank");
            if score.aggregate < cfg.accept_threshold {
                return Ok(None);
            }
            Ok(Some(Detection {
                object_id,
                score: score.aggregate,
                bbox: remap_bbox(&p.bbox, roi),
                mask: remap_mask(&p.mask, roi, original_size.0, original_size.1),
                match_score: score,
            }))
        })
        .collect::<Result<_, MatchError>>()?;
    Ok(labelled.into_iter().flatten().collect())
}
