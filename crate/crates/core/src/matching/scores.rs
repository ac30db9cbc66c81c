use super::embedding::clamped_cosine;
use super::{MatchConfig, MatchError, Template, TemplateBank};
use crate::geometry::{bbox_iou, CameraIntrinsics};
use crate::proposals::MaskProposal;

/// Geometric score used when no depth is available under the proposal.
pub const NEUTRAL_GEOMETRIC_SCORE: f64 = 0.5;

fn check_dim(expected: usize, got: usize) -> Result<(), MatchError> {
    if expected != got {
        return Err(MatchError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Templates of `bank` ranked by clamped cosine against `embedding`,
/// best first; ties go to the lower view index.
pub fn rank_templates(
    embedding: &[f64],
    bank: &TemplateBank,
) -> Result<Vec<(f64, usize)>, MatchError> {
    check_dim(bank.embedding_dim, embedding.len())?;
    let mut ranked: Vec<(f64, usize)> = bank
        .templates
        .iter()
        .enumerate()
        .map(|(i, t)| (clamped_cosine(embedding, &t.global_embedding), i))
        .collect();
    ranked.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then(
            bank.templates[a.1]
                .view_index
                .cmp(&bank.templates[b.1].view_index),
        )
    });
    Ok(ranked)
}

/// Best clamped cosine over the bank and the view index that achieved it.
pub fn semantic_score(embedding: &[f64], bank: &TemplateBank) -> Result<(f64, usize), MatchError> {
    let ranked = rank_templates(embedding, bank)?;
    let (score, idx) = ranked
        .first()
        .copied()
        .ok_or_else(|| MatchError::Config(format!("object {}: empty bank", bank.object_id)))?;
    Ok((score, bank.templates[idx].view_index))
}

/// Mean over proposal patches of the best clamped cosine against any
/// template patch; 0 when the proposal has no patches.
pub fn appearance_score(
    proposal_patches: &[&[f64]],
    template: &Template,
) -> Result<f64, MatchError> {
    if proposal_patches.is_empty() {
        return Ok(0.0);
    }
    let grid = &template.patch_embeddings;
    for p in proposal_patches {
        check_dim(grid.dim, p.len())?;
    }
    if grid.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = proposal_patches
        .iter()
        .map(|p| {
            grid.iter()
                .map(|t| clamped_cosine(p, t))
                .fold(0.0f64, f64::max)
        })
        .sum();
    Ok(total / proposal_patches.len() as f64)
}

/// IoU between the proposal box and the template silhouette box after
/// rescaling the silhouette to the observed depth and focal length and
/// centring it on the proposal.
pub fn geometric_score(
    proposal: &MaskProposal,
    template: &Template,
    mean_depth_mm: Option<f64>,
    crop_intrinsics: &CameraIntrinsics,
) -> Result<f64, MatchError> {
    let Some(depth) = mean_depth_mm else {
        return Ok(NEUTRAL_GEOMETRIC_SCORE);
    };
    if !(depth > 0.0) {
        return Err(MatchError::InvalidDepth(depth));
    }
    let scale =
        (template.render_distance / depth) * (crop_intrinsics.fx / template.render_intrinsics.fx);
    let (cx, cy) = proposal.bbox.center();
    let expected = template
        .silhouette_bbox
        .scale_about_center(scale)
        .map_err(|e| MatchError::Config(e.to_string()))?
        .recenter(cx, cy);
    Ok(bbox_iou(&expected, &proposal.bbox))
}

pub fn aggregate_score(s_sem: f64, s_appe: f64, s_geo: f64, cfg: &MatchConfig) -> f64 {
    (cfg.w_sem * s_sem + cfg.w_appe * s_appe + cfg.w_geo * s_geo).clamp(0.0, 1.0)
}
