//! Grid-prompted mask proposals, confidence filtering and mask NMS.

use image::RgbImage;
use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Segmenter};
use crate::geometry::{mask_iou, mask_to_bbox, BinaryMask, BoundingBox, GeometryError};

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("segmentation failed: {0}")]
    Backend(#[source] BackendError),
    #[error("segmenter returned a {got:?} mask for a {expected:?} image")]
    ContractViolation {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("segmenter referenced prompt {index} but only {count} were sent")]
    UnknownPoint { index: usize, count: usize },
    #[error("invalid proposal config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub points_per_side: usize,
    pub min_confidence: f64,
    pub nms_iou: f64,
    pub min_mask_area: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            points_per_side: 32,
            min_confidence: 0.88,
            nms_iou: 0.7,
            min_mask_area: 25,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<(), ProposalError> {
        if self.points_per_side == 0 {
            return Err(ProposalError::Config("points_per_side must be >= 1".into()));
        }
        for (name, v) in [
            ("min_confidence", self.min_confidence),
            ("nms_iou", self.nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ProposalError::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A candidate segment in crop coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskProposal {
    pub mask: BinaryMask,
    pub confidence: f64,
    pub bbox: BoundingBox,
    pub source_point: Point2<f64>,
}

impl MaskProposal {
    pub fn new(
        mask: BinaryMask,
        confidence: f64,
        source_point: Point2<f64>,
    ) -> Result<Self, GeometryError> {
        let bbox = mask_to_bbox(&mask)?;
        Ok(Self {
            mask,
            confidence,
            bbox,
            source_point,
        })
    }
}

/// Centres of an `n x n` grid of cells covering the image, row by row.
pub fn sample_grid_points(width: usize, height: usize, points_per_side: usize) -> Vec<Point2<f64>> {
    let n = points_per_side;
    let (w, h) = (width as f64, height as f64);
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push(Point2::new(
                (i as f64 + 0.5) * w / n as f64,
                (j as f64 + 0.5) * h / n as f64,
            ));
        }
    }
    out
}

/// Prompts the segmenter with the grid and keeps non-trivial masks.
pub fn generate_proposals(
    image: &RgbImage,
    cfg: &ProposalConfig,
    segmenter: &dyn Segmenter,
) -> Result<Vec<MaskProposal>, ProposalError> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let points = sample_grid_points(w, h, cfg.points_per_side);
    let masks = segmenter
        .segment(image, &points)
        .map_err(ProposalError::Backend)?;
    let mut out = Vec::with_capacity(masks.len());
    for pm in masks {
        if (pm.mask.width(), pm.mask.height()) != (w, h) {
            return Err(ProposalError::ContractViolation {
                expected: (w, h),
                got: (pm.mask.width(), pm.mask.height()),
            });
        }
        let point = *points
            .get(pm.point_index)
            .ok_or(ProposalError::UnknownPoint {
                index: pm.point_index,
                count: points.len(),
            })?;
        if pm.mask.is_empty() || pm.mask.area() < cfg.min_mask_area {
            continue;
        }
        out.push(MaskProposal::new(pm.mask, pm.confidence, point)?);
    }
    Ok(out)
}

/// Keeps proposals with `confidence >= min_confidence`, preserving order.
pub fn filter_by_confidence(
    proposals: Vec<MaskProposal>,
    min_confidence: f64,
) -> Vec<MaskProposal> {
    proposals
        .into_iter()
        .filter(|p| p.confidence >= min_confidence)
        .collect()
}

/// Mask IoU that only scans where the two boxes overlap; equal to `mask_iou`.
fn proposal_iou(a: &MaskProposal, b: &MaskProposal) -> Result<f64, ProposalError> {
    if !a.mask.same_shape(&b.mask) {
        return Ok(mask_iou(&a.mask, &b.mask)?);
    }
    let x0 = a.bbox.x().max(b.bbox.x()) as usize;
    let y0 = a.bbox.y().max(b.bbox.y()) as usize;
    let x1 = a.bbox.right().min(b.bbox.right()) as usize;
    let y1 = a.bbox.bottom().min(b.bbox.bottom()) as usize;
    let union_without_overlap = (a.mask.area() + b.mask.area()) as u64;
    if x0 >= x1 || y0 >= y1 {
        return Ok(0.0);
    }
    let inter: u64 = if a.bbox == b.bbox && a.mask == b.mask {
        a.mask.area() as u64
    } else {
        (y0..y1)
            .map(|y| {
                let (ra, rb) = (&a.mask.row(y)[x0..x1], &b.mask.row(y)[x0..x1]);
                ra.iter().zip(rb).filter(|(&p, &q)| p && q).count() as u64
            })
            .sum()
    };
    Ok(inter as f64 / (union_without_overlap - inter) as f64)
}

/// Greedy NMS on mask IoU. Candidates are visited by confidence, then area,
/// then input position; a candidate survives when its IoU with every kept
/// mask is below `nms_iou`.
pub fn mask_nms(
    proposals: Vec<MaskProposal>,
    nms_iou: f64,
) -> Result<Vec<MaskProposal>, ProposalError> {
    let areas: Vec<usize> = proposals.iter().map(|p| p.mask.area()).collect();
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .confidence
            .total_cmp(&proposals[a].confidence)
            .then(areas[b].cmp(&areas[a]))
            .then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let mut keep = true;
        for &k in &kept {
            if proposal_iou(&proposals[idx], &proposals[k])? >= nms_iou {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(idx);
        }
    }

    let mut slots: Vec<Option<MaskProposal>> = proposals.into_iter().map(Some).collect();
    Ok(kept.into_iter().filter_map(|i| slots[i].take()).collect())
}

/// Full proposal stage: generate, filter, suppress.
pub fn propose(
    image: &RgbImage,
    cfg: &ProposalConfig,
    segmenter: &dyn Segmenter,
) -> Result<Vec<MaskProposal>, ProposalError> {
    let raw = generate_proposals(image, cfg, segmenter)?;
    mask_nms(filter_by_confidence(raw, cfg.min_confidence), cfg.nms_iou)
}
