//! BOP/COCO-style detection AP and per-stage runtime reports.
//!
//! For every object and IoU threshold, detections from all images are
//! ranked by score, matched greedily against ground truth image by image,
//! and turned into a 101-point interpolated precision-recall AP. An object's
//! AP is the mean over thresholds; the dataset AP is the mean over objects
//! that appear in the ground truth.

mod timing;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DetectionRecord, GroundTruthInstance};
use crate::geometry::{bbox_iou, mask_iou, GeometryError};

pub use timing::{summarize_timings, BenchmarkReport, FrameTiming, StageTiming};

/// `(scene_id, image_id)`.
pub type ImageKey = (u32, u32);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("ground truth is empty; AP is undefined")]
    EmptyGroundTruth,
    #[error("detection on scene {scene_id} image {image_id} has non-finite score")]
    InvalidScore { scene_id: u32, image_id: u32 },
    #[error("scene {scene_id} image {image_id}: {source}")]
    Geometry {
        scene_id: u32,
        image_id: u32,
        #[source]
        source: GeometryError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    Mask,
    Bbox,
}

/// The ten thresholds 0.50, 0.55, ..., 0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub iou_kind: IouKind,
    /// Cap on detections kept per image and object, highest scores first.
    pub max_dets_per_image: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: default_iou_thresholds(),
            iou_kind: IouKind::Mask,
            max_dets_per_image: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::Config("no IoU thresholds".into()));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(EvalError::Config(format!(
                "IoU thresholds must lie in (0, 1]: {:?}",
                self.iou_thresholds
            )));
        }
        if self.iou_thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(EvalError::Config(format!(
                "IoU thresholds must be strictly increasing: {:?}",
                self.iou_thresholds
            )));
        }
        if self.max_dets_per_image == 0 {
            return Err(EvalError::Config("max_dets_per_image must be >= 1".into()));
        }
        Ok(())
    }
}

/// Greedy matching of score-ordered detections against ground truth.
///
/// `ious[d][g]` is the IoU of detection `d` (already sorted by descending
/// score) with ground truth `g`. Each detection takes the unmatched ground
/// truth with the highest IoU `>= iou_t`, ties going to the lower index.
pub fn match_greedy(ious: &[Vec<f64>], num_gts: usize, iou_t: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; num_gts];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate().take(num_gts) {
                if taken[g] || iou < iou_t {
                    continue;
                }
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            best.map(|(g, _)| {
                taken[g] = true;
                g
            })
        })
        .collect()
}

/// 101-point interpolated AP from detections already ranked by score.
/// `is_tp[i]` says whether the i-th ranked detection is a true positive.
pub fn interpolated_ap(is_tp: &[bool], num_gts: usize) -> f64 {
    if num_gts == 0 || is_tp.is_empty() {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut precision = Vec::with_capacity(is_tp.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in is_tp {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gts as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let i = recall.partition_point(|&x| x < r);
        if i < precision.len() {
            total += precision[i];
        }
    }
    total / 101.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAp {
    pub object_id: u32,
    pub ap: f64,
    pub ap_per_threshold: Vec<f64>,
    pub num_gts: usize,
    pub num_dets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub mean_ap: f64,
    pub iou_kind: IouKind,
    pub iou_thresholds: Vec<f64>,
    pub objects: Vec<ObjectAp>,
}

impl ApReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>8}  {:>6}  {:>6}  {:>8}",
            "object", "gts", "dets", "AP"
        );
        for o in &self.objects {
            let _ = writeln!(
                s,
                "{:>8}  {:>6}  {:>6}  {:>8.4}",
                o.object_id, o.num_gts, o.num_dets, o.ap
            );
        }
        let _ = writeln!(
            s,
            "{:>8}  {:>6}  {:>6}  {:>8.4}",
            "mean", "", "", self.mean_ap
        );
        s
    }
}

/// IoU tables and ranking data for one object on one image.
struct ImageObject {
    /// Detection indices into the input slice, best score first.
    dets: Vec<usize>,
    num_gts: usize,
    ious: Vec<Vec<f64>>,
}

fn rank_within_image(dets: &[DetectionRecord], idx: &mut [usize]) {
    idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
}

fn image_object_ious(
    key: ImageKey,
    dets: &[DetectionRecord],
    det_idx: &[usize],
    gts: &[&GroundTruthInstance],
    kind: IouKind,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let geo = |source| EvalError::Geometry {
        scene_id: key.0,
        image_id: key.1,
        source,
    };
    det_idx
        .iter()
        .map(|&d| {
            let det = &dets[d];
            match kind {
                IouKind::Bbox => Ok(gts.iter().map(|g| bbox_iou(&det.bbox, &g.bbox)).collect()),
                IouKind::Mask => {
                    if gts.is_empty() {
                        return Ok(Vec::new());
                    }
                    let m = det.mask_rle.decode().map_err(geo)?;
                    gts.iter()
                        .map(|g| mask_iou(&m, &g.mask).map_err(geo))
                        .collect()
                }
            }
        })
        .collect()
}

/// AP of `dets` against `gts`, keyed by `(scene_id, image_id)`.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &BTreeMap<ImageKey, Vec<GroundTruthInstance>>,
    cfg: &EvalConfig,
) -> Result<ApReport, EvalError> {
    cfg.validate()?;
    if let Some(d) = dets.iter().find(|d| !d.score.is_finite()) {
        return Err(EvalError::InvalidScore {
            scene_id: d.scene_id,
            image_id: d.image_id,
        });
    }
    let gt_objects: BTreeSet<u32> = gts.values().flatten().map(|g| g.object_id).collect();
    if gt_objects.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }

    // group by (image, object); objects absent from the ground truth are ignored
    let mut groups: BTreeMap<(ImageKey, u32), Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        if gt_objects.contains(&d.object_id) {
            groups
                .entry(((d.scene_id, d.image_id), d.object_id))
                .or_default()
                .push(i);
        }
    }
    for (key, list) in gts {
        for g in list {
            groups.entry((*key, g.object_id)).or_default();
        }
    }

    let groups: Vec<((ImageKey, u32), Vec<usize>)> = groups.into_iter().collect();
    let cells: Vec<ImageObject> = groups
        .par_iter()
        .map(|((key, obj), idx)| {
            let mut idx = idx.clone();
            rank_within_image(dets, &mut idx);
            idx.truncate(cfg.max_dets_per_image);
            let img_gts: Vec<&GroundTruthInstance> = gts
                .get(key)
                .map(|l| l.iter().filter(|g| g.object_id == *obj).collect())
                .unwrap_or_default();
            let ious = image_object_ious(*key, dets, &idx, &img_gts, cfg.iou_kind)?;
            Ok(ImageObject {
                dets: idx,
                num_gts: img_gts.len(),
                ious,
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let mut objects = Vec::new();
    for &obj in &gt_objects {
        let mine: Vec<&ImageObject> = groups
            .iter()
            .zip(&cells)
            .filter(|((k, _), _)| k.1 == obj)
            .map(|(_, c)| c)
            .collect();
        let num_gts: usize = mine.iter().map(|c| c.num_gts).sum();
        // global ranking: score, then image order, then rank inside the image
        let mut ranked: Vec<(usize, usize)> = Vec::new();
        for (ci, c) in mine.iter().enumerate() {
            ranked.extend((0..c.dets.len()).map(|r| (ci, r)));
        }
        ranked.sort_by(|&(ca, ra), &(cb, rb)| {
            let (sa, sb) = (dets[mine[ca].dets[ra]].score, dets[mine[cb].dets[rb]].score);
            sb.total_cmp(&sa).then(ca.cmp(&cb)).then(ra.cmp(&rb))
        });
        let ap_per_threshold: Vec<f64> = cfg
            .iou_thresholds
            .iter()
            .map(|&t| {
                let matched: Vec<Vec<Option<usize>>> = mine
                    .iter()
                    .map(|c| match_greedy(&c.ious, c.num_gts, t))
                    .collect();
                let is_tp: Vec<bool> = ranked
                    .iter()
                    .map(|&(ci, r)| matched[ci][r].is_some())
                    .collect();
                interpolated_ap(&is_tp, num_gts)
            })
            .collect();
        let ap = ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64;
        objects.push(ObjectAp {
            object_id: obj,
            ap,
            ap_per_threshold,
            num_gts,
            num_dets: ranked.len(),
        });
    }
    let mean_ap = objects.iter().map(|o| o.ap).sum::<f64>() / objects.len() as f64;
    Ok(ApReport {
        mean_ap,
        iou_kind: cfg.iou_kind,
        iou_thresholds: cfg.iou_thresholds.clone(),
        objects,
    })
}
