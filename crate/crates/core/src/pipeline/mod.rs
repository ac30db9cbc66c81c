//! Per-frame orchestration and the batch commands built on it.
//!
//! Stage order per frame: brightness-gated enhancement, ROI detection and
//! crop, grid-prompted proposals, template matching, remap to the frame.

mod config;
mod visualize;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSet};
use crate::dataset::{
    list_images, list_scenes, load_frame, load_models, load_scene_gt, read_detections,
    write_detections, DatasetError, DetectionRecord, GroundTruthInstance, SceneFrame,
};
use crate::evaluation::{
    evaluate, summarize_timings, ApReport, BenchmarkReport, EvalError, FrameTiming, StageTiming,
};
use crate::geometry::{rle_encode, BoundingBox, RoiCrop};
use crate::matching::{
    assign_labels, build_template_bank, load_bank, save_bank, BankCacheKey, Detection, MatchError,
    TemplateBank,
};
use crate::preprocess::{depth_to_pseudocolor, enhance_if_dark, ColorLut, PreprocessError};
use crate::proposals::{propose, ProposalError};
use crate::roi::{apply_crop, detect_roi, select_roi, RoiError, RoiModality};

pub use config::{DatasetConfig, OutputConfig, PipelineConfig, RunConfig};
pub use visualize::{draw_overlay, object_color, run_visualize};

/// Run-level failure.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(BackendError),
    #[error(transparent)]
    Backend(BackendError),
    #[error("template bank: {0}")]
    Templates(MatchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 when a backend stayed unreachable, 1 for every other fatal error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::BackendUnavailable(_) => 2,
            _ => 1,
        }
    }
}

impl From<BackendError> for PipelineError {
    fn from(e: BackendError) -> Self {
        if e.is_unavailable() {
            PipelineError::BackendUnavailable(e)
        } else {
            PipelineError::Backend(e)
        }
    }
}

impl From<MatchError> for PipelineError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::Backend(b) => b.into(),
            other => PipelineError::Templates(other),
        }
    }
}

/// Failure confined to one frame.
#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

impl FrameError {
    /// The backend error, when the frame failed because a backend stayed unreachable.
    pub fn unavailable_backend(&self) -> Option<&BackendError> {
        let e = match self {
            FrameError::Preprocess(PreprocessError::Enhancement(e))
            | FrameError::Roi(RoiError::Backend(e))
            | FrameError::Proposal(ProposalError::Backend(e))
            | FrameError::Match(MatchError::Backend(e)) => e,
            _ => return None,
        };
        e.is_unavailable().then_some(e)
    }
}

/// What was done to one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetadata {
    pub scene_id: u32,
    pub image_id: u32,
    pub roi_box: BoundingBox,
    pub gate_fired: bool,
    pub stage_timings: StageTiming,
    pub num_proposals: usize,
    pub num_detections: usize,
}

#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub detections: Vec<Detection>,
    pub metadata: FrameMetadata,
}

impl FrameOutput {
    pub fn records(&self, record_time: bool) -> Vec<DetectionRecord> {
        let time_s = if record_time {
            self.metadata.stage_timings.total_s
        } else {
            0.0
        };
        self.detections
            .iter()
            .map(|d| DetectionRecord {
                scene_id: self.metadata.scene_id,
                image_id: self.metadata.image_id,
                object_id: d.object_id,
                score: d.score,
                bbox: d.bbox,
                mask_rle: rle_encode(&d.mask),
                time_s,
            })
            .collect()
    }
}

/// Loads cached banks or builds them, one per model in the models directory.
pub fn build_templates(
    cfg: &PipelineConfig,
    backends: &BackendSet,
) -> Result<Vec<TemplateBank>, PipelineError> {
    cfg.matching.validate()?;
    let models = load_models(&cfg.models_dir())?;
    if models.is_empty() {
        return Err(PipelineError::Config(format!(
            "no obj_*.ply models in {}",
            cfg.models_dir().display()
        )));
    }
    let cache = cfg.template_cache_dir();
    let feature_tag = &backends.feature_extractor.descriptor().model_tag;
    let renderer_tag = &backends.renderer.descriptor().model_tag;
    models
        .iter()
        .map(|m| {
            let key = BankCacheKey::new(m.object_id, &cfg.matching, feature_tag, renderer_tag);
            if let Some(bank) = load_bank(&cache, &key) {
                log::info!("object {}: using cached template bank", m.object_id);
                return Ok(bank);
            }
            log::info!(
                "object {}: rendering {} templates",
                m.object_id,
                cfg.matching.view_count
            );
            let bank = build_template_bank(
                m,
                &cfg.matching,
                backends.renderer.as_ref(),
                backends.feature_extractor.as_ref(),
            )?;
            save_bank(&cache, &key, &bank)?;
            Ok(bank)
        })
        .collect()
}

pub struct Pipeline {
    cfg: PipelineConfig,
    backends: BackendSet,
    banks: Vec<TemplateBank>,
    lut: ColorLut,
}

impl Pipeline {
    /// Validates the config and prepares template banks.
    pub fn new(cfg: PipelineConfig, backends: BackendSet) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let banks = build_templates(&cfg, &backends)?;
        Self::with_banks(cfg, backends, banks)
    }

    pub fn with_banks(
        cfg: PipelineConfig,
        backends: BackendSet,
        banks: Vec<TemplateBank>,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        if banks.is_empty() {
            return Err(PipelineError::Config("no template banks".into()));
        }
        Ok(Self {
            cfg,
            backends,
            banks,
            lut: ColorLut::plasma(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn banks(&self) -> &[TemplateBank] {
        &self.banks
    }

    fn roi_input(
        &self,
        frame: &SceneFrame,
        enhanced: &image::RgbImage,
    ) -> Result<image::RgbImage, FrameError> {
        match (self.cfg.roi.modality, &frame.depth) {
            (RoiModality::Rgb, _) => Ok(enhanced.clone()),
            (RoiModality::DepthPseudocolor, Some(depth)) => Ok(depth_to_pseudocolor(
                depth,
                &self.cfg.preprocess,
                &self.lut,
            )?),
            (RoiModality::DepthPseudocolor, None) => {
                log::warn!(
                    "scene {} image {}: no depth for pseudo-colour ROI; using RGB",
                    frame.scene_id,
                    frame.image_id
                );
                Ok(enhanced.clone())
            }
        }
    }

    /// Runs every stage on one frame.
    pub fn process_frame(&self, frame: &SceneFrame) -> Result<FrameOutput, FrameError> {
        let cfg = &self.cfg;
        let start = Instant::now();
        let enhanced =
            enhance_if_dark(&frame.rgb, &cfg.preprocess, self.backends.enhancer.as_ref())?;
        let (w, h) = (frame.width(), frame.height());
        let roi = if cfg.roi.enabled {
            let input = self.roi_input(frame, &enhanced.image)?;
            let candidates = detect_roi(&input, &cfg.roi, self.backends.roi_detector.as_ref())?;
            select_roi(&candidates, &cfg.roi, (w, h), &frame.intrinsics)?
        } else {
            RoiCrop::full_frame(w, h, frame.intrinsics).map_err(RoiError::from)?
        };
        let working = SceneFrame {
            rgb: enhanced.image,
            ..frame.clone()
        };
        let cropped = apply_crop(&working, &roi);
        let preprocessing_s = start.elapsed().as_secs_f64();

        let mid = Instant::now();
        let proposals = propose(
            &cropped.rgb,
            &cfg.proposals,
            self.backends.segmenter.as_ref(),
        )?;
        let detections = assign_labels(
            &proposals,
            &self.banks,
            &cropped,
            &roi,
            (w, h),
            &cfg.matching,
            self.backends.feature_extractor.as_ref(),
        )?;
        let proposal_matching_s = mid.elapsed().as_secs_f64();

        Ok(FrameOutput {
            metadata: FrameMetadata {
                scene_id: frame.scene_id,
                image_id: frame.image_id,
                roi_box: *roi.bbox(),
                gate_fired: enhanced.gate_fired,
                stage_timings: StageTiming::new(preprocessing_s, proposal_matching_s),
                num_proposals: proposals.len(),
                num_detections: detections.len(),
            },
            detections,
        })
    }
}

/// `(scene_id, image_id)` of every frame the config selects, in order.
pub fn frame_keys(cfg: &PipelineConfig) -> Result<Vec<(u32, u32)>, PipelineError> {
    let split = cfg.split_dir();
    let mut keys = Vec::new();
    for scene in list_scenes(&split)? {
        if cfg
            .dataset
            .scenes
            .as_ref()
            .is_some_and(|s| !s.contains(&scene))
        {
            continue;
        }
        for image in list_images(&split, scene)? {
            keys.push((scene, image));
        }
    }
    if let Some(n) = cfg.dataset.max_frames {
        keys.truncate(n);
    }
    Ok(keys)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))
}

/// Outcome of `run_detect`.
#[derive(Clone, Debug)]
pub struct DetectSummary {
    pub detections_path: PathBuf,
    pub records: Vec<DetectionRecord>,
    pub frames: Vec<FrameMetadata>,
    pub failed_frames: Vec<((u32, u32), String)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

/// Runs the pipeline over the selected frames, writing the detection file
/// and one metadata file per frame. Failed frames are logged and skipped;
/// an unreachable backend aborts the run.
pub fn run_detect(
    cfg: &PipelineConfig,
    backends: &BackendSet,
) -> Result<DetectSummary, PipelineError> {
    cfg.validate()?;
    cfg.check_paths(true)?;
    let pipeline = Pipeline::new(cfg.clone(), backends.clone())?;
    let keys = frame_keys(cfg)?;
    let workers = cfg.pipeline.workers.min(backends.max_in_flight());
    let split = cfg.split_dir();
    let results: Vec<Result<FrameOutput, FrameError>> = thread_pool(workers)?.install(|| {
        keys.par_iter()
            .map(|&(scene, image)| {
                let frame = load_frame(&split, scene, image)?;
                pipeline.process_frame(&frame)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut frames = Vec::new();
    let mut failed_frames = Vec::new();
    for (key, result) in keys.iter().zip(results) {
        match result {
            Ok(mut out) => {
                if !cfg.output.record_time {
                    out.metadata.stage_timings = StageTiming::zero();
                }
                records.extend(out.records(cfg.output.record_time));
                frames.push(out.metadata);
            }
            Err(e) => {
                if let Some(b) = e.unavailable_backend() {
                    return Err(PipelineError::BackendUnavailable(b.clone()));
                }
                log::warn!("scene {} image {}: skipped: {e}", key.0, key.1);
                failed_frames.push((*key, e.to_string()));
            }
        }
    }

    let detections_path = cfg.detections_path();
    write_detections(&records, &detections_path)?;
    for m in &frames {
        write_json(
            &cfg.frames_dir()
                .join(format!("{:06}_{:06}.json", m.scene_id, m.image_id)),
            m,
        )?;
    }
    log::info!(
        "{} detections on {} frames ({} skipped) -> {}",
        records.len(),
        frames.len(),
        failed_frames.len(),
        detections_path.display()
    );
    Ok(DetectSummary {
        detections_path,
        records,
        frames,
        failed_frames,
    })
}

/// Ground truth for every selected frame, keyed by `(scene_id, image_id)`.
pub fn load_ground_truth(
    cfg: &PipelineConfig,
) -> Result<BTreeMap<(u32, u32), Vec<GroundTruthInstance>>, PipelineError> {
    let keys = frame_keys(cfg)?;
    let split = cfg.split_dir();
    let mut scenes: Vec<u32> = keys.iter().map(|k| k.0).collect();
    scenes.dedup();
    let mut out = BTreeMap::new();
    for scene in scenes {
        let gt = load_scene_gt(&split, scene)?;
        for &(_, image) in keys.iter().filter(|k| k.0 == scene) {
            out.insert((scene, image), gt.get(&image).cloned().unwrap_or_default());
        }
    }
    Ok(out)
}

/// Scores a detection file against the dataset ground truth and writes
/// `eval_report.json` and `eval_report.txt` next to the other outputs.
pub fn run_evaluate(
    cfg: &PipelineConfig,
    detections_path: &Path,
) -> Result<ApReport, PipelineError> {
    cfg.validate()?;
    cfg.check_paths(false)?;
    let dets = read_detections(detections_path)?;
    let gts = load_ground_truth(cfg)?;
    let report = evaluate(&dets, &gts, &cfg.evaluation)?;
    write_json(&cfg.output.dir.join("eval_report.json"), &report)?;
    let txt = cfg.output.dir.join("eval_report.txt");
    fs::write(&txt, report.to_table()).map_err(|e| PipelineError::io(&txt, e))?;
    Ok(report)
}

/// Times each stage on each frame, one frame at a time.
pub fn benchmark_stages(pipeline: &Pipeline, frames: &[SceneFrame]) -> BenchmarkReport {
    let rows = frames
        .iter()
        .filter_map(|f| match pipeline.process_frame(f) {
            Ok(out) => Some(FrameTiming {
                scene_id: f.scene_id,
                image_id: f.image_id,
                timing: out.metadata.stage_timings,
            }),
            Err(e) => {
                log::warn!("scene {} image {}: not timed: {e}", f.scene_id, f.image_id);
                None
            }
        })
        .collect();
    summarize_timings(rows)
}

/// Benchmarks the selected frames and writes `benchmark.json` and `benchmark.txt`.
pub fn run_benchmark(
    cfg: &PipelineConfig,
    backends: &BackendSet,
) -> Result<BenchmarkReport, PipelineError> {
    cfg.validate()?;
    cfg.check_paths(true)?;
    let pipeline = Pipeline::new(cfg.clone(), backends.clone())?;
    let split = cfg.split_dir();
    let mut frames = Vec::new();
    for (scene, image) in frame_keys(cfg)? {
        match load_frame(&split, scene, image) {
            Ok(f) => frames.push(f),
            Err(e) => log::warn!("scene {scene} image {image}: skipped: {e}"),
        }
    }
    let report = benchmark_stages(&pipeline, &frames);
    write_json(&cfg.output.dir.join("benchmark.json"), &report)?;
    let txt = cfg.output.dir.join("benchmark.txt");
    fs::write(&txt, report.to_table()).map_err(|e| PipelineError::io(&txt, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::BackendKind;
    use crate::synthetic::{write_planted_dataset, PlantedSpec};

    #[test]
    fn unavailable_backend_maps_to_exit_code_two() {
        let e: PipelineError = BackendError::Unavailable {
            kind: BackendKind::Segmenter,
            attempts: 3,
            message: "refused".into(),
        }
        .into();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 1);
        let f = FrameError::Proposal(ProposalError::Backend(BackendError::Unavailable {
            kind: BackendKind::Segmenter,
            attempts: 1,
            message: String::new(),
        }));
        assert!(f.unavailable_backend().is_some());
        let f = FrameError::Proposal(ProposalError::Backend(BackendError::failed(
            BackendKind::Segmenter,
            "x",
        )));
        assert!(f.unavailable_backend().is_none());
    }

    #[test]
    fn planted_frame_yields_both_parts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_planted_dataset(&dir.path().join("data"), &PlantedSpec::default()).unwrap();
        let cfg = ds.pipeline_config(&dir.path().join("out"));
        let backends = BackendSet::mock(&cfg.backends).unwrap();
        let pipeline = Pipeline::new(cfg.clone(), backends).unwrap();
        for id in [0, 1] {
            let frame = load_frame(&cfg.split_dir(), 1, id).unwrap();
            let out = pipeline.process_frame(&frame).unwrap();
            let mut ids: Vec<u32> = out.detections.iter().map(|d| d.object_id).collect();
            ids.sort();
            assert_eq!(ids, vec![1, 2], "frame {id}");
            assert_eq!(out.metadata.roi_box, ds.bin_box);
            assert_eq!(out.metadata.gate_fired, id == 1);
        }
    }

    #[test]
    fn depth_modality_without_depth_falls_back_to_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_planted_dataset(&dir.path().join("data"), &PlantedSpec::default()).unwrap();
        let mut cfg = ds.pipeline_config(&dir.path().join("out"));
        cfg.roi.modality = RoiModality::DepthPseudocolor;
        let pipeline =
            Pipeline::new(cfg.clone(), BackendSet::mock(&cfg.backends).unwrap()).unwrap();
        let frame = load_frame(&cfg.split_dir(), 1, 0).unwrap();
        assert_eq!(pipeline.process_frame(&frame).unwrap().detections.len(), 2);
    }

    #[test]
    fn roi_fallback_still_detects() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_planted_dataset(
            &dir.path().join("data"),
            &PlantedSpec {
                with_distractor: false,
                ..Default::default()
            },
        )
        .unwrap();
        let mut cfg = ds.pipeline_config(&dir.path().join("out"));
        cfg.backends.mock.roi_boxes.clear();
        let pipeline =
            Pipeline::new(cfg.clone(), BackendSet::mock(&cfg.backends).unwrap()).unwrap();
        let frame = load_frame(&cfg.split_dir(), 1, 0).unwrap();
        let out = pipeline.process_frame(&frame).unwrap();
        assert_eq!(out.metadata.roi_box.to_array(), [0.0, 0.0, 160.0, 120.0]);
        assert_eq!(out.detections.len(), 2);
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let mut cfg = PipelineConfig::default();
        cfg.dataset.root = PathBuf::from("/nonexistent/bindet");
        let err = run_detect(&cfg, &BackendSet::mock(&cfg.backends).unwrap()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
