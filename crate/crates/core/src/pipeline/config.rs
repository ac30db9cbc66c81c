use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::backends::BackendsConfig;
use crate::evaluation::EvalConfig;
use crate::matching::MatchConfig;
use crate::preprocess::PreprocessConfig;
use crate::proposals::ProposalConfig;
use crate::roi::RoiConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Dataset root holding the split directories and `models/`.
    pub root: PathBuf,
    pub split: String,
    /// Defaults to `<root>/models`.
    pub models_dir: Option<PathBuf>,
    /// Restrict to these scenes; all scenes when absent.
    pub scenes: Option<Vec<u32>>,
    pub max_frames: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            split: "test".into(),
            models_dir: None,
            scenes: None,
            max_frames: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write measured per-frame times into the results; when false every
    /// time is 0 so reruns produce identical files.
    pub record_time: bool,
    /// Template cache; defaults to `<dir>/templates`.
    pub template_cache: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            record_time: true,
            template_cache: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Frames processed concurrently.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { workers: 4 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub output: OutputConfig,
    pub preprocess: PreprocessConfig,
    pub roi: RoiConfig,
    pub proposals: ProposalConfig,
    pub matching: MatchConfig,
    pub evaluation: EvalConfig,
    pub backends: BackendsConfig,
    pub pipeline: RunConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn split_dir(&self) -> PathBuf {
        self.dataset.root.join(&self.dataset.split)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.dataset
            .models_dir
            .clone()
            .unwrap_or_else(|| self.dataset.root.join("models"))
    }

    pub fn template_cache_dir(&self) -> PathBuf {
        self.output
            .template_cache
            .clone()
            .unwrap_or_else(|| self.output.dir.join("templates"))
    }

    pub fn detections_path(&self) -> PathBuf {
        self.output.dir.join("detections.json")
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.output.dir.join("frames")
    }

    /// Checks every nested section.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.preprocess.validate().map_err(|e| cfg(&e))?;
        self.roi.validate().map_err(|e| cfg(&e))?;
        self.proposals.validate().map_err(|e| cfg(&e))?;
        self.matching.validate().map_err(|e| cfg(&e))?;
        self.evaluation.validate().map_err(|e| cfg(&e))?;
        if self.pipeline.workers == 0 {
            return Err(PipelineError::Config(
                "pipeline.workers must be >= 1".into(),
            ));
        }
        if self.dataset.split.trim().is_empty() {
            return Err(PipelineError::Config("dataset.split is empty".into()));
        }
        Ok(())
    }

    /// Checks that the split directory (and the models, when needed) exist.
    pub fn check_paths(&self, need_models: bool) -> Result<(), PipelineError> {
        let split = self.split_dir();
        if !split.is_dir() {
            return Err(PipelineError::Config(format!(
                "dataset split {} not found",
                split.display()
            )));
        }
        let models = self.models_dir();
        if need_models && !models.is_dir() {
            return Err(PipelineError::Config(format!(
                "models directory {} not found",
                models.display()
            )));
        }
        Ok(())
    }
}
