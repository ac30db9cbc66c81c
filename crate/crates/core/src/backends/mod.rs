//! Interfaces to the external models, their deterministic mocks, and an
//! HTTP adapter for models served out of process.

pub mod mock;
mod remote;
mod server;
pub mod wire;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use image::RgbImage;
use nalgebra::{Point2, Rotation3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CadModel;
use crate::geometry::{BinaryMask, BoundingBox, CameraIntrinsics};
use crate::matching::Features;
use crate::roi::ScoredBox;

pub use remote::RemoteBackend;
pub use server::{BackendServer, ServedBackend};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Enhancer,
    RoiDetector,
    Segmenter,
    FeatureExtractor,
    Renderer,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] = [
        BackendKind::Enhancer,
        BackendKind::RoiDetector,
        BackendKind::Segmenter,
        BackendKind::FeatureExtractor,
        BackendKind::Renderer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Enhancer => "enhancer",
            BackendKind::RoiDetector => "roi_detector",
            BackendKind::Segmenter => "segmenter",
            BackendKind::FeatureExtractor => "feature_extractor",
            BackendKind::Renderer => "renderer",
        }
    }

    /// Environment variable that overrides this kind's endpoint.
    pub fn endpoint_env_var(self) -> String {
        format!("BINDET_{}_ENDPOINT", self.as_str().to_uppercase())
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implementation {
    Mock,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub implementation: Implementation,
    pub endpoint: Option<String>,
    pub model_tag: String,
}

impl BackendDescriptor {
    pub fn mock(kind: BackendKind, model_tag: &str) -> Self {
        Self {
            kind,
            implementation: Implementation::Mock,
            endpoint: None,
            model_tag: model_tag.to_string(),
        }
    }

    pub fn remote(
        kind: BackendKind,
        endpoint: &str,
        model_tag: &str,
    ) -> Result<Self, BackendError> {
        let d = Self {
            kind,
            implementation: Implementation::Remote,
            endpoint: Some(endpoint.to_string()),
            model_tag: model_tag.to_string(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.model_tag.trim().is_empty() {
            return Err(BackendError::Config {
                kind: self.kind,
                message: "model_tag is empty".into(),
            });
        }
        if self.implementation == Implementation::Remote
            && self
                .endpoint
                .as_deref()
                .map_or(true, |e| e.trim().is_empty())
        {
            return Err(BackendError::Config {
                kind: self.kind,
                message: "remote backend needs an endpoint".into(),
            });
        }
        Ok(())
    }
}

/// Backend failure, tagged with the stage it came from.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("{kind} backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable {
        kind: BackendKind,
        attempts: u32,
        message: String,
    },
    #[error("{kind} backend sent a malformed response: {message}")]
    Protocol { kind: BackendKind, message: String },
    #[error("{kind} backend broke its contract: {message}")]
    Contract { kind: BackendKind, message: String },
    #[error("{kind} backend failed: {message}")]
    Failed { kind: BackendKind, message: String },
    #[error("{kind} backend misconfigured: {message}")]
    Config { kind: BackendKind, message: String },
}

impl BackendError {
    pub fn failed(kind: BackendKind, message: impl Into<String>) -> Self {
        BackendError::Failed {
            kind,
            message: message.into(),
        }
    }

    pub fn contract(kind: BackendKind, message: impl Into<String>) -> Self {
        BackendError::Contract {
            kind,
            message: message.into(),
        }
    }

    pub fn protocol(kind: BackendKind, message: impl Into<String>) -> Self {
        BackendError::Protocol {
            kind,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            BackendError::Unavailable { kind, .. }
            | BackendError::Protocol { kind, .. }
            | BackendError::Contract { kind, .. }
            | BackendError::Failed { kind, .. }
            | BackendError::Config { kind, .. } => *kind,
        }
    }

    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Concurrent calls this backend tolerates.
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
}

pub trait Enhancer: Backend {
    /// Must return an image of the same size.
    fn enhance(&self, image: &RgbImage) -> Result<RgbImage, BackendError>;
}

pub trait RoiDetector: Backend {
    fn detect(&self, image: &RgbImage, prompt: &str) -> Result<Vec<ScoredBox>, BackendError>;
}

/// A mask produced for one prompt point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMask {
    pub point_index: usize,
    pub mask: BinaryMask,
    pub confidence: f64,
}

pub trait Segmenter: Backend {
    fn segment(
        &self,
        image: &RgbImage,
        points: &[Point2<f64>],
    ) -> Result<Vec<PointMask>, BackendError>;
}

pub trait FeatureExtractor: Backend {
    fn embedding_dim(&self) -> usize;

    /// Encodes `image`, restricted to `mask` when given (same size as the image).
    fn extract(
        &self,
        image: &RgbImage,
        mask: Option<&BinaryMask>,
    ) -> Result<Features, BackendError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub image: RgbImage,
    pub silhouette_bbox: BoundingBox,
}

pub trait Renderer: Backend {
    fn render(
        &self,
        model: &CadModel,
        rotation: &Rotation3<f64>,
        distance_mm: f64,
        intrinsics: &CameraIntrinsics,
        canvas: (u32, u32),
    ) -> Result<RenderedView, BackendError>;
}

/// Settings for one backend slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: Option<String>,
    pub model_tag: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: Option<usize>,
    /// Latency added to every mock call.
    pub mock_delay_ms: u64,
    /// Feature extractors only.
    pub embedding_dim: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model_tag: None,
            timeout_s: 30.0,
            max_retries: 3,
            retry_backoff_ms: 200,
            max_in_flight: None,
            mock_delay_ms: 0,
            embedding_dim: 1024,
        }
    }
}

/// Knobs for the mock backend set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Enhancer gain; 1.0 gives the identity enhancer.
    pub enhancer_gain: f64,
    /// Boxes the scripted ROI detector returns for every image.
    pub roi_boxes: Vec<ScoredBox>,
    pub flood_tolerance: u8,
    pub segment_confidence: f64,
    /// `one_hot` or `hash`.
    pub features: String,
    pub feature_grid: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            enhancer_gain: 2.0,
            roi_boxes: Vec::new(),
            flood_tolerance: mock::DEFAULT_FLOOD_TOLERANCE,
            segment_confidence: mock::DEFAULT_SEGMENT_CONFIDENCE,
            features: "one_hot".into(),
            feature_grid: mock::DEFAULT_FEATURE_GRID,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub enhancer: BackendConfig,
    pub roi_detector: BackendConfig,
    pub segmenter: BackendConfig,
    pub feature_extractor: BackendConfig,
    pub renderer: BackendConfig,
    pub mock: MockConfig,
}

impl BackendsConfig {
    pub fn slot(&self, kind: BackendKind) -> &BackendConfig {
        match kind {
            BackendKind::Enhancer => &self.enhancer,
            BackendKind::RoiDetector => &self.roi_detector,
            BackendKind::Segmenter => &self.segmenter,
            BackendKind::FeatureExtractor => &self.feature_extractor,
            BackendKind::Renderer => &self.renderer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSetKind {
    Mock,
    Remote,
}

/// One handle per pipeline stage.
#[derive(Clone)]
pub struct BackendSet {
    pub enhancer: Arc<dyn Enhancer>,
    pub roi_detector: Arc<dyn RoiDetector>,
    pub segmenter: Arc<dyn Segmenter>,
    pub feature_extractor: Arc<dyn FeatureExtractor>,
    pub renderer: Arc<dyn Renderer>,
}

fn delayed<T>(inner: T, ms: u64) -> mock::Delayed<T> {
    mock::Delayed::new(inner, Duration::from_millis(ms))
}

impl BackendSet {
    pub fn build(kind: BackendSetKind, cfg: &BackendsConfig) -> Result<Self, BackendError> {
        match kind {
            BackendSetKind::Mock => Self::mock(cfg),
            BackendSetKind::Remote => Self::remote(cfg),
        }
    }

    pub fn mock(cfg: &BackendsConfig) -> Result<Self, BackendError> {
        let m = &cfg.mock;
        let features: Arc<dyn FeatureExtractor> = match m.features.as_str() {
            "one_hot" => Arc::new(delayed(
                mock::OneHotFeatures::new(m.feature_grid),
                cfg.feature_extractor.mock_delay_ms,
            )),
            "hash" => Arc::new(delayed(
                mock::HashFeatures::new(cfg.feature_extractor.embedding_dim, m.feature_grid),
                cfg.feature_extractor.mock_delay_ms,
            )),
            other => {
                return Err(BackendError::Config {
                    kind: BackendKind::FeatureExtractor,
                    message: format!("unknown mock features {other:?}; use one_hot or hash"),
                })
            }
        };
        let enhancer: Arc<dyn Enhancer> = if m.enhancer_gain == 1.0 {
            Arc::new(delayed(
                mock::IdentityEnhancer::new(),
                cfg.enhancer.mock_delay_ms,
            ))
        } else if m.enhancer_gain > 0.0 && m.enhancer_gain.is_finite() {
            Arc::new(delayed(
                mock::GainEnhancer::new(m.enhancer_gain),
                cfg.enhancer.mock_delay_ms,
            ))
        } else {
            return Err(BackendError::Config {
                kind: BackendKind::Enhancer,
                message: format!("enhancer_gain {} must be positive", m.enhancer_gain),
            });
        };
        Ok(Self {
            enhancer,
            roi_detector: Arc::new(delayed(
                mock::ScriptedRoiDetector::fixed(m.roi_boxes.clone()),
                cfg.roi_detector.mock_delay_ms,
            )),
            segmenter: Arc::new(delayed(
                mock::FloodFillSegmenter::new([0, 0, 0], m.flood_tolerance, m.segment_confidence),
                cfg.segmenter.mock_delay_ms,
            )),
            feature_extractor: features,
            renderer: Arc::new(delayed(
                mock::ProjectionRenderer::new(),
                cfg.renderer.mock_delay_ms,
            )),
        })
    }

    pub fn remote(cfg: &BackendsConfig) -> Result<Self, BackendError> {
        let make = |kind: BackendKind| RemoteBackend::from_config(kind, cfg);
        Ok(Self {
            enhancer: Arc::new(make(BackendKind::Enhancer)?),
            roi_detector: Arc::new(make(BackendKind::RoiDetector)?),
            segmenter: Arc::new(make(BackendKind::Segmenter)?),
            feature_extractor: Arc::new(make(BackendKind::FeatureExtractor)?),
            renderer: Arc::new(make(BackendKind::Renderer)?),
        })
    }

    /// Smallest concurrency limit across the set.
    pub fn max_in_flight(&self) -> usize {
        [
            self.enhancer.max_in_flight(),
            self.roi_detector.max_in_flight(),
            self.segmenter.max_in_flight(),
            self.feature_extractor.max_in_flight(),
            self.renderer.max_in_flight(),
        ]
        .into_iter()
        .min()
        .unwrap_or(usize::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_invariants() {
        assert!(BackendDescriptor::mock(BackendKind::Segmenter, "sam")
            .validate()
            .is_ok());
        assert!(BackendDescriptor::mock(BackendKind::Segmenter, " ")
            .validate()
            .is_err());
        assert!(BackendDescriptor::remote(BackendKind::Renderer, "", "x").is_err());
        assert!(BackendDescriptor::remote(BackendKind::Renderer, "http://h:1", "x").is_ok());
    }

    #[test]
    fn errors_name_their_stage() {
        let e = BackendError::failed(BackendKind::RoiDetector, "boom");
        assert_eq!(e.kind(), BackendKind::RoiDetector);
        assert!(e.to_string().starts_with("roi_detector"));
    }

    #[test]
    fn env_var_names() {
        assert_eq!(
            BackendKind::FeatureExtractor.endpoint_env_var(),
            "BINDET_FEATURE_EXTRACTOR_ENDPOINT"
        );
    }

    #[test]
    fn mock_set_builds_from_defaults() {
        let set = BackendSet::mock(&BackendsConfig::default()).unwrap();
        assert_eq!(
            set.enhancer.descriptor().implementation,
            Implementation::Mock
        );
        assert_eq!(set.feature_extractor.embedding_dim(), 4);
    }

    #[test]
    fn remote_set_needs_endpoints() {
        let err = BackendSet::remote(&BackendsConfig::default())
            .err()
            .unwrap();
        assert!(matches!(err, BackendError::Config { .. }));
    }

    #[test]
    fn backends_config_parses_from_toml() {
        let cfg: BackendsConfig = toml::from_str(
            r#"
            [segmenter]
            endpoint = "http://127.0.0.1:9000"
            mock_delay_ms = 50
            [feature_extractor]
            model_tag = "dinov2-vitl14"
            embedding_dim = 768
            [mock]
            roi_boxes = [{ bbox = [1.0, 2.0, 3.0, 4.0], confidence = 0.9 }]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.segmenter.mock_delay_ms, 50);
        assert_eq!(cfg.feature_extractor.embedding_dim, 768);
        assert_eq!(cfg.mock.roi_boxes[0].bbox.to_array(), [1.0, 2.0, 3.0, 4.0]);
    }
}
