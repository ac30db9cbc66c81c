use std::thread;
use std::time::Duration;

use image::RgbImage;
use nalgebra::{Point2, Rotation3};

use super::wire::{decode_png, encode_png, RenderRequest, WireRequest, WireResponse};
use super::{
    Backend, BackendDescriptor, BackendError, BackendKind, BackendsConfig, Enhancer,
    FeatureExtractor, PointMask, RenderedView, Renderer, RoiDetector, Segmenter,
};
use crate::dataset::CadModel;
use crate::geometry::{rle_encode, BinaryMask, CameraIntrinsics};
use crate::matching::Features;
use crate::roi::ScoredBox;

fn default_model_tag(kind: BackendKind) -> &'static str {
    match kind {
        BackendKind::Enhancer => "cidnet",
        BackendKind::RoiDetector => "grounding-dino",
        BackendKind::Segmenter => "sam",
        BackendKind::FeatureExtractor => "dinov2",
        BackendKind::Renderer => "pyrender",
    }
}

/// HTTP client for a model served behind the JSON wire format. One POST per
/// call; connection failures and 503 responses are retried with
/// exponential backoff.
pub struct RemoteBackend {
    desc: BackendDescriptor,
    agent: ureq::Agent,
    max_retries: u32,
    backoff: Duration,
    embedding_dim: usize,
    max_in_flight: usize,
}

impl RemoteBackend {
    pub fn new(
        desc: BackendDescriptor,
        timeout: Duration,
        max_retries: u32,
        backoff: Duration,
    ) -> Result<Self, BackendError> {
        desc.validate()?;
        Ok(Self {
            desc,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            max_retries,
            backoff,
            embedding_dim: 1024,
            max_in_flight: usize::MAX,
        })
    }

    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    /// Builds the adapter for `kind`; the endpoint environment variable wins
    /// over the config file.
    pub fn from_config(kind: BackendKind, cfg: &BackendsConfig) -> Result<Self, BackendError> {
        let slot = cfg.slot(kind);
        let endpoint = std::env::var(kind.endpoint_env_var())
            .ok()
            .filter(|s| !s.trim().is_empty())
            .or_else(|| slot.endpoint.clone())
            .ok_or_else(|| BackendError::Config {
                kind,
                message: format!(
                    "no endpoint; set backends.{kind}.endpoint or {}",
                    kind.endpoint_env_var()
                ),
            })?;
        let tag = slot.model_tag.as_deref().unwrap_or(default_model_tag(kind));
        if !(slot.timeout_s > 0.0) {
            return Err(BackendError::Config {
                kind,
                message: format!("timeout_s {} must be positive", slot.timeout_s),
            });
        }
        let mut b = Self::new(
            BackendDescriptor::remote(kind, &endpoint, tag)?,
            Duration::from_secs_f64(slot.timeout_s),
            slot.max_retries,
            Duration::from_millis(slot.retry_backoff_ms),
        )?
        .with_embedding_dim(slot.embedding_dim);
        if let Some(n) = slot.max_in_flight {
            b = b.with_max_in_flight(n);
        }
        Ok(b)
    }

    fn kind(&self) -> BackendKind {
        self.desc.kind
    }

    fn request(&self) -> WireRequest {
        WireRequest::new(self.kind(), &self.desc.model_tag)
    }

    fn call(&self, req: &WireRequest) -> Result<WireResponse, BackendError> {
        let kind = self.kind();
        let url = self.desc.endpoint.as_deref().unwrap_or_default();
        let body =
            serde_json::to_string(req).map_err(|e| BackendError::protocol(kind, e.to_string()))?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let retryable = match self
                .agent
                .post(url)
                .set("Content-Type", "application/json")
                .send_string(&body)
            {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| {
                        BackendError::protocol(kind, format!("unreadable body: {e}"))
                    })?;
                    let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
                        BackendError::protocol(kind, format!("bad response JSON: {e}"))
                    })?;
                    if let Some(err) = parsed.error {
                        return Err(BackendError::failed(kind, err));
                    }
                    return Ok(parsed);
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    let message = serde_json::from_str::<WireResponse>(&text)
                        .ok()
                        .and_then(|r| r.error)
                        .unwrap_or(text);
                    let message = format!("HTTP {code}: {message}");
                    match code {
                        503 => message,
                        400 => return Err(BackendError::protocol(kind, message)),
                        422 => return Err(BackendError::contract(kind, message)),
                        _ => return Err(BackendError::failed(kind, message)),
                    }
                }
                Err(ureq::Error::Transport(t)) => t.to_string(),
            };
            if attempts > self.max_retries {
                return Err(BackendError::Unavailable {
                    kind,
                    attempts,
                    message: retryable,
                });
            }
            log::warn!("{kind} backend attempt {attempts} failed: {retryable}; retrying");
            thread::sleep(self.backoff * 2u32.saturating_pow(attempts - 1));
        }
    }

    fn image_field(&self, resp: &WireResponse) -> Result<RgbImage, BackendError> {
        let data = resp
            .image_png_b64
            .as_deref()
            .ok_or_else(|| BackendError::protocol(self.kind(), "missing image_png_b64"))?;
        decode_png(data).map_err(|e| BackendError::protocol(self.kind(), e))
    }
}

fn missing(kind: BackendKind, field: &str) -> BackendError {
    BackendError::protocol(kind, format!("missing {field}"))
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

impl Enhancer for RemoteBackend {
    fn enhance(&self, image: &RgbImage) -> Result<RgbImage, BackendError> {
        let mut req = self.request();
        req.image_png_b64 = Some(encode_png(image));
        let resp = self.call(&req)?;
        self.image_field(&resp)
    }
}

impl RoiDetector for RemoteBackend {
    fn detect(&self, image: &RgbImage, prompt: &str) -> Result<Vec<ScoredBox>, BackendError> {
        let mut req = self.request();
        req.image_png_b64 = Some(encode_png(image));
        req.prompt = Some(prompt.to_string());
        let resp = self.call(&req)?;
        Ok(resp.boxes.unwrap_or_default())
    }
}

impl Segmenter for RemoteBackend {
    fn segment(
        &self,
        image: &RgbImage,
        points: &[Point2<f64>],
    ) -> Result<Vec<PointMask>, BackendError> {
        let kind = self.kind();
        let mut req = self.request();
        req.image_png_b64 = Some(encode_png(image));
        req.points = Some(points.iter().map(|p| [p.x, p.y]).collect());
        let resp = self.call(&req)?;
        let masks = resp.masks_rle.unwrap_or_default();
        let indices = resp
            .point_indices
            .ok_or_else(|| missing(kind, "point_indices"))?;
        let confidences = resp
            .confidences
            .ok_or_else(|| missing(kind, "confidences"))?;
        if masks.len() != indices.len() || masks.len() != confidences.len() {
            return Err(BackendError::protocol(
                kind,
                format!(
                    "{} masks, {} point indices, {} confidences",
                    masks.len(),
                    indices.len(),
                    confidences.len()
                ),
            ));
        }
        masks
            .into_iter()
            .zip(indices)
            .zip(confidences)
            .map(|((rle, point_index), confidence)| {
                let mask = rle
                    .decode()
                    .map_err(|e| BackendError::protocol(kind, format!("mask: {e}")))?;
                Ok(PointMask {
                    point_index,
                    mask,
                    confidence,
                })
            })
            .collect()
    }
}

impl FeatureExtractor for RemoteBackend {
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    fn extract(
        &self,
        image: &RgbImage,
        mask: Option<&BinaryMask>,
    ) -> Result<Features, BackendError> {
        let kind = self.kind();
        let mut req = self.request();
        req.image_png_b64 = Some(encode_png(image));
        req.mask_rle = mask.map(rle_encode);
        let resp = self.call(&req)?;
        let global = resp.embedding.ok_or_else(|| missing(kind, "embedding"))?;
        let patches = resp.patches.ok_or_else(|| missing(kind, "patches"))?;
        if !patches.is_consistent() {
            return Err(BackendError::protocol(
                kind,
                "patch grid size does not match its data",
            ));
        }
        for got in [global.len(), patches.dim] {
            if got != self.embedding_dim {
                return Err(BackendError::contract(
                    kind,
                    format!("embedding dim {got}, declared {}", self.embedding_dim),
                ));
            }
        }
        Ok(Features { global, patches })
    }
}

impl Renderer for RemoteBackend {
    fn render(
        &self,
        model: &CadModel,
        rotation: &Rotation3<f64>,
        distance_mm: f64,
        intrinsics: &CameraIntrinsics,
        canvas: (u32, u32),
    ) -> Result<RenderedView, BackendError> {
        let mut req = self.request();
        req.render = Some(RenderRequest::new(
            model,
            rotation,
            distance_mm,
            intrinsics,
            canvas,
        ));
        let resp = self.call(&req)?;
        let image = self.image_field(&resp)?;
        let silhouette_bbox = resp
            .silhouette_bbox
            .ok_or_else(|| missing(self.kind(), "silhouette_bbox"))?;
        Ok(RenderedView {
            image,
            silhouette_bbox,
        })
    }
}
