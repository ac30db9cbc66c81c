use std::fs;
use std::path::{Path, PathBuf};

use image::imageops;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embedding::{normalized, PatchGrid};
use super::viewpoints::sample_viewpoints;
use super::{MatchConfig, MatchError};
use crate::backends::{BackendError, FeatureExtractor, Renderer};
use crate::dataset::CadModel;
use crate::geometry::{BinaryMask, BoundingBox, CameraIntrinsics};

/// Canvas and camera used to render templates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub width: u32,
    pub height: u32,
    pub focal_px: f64,
    /// Camera distance; when unset it is chosen so the model spans about half the canvas.
    pub distance_mm: Option<f64>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            focal_px: 150.0,
            distance_mm: None,
        }
    }
}

impl RenderSettings {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal_px,
            fy: self.focal_px,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
        }
    }

    pub fn distance_for(&self, model: &CadModel) -> f64 {
        self.distance_mm.unwrap_or_else(|| {
            let span = 0.5 * self.width.min(self.height) as f64;
            model.diameter().max(1.0) * self.focal_px / span
        })
    }
}

/// One rendered view with its features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub object_id: u32,
    pub view_index: usize,
    pub global_embedding: Vec<f64>,
    pub patch_embeddings: PatchGrid,
    pub silhouette_bbox: BoundingBox,
    pub render_distance: f64,
    pub render_intrinsics: CameraIntrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub object_id: u32,
    pub templates: Vec<Template>,
    pub embedding_dim: usize,
}

impl TemplateBank {
    pub fn new(object_id: u32, templates: Vec<Template>) -> Result<Self, MatchError> {
        let first = templates.first().ok_or_else(|| {
            MatchError::Config(format!("object {object_id}: empty template bank"))
        })?;
        let dim = first.global_embedding.len();
        for t in &templates {
            if t.object_id != object_id {
                return Err(MatchError::Config(format!(
                    "template of object {} in bank of object {object_id}",
                    t.object_id
                )));
            }
            if t.global_embedding.len() != dim
                || (t.patch_embeddings.dim != dim && !t.patch_embeddings.is_empty())
            {
                return Err(MatchError::DimensionMismatch {
                    expected: dim,
                    got: t.global_embedding.len().max(t.patch_embeddings.dim),
                });
            }
        }
        Ok(Self {
            object_id,
            templates,
            embedding_dim: dim,
        })
    }
}

fn build_view(
    model: &CadModel,
    view_index: usize,
    rotation: &nalgebra::Rotation3<f64>,
    settings: &RenderSettings,
    renderer: &dyn Renderer,
    extractor: &dyn FeatureExtractor,
) -> Result<Template, MatchError> {
    let bank_err = |message: String| MatchError::BankBuild {
        object_id: model.object_id,
        view_index,
        message,
    };
    let backend_err = |e: BackendError| {
        if e.is_unavailable() {
            MatchError::Backend(e)
        } else {
            bank_err(e.to_string())
        }
    };
    let k = settings.intrinsics();
    let distance = settings.distance_for(model);
    let view = renderer
        .render(
            model,
            rotation,
            distance,
            &k,
            (settings.width, settings.height),
        )
        .map_err(backend_err)?;
    let rect = view
        .silhouette_bbox
        .snap_outward()
        .clip(settings.width as f64, settings.height as f64)
        .ok_or_else(|| bank_err("silhouette lies outside the render canvas".into()))?;
    let (x, y, w, h) = (
        rect.x() as u32,
        rect.y() as u32,
        rect.w() as u32,
        rect.h() as u32,
    );
    let crop = imageops::crop_imm(&view.image, x, y, w, h).to_image();
    let mask = BinaryMask::full(w as usize, h as usize);
    let feats = extractor.extract(&crop, Some(&mask)).map_err(backend_err)?;
    Ok(Template {
        object_id: model.object_id,
        view_index,
        global_embedding: normalized(&feats.global),
        patch_embeddings: feats.patches.normalized(),
        silhouette_bbox: view.silhouette_bbox,
        render_distance: distance,
        render_intrinsics: k,
    })
}

/// Renders the model from every configured viewpoint and encodes each view.
pub fn build_template_bank(
    model: &CadModel,
    cfg: &MatchConfig,
    renderer: &dyn Renderer,
    extractor: &dyn FeatureExtractor,
) -> Result<TemplateBank, MatchError> {
    if model.vertices.is_empty() {
        return Err(MatchError::Config(format!(
            "object {} has no vertices",
            model.object_id
        )));
    }
    let rotations = sample_viewpoints(cfg.view_count)?;
    let templates = rotations
        .par_iter()
        .enumerate()
        .map(|(i, r)| build_view(model, i, r, &cfg.render, renderer, extractor))
        .collect::<Result<Vec<_>, _>>()?;
    TemplateBank::new(model.object_id, templates)
}

const CACHE_VERSION: u32 = 1;

/// What a cached bank was built from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankCacheKey {
    pub object_id: u32,
    pub view_count: usize,
    pub feature_tag: String,
    /// Digest of renderer tag and render settings.
    pub render_digest: String,
}

impl BankCacheKey {
    pub fn new(object_id: u32, cfg: &MatchConfig, feature_tag: &str, renderer_tag: &str) -> Self {
        let mut h = Sha256::new();
        h.update(renderer_tag.as_bytes());
        h.update(serde_json::to_vec(&cfg.render).unwrap_or_default());
        Self {
            object_id,
            view_count: cfg.view_count,
            feature_tag: feature_tag.to_string(),
            render_digest: hex::encode(&h.finalize()[..8]),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    key: BankCacheKey,
    bank: TemplateBank,
}

pub fn bank_cache_path(dir: &Path, object_id: u32) -> PathBuf {
    dir.join(format!("bank_obj_{object_id:06}.json"))
}

pub fn save_bank(
    dir: &Path,
    key: &BankCacheKey,
    bank: &TemplateBank,
) -> Result<PathBuf, MatchError> {
    let path = bank_cache_path(dir, key.object_id);
    let io = |e: std::io::Error| MatchError::Cache(format!("{}: {e}", path.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let file = CacheFile {
        version: CACHE_VERSION,
        key: key.clone(),
        bank: bank.clone(),
    };
    let bytes = serde_json::to_vec(&file).map_err(|e| MatchError::Cache(e.to_string()))?;
    fs::write(&path, bytes).map_err(io)?;
    Ok(path)
}

/// Loads a cached bank; `None` when absent, stale, or built from a different key.
pub fn load_bank(dir: &Path, key: &BankCacheKey) -> Option<TemplateBank> {
    let path = bank_cache_path(dir, key.object_id);
    let bytes = fs::read(&path).ok()?;
    let file: CacheFile = match serde_json::from_slice(&bytes) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("ignoring unreadable bank cache {}: {e}", path.display());
            return None;
        }
    };
    (file.version == CACHE_VERSION && file.key == *key).then_some(file.bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{OneHotFeatures, ProjectionRenderer};
    use crate::geometry::project_point;
    use nalgebra::{Point3, Rotation3};

    fn unit_cube(object_id: u32) -> CadModel {
        let mut vertices = Vec::new();
        for x in [-0.5, 0.5] {
            for y in [-0.5, 0.5] {
                for z in [-0.5, 0.5] {
                    vertices.push(Point3::new(x, y, z));
                }
            }
        }
        CadModel {
            object_id,
            vertices,
            color: [220, 20, 20],
        }
    }

    #[test]
    fn cube_silhouette_matches_projected_corners() {
        let settings = RenderSettings {
            width: 64,
            height: 64,
            focal_px: 64.0,
            distance_mm: Some(10.0 * 64.0 / 64.0),
        };
        let k = settings.intrinsics();
        let model = unit_cube(1);
        let r = Rotation3::identity();
        let view = ProjectionRenderer::new()
            .render(&model, &r, 10.0, &k, (64, 64))
            .unwrap();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for v in &model.vertices {
            let p = project_point(&k, &Point3::new(v.x, v.y, v.z + 10.0)).unwrap();
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let b = view.silhouette_bbox;
        assert!((b.x() - x0).abs() < 1e-9 && (b.right() - x1).abs() < 1e-9);
        assert!((b.y() - y0).abs() < 1e-9 && (b.bottom() - y1).abs() < 1e-9);
        assert!(b.x() >= 0.0 && b.right() <= 64.0 && b.y() >= 0.0 && b.bottom() <= 64.0);
    }

    #[test]
    fn bank_has_one_template_per_view() {
        let cfg = MatchConfig {
            view_count: 12,
            ..Default::default()
        };
        let bank = build_template_bank(
            &unit_cube(3),
            &cfg,
            &ProjectionRenderer::new(),
            &OneHotFeatures::default(),
        )
        .unwrap();
        assert_eq!(bank.templates.len(), 12);
        assert_eq!(bank.object_id, 3);
        for (i, t) in bank.templates.iter().enumerate() {
            assert_eq!(t.view_index, i);
            let n: f64 = t.global_embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(t.render_distance > 0.0);
            assert_eq!(
                t.patch_embeddings.len(),
                t.patch_embeddings.rows * t.patch_embeddings.cols
            );
        }
    }

    #[test]
    fn empty_model_rejected() {
        let model = CadModel {
            object_id: 1,
            vertices: vec![],
            color: [0, 0, 0],
        };
        assert!(build_template_bank(
            &model,
            &MatchConfig::default(),
            &ProjectionRenderer::new(),
            &OneHotFeatures::default()
        )
        .is_err());
    }

    #[test]
    fn cache_roundtrip_and_invalidation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MatchConfig {
            view_count: 12,
            ..Default::default()
        };
        let bank = build_template_bank(
            &unit_cube(2),
            &cfg,
            &ProjectionRenderer::new(),
            &OneHotFeatures::default(),
        )
        .unwrap();
        let key = BankCacheKey::new(2, &cfg, "one-hot", "projection");
        save_bank(dir.path(), &key, &bank).unwrap();
        assert_eq!(load_bank(dir.path(), &key), Some(bank));

        let other_tag = BankCacheKey::new(2, &cfg, "dinov2-vitl", "projection");
        assert!(load_bank(dir.path(), &other_tag).is_none());
        let other_views = BankCacheKey::new(
            2,
            &MatchConfig {
                view_count: 42,
                ..Default::default()
            },
            "one-hot",
            "projection",
        );
        assert!(load_bank(dir.path(), &other_views).is_none());
    }
}
