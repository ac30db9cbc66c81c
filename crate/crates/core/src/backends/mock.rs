//! Deterministic stand-ins for every backend kind.

use std::collections::{HashMap, VecDeque};
use std::thread;
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use nalgebra::{Point2, Point3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    Backend, BackendDescriptor, BackendError, BackendKind, Enhancer, FeatureExtractor, PointMask,
    RenderedView, Renderer, RoiDetector, Segmenter,
};
use crate::dataset::CadModel;
use crate::geometry::{project_point, BinaryMask, BoundingBox, CameraIntrinsics};
use crate::matching::{Features, PatchGrid};
use crate::roi::ScoredBox;

pub const DEFAULT_FLOOD_TOLERANCE: u8 = 8;
pub const DEFAULT_SEGMENT_CONFIDENCE: f64 = 0.95;
pub const DEFAULT_FEATURE_GRID: usize = 4;

/// Hex SHA-256 over the image size and pixels.
pub fn image_hash(image: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.as_raw());
    hex::encode(h.finalize())
}

pub struct IdentityEnhancer(BackendDescriptor);

impl IdentityEnhancer {
    pub fn new() -> Self {
        Self(BackendDescriptor::mock(
            BackendKind::Enhancer,
            "mock-identity",
        ))
    }
}

impl Default for IdentityEnhancer {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for IdentityEnhancer {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.0
    }
}

impl Enhancer for IdentityEnhancer {
    fn enhance(&self, image: &RgbImage) -> Result<RgbImage, BackendError> {
        Ok(image.clone())
    }
}

/// Multiplies every channel by `gain`, rounding and saturating at 255.
pub struct GainEnhancer {
    gain: f64,
    desc: BackendDescriptor,
}

impl GainEnhancer {
    pub fn new(gain: f64) -> Self {
        Self {
            gain,
            desc: BackendDescriptor::mock(BackendKind::Enhancer, &format!("mock-gain-{gain}")),
        }
    }
}

impl Backend for GainEnhancer {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }
}

impl Enhancer for GainEnhancer {
    fn enhance(&self, image: &RgbImage) -> Result<RgbImage, BackendError> {
        let mut out = image.clone();
        for v in out.iter_mut() {
            *v = (*v as f64 * self.gain).round().clamp(0.0, 255.0) as u8;
        }
        Ok(out)
    }
}

/// Returns canned boxes: per-image scripts first, then the fixed list.
pub struct ScriptedRoiDetector {
    fixed: Vec<ScoredBox>,
    by_image: HashMap<String, Vec<ScoredBox>>,
    desc: BackendDescriptor,
}

impl ScriptedRoiDetector {
    pub fn fixed(boxes: Vec<ScoredBox>) -> Self {
        Self {
            fixed: boxes,
            by_image: HashMap::new(),
            desc: BackendDescriptor::mock(BackendKind::RoiDetector, "mock-scripted"),
        }
    }

    pub fn with_image(mut self, image: &RgbImage, boxes: Vec<ScoredBox>) -> Self {
        self.by_image.insert(image_hash(image), boxes);
        self
    }
}

impl Backend for ScriptedRoiDetector {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }
}

impl RoiDetector for ScriptedRoiDetector {
    fn detect(&self, image: &RgbImage, prompt: &str) -> Result<Vec<ScoredBox>, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::contract(
                BackendKind::RoiDetector,
                "empty prompt",
            ));
        }
        Ok(self
            .by_image
            .get(&image_hash(image))
            .unwrap_or(&self.fixed)
            .clone())
    }
}

/// Segments the 4-connected region of pixels within `tolerance` (per
/// channel) of the colour under each prompt. Prompts landing on the
/// background colour get an empty mask.
pub struct FloodFillSegmenter {
    background: [u8; 3],
    tolerance: u8,
    confidence: f64,
    desc: BackendDescriptor,
}

impl FloodFillSegmenter {
    pub fn new(background: [u8; 3], tolerance: u8, confidence: f64) -> Self {
        Self {
            background,
            tolerance,
            confidence,
            desc: BackendDescriptor::mock(BackendKind::Segmenter, "mock-flood-fill"),
        }
    }

    fn close(&self, a: [u8; 3], b: [u8; 3]) -> bool {
        a.iter()
            .zip(b)
            .all(|(&x, y)| x.abs_diff(y) <= self.tolerance)
    }

    fn fill(&self, image: &RgbImage, sx: u32, sy: u32) -> BinaryMask {
        let (w, h) = image.dimensions();
        let seed = image.get_pixel(sx, sy).0;
        let mut mask = BinaryMask::empty(w as usize, h as usize);
        if self.close(seed, self.background) {
            return mask;
        }
        let mut queue = VecDeque::from([(sx, sy)]);
        mask.set(sx as usize, sy as usize, true);
        while let Some((x, y)) = queue.pop_front() {
            let neighbours = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbours {
                if nx < w
                    && ny < h
                    && !mask.get(nx as usize, ny as usize)
                    && self.close(image.get_pixel(nx, ny).0, seed)
                {
                    mask.set(nx as usize, ny as usize, true);
                    queue.push_back((nx, ny));
                }
            }
        }
        mask
    }
}

impl Default for FloodFillSegmenter {
    fn default() -> Self {
        Self::new(
            [0, 0, 0],
            DEFAULT_FLOOD_TOLERANCE,
            DEFAULT_SEGMENT_CONFIDENCE,
        )
    }
}

impl Backend for FloodFillSegmenter {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }
}

impl Segmenter for FloodFillSegmenter {
    fn segment(
        &self,
        image: &RgbImage,
        points: &[Point2<f64>],
    ) -> Result<Vec<PointMask>, BackendError> {
        let (w, h) = image.dimensions();
        // a fill seeded anywhere inside an earlier fill of the same colour is that fill
        let mut done: Vec<([u8; 3], BinaryMask)> = Vec::new();
        let mut out = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64) {
                return Err(BackendError::contract(
                    BackendKind::Segmenter,
                    format!("prompt ({}, {}) outside {w}x{h} image", p.x, p.y),
                ));
            }
            let (x, y) = (p.x as u32, p.y as u32);
            let colour = image.get_pixel(x, y).0;
            let cached = done
                .iter()
                .find(|(c, m)| *c == colour && m.get(x as usize, y as usize))
                .map(|(_, m)| m.clone());
            let mask = match cached {
                Some(m) => m,
                None => {
                    let m = self.fill(image, x, y);
                    if !m.is_empty() {
                        done.push((colour, m.clone()));
                    }
                    m
                }
            };
            out.push(PointMask {
                point_index: i,
                mask,
                confidence: self.confidence,
            });
        }
        Ok(out)
    }
}

const ONE_HOT_DIM: usize = 4;
const NEUTRAL_SLOT: usize = 3;

/// Slot of the dominant channel, or the neutral slot for greyish colours.
pub fn dominant_channel(mean: [f64; 3]) -> usize {
    let max = mean.iter().cloned().fold(f64::MIN, f64::max);
    let min = mean.iter().cloned().fold(f64::MAX, f64::min);
    if (max - min) * 4.0 > max {
        (0..3).find(|&c| mean[c] == max).unwrap_or(NEUTRAL_SLOT)
    } else {
        NEUTRAL_SLOT
    }
}

fn check_mask(
    kind: BackendKind,
    image: &RgbImage,
    mask: Option<&BinaryMask>,
) -> Result<(), BackendError> {
    if let Some(m) = mask {
        if (m.width() as u32, m.height() as u32) != image.dimensions() {
            return Err(BackendError::contract(
                kind,
                format!(
                    "mask is {}x{} but image is {}x{}",
                    m.width(),
                    m.height(),
                    image.width(),
                    image.height()
                ),
            ));
        }
    }
    Ok(())
}

/// Cell `(r, c)` of a `grid x grid` partition of a `w x h` image, as pixel ranges.
fn cell_bounds(w: u32, h: u32, grid: usize, r: usize, c: usize) -> (u32, u32, u32, u32) {
    let g = grid as u64;
    let x0 = (c as u64 * w as u64 / g) as u32;
    let x1 = ((c as u64 + 1) * w as u64 / g) as u32;
    let y0 = (r as u64 * h as u64 / g) as u32;
    let y1 = ((r as u64 + 1) * h as u64 / g) as u32;
    (x0, x1, y0, y1)
}

/// 4-dim one-hot embeddings keyed by the dominant colour under the mask
/// (red, green, blue, or neutral), globally and per grid cell. Regions with no
/// masked pixels encode as zero vectors.
pub struct OneHotFeatures {
    grid: usize,
    desc: BackendDescriptor,
}

impl OneHotFeatures {
    pub fn new(grid: usize) -> Self {
        Self {
            grid: grid.max(1),
            desc: BackendDescriptor::mock(BackendKind::FeatureExtractor, "mock-one-hot"),
        }
    }

    fn encode(
        &self,
        image: &RgbImage,
        mask: Option<&BinaryMask>,
        x0: u32,
        x1: u32,
        y0: u32,
        y1: u32,
    ) -> Vec<f64> {
        let mut sum = [0u64; 3];
        let mut n = 0u64;
        for y in y0..y1 {
            for x in x0..x1 {
                if mask.map_or(true, |m| m.get(x as usize, y as usize)) {
                    let p = image.get_pixel(x, y).0;
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                    n += 1;
                }
            }
        }
        let mut v = vec![0.0; ONE_HOT_DIM];
        if n > 0 {
            let mean = sum.map(|s| s as f64 / n as f64);
            v[dominant_channel(mean)] = 1.0;
        }
        v
    }
}

impl Default for OneHotFeatures {
    fn default() -> Self {
        Self::new(DEFAULT_FEATURE_GRID)
    }
}

impl Backend for OneHotFeatures {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }
}

impl FeatureExtractor for OneHotFeatures {
    fn embedding_dim(&self) -> usize {
        ONE_HOT_DIM
    }

    fn extract(
        &self,
        image: &RgbImage,
        mask: Option<&BinaryMask>,
    ) -> Result<Features, BackendError> {
        check_mask(BackendKind::FeatureExtractor, image, mask)?;
        let (w, h) = image.dimensions();
        let global = self.encode(image, mask, 0, w, 0, h);
        let mut patches = Vec::with_capacity(self.grid * self.grid);
        for r in 0..self.grid {
            for c in 0..self.grid {
                let (x0, x1, y0, y1) = cell_bounds(w, h, self.grid, r, c);
                patches.push(self.encode(image, mask, x0, x1, y0, y1));
            }
        }
        Ok(Features {
            global,
            patches: PatchGrid::from_patches(self.grid, self.grid, &patches)
                .expect("uniform patch dims"),
        })
    }
}

/// Pseudo-random Gaussian embeddings seeded from a hash of the input, so the
/// same pixels and mask always give the same vectors.
pub struct HashFeatures {
    dim: usize,
    grid: usize,
    desc: BackendDescriptor,
}

impl HashFeatures {
    pub fn new(dim: usize, grid: usize) -> Self {
        Self {
            dim: dim.max(1),
            grid: grid.max(1),
            desc: BackendDescriptor::mock(
                BackendKind::FeatureExtractor,
                &format!("mock-hash-{dim}"),
            ),
        }
    }
}

impl Backend for HashFeatures {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }
}

impl FeatureExtractor for HashFeatures {
    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn extract(
        &self,
        image: &RgbImage,
        mask: Option<&BinaryMask>,
    ) -> Result<Features, BackendError> {
        check_mask(BackendKind::FeatureExtractor, image, mask)?;
        let mut h = Sha256::new();
        h.update(image_hash(image).as_bytes());
        if let Some(m) = mask {
            h.update(m.bits().iter().map(|&b| b as u8).collect::<Vec<u8>>());
        }
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut sample =
            |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let global = sample(self.dim);
        let patches: Vec<Vec<f64>> = (0..self.grid * self.grid)
            .map(|_| sample(self.dim))
            .collect();
        Ok(Features {
            global,
            patches: PatchGrid::from_patches(self.grid, self.grid, &patches)
                .expect("uniform patch dims"),
        })
    }
}

/// Projects the model's vertices and paints their bounding rectangle in the
/// model colour on a black canvas.
pub struct ProjectionRenderer(BackendDescriptor);

impl ProjectionRenderer {
    pub fn new() -> Self {
        Self(BackendDescriptor::mock(
            BackendKind::Renderer,
            "mock-projection",
        ))
    }
}

impl Default for ProjectionRenderer {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for ProjectionRenderer {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.0
    }
}

impl Renderer for ProjectionRenderer {
    fn render(
        &self,
        model: &CadModel,
        rotation: &Rotation3<f64>,
        distance_mm: f64,
        intrinsics: &CameraIntrinsics,
        canvas: (u32, u32),
    ) -> Result<RenderedView, BackendError> {
        let kind = BackendKind::Renderer;
        if model.vertices.is_empty() {
            return Err(BackendError::failed(
                kind,
                format!("object {} has no vertices", model.object_id),
            ));
        }
        let t = Vector3::new(0.0, 0.0, distance_mm);
        let (mut x0, mut y0, mut x1, mut y1) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for v in &model.vertices {
            let pc: Point3<f64> = Point3::from(rotation * v.coords + t);
            let p = project_point(intrinsics, &pc)
                .map_err(|e| BackendError::failed(kind, e.to_string()))?;
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let (cw, ch) = canvas;
        let bbox = BoundingBox::from_corners(x0, y0, x1.max(x0 + 1e-6), y1.max(y0 + 1e-6))
            .ok()
            .and_then(|b| b.clip(cw as f64, ch as f64))
            .ok_or_else(|| BackendError::failed(kind, "silhouette falls outside the canvas"))?;
        let px = bbox.snap_outward();
        let (fx0, fy0, fx1, fy1) = (
            px.x() as u32,
            px.y() as u32,
            px.right() as u32,
            px.bottom() as u32,
        );
        let image = RgbImage::from_fn(cw, ch, |x, y| {
            if x >= fx0 && x < fx1 && y >= fy0 && y < fy1 {
                Rgb(model.color)
            } else {
                Rgb([0, 0, 0])
            }
        });
        Ok(RenderedView {
            image,
            silhouette_bbox: bbox,
        })
    }
}

/// Wraps a backend so every call takes at least `delay`, like a model
/// server with fixed latency.
pub struct Delayed<T> {
    inner: T,
    delay: Duration,
}

impl<T> Delayed<T> {
    pub fn new(inner: T, delay: Duration) -> Self {
        Self { inner, delay }
    }

    fn timed<R>(&self, call: impl FnOnce(&T) -> R) -> R {
        let start = Instant::now();
        let out = call(&self.inner);
        if let Some(rest) = self.delay.checked_sub(start.elapsed()) {
            thread::sleep(rest);
        }
        out
    }
}

impl<T: Backend> Backend for Delayed<T> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }
}

impl<T: Enhancer> Enhancer for Delayed<T> {
    fn enhance(&self, image: &RgbImage) -> Result<RgbImage, BackendError> {
        self.timed(|b| b.enhance(image))
    }
}

impl<T: RoiDetector> RoiDetector for Delayed<T> {
    fn detect(&self, image: &RgbImage, prompt: &str) -> Result<Vec<ScoredBox>, BackendError> {
        self.timed(|b| b.detect(image, prompt))
    }
}

impl<T: Segmenter> Segmenter for Delayed<T> {
    fn segment(
        &self,
        image: &RgbImage,
        points: &[Point2<f64>],
    ) -> Result<Vec<PointMask>, BackendError> {
        self.timed(|b| b.segment(image, points))
    }
}

impl<T: FeatureExtractor> FeatureExtractor for Delayed<T> {
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    fn extract(
        &self,
        image: &RgbImage,
        mask: Option<&BinaryMask>,
    ) -> Result<Features, BackendError> {
        self.timed(|b| b.extract(image, mask))
    }
}

impl<T: Renderer> Renderer for Delayed<T> {
    fn render(
        &self,
        model: &CadModel,
        rotation: &Rotation3<f64>,
        distance_mm: f64,
        intrinsics: &CameraIntrinsics,
        canvas: (u32, u32),
    ) -> Result<RenderedView, BackendError> {
        self.timed(|b| b.render(model, rotation, distance_mm, intrinsics, canvas))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[test]
    fn gain_saturates() {
        let img = RgbImage::from_pixel(1, 1, Rgb([200, 100, 0]));
        let out = GainEnhancer::new(2.0).enhance(&img).unwrap();
        assert_eq!(out.get_pixel(0, 0).0, [255, 200, 0]);
    }

    #[test]
    fn identity_is_identity() {
        let img = RgbImage::from_fn(3, 2, |x, y| Rgb([x as u8, y as u8, 7]));
        assert_eq!(IdentityEnhancer::new().enhance(&img).unwrap(), img);
    }

    #[test]
    fn scripted_detector_keys_on_image() {
        let a = RgbImage::from_pixel(4, 4, Rgb([1, 2, 3]));
        let b = RgbImage::from_pixel(4, 4, Rgb([3, 2, 1]));
        let boxed = vec![ScoredBox {
            bbox: BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
            confidence: 0.5,
        }];
        let det = ScriptedRoiDetector::fixed(vec![]).with_image(&a, boxed.clone());
        assert_eq!(det.detect(&a, "bin").unwrap(), boxed);
        assert!(det.detect(&b, "bin").unwrap().is_empty());
        assert!(det.detect(&a, "").is_err());
    }

    /// Reference fill: repeatedly grow the set until nothing changes.
    fn grow_oracle(img: &RgbImage, sx: u32, sy: u32, tol: u8) -> BinaryMask {
        let seed = img.get_pixel(sx, sy).0;
        let (w, h) = img.dimensions();
        let close = |p: [u8; 3]| p.iter().zip(seed).all(|(&a, b)| a.abs_diff(b) <= tol);
        let mut m = BinaryMask::empty(w as usize, h as usize);
        m.set(sx as usize, sy as usize, true);
        loop {
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    if m.get(x as usize, y as usize) || !close(img.get_pixel(x, y).0) {
                        continue;
                    }
                    let touches = (x > 0 && m.get(x as usize - 1, y as usize))
                        || (x + 1 < w && m.get(x as usize + 1, y as usize))
                        || (y > 0 && m.get(x as usize, y as usize - 1))
                        || (y + 1 < h && m.get(x as usize, y as usize + 1));
                    if touches {
                        m.set(x as usize, y as usize, true);
                        changed = true;
                    }
                }
            }
            if !changed {
                return m;
            }
        }
    }

    #[test]
    fn flood_fill_matches_growth_oracle() {
        let img = RgbImage::from_fn(24, 18, |x, y| {
            let v =
                ((x * 7 + y * 13) % 5) as u8 * 6 + if (x / 6 + y / 6) % 2 == 0 { 100 } else { 0 };
            Rgb([v, v / 2, 200 - v])
        });
        let seg = FloodFillSegmenter::new([255, 255, 255], 8, 0.9);
        let points: Vec<Point2<f64>> = (0..24)
            .step_by(5)
            .flat_map(|x| {
                (0..18)
                    .step_by(4)
                    .map(move |y| Point2::new(x as f64 + 0.5, y as f64 + 0.5))
            })
            .collect();
        let out = seg.segment(&img, &points).unwrap();
        for (pm, p) in out.iter().zip(&points) {
            assert_eq!(pm.mask, grow_oracle(&img, p.x as u32, p.y as u32, 8));
        }
    }

    #[test]
    fn flood_fill_on_background_is_empty() {
        let img = RgbImage::from_pixel(5, 5, Rgb([3, 3, 3]));
        let out = FloodFillSegmenter::default()
            .segment(&img, &[Point2::new(2.0, 2.0), Point2::new(2.0, 2.0)])
            .unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|m| m.mask.is_empty()));
        assert!(FloodFillSegmenter::default()
            .segment(&img, &[Point2::new(5.0, 0.0)])
            .is_err());
    }

    #[test]
    fn one_hot_keys_by_dominant_colour() {
        let img = RgbImage::from_fn(8, 8, |x, _| {
            if x < 4 {
                Rgb([200, 20, 20])
            } else {
                Rgb([90, 90, 90])
            }
        });
        let f = OneHotFeatures::new(2);
        let left = BinaryMask::from_fn(8, 8, |x, _| x < 4);
        let out = f.extract(&img, Some(&left)).unwrap();
        assert_eq!(out.global, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(out.patches.patch(0, 0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(out.patches.patch(0, 1), &[0.0, 0.0, 0.0, 0.0]);
        let all = f.extract(&img, None).unwrap();
        assert_eq!(all.patches.patch(1, 1), &[0.0, 0.0, 0.0, 1.0]);
        assert!(f.extract(&img, Some(&BinaryMask::full(2, 2))).is_err());
    }

    #[test]
    fn dominant_channel_cases() {
        assert_eq!(dominant_channel([23.0, 16.0, 16.0]), 0);
        assert_eq!(dominant_channel([16.0, 16.0, 16.0]), 3);
        assert_eq!(dominant_channel([46.0, 32.0, 32.0]), 0);
        assert_eq!(dominant_channel([10.0, 10.0, 200.0]), 2);
        assert_eq!(dominant_channel([0.0, 0.0, 0.0]), 3);
    }

    #[test]
    fn hash_features_repeat_exactly() {
        let img = RgbImage::from_fn(6, 6, |x, y| Rgb([x as u8 * 9, y as u8 * 5, 1]));
        let f = HashFeatures::new(16, 2);
        let a = f.extract(&img, None).unwrap();
        assert_eq!(a, f.extract(&img, None).unwrap());
        assert_eq!(a.global.len(), 16);
        let masked = f
            .extract(&img, Some(&BinaryMask::from_rect(6, 6, 0, 0, 3, 3)))
            .unwrap();
        assert_ne!(a.global, masked.global);
    }

    #[test]
    fn renderer_is_deterministic_and_rejects_empty_models() {
        let model = CadModel {
            object_id: 1,
            vertices: vec![Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, 1.0, 0.0)],
            color: [10, 200, 30],
        };
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0).unwrap();
        let r = Rotation3::identity();
        let a = ProjectionRenderer::new()
            .render(&model, &r, 10.0, &k, (64, 64))
            .unwrap();
        let b = ProjectionRenderer::new()
            .render(&model, &r, 10.0, &k, (64, 64))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.silhouette_bbox.to_array(), [22.0, 22.0, 20.0, 20.0]);
        assert_eq!(a.image.get_pixel(22, 22).0, [10, 200, 30]);
        assert_eq!(a.image.get_pixel(42, 42).0, [0, 0, 0]);
        let empty = CadModel {
            vertices: vec![],
            ..model
        };
        assert!(ProjectionRenderer::new()
            .render(&empty, &r, 10.0, &k, (64, 64))
            .is_err());
    }

    #[test]
    fn delayed_sleeps() {
        let d = Delayed::new(IdentityEnhancer::new(), Duration::from_millis(20));
        let t = Instant::now();
        d.enhance(&RgbImage::new(1, 1)).unwrap();
        assert!(t.elapsed() >= Duration::from_millis(20));
        assert_eq!(d.descriptor().model_tag, "mock-identity");
    }
}
