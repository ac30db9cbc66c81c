//! Reading BOP-layout scenes and writing BOP/COCO-style detection results.
//!
//! A split directory (for example `ipd/test`) holds one zero-padded
//! directory per scene:
//!
//! ```text
//! 000001/
//!   scene_camera.json   {"<im_id>": {"cam_K": [9 floats], "depth_scale": f}}
//!   scene_gt.json       {"<im_id>": [{"obj_id": n, ...}]}
//!   scene_gt_info.json  {"<im_id>": [{"visib_fract": f, ...}]}
//!   rgb/ or gray/       <im_id>.png | .jpg
//!   depth/              <im_id>.png, 16-bit
//!   mask_visib/         <im_id>_<gt_idx>.png
//! ```
//!
//! Depth is converted to millimetres on load.

mod model;
mod results;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, RgbImage};
use serde::Deserialize;
use thiserror::Error;

use crate::geometry::{mask_to_bbox, BinaryMask, BoundingBox, CameraIntrinsics, GeometryError};

pub use model::{load_models, read_ply, write_ply, CadModel};
pub use results::{read_detections, write_detections, DetectionRecord};

/// Per-pixel depth in millimetres; 0 marks a missing measurement.
pub type DepthImage = ImageBuffer<Luma<f32>, Vec<f32>>;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("not found: {0}")]
    NotFound(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::NotFound(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub(crate) fn json(path: &Path, err: serde_json::Error) -> Self {
        DatasetError::Format {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

/// One observation handed to the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFrame {
    pub scene_id: u32,
    pub image_id: u32,
    pub rgb: RgbImage,
    pub depth: Option<DepthImage>,
    pub intrinsics: CameraIntrinsics,
}

impl SceneFrame {
    pub fn new(
        scene_id: u32,
        image_id: u32,
        rgb: RgbImage,
        depth: Option<DepthImage>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, DatasetError> {
        if rgb.width() == 0 || rgb.height() == 0 {
            return Err(DatasetError::Validation("empty rgb image".into()));
        }
        if let Some(d) = &depth {
            if d.dimensions() != rgb.dimensions() {
                return Err(DatasetError::Validation(format!(
                    "depth is {:?} but rgb is {:?}",
                    d.dimensions(),
                    rgb.dimensions()
                )));
            }
            if d.pixels().any(|p| !(p.0[0] >= 0.0)) {
                return Err(DatasetError::Validation("negative or NaN depth".into()));
            }
        }
        intrinsics.validate()?;
        Ok(Self {
            scene_id,
            image_id,
            rgb,
            depth,
            intrinsics,
        })
    }

    pub fn width(&self) -> usize {
        self.rgb.width() as usize
    }

    pub fn height(&self) -> usize {
        self.rgb.height() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneCamera {
    pub intrinsics: CameraIntrinsics,
    pub depth_scale: f64,
}

#[derive(Deserialize)]
struct RawCamera {
    #[serde(rename = "cam_K")]
    cam_k: Option<Vec<f64>>,
    depth_scale: Option<f64>,
}

pub fn scene_dir(root: &Path, scene_id: u32) -> PathBuf {
    root.join(format!("{scene_id:06}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::json(path, e))
}

fn parse_id(path: &Path, key: &str) -> Result<u32, DatasetError> {
    key.parse().map_err(|_| DatasetError::Format {
        path: path.to_path_buf(),
        message: format!("image id {key:?} is not an integer"),
    })
}

/// Reads `scene_camera.json` into per-image intrinsics and depth scale.
pub fn load_scene_camera(path: &Path) -> Result<BTreeMap<u32, SceneCamera>, DatasetError> {
    let raw: BTreeMap<String, RawCamera> = read_json(path)?;
    let mut out = BTreeMap::new();
    for (key, cam) in raw {
        let image_id = parse_id(path, &key)?;
        let k = cam.cam_k.ok_or_else(|| DatasetError::Format {
            path: path.to_path_buf(),
            message: format!("image {image_id}: missing cam_K"),
        })?;
        if k.len() != 9 {
            return Err(DatasetError::Format {
                path: path.to_path_buf(),
                message: format!(
                    "image {image_id}: cam_K has {} entries, expected 9",
                    k.len()
                ),
            });
        }
        let intrinsics = CameraIntrinsics::new(k[0], k[4], k[2], k[5])
            .map_err(|e| DatasetError::Validation(format!("image {image_id}: {e}")))?;
        out.insert(
            image_id,
            SceneCamera {
                intrinsics,
                depth_scale: cam.depth_scale.unwrap_or(1.0),
            },
        );
    }
    Ok(out)
}

/// Numeric scene directories under a split root, ascending.
pub fn list_scenes(root: &Path) -> Result<Vec<u32>, DatasetError> {
    let entries = fs::read_dir(root).map_err(|e| DatasetError::io(root, e))?;
    let mut scenes: Vec<u32> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().and_then(|s| s.parse().ok()))
        .collect();
    scenes.sort_unstable();
    Ok(scenes)
}

/// Image ids of a scene, taken from its camera file.
pub fn list_images(root: &Path, scene_id: u32) -> Result<Vec<u32>, DatasetError> {
    let cams = load_scene_camera(&scene_dir(root, scene_id).join("scene_camera.json"))?;
    Ok(cams.keys().copied().collect())
}

fn find_image(dir: &Path, image_id: u32) -> Option<PathBuf> {
    ["rgb", "gray"].iter().find_map(|sub| {
        ["png", "jpg", "tif"].iter().find_map(|ext| {
            let p = dir.join(sub).join(format!("{image_id:06}.{ext}"));
            p.is_file().then_some(p)
        })
    })
}

/// Scales raw sensor depth into millimetres.
pub fn scale_depth(raw: &ImageBuffer<Luma<u16>, Vec<u16>>, depth_scale: f64) -> DepthImage {
    ImageBuffer::from_fn(raw.width(), raw.height(), |x, y| {
        Luma([(raw.get_pixel(x, y).0[0] as f64 * depth_scale) as f32])
    })
}

/// Loads one frame. Grayscale sources are replicated into three channels.
pub fn load_frame(root: &Path, scene_id: u32, image_id: u32) -> Result<SceneFrame, DatasetError> {
    let dir = scene_dir(root, scene_id);
    let cam_path = dir.join("scene_camera.json");
    let cams = load_scene_camera(&cam_path)?;
    let cam = cams.get(&image_id).ok_or_else(|| DatasetError::Format {
        path: cam_path.clone(),
        message: format!("no entry for image {image_id}"),
    })?;

    let rgb_path = find_image(&dir, image_id).ok_or_else(|| {
        DatasetError::NotFound(dir.join("rgb").join(format!("{image_id:06}.png")))
    })?;
    let rgb = image::open(&rgb_path)
        .map_err(|source| DatasetError::Image {
            path: rgb_path.clone(),
            source,
        })?
        .to_rgb8();

    let depth_path = dir.join("depth").join(format!("{image_id:06}.png"));
    let depth = if depth_path.is_file() {
        let raw = image::open(&depth_path)
            .map_err(|source| DatasetError::Image {
                path: depth_path.clone(),
                source,
            })?
            .to_luma16();
        Some(scale_depth(&raw, cam.depth_scale))
    } else {
        None
    };

    SceneFrame::new(scene_id, image_id, rgb, depth, cam.intrinsics)
}

/// One annotated object instance, with its visible mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthInstance {
    pub object_id: u32,
    pub mask: BinaryMask,
    pub bbox: BoundingBox,
    pub visibility_fraction: f64,
}

#[derive(Deserialize)]
struct RawGt {
    obj_id: u32,
}

#[derive(Deserialize)]
struct RawGtInfo {
    visib_fract: Option<f64>,
}

pub fn load_mask_png(path: &Path) -> Result<BinaryMask, DatasetError> {
    let img = image::open(path)
        .map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let bits = img.pixels().map(|p| p.0[0] > 0).collect();
    Ok(BinaryMask::from_bits(
        img.width() as usize,
        img.height() as usize,
        bits,
    )?)
}

/// Ground truth of one scene keyed by image id. Instances whose visible mask
/// is empty are left out; they cannot be detected.
pub fn load_scene_gt(
    root: &Path,
    scene_id: u32,
) -> Result<BTreeMap<u32, Vec<GroundTruthInstance>>, DatasetError> {
    let dir = scene_dir(root, scene_id);
    let gt_path = dir.join("scene_gt.json");
    let gt: BTreeMap<String, Vec<RawGt>> = read_json(&gt_path)?;
    let info_path = dir.join("scene_gt_info.json");
    let info: BTreeMap<String, Vec<RawGtInfo>> = if info_path.is_file() {
        read_json(&info_path)?
    } else {
        BTreeMap::new()
    };

    let mut out = BTreeMap::new();
    for (key, instances) in gt {
        let image_id = parse_id(&gt_path, &key)?;
        let mut list = Vec::new();
        for (idx, inst) in instances.iter().enumerate() {
            let mask_path = dir
                .join("mask_visib")
                .join(format!("{image_id:06}_{idx:06}.png"));
            let mask = load_mask_png(&mask_path)?;
            let Ok(bbox) = mask_to_bbox(&mask) else {
                continue;
            };
            let visibility_fraction = info
                .get(&key)
                .and_then(|v| v.get(idx))
                .and_then(|i| i.visib_fract)
                .unwrap_or(1.0)
                .clamp(0.0, 1.0);
            list.push(GroundTruthInstance {
                object_id: inst.obj_id,
                mask,
                bbox,
                visibility_fraction,
            });
        }
        out.insert(image_id, list);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Rgb};

    fn write(path: &Path, text: &str) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, text).unwrap();
    }

    #[test]
    fn camera_field_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene_camera.json");
        write(
            &p,
            r#"{"3": {"cam_K": [100, 0, 320, 0, 100, 240, 0, 0, 1], "depth_scale": 0.1}}"#,
        );
        let cams = load_scene_camera(&p).unwrap();
        let c = cams[&3];
        assert_eq!(
            (
                c.intrinsics.fx,
                c.intrinsics.fy,
                c.intrinsics.cx,
                c.intrinsics.cy
            ),
            (100.0, 100.0, 320.0, 240.0)
        );
        assert_eq!(c.depth_scale, 0.1);
    }

    #[test]
    fn empty_camera_file_gives_empty_map() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene_camera.json");
        write(&p, "{}");
        assert!(load_scene_camera(&p).unwrap().is_empty());
    }

    #[test]
    fn missing_cam_k_names_the_image() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene_camera.json");
        write(&p, r#"{"17": {"depth_scale": 1.0}}"#);
        let err = load_scene_camera(&p).unwrap_err().to_string();
        assert!(err.contains("image 17"), "{err}");
    }

    #[test]
    fn non_positive_focal_length_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene_camera.json");
        write(&p, r#"{"1": {"cam_K": [0, 0, 1, 0, 5, 1, 0, 0, 1]}}"#);
        assert!(matches!(
            load_scene_camera(&p),
            Err(DatasetError::Validation(_))
        ));
    }

    #[test]
    fn depth_scale_multiplies_through() {
        let raw = ImageBuffer::from_pixel(2, 2, Luma([15000u16]));
        let mm = scale_depth(&raw, 0.1);
        assert!(mm.pixels().all(|p| (p.0[0] - 1500.0).abs() < 1e-3));
    }

    fn scene_with_gray(root: &Path, value: u8, with_depth: bool) {
        let dir = scene_dir(root, 1);
        write(
            &dir.join("scene_camera.json"),
            r#"{"0": {"cam_K": [50, 0, 4, 0, 50, 3, 0, 0, 1], "depth_scale": 0.1}}"#,
        );
        fs::create_dir_all(dir.join("gray")).unwrap();
        GrayImage::from_pixel(8, 6, Luma([value]))
            .save(dir.join("gray/000000.png"))
            .unwrap();
        if with_depth {
            fs::create_dir_all(dir.join("depth")).unwrap();
            ImageBuffer::<Luma<u16>, Vec<u16>>::from_pixel(8, 6, Luma([20000]))
                .save(dir.join("depth/000000.png"))
                .unwrap();
        }
    }

    #[test]
    fn gray_frames_are_replicated() {
        let dir = tempfile::tempdir().unwrap();
        scene_with_gray(dir.path(), 77, true);
        let f = load_frame(dir.path(), 1, 0).unwrap();
        assert!(f.rgb.pixels().all(|p| *p == Rgb([77, 77, 77])));
        let d = f.depth.unwrap();
        assert!(d.pixels().all(|p| (p.0[0] - 2000.0).abs() < 1e-3));
    }

    #[test]
    fn frame_without_depth_directory() {
        let dir = tempfile::tempdir().unwrap();
        scene_with_gray(dir.path(), 10, false);
        assert!(load_frame(dir.path(), 1, 0).unwrap().depth.is_none());
    }

    #[test]
    fn missing_image_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        scene_with_gray(dir.path(), 10, false);
        fs::remove_file(scene_dir(dir.path(), 1).join("gray/000000.png")).unwrap();
        assert!(matches!(
            load_frame(dir.path(), 1, 0),
            Err(DatasetError::NotFound(_))
        ));
    }

    #[test]
    fn depth_size_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        scene_with_gray(dir.path(), 10, false);
        let d = scene_dir(dir.path(), 1).join("depth");
        fs::create_dir_all(&d).unwrap();
        ImageBuffer::<Luma<u16>, Vec<u16>>::from_pixel(4, 4, Luma([1]))
            .save(d.join("000000.png"))
            .unwrap();
        assert!(matches!(
            load_frame(dir.path(), 1, 0),
            Err(DatasetError::Validation(_))
        ));
    }

    #[test]
    fn ground_truth_reads_visible_masks() {
        let dir = tempfile::tempdir().unwrap();
        let sd = scene_dir(dir.path(), 2);
        write(
            &sd.join("scene_gt.json"),
            r#"{"5": [{"obj_id": 3}, {"obj_id": 4}]}"#,
        );
        write(
            &sd.join("scene_gt_info.json"),
            r#"{"5": [{"visib_fract": 0.5}, {"visib_fract": 0.0}]}"#,
        );
        fs::create_dir_all(sd.join("mask_visib")).unwrap();
        let mut m = GrayImage::new(10, 10);
        for y in 2..5 {
            for x in 1..7 {
                m.put_pixel(x, y, Luma([255]));
            }
        }
        m.save(sd.join("mask_visib/000005_000000.png")).unwrap();
        GrayImage::new(10, 10)
            .save(sd.join("mask_visib/000005_000001.png"))
            .unwrap();
        let gt = load_scene_gt(dir.path(), 2).unwrap();
        let inst = &gt[&5];
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].object_id, 3);
        assert_eq!(inst[0].bbox.to_array(), [1.0, 2.0, 6.0, 3.0]);
        assert_eq!(inst[0].visibility_fraction, 0.5);
    }
}
