//! A small planted BOP-layout dataset whose correct detections are known.
//!
//! Every frame shows a grey bin on a black floor with a red part (object 1)
//! and a green part (object 2) inside it, plus an unannotated red distractor
//! outside the bin. Odd frames are dark: there the parts differ from the bin
//! by less than the flood-fill tolerance, so they only separate after the
//! x2 gain enhancer runs.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use nalgebra::Point3;
use serde_json::json;

use crate::backends::mock::DEFAULT_FLOOD_TOLERANCE;
use crate::dataset::{write_ply, CadModel, DatasetError};
use crate::geometry::BoundingBox;
use crate::pipeline::PipelineConfig;
use crate::roi::ScoredBox;

pub const SCENE_ID: u32 = 1;
pub const SPLIT: &str = "test";

const BRIGHT_BIN: u8 = 160;
const BRIGHT_RED: [u8; 3] = [220, 40, 40];
const BRIGHT_GREEN: [u8; 3] = [40, 220, 40];
const DARK_BIN: u8 = 16;
const DARK_STEP: u8 = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    pub frames: usize,
    pub with_distractor: bool,
    pub with_dark_frames: bool,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            frames: 6,
            with_distractor: true,
            with_dark_frames: true,
        }
    }
}

/// Where the planted dataset lives and what was planted.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedDataset {
    pub root: PathBuf,
    pub image_ids: Vec<u32>,
    pub dark_image_ids: Vec<u32>,
    pub bin_box: BoundingBox,
    pub distractor_box: Option<BoundingBox>,
}

impl PlantedDataset {
    pub fn split_dir(&self) -> PathBuf {
        self.root.join(SPLIT)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    /// The box a perfect ROI detector would return.
    pub fn roi_box(&self) -> ScoredBox {
        ScoredBox {
            bbox: self.bin_box,
            confidence: 0.9,
        }
    }

    /// A pipeline config that runs the mock backends on this dataset.
    pub fn pipeline_config(&self, out_dir: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.dataset.root = self.root.clone();
        cfg.dataset.split = SPLIT.into();
        cfg.output.dir = out_dir.to_path_buf();
        cfg.matching.view_count = 12;
        cfg.backends.mock.roi_boxes = vec![self.roi_box()];
        cfg.backends.mock.enhancer_gain = 2.0;
        cfg
    }
}

const WIDTH: u32 = 160;
const HEIGHT: u32 = 120;
const FOCAL: f64 = 150.0;
const BIN: (u32, u32, u32, u32) = (20, 15, 130, 105);
const DISTRACTOR: (u32, u32, u32, u32) = (140, 54, 152, 66);

fn object_rects(i: usize) -> [(u32, (u32, u32, u32, u32)); 2] {
    let s = (i % 6) as u32;
    let (x1, y1) = (28 + 6 * s, 24 + 4 * s);
    let (x2, y2) = (100 - 5 * s, 70 + 2 * s);
    [
        (1, (x1, y1, x1 + 16, y1 + 12)),
        (2, (x2, y2, x2 + 12, y2 + 18)),
    ]
}

fn fill(img: &mut RgbImage, r: (u32, u32, u32, u32), c: [u8; 3]) {
    for y in r.1..r.3 {
        for x in r.0..r.2 {
            img.put_pixel(x, y, Rgb(c));
        }
    }
}

fn dark_tint(channel: usize) -> [u8; 3] {
    let mut c = [DARK_BIN; 3];
    c[channel] += DARK_STEP;
    c
}

fn cuboid(object_id: u32, sx: f64, sy: f64, sz: f64, color: [u8; 3]) -> CadModel {
    let mut vertices = Vec::new();
    for x in [-sx / 2.0, sx / 2.0] {
        for y in [-sy / 2.0, sy / 2.0] {
            for z in [-sz / 2.0, sz / 2.0] {
                vertices.push(Point3::new(x, y, z));
            }
        }
    }
    CadModel {
        object_id,
        vertices,
        color,
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    fs::write(path, text).map_err(|e| DatasetError::io(path, e))
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<(), DatasetError>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the dataset under `root` (`models/` and `test/000001/`).
pub fn write_planted_dataset(
    root: &Path,
    spec: &PlantedSpec,
) -> Result<PlantedDataset, DatasetError> {
    if spec.frames == 0 {
        return Err(DatasetError::Validation(
            "planted dataset needs at least one frame".into(),
        ));
    }
    // dark parts must merge with the bin before enhancement and separate after it
    debug_assert!(DARK_STEP <= DEFAULT_FLOOD_TOLERANCE && 2 * DARK_STEP > DEFAULT_FLOOD_TOLERANCE);

    let models = root.join("models");
    write_ply(
        &cuboid(1, 16.0, 12.0, 8.0, BRIGHT_RED),
        &models.join("obj_000001.ply"),
    )?;
    write_ply(
        &cuboid(2, 12.0, 18.0, 8.0, BRIGHT_GREEN),
        &models.join("obj_000002.ply"),
    )?;

    let scene = root.join(SPLIT).join(format!("{SCENE_ID:06}"));
    for sub in ["rgb", "mask_visib"] {
        let d = scene.join(sub);
        fs::create_dir_all(&d).map_err(|e| DatasetError::io(&d, e))?;
    }

    let mut cams = serde_json::Map::new();
    let mut gts = serde_json::Map::new();
    let mut infos = serde_json::Map::new();
    let mut image_ids = Vec::new();
    let mut dark_image_ids = Vec::new();
    for i in 0..spec.frames {
        let image_id = i as u32;
        let dark = spec.with_dark_frames && i % 2 == 1;
        let (bin, red, green) = if dark {
            ([DARK_BIN; 3], dark_tint(0), dark_tint(1))
        } else {
            ([BRIGHT_BIN; 3], BRIGHT_RED, BRIGHT_GREEN)
        };
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([0, 0, 0]));
        fill(&mut img, BIN, bin);
        if spec.with_distractor {
            fill(&mut img, DISTRACTOR, red);
        }
        let mut gt_list = Vec::new();
        let mut info_list = Vec::new();
        for (idx, (obj, rect)) in object_rects(i).into_iter().enumerate() {
            fill(&mut img, rect, if obj == 1 { red } else { green });
            let mask = GrayImage::from_fn(WIDTH, HEIGHT, |x, y| {
                let inside = x >= rect.0 && x < rect.2 && y >= rect.1 && y < rect.3;
                Luma([if inside { 255 } else { 0 }])
            });
            save_png(
                &mask,
                &scene
                    .join("mask_visib")
                    .join(format!("{image_id:06}_{idx:06}.png")),
            )?;
            gt_list.push(json!({"obj_id": obj}));
            info_list.push(json!({"visib_fract": 1.0}));
        }
        save_png(&img, &scene.join("rgb").join(format!("{image_id:06}.png")))?;
        cams.insert(
            image_id.to_string(),
            json!({
                "cam_K": [FOCAL, 0.0, WIDTH as f64 / 2.0, 0.0, FOCAL, HEIGHT as f64 / 2.0, 0.0, 0.0, 1.0],
                "depth_scale": 1.0
            }),
        );
        gts.insert(image_id.to_string(), json!(gt_list));
        infos.insert(image_id.to_string(), json!(info_list));
        image_ids.push(image_id);
        if dark {
            dark_image_ids.push(image_id);
        }
    }
    write_json(&scene.join("scene_camera.json"), &cams.into())?;
    write_json(&scene.join("scene_gt.json"), &gts.into())?;
    write_json(&scene.join("scene_gt_info.json"), &infos.into())?;

    let rect_box = |r: (u32, u32, u32, u32)| {
        BoundingBox::from_corners(r.0 as f64, r.1 as f64, r.2 as f64, r.3 as f64)
            .expect("planted boxes are valid")
    };
    Ok(PlantedDataset {
        root: root.to_path_buf(),
        image_ids,
        dark_image_ids,
        bin_box: rect_box(BIN),
        distractor_box: spec.with_distractor.then(|| rect_box(DISTRACTOR)),
    })
}
