use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::{load_ground_truth, FrameMetadata, PipelineConfig, PipelineError};
use crate::dataset::{load_frame, read_detections, DetectionRecord};
use crate::geometry::{BinaryMask, BoundingBox};

const GT_COLOR: [u8; 3] = [255, 255, 255];
const ROI_COLOR: [u8; 3] = [255, 200, 0];

/// Fixed, well-separated colour per object id.
pub fn object_color(object_id: u32) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
    ];
    PALETTE[object_id as usize % PALETTE.len()]
}

fn draw_rect(img: &mut RgbImage, b: &BoundingBox, color: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if w == 0 || h == 0 {
        return;
    }
    let x0 = (b.x().floor() as i64).clamp(0, w - 1);
    let y0 = (b.y().floor() as i64).clamp(0, h - 1);
    let x1 = ((b.right().ceil() as i64) - 1).clamp(0, w - 1);
    let y1 = ((b.bottom().ceil() as i64) - 1).clamp(0, h - 1);
    for x in x0..=x1 {
        img.put_pixel(x as u32, y0 as u32, Rgb(color));
        img.put_pixel(x as u32, y1 as u32, Rgb(color));
    }
    for y in y0..=y1 {
        img.put_pixel(x0 as u32, y as u32, Rgb(color));
        img.put_pixel(x1 as u32, y as u32, Rgb(color));
    }
}

fn tint(img: &mut RgbImage, mask: &BinaryMask, color: [u8; 3]) {
    for (x, y) in mask.iter_set() {
        if x as u32 >= img.width() || y as u32 >= img.height() {
            continue;
        }
        let p = img.get_pixel_mut(x as u32, y as u32);
        for c in 0..3 {
            p.0[c] = ((p.0[c] as u16 + color[c] as u16) / 2) as u8;
        }
    }
}

/// Ground-truth boxes in white, detections as tinted masks and boxes in
/// their object colour, and the ROI in amber.
pub fn draw_overlay(
    rgb: &RgbImage,
    gt_boxes: &[BoundingBox],
    detections: &[DetectionRecord],
    roi: Option<&BoundingBox>,
) -> RgbImage {
    let mut img = rgb.clone();
    for d in detections {
        if let Ok(mask) = d.mask_rle.decode() {
            tint(&mut img, &mask, object_color(d.object_id));
        }
    }
    for b in gt_boxes {
        draw_rect(&mut img, b, GT_COLOR);
    }
    for d in detections {
        draw_rect(&mut img, &d.bbox, object_color(d.object_id));
    }
    if let Some(r) = roi {
        draw_rect(&mut img, r, ROI_COLOR);
    }
    img
}

fn read_frame_metadata(path: &Path) -> Option<FrameMetadata> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Writes one overlay PNG per selected frame into `out_dir`.
pub fn run_visualize(
    cfg: &PipelineConfig,
    detections_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    cfg.check_paths(false)?;
    let dets = read_detections(detections_path)?;
    let mut by_frame: BTreeMap<(u32, u32), Vec<DetectionRecord>> = BTreeMap::new();
    for d in dets {
        by_frame
            .entry((d.scene_id, d.image_id))
            .or_default()
            .push(d);
    }
    let gts = load_ground_truth(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let split = cfg.split_dir();
    let mut written = Vec::new();
    for (&(scene, image), gt) in &gts {
        let frame = load_frame(&split, scene, image)?;
        let name = format!("{scene:06}_{image:06}");
        let meta = read_frame_metadata(&cfg.frames_dir().join(format!("{name}.json")));
        let boxes: Vec<BoundingBox> = gt.iter().map(|g| g.bbox).collect();
        let frame_dets = by_frame
            .get(&(scene, image))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let img = draw_overlay(
            &frame.rgb,
            &boxes,
            frame_dets,
            meta.as_ref().map(|m| &m.roi_box),
        );
        let path = out_dir.join(format!("{name}.png"));
        img.save(&path)
            .map_err(|e| PipelineError::Config(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_are_clipped_to_the_canvas() {
        let img = RgbImage::new(10, 8);
        let b = BoundingBox::new(5.0, 4.0, 20.0, 20.0).unwrap();
        let out = draw_overlay(&img, &[b], &[], None);
        assert_eq!(out.get_pixel(5, 4).0, GT_COLOR);
        assert_eq!(out.get_pixel(9, 7).0, GT_COLOR);
        assert_eq!(out.get_pixel(7, 6).0, [0, 0, 0]);
    }

    #[test]
    fn palette_distinguishes_neighbouring_ids() {
        assert_ne!(object_color(1), object_color(2));
    }
}
