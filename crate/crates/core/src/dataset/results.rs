use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::{BoundingBox, Rle};

/// One detection in BOP/COCO result form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct DetectionRecord {
    pub scene_id: u32,
    pub image_id: u32,
    pub object_id: u32,
    pub score: f64,
    pub bbox: BoundingBox,
    pub mask_rle: Rle,
    pub time_s: f64,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    scene_id: u32,
    image_id: u32,
    category_id: u32,
    score: f64,
    bbox: BoundingBox,
    segmentation: Rle,
    time: f64,
}

impl TryFrom<RawRecord> for DetectionRecord {
    type Error = String;

    fn try_from(r: RawRecord) -> Result<Self, Self::Error> {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(format!("score {} outside [0, 1]", r.score));
        }
        if !(r.time >= 0.0) {
            return Err(format!("negative time {}", r.time));
        }
        Ok(Self {
            scene_id: r.scene_id,
            image_id: r.image_id,
            object_id: r.category_id,
            score: r.score,
            bbox: r.bbox,
            mask_rle: r.segmentation,
            time_s: r.time,
        })
    }
}

impl From<DetectionRecord> for RawRecord {
    fn from(d: DetectionRecord) -> Self {
        Self {
            scene_id: d.scene_id,
            image_id: d.image_id,
            category_id: d.object_id,
            score: d.score,
            bbox: d.bbox,
            segmentation: d.mask_rle,
            time: d.time_s,
        }
    }
}

/// Writes records as a JSON array, one record per line.
pub fn write_detections(records: &[DetectionRecord], path: &Path) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    if records.is_empty() {
        buf.extend_from_slice(b"[]");
    } else {
        buf.extend_from_slice(b"[\n");
        for (i, r) in records.iter().enumerate() {
            serde_json::to_writer(&mut buf, r).map_err(|e| DatasetError::json(path, e))?;
            buf.extend_from_slice(if i + 1 < records.len() { b",\n" } else { b"\n" });
        }
        buf.push(b']');
    }
    buf.push(b'\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    file.write_all(&buf).map_err(|e| DatasetError::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rle_encode, BinaryMask};
    use proptest::prelude::*;

    fn record(seed: u64) -> DetectionRecord {
        let w = 3 + (seed % 5) as usize;
        let h = 2 + (seed % 7) as usize;
        let mask = BinaryMask::from_fn(w, h, |x, y| (x * 7 + y * 3 + seed as usize) % 4 == 0);
        DetectionRecord {
            scene_id: (seed % 50) as u32,
            image_id: (seed % 1000) as u32,
            object_id: 1 + (seed % 20) as u32,
            score: (seed % 997) as f64 / 996.0,
            bbox: BoundingBox::new(seed as f64 * 0.37, 1.25, 1.0 + (seed % 9) as f64 / 7.0, 3.0)
                .unwrap(),
            mask_rle: rle_encode(&mask),
            time_s: (seed % 13) as f64 * 0.0123,
        }
    }

    #[test]
    fn empty_list_is_brackets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        write_detections(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().trim(), "[]");
        assert!(read_detections(&p).unwrap().is_empty());
    }

    #[test]
    fn keys_follow_result_format() {
        let v = serde_json::to_value(record(4)).unwrap();
        for key in [
            "scene_id",
            "image_id",
            "category_id",
            "score",
            "bbox",
            "segmentation",
            "time",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["segmentation"]["counts"].is_array());
        assert_eq!(v["segmentation"]["size"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn one_record_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        let recs = vec![record(11)];
        write_detections(&recs, &p).unwrap();
        assert_eq!(read_detections(&p).unwrap(), recs);
    }

    #[test]
    fn malformed_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        fs::write(&p, "[\n{\"scene_id\": 1,\n oops}\n]").unwrap();
        let err = read_detections(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(write_detections(&[record(1)], &blocker.join("d.json")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn hundred_record_roundtrip(seeds in proptest::collection::vec(any::<u64>(), 100)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.json");
            let recs: Vec<_> = seeds.into_iter().map(record).collect();
            write_detections(&recs, &p).unwrap();
            prop_assert_eq!(read_detections(&p).unwrap(), recs);
        }
    }
}
