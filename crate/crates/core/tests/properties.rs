use bindet_core::backends::mock::GainEnhancer;
use bindet_core::dataset::{DepthImage, DetectionRecord, GroundTruthInstance};
use bindet_core::evaluation::{evaluate, interpolated_ap, match_greedy, EvalConfig};
use bindet_core::geometry::{
    bbox_iou, mask_iou, mask_to_bbox, remap_mask, rle_decode, rle_encode, BinaryMask, BoundingBox,
    CameraIntrinsics, RoiCrop,
};
use bindet_core::matching::{aggregate_score, clamped_cosine, MatchConfig};
use bindet_core::preprocess::{
    depth_to_pseudocolor, enhance_if_dark, mean_intensity, ColorLut, PreprocessConfig,
};
use bindet_core::proposals::{mask_nms, MaskProposal};
use bindet_core::roi::{select_roi, RoiConfig, ScoredBox};
use image::{Luma, Rgb, RgbImage};
use nalgebra::Point2;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn mask_strategy(max_side: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<bool>(), w * h)
            .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
    })
}

fn mask_pair(max_side: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        let v = proptest::collection::vec(any::<bool>(), w * h);
        (v.clone(), v).prop_map(move |(a, b)| {
            (
                BinaryMask::from_bits(w, h, a).unwrap(),
                BinaryMask::from_bits(w, h, b).unwrap(),
            )
        })
    })
}

fn box_strategy() -> impl Strategy<Value = BoundingBox> {
    (
        -100.0..100.0f64,
        -100.0..100.0f64,
        0.0..80.0f64,
        0.0..80.0f64,
    )
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap())
}

proptest! {
    #[test]
    fn set_keeps_area_in_step(mut m in mask_strategy(12), edits in proptest::collection::vec((0usize..12, 0usize..12, any::<bool>()), 0..40)) {
        for (x, y, v) in edits {
            if x < m.width() && y < m.height() {
                m.set(x, y, v);
            }
        }
        prop_assert_eq!(m.area(), m.bits().iter().filter(|&&b| b).count());
        prop_assert_eq!(m.is_empty(), m.area() == 0);
    }

    #[test]
    fn rle_roundtrips(m in mask_strategy(20)) {
        let rle = rle_encode(&m);
        prop_assert_eq!(rle.counts.iter().sum::<u64>() as usize, m.width() * m.height());
        prop_assert_eq!(rle_decode(&rle.counts, m.width(), m.height()).unwrap(), m);
    }

    #[test]
    fn bbox_is_tight(m in mask_strategy(16)) {
        match mask_to_bbox(&m) {
            Err(_) => prop_assert!(m.is_empty()),
            Ok(b) => {
                let set: Vec<(usize, usize)> = m.iter_set().collect();
                prop_assert!(set.iter().all(|&(x, y)| (x as f64) >= b.x() && ((x + 1) as f64) <= b.right()
                    && (y as f64) >= b.y() && ((y + 1) as f64) <= b.bottom()));
                prop_assert!(set.iter().any(|&(x, _)| x as f64 == b.x()));
                prop_assert!(set.iter().any(|&(_, y)| (y + 1) as f64 == b.bottom()));
            }
        }
    }

    #[test]
    fn mask_iou_symmetric_and_bounded((a, b) in mask_pair(12)) {
        let ab = mask_iou(&a, &b).unwrap();
        prop_assert_eq!(ab, mask_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        if !a.is_empty() {
            prop_assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn box_iou_symmetric_and_bounded(a in box_strategy(), b in box_strategy()) {
        let ab = bbox_iou(&a, &b);
        prop_assert!((ab - bbox_iou(&b, &a)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.area() > 0.0 {
            prop_assert!((bbox_iou(&a, &a) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn crop_then_remap_restores_the_roi_part(m in mask_strategy(16), x in 0usize..8, y in 0usize..8, w in 1usize..10, h in 1usize..10) {
        let k = CameraIntrinsics::new(100.0, 100.0, 8.0, 8.0).unwrap();
        let crop = RoiCrop::new(BoundingBox::new(x as f64, y as f64, w as f64, h as f64).unwrap(), k);
        prop_assert!(crop.is_consistent());
        let back = remap_mask(&m.crop(x, y, w, h), &crop, m.width(), m.height());
        for yy in 0..m.height() {
            for xx in 0..m.width() {
                let in_roi = xx >= x && xx < x + w && yy >= y && yy < y + h;
                prop_assert_eq!(back.get(xx, yy), in_roi && m.get(xx, yy));
            }
        }
    }

    #[test]
    fn gate_fires_exactly_below_threshold(values in proptest::collection::vec(any::<u8>(), 3..60), threshold in 0.0..255.0f64) {
        let img = RgbImage::from_fn(values.len() as u32, 1, |x, _| {
            let v = values[x as usize];
            Rgb([v, v.wrapping_add(7), v / 2])
        });
        let cfg = PreprocessConfig { intensity_threshold: threshold, ..Default::default() };
        let out = enhance_if_dark(&img, &cfg, &GainEnhancer::new(2.0)).unwrap();
        prop_assert_eq!(out.gate_fired, mean_intensity(&img) < threshold);
        prop_assert_eq!(out.image.dimensions(), img.dimensions());
        if !out.gate_fired {
            prop_assert_eq!(out.image, img);
        }
    }

    #[test]
    fn pseudocolour_blacks_out_depth_outside_the_window(depths in proptest::collection::vec(0.0..3000.0f32, 1..50)) {
        let n = depths.len() as u32;
        let depth = DepthImage::from_fn(n, 1, |x, _| Luma([depths[x as usize]]));
        let cfg = PreprocessConfig::default();
        let img = depth_to_pseudocolor(&depth, &cfg, &ColorLut::plasma()).unwrap();
        for (x, &d) in depths.iter().enumerate() {
            let d = d as f64;
            if d < cfg.depth_near_mm || d > cfg.depth_far_mm {
                prop_assert_eq!(img.get_pixel(x as u32, 0).0, [0, 0, 0]);
            }
        }
    }

    #[test]
    fn nms_keeps_a_separated_idempotent_subset(
        masks in proptest::collection::vec(mask_strategy(6).prop_filter("non-empty", |m| !m.is_empty()), 0..10),
        thr in 0.1..0.9f64,
    ) {
        let shaped: Vec<BinaryMask> = masks.iter().map(|m| m.crop(0, 0, 6, 6)).filter(|m| !m.is_empty()).collect();
        let props: Vec<MaskProposal> = shaped
            .iter()
            .enumerate()
            .map(|(i, m)| MaskProposal::new(m.clone(), 1.0 - i as f64 * 0.01, Point2::new(i as f64, 0.0)).unwrap())
            .collect();
        let kept = mask_nms(props.clone(), thr).unwrap();
        prop_assert!(kept.len() <= props.len());
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(mask_iou(&a.mask, &b.mask).unwrap() < thr);
            }
        }
        prop_assert_eq!(mask_nms(kept.clone(), thr).unwrap(), kept);
    }

    #[test]
    fn greedy_matching_is_one_to_one(ious in proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, 4), 0..8), t in 0.05..1.0f64) {
        let matches = match_greedy(&ious, 4, t);
        let hits: Vec<usize> = matches.iter().flatten().copied().collect();
        let mut dedup = hits.clone();
        dedup.sort();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), hits.len());
        prop_assert!(hits.len() <= ious.len().min(4));
        for (d, m) in matches.iter().enumerate() {
            if let Some(g) = m {
                prop_assert!(ious[d][*g] >= t);
            }
        }
    }

    #[test]
    fn ap_is_bounded_and_a_trailing_false_positive_never_helps(flags in proptest::collection::vec(any::<bool>(), 0..20), extra_gts in 0usize..5) {
        let num_gts = flags.iter().filter(|&&b| b).count() + extra_gts;
        prop_assume!(num_gts > 0);
        let ap = interpolated_ap(&flags, num_gts);
        prop_assert!((0.0..=1.0).contains(&ap));
        let mut longer = flags.clone();
        longer.push(false);
        prop_assert!(interpolated_ap(&longer, num_gts) <= ap);
    }

    #[test]
    fn low_scoring_false_positive_never_raises_dataset_ap(
        gt_rects in proptest::collection::vec((0usize..6, 0usize..6, 1usize..5, 1usize..5, 1u32..3), 1..4),
        det_rects in proptest::collection::vec((0usize..6, 0usize..6, 1usize..5, 1usize..5, 1u32..3, 0.2..1.0f64), 0..6),
    ) {
        let rect = |x: usize, y: usize, w: usize, h: usize| BinaryMask::from_rect(10, 10, x, y, x + w, y + h);
        let gts: BTreeMap<(u32, u32), Vec<GroundTruthInstance>> = [((1, 0), gt_rects
            .iter()
            .map(|&(x, y, w, h, o)| {
                let mask = rect(x, y, w, h);
                GroundTruthInstance { object_id: o, bbox: mask_to_bbox(&mask).unwrap(), mask, visibility_fraction: 1.0 }
            })
            .collect())]
        .into_iter()
        .collect();
        let record = |x, y, w, h, o, s| {
            let mask = rect(x, y, w, h);
            DetectionRecord { scene_id: 1, image_id: 0, object_id: o, score: s, bbox: mask_to_bbox(&mask).unwrap(), mask_rle: rle_encode(&mask), time_s: 0.0 }
        };
        let mut dets: Vec<DetectionRecord> = det_rects.iter().map(|&(x, y, w, h, o, s)| record(x, y, w, h, o, s)).collect();
        let cfg = EvalConfig::default();
        let before = evaluate(&dets, &gts, &cfg).unwrap().mean_ap;
        prop_assert!((0.0..=1.0).contains(&before));
        // bottom-right corner never overlaps any ground truth
        dets.push(record(9, 9, 1, 1, gt_rects[0].4, 0.1));
        prop_assert!(evaluate(&dets, &gts, &cfg).unwrap().mean_ap <= before);
    }

    #[test]
    fn clamped_cosine_is_scale_invariant(a in proptest::collection::vec(-1.0..1.0f64, 8), b in proptest::collection::vec(-1.0..1.0f64, 8), c in 0.01..100.0f64) {
        let s = clamped_cosine(&a, &b);
        let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((clamped_cosine(&scaled, &b) - s).abs() <= 1e-12);
    }

    #[test]
    fn aggregate_stays_in_unit_interval(s in (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64)) {
        let agg = aggregate_score(s.0, s.1, s.2, &MatchConfig::default());
        prop_assert!((0.0..=1.0).contains(&agg));
        prop_assert!(agg >= s.0.min(s.1).min(s.2) - 1e-12 && agg <= s.0.max(s.1).max(s.2) + 1e-12);
    }

    #[test]
    fn roi_selection_ignores_candidate_order(
        boxes in proptest::collection::vec((0.0..100.0f64, 0.0..80.0f64, 1.0..50.0f64, 1.0..40.0f64, 0.0..1.0f64), 1..6),
        rotate in 0usize..6,
    ) {
        let cands: Vec<ScoredBox> = boxes
            .iter()
            .map(|&(x, y, w, h, c)| ScoredBox { bbox: BoundingBox::new(x, y, w, h).unwrap(), confidence: (c * 4.0).round() / 4.0 })
            .collect();
        let mut rotated = cands.clone();
        rotated.rotate_left(rotate % cands.len());
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0).unwrap();
        let cfg = RoiConfig::default();
        let a = select_roi(&cands, &cfg, (128, 96), &k).unwrap();
        let b = select_roi(&rotated, &cfg, (128, 96), &k).unwrap();
        prop_assert_eq!(a, b);
        let r = a.bbox();
        prop_assert!(r.x() >= 0.0 && r.y() >= 0.0 && r.right() <= 128.0 && r.bottom() <= 96.0);
        prop_assert_eq!(r.x().fract(), 0.0);
        prop_assert!(a.is_consistent());
    }
}
