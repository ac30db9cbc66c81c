use std::fs;
use std::path::Path;

use bindet_core::backends::{BackendServer, BackendSet, ServedBackend};
use bindet_core::dataset::read_detections;
use bindet_core::pipeline::{
    run_detect, run_evaluate, run_visualize, FrameMetadata, PipelineConfig,
};
use bindet_core::synthetic::{write_planted_dataset, PlantedSpec};

fn planted(root: &Path) -> PipelineConfig {
    let ds = write_planted_dataset(&root.join("data"), &PlantedSpec::default()).unwrap();
    let mut cfg = ds.pipeline_config(&root.join("out"));
    cfg.output.record_time = false;
    cfg
}

fn serve_all(set: &BackendSet) -> Vec<BackendServer> {
    [
        ServedBackend::Enhancer(set.enhancer.clone()),
        ServedBackend::RoiDetector(set.roi_detector.clone()),
        ServedBackend::Segmenter(set.segmenter.clone()),
        ServedBackend::FeatureExtractor(set.feature_extractor.clone()),
        ServedBackend::Renderer(set.renderer.clone()),
    ]
    .into_iter()
    .map(|b| BackendServer::start(b, "127.0.0.1:0", 4).unwrap())
    .collect()
}

#[test]
fn detect_writes_detections_and_frame_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted(dir.path());
    let summary = run_detect(&cfg, &BackendSet::mock(&cfg.backends).unwrap()).unwrap();
    assert_eq!(
        read_detections(&summary.detections_path).unwrap(),
        summary.records
    );
    assert_eq!(summary.frames.len(), 6);
    for m in &summary.frames {
        let path = cfg
            .frames_dir()
            .join(format!("{:06}_{:06}.json", m.scene_id, m.image_id));
        let back: FrameMetadata = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(&back, m);
        assert_eq!(back.stage_timings.total_s, 0.0);
        assert_eq!(back.gate_fired, m.image_id % 2 == 1);
    }
    assert!(summary.records.iter().all(|r| r.time_s == 0.0));
    let report = run_evaluate(&cfg, &summary.detections_path).unwrap();
    assert_eq!(report.mean_ap, 1.0);
    assert!(cfg.output.dir.join("eval_report.txt").is_file());
}

#[test]
fn second_run_reuses_the_template_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted(dir.path());
    let backends = BackendSet::mock(&cfg.backends).unwrap();
    let first = run_detect(&cfg, &backends).unwrap();
    let cached: Vec<_> = fs::read_dir(cfg.template_cache_dir()).unwrap().collect();
    assert_eq!(cached.len(), 2);
    let second = run_detect(&cfg, &backends).unwrap();
    assert_eq!(first.records, second.records);
}

#[test]
fn visualize_writes_one_overlay_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted(dir.path());
    let summary = run_detect(&cfg, &BackendSet::mock(&cfg.backends).unwrap()).unwrap();
    let written = run_visualize(&cfg, &summary.detections_path, &dir.path().join("vis")).unwrap();
    assert_eq!(written.len(), 6);
    let img = image::open(&written[0]).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (160, 120));
}

#[test]
fn remote_set_over_loopback_matches_the_mock_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted(dir.path());
    let mock = BackendSet::mock(&cfg.backends).unwrap();
    let local = run_detect(&cfg, &mock).unwrap();

    let servers = serve_all(&mock);
    let mut remote_cfg = cfg.clone();
    remote_cfg.output.dir = dir.path().join("out_remote");
    let slots = [
        &mut remote_cfg.backends.enhancer,
        &mut remote_cfg.backends.roi_detector,
        &mut remote_cfg.backends.segmenter,
        &mut remote_cfg.backends.feature_extractor,
        &mut remote_cfg.backends.renderer,
    ];
    for (slot, server) in slots.into_iter().zip(&servers) {
        slot.endpoint = Some(server.url());
    }
    remote_cfg.backends.feature_extractor.embedding_dim = mock.feature_extractor.embedding_dim();
    let remote = run_detect(
        &remote_cfg,
        &BackendSet::remote(&remote_cfg.backends).unwrap(),
    )
    .unwrap();
    assert_eq!(
        fs::read(&local.detections_path).unwrap(),
        fs::read(&remote.detections_path).unwrap()
    );
}

#[test]
fn unreachable_backend_aborts_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}/");
    for slot in [
        &mut cfg.backends.enhancer,
        &mut cfg.backends.roi_detector,
        &mut cfg.backends.segmenter,
        &mut cfg.backends.feature_extractor,
        &mut cfg.backends.renderer,
    ] {
        slot.endpoint = Some(url.clone());
        slot.max_retries = 1;
        slot.retry_backoff_ms = 1;
        slot.timeout_s = 2.0;
    }
    let err = run_detect(&cfg, &BackendSet::remote(&cfg.backends).unwrap()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}
