use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use bindet_core::backends::{
    BackendKind, BackendServer, BackendSet, BackendSetKind, ServedBackend,
};
use bindet_core::pipeline::{
    build_templates, run_benchmark, run_detect, run_evaluate, run_visualize, PipelineConfig,
    PipelineError,
};
use bindet_core::synthetic::{write_planted_dataset, PlantedSpec};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "bindet",
    version,
    about = "Detect unseen industrial parts in bin-picking scenes"
)]
struct Cli {
    /// TOML config; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides dataset.root.
    #[arg(long, global = true)]
    dataset_root: Option<PathBuf>,
    /// Overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = SetArg::Mock)]
    backend_set: SetArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Mock,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline and write detections.json plus per-frame metadata.
    Detect,
    /// Score a detection file against the dataset ground truth.
    Evaluate {
        /// Defaults to <out>/detections.json.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Time each stage per frame.
    Benchmark,
    /// Draw ground truth, detections and the ROI on each frame.
    Visualize {
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Defaults to <out>/vis.
        #[arg(long)]
        vis_dir: Option<PathBuf>,
    },
    /// Render and cache the template banks without running detection.
    BuildTemplates,
    /// Serve one mock backend over HTTP until interrupted.
    ServeMock {
        #[arg(long, value_parser = parse_kind)]
        kind: BackendKind,
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: String,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
    /// Write a small planted dataset and a matching bindet.toml.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 6)]
        frames: usize,
    },
}

fn parse_kind(s: &str) -> Result<BackendKind, String> {
    BackendKind::ALL
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| {
            let names: Vec<&str> = BackendKind::ALL.iter().map(|k| k.as_str()).collect();
            format!(
                "unknown backend kind {s:?}; expected one of {}",
                names.join(", ")
            )
        })
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(root) = &cli.dataset_root {
        cfg.dataset.root = root.clone();
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn backends(cli: &Cli, cfg: &PipelineConfig) -> Result<BackendSet, PipelineError> {
    let kind = match cli.backend_set {
        SetArg::Mock => BackendSetKind::Mock,
        SetArg::Remote => BackendSetKind::Remote,
    };
    BackendSet::build(kind, &cfg.backends).map_err(|e| PipelineError::Config(e.to_string()))
}

fn served(set: &BackendSet, kind: BackendKind) -> ServedBackend {
    match kind {
        BackendKind::Enhancer => ServedBackend::Enhancer(set.enhancer.clone()),
        BackendKind::RoiDetector => ServedBackend::RoiDetector(set.roi_detector.clone()),
        BackendKind::Segmenter => ServedBackend::Segmenter(set.segmenter.clone()),
        BackendKind::FeatureExtractor => {
            ServedBackend::FeatureExtractor(set.feature_extractor.clone())
        }
        BackendKind::Renderer => ServedBackend::Renderer(set.renderer.clone()),
    }
}

fn detections_path(cfg: &PipelineConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.detections_path())
}

fn synth(dir: &Path, frames: usize) -> anyhow::Result<()> {
    let spec = PlantedSpec {
        frames,
        ..Default::default()
    };
    let ds = write_planted_dataset(&dir.join("data"), &spec)?;
    let cfg = ds.pipeline_config(&dir.join("out"));
    let path = dir.join("bindet.toml");
    std::fs::write(&path, cfg.to_toml_string())
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "planted dataset in {}; config at {}",
        ds.root.display(),
        path.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Command::Synth { dir, frames } = &cli.command {
        return synth(dir, *frames);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Detect => {
            let summary = run_detect(&cfg, &backends(cli, &cfg)?)?;
            println!(
                "{} detections on {} frames ({} skipped) -> {}",
                summary.records.len(),
                summary.frames.len(),
                summary.failed_frames.len(),
                summary.detections_path.display()
            );
        }
        Command::Evaluate { detections } => {
            let report = run_evaluate(&cfg, &detections_path(&cfg, detections))?;
            print!("{}", report.to_table());
        }
        Command::Benchmark => {
            let report = run_benchmark(&cfg, &backends(cli, &cfg)?)?;
            print!("{}", report.to_table());
        }
        Command::Visualize {
            detections,
            vis_dir,
        } => {
            let out = vis_dir
                .clone()
                .unwrap_or_else(|| cfg.output.dir.join("vis"));
            let written = run_visualize(&cfg, &detections_path(&cfg, detections), &out)?;
            println!("{} overlays -> {}", written.len(), out.display());
        }
        Command::BuildTemplates => {
            let banks = build_templates(&cfg, &backends(cli, &cfg)?)?;
            for b in &banks {
                println!("object {}: {} templates", b.object_id, b.templates.len());
            }
        }
        Command::ServeMock {
            kind,
            bind,
            threads,
        } => {
            let set = BackendSet::mock(&cfg.backends).map_err(|e| anyhow!(e))?;
            let server = BackendServer::start(served(&set, *kind), bind, *threads)
                .with_context(|| format!("cannot listen on {bind}"))?;
            println!("serving mock {kind} at {}", server.url());
            loop {
                std::thread::park();
            }
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e
                .downcast_ref::<PipelineError>()
                .map_or(1, PipelineError::exit_code);
            log::error!("{e:#}");
            ExitCode::from(code as u8)
        }
    }
}
