use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lidar_stream::detector::write_detections_jsonl;
use lidar_stream::error::{Error, Result};
use lidar_stream::eval::{write_bin_csv, write_report_json};
use lidar_stream::exec::Execution;
use lidar_stream::latency::{latency_report, LatencyModel};
use lidar_stream::pipeline::{build_benchmark, run_variant, sweep, ExperimentConfig, Variant, VariantKind};
use lidar_stream::scene::{read_truths, write_scene};
use lidar_stream::sensor::{read_range_image, write_range_image};

#[derive(Parser)]
#[command(name = "lidar-stream", version, about = "Streaming detection on sliced LiDAR scans")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes and their simulated scans.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run one variant on one scan and evaluate it.
    Run {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        variant: VariantKind,
        #[arg(long)]
        slices: usize,
        #[arg(long)]
        nms_window: Option<usize>,
        /// NMS suppression threshold.
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full factorial sweep over variants, slice counts and seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic latency and peak-compute table.
    Latency {
        #[arg(long, default_value_t = 100.0)]
        scan_period_ms: f64,
        #[arg(long, default_value_t = 16.0)]
        full_infer_ms: f64,
        #[arg(long, default_value_t = 2.5)]
        overhead_ms: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
        slices: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn execute(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Gen { config, out, seed } => {
            let config = load_config(config.as_deref())?;
            create_dir(&out)?;
            let bench = build_benchmark(&config.scene, &config.lidar, seed, config.scenes_per_seed, exec)?;
            for (i, (scene, scan)) in bench.scenes.iter().zip(&bench.scans).enumerate() {
                write_scene(&out.join(format!("scene_{i:03}.json")), scene)?;
                write_range_image(&out.join(format!("scan_{i:03}.json")), scan)?;
            }
            println!("wrote {} scenes to {}", bench.scenes.len(), out.display());
        }
        Command::Run {
            scan,
            truth,
            variant,
            slices,
            nms_window,
            iou,
            config,
            out,
        } => {
            let config = load_config(config.as_deref())?;
            let mut nms = config.nms.clone();
            if let Some(k) = nms_window {
                nms.window_k = k;
            }
            if let Some(t) = iou {
                nms.iou_threshold = t;
            }
            let variant = Variant::new(variant, slices, &nms, &config.detector)?;
            let img = read_range_image(&scan)?;
            let truths = read_truths(&truth)?;
            let (dets, report) = run_variant(&img, &truths, &variant, &config.eval)?;
            create_dir(&out)?;
            let scan_id = scan.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            write_detections_jsonl(&out.join("detections.jsonl"), &scan_id, &dets)?;
            write_report_json(&out.join("eval.json"), &report)?;
            write_bin_csv(&out.join("bins.csv"), variant.kind.name(), variant.n, &report)?;
            let map = report.map.map_or("NA".to_string(), |m| format!("{m:.4}"));
            println!("{} n={} detections={} mAP={map}", variant.kind, variant.n, dets.len());
        }
        Command::Sweep { config, out } => {
            let config = load_config(config.as_deref())?;
            let out = out
                .or_else(|| config.output_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
            let report = sweep(&config, &out, exec)?;
            let failed = report.cells.iter().filter(|c| c.failure.is_some()).count();
            println!("{} cells ({} failed) in {}", report.cells.len(), failed, out.display());
        }
        Command::Latency {
            scan_period_ms,
            full_infer_ms,
            overhead_ms,
            slices,
            out,
        } => {
            let model = LatencyModel {
                scan_period_ms,
                full_inference_ms: full_infer_ms,
                per_slice_overhead_ms: overhead_ms,
                ..LatencyModel::default()
            };
            latency_report(&model, &slices)?.write(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
