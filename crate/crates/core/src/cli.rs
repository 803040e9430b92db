//! Command-line entry point: data generation, the four training stages,
//! evaluation, benchmarking, and single-image detection. Every `RunConfig`
//! key has a same-named flag that overrides the TOML file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cascade::{
    build_network_spec, finetune_hand_detector, run_cascade, train_finger_detector,
    train_hand_detector, write_models_descriptor, FingerStrategy, HandStrategy, TrainOutcome,
    TrainedModels,
};
use crate::config::RunConfig;
use crate::datagen::{
    dataset_mean, generate_dataset, load_dataset, load_png_sample, save_png, Direction,
    FrameRecord,
};
use crate::error::{Error, Result};
use crate::eval::{
    benchmark_latency, cross_table, error_curve, evaluate_frames, overlap_curve, zone_metrics,
    write_cross_table_csv, write_curve_csv, write_loss_trace_csv, write_timing_report_json,
    write_zone_metrics_csv, CROSS_FINGER_ORDER, CROSS_HAND_ORDER,
};
use crate::geometry::{BBox, Point2};
use crate::image::Image;
use crate::nn::io::{load_weights, save_weights};

#[derive(Debug, Parser)]
#[command(name = "fingercascade", version, about = "Cascaded hand and fingertip detection on synthetic egocentric frames")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset into the data directory.
    GenData,
    /// Train one cascade stage and write its weight file.
    Train {
        #[arg(long, value_enum)]
        stage: TrainStage,
    },
    /// Evaluate the trained models over the dataset; writes curves and tables.
    Eval,
    /// Benchmark per-frame latency with the configured strategies.
    Bench,
    /// Detect the hand and fingertip in a single PNG image.
    Detect {
        /// Input image path.
        image: PathBuf,
        /// Write a copy of the image with the detection drawn in.
        #[arg(long)]
        annotate: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainStage {
    Hand,
    Finetune,
    FingerMfd,
    FingerSpd,
}

impl TrainStage {
    fn name(self) -> &'static str {
        match self {
            TrainStage::Hand => "hand",
            TrainStage::Finetune => "finetune",
            TrainStage::FingerMfd => "finger-mfd",
            TrainStage::FingerSpd => "finger-spd",
        }
    }
}

/// Every `RunConfig` key as an optional global flag. `--out` is the flag
/// for `out_dir`.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML config file; flags below override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub models_dir: Option<PathBuf>,
    #[arg(long = "out", global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub image_width: Option<usize>,
    #[arg(long, global = true)]
    pub image_height: Option<usize>,
    #[arg(long, global = true)]
    pub location_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub left_weight: Option<f64>,
    #[arg(long, global = true)]
    pub up_weight: Option<f64>,
    #[arg(long, global = true)]
    pub right_weight: Option<f64>,
    #[arg(long, global = true)]
    pub dark_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub distractor_min: Option<usize>,
    #[arg(long, global = true)]
    pub distractor_max: Option<usize>,
    #[arg(long, global = true)]
    pub hand_scale_min: Option<f64>,
    #[arg(long, global = true)]
    pub hand_scale_max: Option<f64>,
    #[arg(long, global = true)]
    pub placement: Option<String>,
    #[arg(long, global = true)]
    pub count: Option<usize>,
    #[arg(long, global = true)]
    pub train_size: Option<usize>,
    #[arg(long, global = true)]
    pub crop_size: Option<usize>,
    #[arg(long, global = true)]
    pub patch_size: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub hand_channels: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub hand_fc: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub finger_channels: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub finger_fc: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub weight_init_scale: Option<f64>,
    #[arg(long, global = true)]
    pub hand_lr: Option<f64>,
    #[arg(long, global = true)]
    pub hand_momentum: Option<f64>,
    #[arg(long, global = true)]
    pub hand_batch: Option<usize>,
    #[arg(long, global = true)]
    pub hand_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub finetune_lr: Option<f64>,
    #[arg(long, global = true)]
    pub finetune_momentum: Option<f64>,
    #[arg(long, global = true)]
    pub finetune_batch: Option<usize>,
    #[arg(long, global = true)]
    pub finetune_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub finger_lr: Option<f64>,
    #[arg(long, global = true)]
    pub finger_momentum: Option<f64>,
    #[arg(long, global = true)]
    pub finger_batch: Option<usize>,
    #[arg(long, global = true)]
    pub finger_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long, global = true)]
    pub bias_max: Option<f64>,
    #[arg(long, global = true)]
    pub scale_min: Option<f64>,
    #[arg(long, global = true)]
    pub scale_max: Option<f64>,
    #[arg(long, global = true)]
    pub rotation_deg: Option<f64>,
    #[arg(long, global = true)]
    pub overlap_step: Option<f64>,
    #[arg(long, global = true)]
    pub error_tau_max: Option<f64>,
    #[arg(long, global = true)]
    pub focus_x1: Option<f64>,
    #[arg(long, global = true)]
    pub focus_y1: Option<f64>,
    #[arg(long, global = true)]
    pub focus_x2: Option<f64>,
    #[arg(long, global = true)]
    pub focus_y2: Option<f64>,
    #[arg(long, global = true)]
    pub hand_strategy: Option<String>,
    #[arg(long, global = true)]
    pub finger_strategy: Option<String>,
    #[arg(long = "reps", global = true)]
    pub bench_reps: Option<usize>,
    #[arg(long = "warmup", global = true)]
    pub bench_warmup: Option<usize>,
}

macro_rules! apply_overrides {
    ($config:expr, $overrides:expr, [$($field:ident),* $(,)?]) => {
        $(if let Some(v) = $overrides.$field.clone() {
            $config.$field = v;
        })*
    };
}

impl Overrides {
    /// Loads the TOML file (when given) and layers the flags over it.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        apply_overrides!(
            config,
            self,
            [
                seed, data_dir, models_dir, out_dir, image_width, image_height, left_weight,
                up_weight, right_weight, dark_fraction, distractor_min, distractor_max,
                hand_scale_min, hand_scale_max, placement, count, train_size, crop_size,
                patch_size, hand_channels, hand_fc, finger_channels, finger_fc,
                weight_init_scale, hand_lr, hand_momentum, hand_batch, hand_epochs, finetune_lr,
                finetune_momentum, finetune_batch, finetune_epochs, finger_lr, finger_momentum,
                finger_batch, finger_epochs, margin, scale_min, scale_max, rotation_deg,
                overlap_step, focus_x1, focus_y1, focus_x2, focus_y2, hand_strategy,
                finger_strategy, bench_reps, bench_warmup
            ]
        );
        // Option-typed keys: a flag sets Some, absence keeps the file value.
        if self.location_sigma.is_some() {
            config.location_sigma = self.location_sigma;
        }
        if self.bias_max.is_some() {
            config.bias_max = self.bias_max;
        }
        if self.error_tau_max.is_some() {
            config.error_tau_max = self.error_tau_max;
        }
        Ok(config)
    }
}

/// Dispatches a parsed invocation.
pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.overrides.resolve()?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&config),
        Command::Train { stage } => cmd_train(&config, *stage),
        Command::Eval => cmd_eval(&config),
        Command::Bench => cmd_bench(&config),
        Command::Detect { image, annotate } => cmd_detect(&config, image, annotate.as_deref()),
    }
}

/// Generates `count` frames plus the manifest and prints summary statistics.
pub fn cmd_gen_data(config: &RunConfig) -> Result<()> {
    let params = config.scene_params()?;
    let manifest = generate_dataset(&params, config.count, &config.data_dir)?;
    let n = manifest.records.len();
    let dark = manifest.records.iter().filter(|r| r.meta.dark).count();
    let by_dir = |d: Direction| manifest.records.iter().filter(|r| r.meta.dir == d).count();
    println!("wrote {} frames to {}", n, config.data_dir.display());
    if n > 0 {
        println!("dark fraction: {:.3}", dark as f64 / n as f64);
        println!(
            "direction split: left {} / up {} / right {}",
            by_dir(Direction::Left),
            by_dir(Direction::Up),
            by_dir(Direction::Right)
        );
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains one stage, writes its weight file, loss trace, and the refreshed
/// models descriptor.
pub fn cmd_train(config: &RunConfig, stage: TrainStage) -> Result<()> {
    let samples = load_dataset(&config.data_dir)?;
    let geometry = config.input_geometry();
    let fill_mean = dataset_mean(&samples)?;
    ensure_dir(&config.models_dir)?;
    ensure_dir(&config.out_dir)?;
    let outcome: TrainOutcome = match stage {
        TrainStage::Hand => {
            let spec = build_network_spec(geometry.crop_size, &config.hand_channels, &config.hand_fc, 4);
            train_hand_detector(&samples, &spec, &geometry, &config.hand_train())?
        }
        TrainStage::Finetune => {
            let base_path = TrainedModels::stage_path(&config.models_dir, "hand");
            let (spec, base) = load_weights(&base_path)?;
            finetune_hand_detector(
                &samples,
                &spec,
                &base,
                &geometry,
                fill_mean,
                config.resolved_bias_max(),
                &config.finetune_train(),
            )?
        }
        TrainStage::FingerMfd | TrainStage::FingerSpd => {
            let (strategy, output_dim) = match stage {
                TrainStage::FingerMfd => (FingerStrategy::Mfd, 4),
                _ => (FingerStrategy::Spd, 2),
            };
            let spec = build_network_spec(
                geometry.mfd_patch_size,
                &config.finger_channels,
                &config.finger_fc,
                output_dim,
            );
            train_finger_detector(
                &samples,
                strategy,
                &spec,
                &geometry,
                config.margin,
                &config.keypoint_augment(),
                fill_mean,
                &config.finger_train(strategy),
            )?
        }
    };
    let weights_path = TrainedModels::stage_path(&config.models_dir, stage.name());
    save_weights(&outcome.spec, &outcome.weights, &weights_path)?;
    let trace_path = config.out_dir.join(format!("loss_{}.csv", stage.name().replace('-', "_")));
    write_loss_trace_csv(&outcome.loss_trace, &trace_path)?;
    write_models_descriptor(
        &config.models_dir,
        fill_mean,
        geometry,
        config.margin,
        config.resolved_bias_max(),
    )?;
    println!("wrote {}", weights_path.display());
    match (outcome.loss_trace.first(), outcome.loss_trace.last()) {
        (Some(first), Some(last)) => println!("loss: {first:.6} -> {last:.6} over {} epochs", outcome.loss_trace.len()),
        _ => println!("no epochs ran"),
    }
    Ok(())
}

/// Evaluates the models over the dataset: per-strategy overlap curves,
/// per-combination error curves, the cross table, and zone metrics.
pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let models = TrainedModels::load(&config.models_dir)?;
    let samples = load_dataset(&config.data_dir)?;
    ensure_dir(&config.out_dir)?;
    let (records, failures) = evaluate_frames(&models, &samples)?;
    if records.is_empty() {
        return Err(Error::EmptyInput("no frame evaluated successfully"));
    }
    let overlap_taus = config.overlap_thresholds()?;
    let ious_of: [(&str, Box<dyn Fn(&crate::eval::EvalRecord) -> f64>); 3] = [
        ("rhd", Box::new(|r| r.iou_rhd)),
        ("redetect", Box::new(|r| r.iou_redetect)),
        ("ahd", Box::new(|r| r.iou_ahd)),
    ];
    for (name, extract) in &ious_of {
        let ious: Vec<f64> = records.iter().map(|r| extract(r)).collect();
        let curve = overlap_curve(&ious, &overlap_taus)?;
        write_curve_csv(&curve, &config.out_dir.join(format!("overlap_{name}.csv")))?;
    }
    let error_taus = config.error_thresholds()?;
    for (row, hand) in CROSS_HAND_ORDER.iter().enumerate() {
        for (col, finger) in CROSS_FINGER_ORDER.iter().enumerate() {
            let errors: Vec<f64> = records.iter().map(|r| r.errors[row][col]).collect();
            let curve = error_curve(&errors, &error_taus)?;
            let path = config.out_dir.join(format!("error_{hand}_{finger}.csv"));
            write_curve_csv(&curve, &path)?;
        }
    }
    let table = cross_table(&records, failures)?;
    write_cross_table_csv(&table, &config.out_dir.join("cross_table.csv"))?;
    let zones = zone_metrics(&records, &config.focus_zone());
    write_zone_metrics_csv(&zones, &config.out_dir.join("zone_metrics.csv"))?;

    let n = records.len() as f64;
    let mean_iou = |f: &dyn Fn(&crate::eval::EvalRecord) -> f64| {
        records.iter().map(|r| f(r)).sum::<f64>() / n
    };
    println!("frames: {} evaluated, {} failed", records.len(), failures);
    println!(
        "mean IoU: rhd {:.4}, redetect {:.4}, ahd {:.4}",
        mean_iou(&|r| r.iou_rhd),
        mean_iou(&|r| r.iou_redetect),
        mean_iou(&|r| r.iou_ahd)
    );
    for (row, hand) in CROSS_HAND_ORDER.iter().enumerate() {
        for (col, finger) in CROSS_FINGER_ORDER.iter().enumerate() {
            println!("mean error {hand}+{finger}: {:.3} px", table.mean_error_px[row][col]);
        }
    }
    println!("artifacts in {}", config.out_dir.display());
    Ok(())
}

/// Benchmarks cascade latency with the configured strategies and writes the
/// timing report JSON.
pub fn cmd_bench(config: &RunConfig) -> Result<()> {
    let models = TrainedModels::load(&config.models_dir)?;
    let samples = load_dataset(&config.data_dir)?;
    let (hand, finger) = config.strategies()?;
    ensure_dir(&config.out_dir)?;
    let report =
        benchmark_latency(&models, &samples, hand, finger, config.bench_reps, config.bench_warmup)?;
    let path = config.out_dir.join("timing_report.json");
    write_timing_report_json(&report, &path)?;
    println!(
        "hand {:.3} ms, finger {:.3} ms, processing {:.3} ms, total {:.3} ms over {} reps",
        report.hand.mean_ms, report.finger.mean_ms, report.processing.mean_ms, report.total_ms, report.n
    );
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct DetectionJson {
    hand_box: [f64; 4],
    fingertip: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    joint: Option<[f64; 2]>,
    timings_ms: TimingsJson,
}

#[derive(Serialize)]
struct TimingsJson {
    hand: f64,
    finger: f64,
    processing: f64,
    total: f64,
}

/// Runs the cascade on one PNG and prints the detection as JSON. The
/// ground-truth strategy is unavailable here because a lone image carries
/// no labels.
pub fn cmd_detect(config: &RunConfig, image_path: &Path, annotate: Option<&Path>) -> Result<()> {
    let (hand, finger) = config.strategies()?;
    if hand == HandStrategy::Gt {
        return Err(Error::Config(
            "hand_strategy gt needs labeled data; use rhd, redetect, or ahd for detect".into(),
        ));
    }
    let models = TrainedModels::load(&config.models_dir)?;
    let record = FrameRecord {
        image: image_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| image_path.display().to_string()),
        bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
        fingertip: Point2::new(0.0, 0.0),
        joint: Point2::new(0.0, 0.0),
        meta: crate::datagen::FrameMeta { dark: false, dir: Direction::Left },
    };
    let dir = image_path.parent().unwrap_or(Path::new("."));
    let sample = load_png_sample(dir, &record)?;
    let img = sample.to_labeled().image;
    let detection = run_cascade(&models, &img, hand, finger, None)?;
    let json = DetectionJson {
        hand_box: [
            detection.hand_box.x1,
            detection.hand_box.y1,
            detection.hand_box.x2,
            detection.hand_box.y2,
        ],
        fingertip: [detection.fingertip.x, detection.fingertip.y],
        joint: detection.joint.map(|p| [p.x, p.y]),
        timings_ms: TimingsJson {
            hand: detection.timings.hand_ms,
            finger: detection.timings.finger_ms,
            processing: detection.timings.processing_ms,
            total: detection.timings.total_ms,
        },
    };
    let text = serde_json::to_string_pretty(&json)
        .map_err(|e| Error::Json { context: "detection".into(), source: e })?;
    println!("{text}");
    if let Some(path) = annotate {
        let annotated = draw_detection(&img, &detection.hand_box, detection.fingertip, detection.joint);
        save_png(&annotated, path)?;
        eprintln!("annotated image written to {}", path.display());
    }
    Ok(())
}

/// Box outline in red, fingertip cross in green, joint cross in blue.
fn draw_detection(img: &Image, box_: &BBox, fingertip: Point2, joint: Option<Point2>) -> Image {
    let mut out = img.clone();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut put = |x: i64, y: i64, color: [f32; 3]| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            for (c, v) in color.iter().enumerate() {
                out.set(c, x as usize, y as usize, *v);
            }
        }
    };
    let (x1, y1) = (box_.x1.round() as i64, box_.y1.round() as i64);
    let (x2, y2) = ((box_.x2.round() as i64 - 1).max(x1), (box_.y2.round() as i64 - 1).max(y1));
    const RED: [f32; 3] = [1.0, 0.0, 0.0];
    for x in x1..=x2 {
        put(x, y1, RED);
        put(x, y2, RED);
    }
    for y in y1..=y2 {
        put(x1, y, RED);
        put(x2, y, RED);
    }
    let mut cross = |p: Point2, color: [f32; 3]| {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for d in -3..=3 {
            put(cx + d, cy, color);
            put(cx, cy + d, color);
        }
    };
    cross(fingertip, [0.0, 1.0, 0.0]);
    if let Some(j) = joint {
        cross(j, [0.0, 0.0, 1.0]);
    }
    out
}

/// Full process body: parse errors exit 1, config errors exit 1, runtime
/// failures exit 2, success exits 0.
pub fn main_entry() -> std::process::ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return std::process::ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            std::process::ExitCode::from(err.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flags_override_defaults() {
        let cli = parse(&["fingercascade", "gen-data", "--seed", "11", "--count", "5"]);
        let config = cli.overrides.resolve().unwrap();
        assert_eq!(config.seed, 11);
        assert_eq!(config.count, 5);
        assert_eq!(config.image_width, 128);
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\ncount = 9\nhand_epochs = 2\n").unwrap();
        let cli = parse(&[
            "fingercascade",
            "gen-data",
            "--config",
            path.to_str().unwrap(),
            "--count",
            "4",
        ]);
        let config = cli.overrides.resolve().unwrap();
        assert_eq!(config.seed, 3);
        assert_eq!(config.count, 4);
        assert_eq!(config.hand_epochs, 2);
    }

    #[test]
    fn channel_lists_parse_from_comma_separated_flags() {
        let cli = parse(&["fingercascade", "train", "--stage", "hand", "--hand-channels", "4,8,16"]);
        let config = cli.overrides.resolve().unwrap();
        assert_eq!(config.hand_channels, vec![4, 8, 16]);
    }

    #[test]
    fn stage_names_map_to_weight_files() {
        let dir = Path::new("m");
        assert_eq!(TrainedModels::stage_path(dir, "hand"), dir.join("rough_hand.cdw"));
        assert_eq!(TrainedModels::stage_path(dir, "finetune"), dir.join("attention_hand.cdw"));
        assert_eq!(TrainedModels::stage_path(dir, "finger-mfd"), dir.join("finger_mfd.cdw"));
        assert_eq!(TrainedModels::stage_path(dir, "finger-spd"), dir.join("finger_spd.cdw"));
    }

    #[test]
    fn missing_subcommand_is_a_parse_error() {
        assert!(Cli::try_parse_from(["fingercascade"]).is_err());
    }
}
