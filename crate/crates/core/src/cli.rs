//! Command-line front end: subcommand dispatch, flat `key=value`
//! configuration, frame ingestion, and exit-code mapping.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use image::RgbImage;

use crate::bench::{
    evaluate, load_ground_truth, store_trajectory, synth_sequence, write_atomic, SynthConfig,
};
use crate::optimizer::KernelSpec;
use crate::selftest;
use crate::tracker::{track_sequence, TrackerConfig};
use crate::{Error, Result};

/// Success.
pub const EXIT_OK: u8 = 0;
/// Any self-test suite failed.
pub const EXIT_SELFTEST: u8 = 1;
/// Configuration or input could not be parsed or is missing.
pub const EXIT_CONFIG: u8 = 2;
/// Tracking aborted mid-sequence; the frame index is printed.
pub const EXIT_TRACKING: u8 = 3;
/// Trajectory and ground truth lengths differ.
pub const EXIT_LENGTH: u8 = 4;
/// Output directory or file could not be written.
pub const EXIT_OUTPUT: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "cftrack", about = "Correlation-filter visual tracker", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track a directory of frames and write the trajectory plus timing.
    Track(CommonArgs),
    /// Score a stored trajectory against ground truth.
    Eval(CommonArgs),
    /// Render a deterministic synthetic sequence with ground truth.
    Synth(CommonArgs),
    /// Run the built-in numerical oracle suites.
    Selftest,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name: hc, khc, or external (overrides the config file).
    #[arg(long)]
    preset: Option<String>,
    /// Frame directory (track) or trajectory file (eval).
    #[arg(long)]
    seq: Option<PathBuf>,
    /// Ground-truth box file; track falls back to <seq>/groundtruth.txt.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for synthetic rendering.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// A terminal failure carrying its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: EXIT_CONFIG, message: message.into() }
    }

    fn output(message: impl Into<String>) -> Self {
        Failure { code: EXIT_OUTPUT, message: message.into() }
    }

    fn from_error(err: Error) -> Self {
        let code = match err {
            Error::Tracking { .. } => EXIT_TRACKING,
            Error::LengthMismatch { .. } => EXIT_LENGTH,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: err.to_string() }
    }
}

/// Parses `args` (including the program name) and runs the selected
/// subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.exit_code() == 0 { EXIT_OK } else { EXIT_CONFIG };
            let _ = err.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Track(args) => run_track(&args),
        Command::Eval(args) => run_eval(&args),
        Command::Synth(args) => run_synth(&args),
        Command::Selftest => return run_selftest(),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

/// Fully resolved run configuration: tracker settings plus synthetic-scene
/// parameters, both overridable from the same flat file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { tracker: TrackerConfig::hc(), synth: SynthConfig::default() }
    }
}

/// Parses a flat `key=value` configuration text. Blank lines and `#`
/// comments are skipped; an empty text yields the `hc` preset. `preset_flag`
/// overrides any `preset` key in the text.
pub fn parse_run_config(text: &str, preset_flag: Option<&str>) -> Result<RunConfig> {
    let mut pairs = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", number + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }

    let preset = preset_flag
        .map(str::to_string)
        .or_else(|| pairs.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.clone()))
        .unwrap_or_else(|| "hc".to_string());
    let template = pairs.iter().find(|(k, _)| k == "external.template").map(|(_, v)| v.clone());
    let cell = match pairs.iter().find(|(k, _)| k == "external.cell") {
        Some((key, value)) => parse_value::<usize>(key, value)?,
        None => 4,
    };
    let tracker = match preset.as_str() {
        "hc" => TrackerConfig::hc(),
        "khc" => TrackerConfig::khc(),
        "external" => {
            let template = template.ok_or_else(|| {
                Error::Config("preset external requires external.template".to_string())
            })?;
            TrackerConfig::external(template, cell)
        }
        other => return Err(Error::Config(format!("unknown preset {other:?}"))),
    };

    let mut config = RunConfig { tracker, synth: SynthConfig::default() };
    for (key, value) in &pairs {
        apply_key(&mut config, key, value)?;
    }
    Ok(config)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse value {value:?}")))
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("key {key}: expected a boolean, got {value:?}"))),
    }
}

fn apply_key(config: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let tracker = &mut config.tracker;
    let synth = &mut config.synth;
    match key {
        "preset" | "external.template" | "external.cell" => {}
        "solver.c" => tracker.solver.c = parse_value(key, value)?,
        "solver.outer_iterations" => tracker.solver.outer_iterations = parse_value(key, value)?,
        "solver.cg_iterations" => {
            tracker.solver.cg_iterations_per_outer = parse_value(key, value)?
        }
        "solver.init_outer_iterations" => {
            tracker.solver.init_outer_iterations = parse_value(key, value)?
        }
        "solver.tolerance" => tracker.solver.tolerance = parse_value(key, value)?,
        "solver.memory" => tracker.solver.memory = parse_value(key, value)?,
        "label.sigma" => tracker.label_sigma = parse_value(key, value)?,
        "scale.layers" => tracker.scale_layers = parse_value(key, value)?,
        "scale.factor" => tracker.scale_factor = parse_value(key, value)?,
        "scale.symmetric" => tracker.symmetric_scales = parse_flag(key, value)?,
        "search.area_factor" => tracker.search_area_factor = parse_value(key, value)?,
        "search.clamp_min" => tracker.sample_clamp.0 = parse_value(key, value)?,
        "search.clamp_max" => tracker.sample_clamp.1 = parse_value(key, value)?,
        "kernel.kind" => {
            tracker.kernel = match value {
                "none" => None,
                "linear" => Some(KernelSpec::linear()),
                "gaussian" => Some(KernelSpec::gaussian(0.2)),
                _ => {
                    return Err(Error::Config(format!(
                        "key {key}: expected none, linear, or gaussian, got {value:?}"
                    )))
                }
            }
        }
        "kernel.bandwidth" => match tracker.kernel.as_mut() {
            Some(spec) => spec.bandwidth = parse_value(key, value)?,
            None => {
                return Err(Error::Config(format!(
                    "key {key}: set kernel.kind before the bandwidth"
                )))
            }
        },
        "reg.min_weight" => tracker.reg_min_weight = parse_value(key, value)?,
        "reg.slope" => tracker.reg_slope = parse_value(key, value)?,
        "reg.grid" => tracker.reg_grid = parse_value(key, value)?,
        "features.normalize" => tracker.normalize_features = parse_flag(key, value)?,
        "synth.frames" => synth.frames = parse_value(key, value)?,
        "synth.width" => synth.frame_size.0 = parse_value(key, value)?,
        "synth.height" => synth.frame_size.1 = parse_value(key, value)?,
        "synth.target_width" => synth.target_size.0 = parse_value(key, value)?,
        "synth.target_height" => synth.target_size.1 = parse_value(key, value)?,
        "synth.start_x" => synth.start_center.0 = parse_value(key, value)?,
        "synth.start_y" => synth.start_center.1 = parse_value(key, value)?,
        "synth.velocity_x" => synth.velocity.0 = parse_value(key, value)?,
        "synth.velocity_y" => synth.velocity.1 = parse_value(key, value)?,
        "synth.growth" => synth.scale_growth = parse_value(key, value)?,
        _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
    }
    Ok(())
}

fn load_run_config(args: &CommonArgs) -> std::result::Result<RunConfig, Failure> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    parse_run_config(&text, args.preset.as_deref()).map_err(Failure::from_error)
}

/// Lists the frame images in `dir` in lexicographic order.
fn frame_paths(dir: &Path) -> std::result::Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", dir.display())))?
            .path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_image {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::config(format!("no frame images in {}", dir.display())));
    }
    Ok(paths)
}

fn load_frames(paths: &[PathBuf]) -> std::result::Result<Vec<RgbImage>, Failure> {
    paths
        .iter()
        .map(|path| {
            image::open(path)
                .map(|img| img.to_rgb8())
                .map_err(|e| Failure::config(format!("cannot load {}: {e}", path.display())))
        })
        .collect()
}

fn require<'a>(
    value: &'a Option<PathBuf>,
    flag: &str,
    command: &str,
) -> std::result::Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::config(format!("{command} requires --{flag}")))
}

fn run_track(args: &CommonArgs) -> std::result::Result<(), Failure> {
    let config = load_run_config(args)?;
    config.tracker.validate().map_err(Failure::from_error)?;
    let seq = require(&args.seq, "seq", "track")?;
    let out = require(&args.out, "out", "track")?;

    let paths = frame_paths(seq)?;
    let frames = load_frames(&paths)?;
    let gt_path = args.gt.clone().unwrap_or_else(|| seq.join("groundtruth.txt"));
    let gt = load_ground_truth(&gt_path).map_err(Failure::from_error)?;
    if gt.is_empty() {
        return Err(Failure::config(format!("{} contains no boxes", gt_path.display())));
    }

    let start = Instant::now();
    let trajectory =
        track_sequence(&frames, &gt.boxes[0], &config.tracker).map_err(Failure::from_error)?;
    let elapsed = start.elapsed().as_secs_f64();
    let fps = if elapsed > 0.0 { frames.len() as f64 / elapsed } else { 0.0 };

    fs::create_dir_all(out)
        .map_err(|e| Failure::output(format!("cannot create {}: {e}", out.display())))?;
    store_trajectory(out.join("trajectory.txt"), &trajectory)
        .map_err(|e| Failure::output(e.to_string()))?;
    let timing = format!(
        "frames={}\nelapsed_seconds={elapsed:.3}\nmean_fps={fps:.3}\n",
        frames.len()
    );
    write_atomic(&out.join("timing.txt"), timing.as_bytes())
        .map_err(|e| Failure::output(e.to_string()))?;
    println!("tracked {} frames in {elapsed:.2} s ({fps:.2} fps)", frames.len());
    Ok(())
}

fn run_eval(args: &CommonArgs) -> std::result::Result<(), Failure> {
    let seq = require(&args.seq, "seq", "eval")?;
    let gt_path = require(&args.gt, "gt", "eval")?;
    let out = require(&args.out, "out", "eval")?;

    let trajectory = load_ground_truth(seq).map_err(Failure::from_error)?;
    let gt = load_ground_truth(gt_path).map_err(Failure::from_error)?;
    let report = evaluate(&trajectory, &gt, 0.0).map_err(Failure::from_error)?;

    fs::create_dir_all(out)
        .map_err(|e| Failure::output(format!("cannot create {}: {e}", out.display())))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "frames={}", trajectory.len());
    let _ = writeln!(summary, "dp20={:.4}", report.dp20);
    let _ = writeln!(summary, "op50={:.4}", report.op50);
    let _ = writeln!(summary, "auc={:.4}", report.auc);
    write_atomic(&out.join("report.txt"), summary.as_bytes())
        .map_err(|e| Failure::output(e.to_string()))?;
    write_atomic(&out.join("success_curve.csv"), curve_csv(&report.success_curve).as_bytes())
        .map_err(|e| Failure::output(e.to_string()))?;
    write_atomic(
        &out.join("precision_curve.csv"),
        curve_csv(&report.precision_curve).as_bytes(),
    )
    .map_err(|e| Failure::output(e.to_string()))?;
    println!("dp20={:.4} op50={:.4} auc={:.4}", report.dp20, report.op50, report.auc);
    Ok(())
}

fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut text = String::new();
    for (threshold, value) in curve {
        let _ = writeln!(text, "{threshold:.2},{value:.6}");
    }
    text
}

fn run_synth(args: &CommonArgs) -> std::result::Result<(), Failure> {
    let mut config = load_run_config(args)?;
    config.synth.seed = args.seed;
    let out = require(&args.out, "out", "synth")?;

    let (frames, gt) = synth_sequence(&config.synth).map_err(Failure::from_error)?;
    fs::create_dir_all(out)
        .map_err(|e| Failure::output(format!("cannot create {}: {e}", out.display())))?;
    for (index, frame) in frames.iter().enumerate() {
        let path = out.join(format!("{:05}.png", index + 1));
        frame
            .save(&path)
            .map_err(|e| Failure::output(format!("cannot write {}: {e}", path.display())))?;
    }
    store_trajectory(out.join("groundtruth.txt"), &gt)
        .map_err(|e| Failure::output(e.to_string()))?;
    println!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

fn run_selftest() -> u8 {
    let results = selftest::run_all();
    let mut all_passed = true;
    for suite in &results {
        if suite.passed {
            println!("{}: pass", suite.name);
        } else {
            println!("{}: FAIL ({})", suite.name, suite.detail);
            all_passed = false;
        }
    }
    if all_passed {
        EXIT_OK
    } else {
        EXIT_SELFTEST
    }
}
