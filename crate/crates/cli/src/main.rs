//! `legtrack`: simulate, track, evaluate and demo subcommands.
//!
//! Exit codes: 0 success, 2 configuration, 3 input/output, 4 filter
//! divergence. Failures print one diagnostic line on stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use legtrack::config::{CameraMode, ConfigError, RunConfig};
use legtrack::ekf::FilterError;
use legtrack::io::{self, IoError, RmseRecord};
use legtrack::pipeline::{
    camera_frames, default_reference, evaluate, joint_label, percent_change, run_camera_only, run_fused,
    run_imu_only, EstimateRow, FrameTracker, PipelineError, RmseReport, Track, TrackingInputs, TruthRow, Variant,
};
use legtrack::sim::{render_frame, simulate, GaitKind, SimError, SimOutput};
use legtrack::vision::{marker_mask, MarkerObservation, RasterImage, VisionError};
use legtrack::ImuSample;

#[derive(Parser)]
#[command(name = "legtrack", version, about = "Leg joint tracking from two IMUs and one camera")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one estimator over a recording.
    Track(TrackArgs),
    /// RMSE of one or more estimates against ground truth.
    Evaluate {
        /// Estimate CSV; repeat to compare, the first is the baseline.
        #[arg(long, required = true)]
        est: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        /// Report CSV; defaults to rmse.csv beside the first estimate.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Largest tolerated timestamp gap when pairing rows, seconds.
        #[arg(long, default_value_t = 0.005)]
        max_skew: f64,
    },
    /// Simulate walking and running in place, track with every variant and
    /// report. Output depends only on the seed.
    Demo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "legtrack-demo")]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(id = "variant", required = true, multiple = false)]
struct VariantFlags {
    #[arg(long)]
    imu_only: bool,
    #[arg(long)]
    camera_only: bool,
    #[arg(long)]
    fused: bool,
}

impl VariantFlags {
    fn variant(&self) -> Variant {
        if self.imu_only {
            Variant::ImuOnly
        } else if self.camera_only {
            Variant::CameraOnly
        } else {
            Variant::Fused
        }
    }
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    variant: VariantFlags,
    /// Recording directory; overrides `input_dir` in the config.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Estimate CSV; defaults to estimate_<variant>.csv in the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Divergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Divergence(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Filter(FilterError::Divergence(_) | FilterError::NonFinite(_)) => {
                CliError::Divergence(e.to_string())
            }
            PipelineError::Filter(FilterError::Config(_)) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

fn vision_err(path: &Path) -> impl FnOnce(VisionError) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

type Result<T> = std::result::Result<T, CliError>;

const IMU_UPPER: &str = "imu_upper.csv";
const IMU_LOWER: &str = "imu_lower.csv";
const TRUTH: &str = "truth.csv";
const MARKERS: &str = "markers.csv";
const FRAMES: &str = "frames.csv";

/// Writes a recording: IMU streams, truth, marker table, optional frames.
fn write_recording(cfg: &RunConfig, sim: &SimOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(fs_err(&cfg_path))?;
    io::write_imu(&dir.join(IMU_UPPER), &sim.imu.upper)?;
    io::write_imu(&dir.join(IMU_LOWER), &sim.imu.lower)?;
    io::write_truth(&dir.join(TRUTH), &sim.truth, &sim.imu)?;
    io::write_markers(&dir.join(MARKERS), &sim.observations)?;
    if cfg.vision.mode == CameraMode::Frames {
        let frame_dir = dir.join("frames");
        std::fs::create_dir_all(&frame_dir).map_err(fs_err(&frame_dir))?;
        let cam = cfg.camera.model();
        let mut index = Vec::with_capacity(sim.markers.len());
        for (k, (markers, step)) in sim.markers.iter().zip(&sim.camera_truth).enumerate() {
            let name = format!("frame_{k:05}.ppm");
            let path = frame_dir.join(&name);
            render_frame(&cam, markers).save_ppm(&path).map_err(vision_err(&path))?;
            index.push(vec![format!("{}", step.t), format!("frames/{name}")]);
        }
        io::write_table(&dir.join(FRAMES), "frames", &[], &["t".into(), "file".into()], index)?;
    }
    Ok(())
}

/// Marker observations from rendered frames, writing PGM masks if asked.
fn observe_frames(cfg: &RunConfig, dir: &Path, mask_dir: Option<&Path>) -> Result<Vec<[MarkerObservation; 3]>> {
    let table = io::Table::read(&dir.join(FRAMES), "frames")?;
    let (tc, fc) = (table.column("t")?, table.column("file")?);
    let params = cfg.vision.detector();
    let mut tracker = FrameTracker::new(params, cfg.vision.max_jump);
    if let Some(m) = mask_dir {
        std::fs::create_dir_all(m).map_err(fs_err(m))?;
    }
    let mut out = Vec::with_capacity(table.records.len());
    for (i, rec) in table.records.iter().enumerate() {
        let t = table.f64(i, rec, tc)?;
        let path = dir.join(rec.get(fc).unwrap_or_default());
        let frame = RasterImage::load_ppm(&path).map_err(vision_err(&path))?;
        if let Some(m) = mask_dir {
            let mask = marker_mask(&frame, params.marker_color, params.binarize_threshold);
            let mpath = m.join(format!("mask_{i:05}.pgm"));
            let file = std::fs::File::create(&mpath).map_err(fs_err(&mpath))?;
            mask.write_pgm(std::io::BufWriter::new(file)).map_err(fs_err(&mpath))?;
        }
        out.push(tracker.observe(t, &frame));
    }
    Ok(out)
}

struct Recording {
    upper: Vec<ImuSample>,
    lower: Vec<ImuSample>,
    observations: Vec<[MarkerObservation; 3]>,
    /// Only needed by the IMU-only variant.
    truth: Option<Vec<TruthRow>>,
}

fn hip_track(truth: &[TruthRow]) -> Track {
    Track::new(truth.iter().map(|r| (r.t, r.joints[0])).collect())
}

fn run_variant(cfg: &RunConfig, rec: &Recording, variant: Variant) -> Result<Vec<EstimateRow>> {
    let frames = camera_frames(
        &rec.observations,
        &cfg.camera.model(),
        &cfg.leg(),
        cfg.depth_params(),
        cfg.depth.missing_policy,
    );
    let hip = rec.truth.as_deref().map(hip_track);
    let inputs = TrackingInputs {
        imu_upper: &rec.upper,
        imu_lower: &rec.lower,
        camera: &frames,
        pose: cfg.camera.pose(),
        reference_hip: hip.as_ref(),
    };
    let filter = cfg.filter_config();
    let rows = match variant {
        Variant::ImuOnly => {
            if hip.is_none() {
                return Err(CliError::Io("IMU-only tracking needs a truth.csv hip reference".into()));
            }
            run_imu_only(&inputs, &filter)?.0
        }
        Variant::CameraOnly => run_camera_only(&inputs)?,
        Variant::Fused => run_fused(&inputs, &filter)?.0,
    };
    Ok(rows)
}

fn cmd_simulate(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let sim = simulate(&cfg.scenario())?;
    write_recording(&cfg, &sim, out)?;
    println!(
        "wrote {} IMU steps and {} camera frames to {}",
        sim.truth.len(),
        sim.observations.len(),
        out.display()
    );
    Ok(())
}

fn cmd_track(args: &TrackArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let dir = args
        .input
        .clone()
        .or_else(|| cfg.input_dir.clone())
        .ok_or_else(|| CliError::Config("no input directory: pass --input or set input_dir".into()))?;
    let variant = args.variant.variant();
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| dir.join(format!("estimate_{}.csv", variant.name())));
    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir).map_err(fs_err(out_dir))?;

    let observations = match cfg.vision.mode {
        CameraMode::Blobs => io::read_markers(&dir.join(MARKERS))?,
        CameraMode::Frames => {
            let masks = cfg.vision.write_masks.then(|| out_dir.join("masks"));
            observe_frames(&cfg, &dir, masks.as_deref())?
        }
    };
    let truth = match variant {
        Variant::ImuOnly => Some(io::read_truth(&dir.join(TRUTH))?),
        _ => None,
    };
    let rec = Recording {
        upper: io::read_imu(&dir.join(IMU_UPPER))?,
        lower: io::read_imu(&dir.join(IMU_LOWER))?,
        observations,
        truth,
    };
    let rows = run_variant(&cfg, &rec, variant)?;
    io::write_estimate(&out, variant, &rows)?;
    let gated = rows.iter().filter(|r| r.gated[0] || r.gated[1]).count();
    println!(
        "{}: {} rows, {} with a gated segment, written to {}",
        variant.name(),
        rows.len(),
        gated,
        out.display()
    );
    Ok(())
}

/// Undefined against a zero baseline, e.g. a reference-fed hip.
fn change(new: f64, base: f64) -> Option<f64> {
    (base > 0.0).then(|| percent_change(new, base))
}

/// Report rows for one estimate: three joints plus the pooled line.
fn rmse_records(label: &str, r: &RmseReport, base: Option<&RmseReport>) -> Vec<RmseRecord> {
    let mut out: Vec<RmseRecord> = (0..3)
        .map(|j| RmseRecord {
            variant: label.to_string(),
            joint: joint_label(j).to_string(),
            axis_cm: r.axis_cm[j],
            norm_cm: r.euclidean_cm[j],
            change_pct: base.and_then(|b| change(r.euclidean_cm[j], b.euclidean_cm[j])),
            samples: r.samples,
        })
        .collect();
    out.push(RmseRecord {
        variant: label.to_string(),
        joint: "all".into(),
        axis_cm: [f64::NAN; 3],
        norm_cm: r.overall_cm,
        change_pct: base.and_then(|b| change(r.overall_cm, b.overall_cm)),
        samples: r.samples,
    });
    out
}

fn format_table(records: &[RmseRecord]) -> String {
    let mut s = format!(
        "{:<12} {:<6} {:>8} {:>8} {:>8} {:>8} {:>9}\n",
        "variant", "joint", "x cm", "y cm", "z cm", "rmse cm", "change %"
    );
    let cell = |v: f64| if v.is_nan() { "-".to_string() } else { format!("{v:.2}") };
    for r in records {
        let _ = writeln!(
            s,
            "{:<12} {:<6} {:>8} {:>8} {:>8} {:>8.2} {:>9}",
            r.variant,
            r.joint,
            cell(r.axis_cm[0]),
            cell(r.axis_cm[1]),
            cell(r.axis_cm[2]),
            r.norm_cm,
            r.change_pct.map(|c| format!("{c:+.1}")).unwrap_or_else(|| "-".into())
        );
    }
    s
}

fn compare(estimates: &[(String, Vec<EstimateRow>)], truth: &[TruthRow], max_skew: f64) -> Result<Vec<RmseRecord>> {
    let mut base: Option<RmseReport> = None;
    let mut records = Vec::new();
    for (label, rows) in estimates {
        let r = evaluate(rows, truth, default_reference(), max_skew)?;
        records.extend(rmse_records(label, &r, base.as_ref()));
        base.get_or_insert(r);
    }
    Ok(records)
}

fn cmd_evaluate(est: &[PathBuf], truth: &Path, out: Option<&Path>, max_skew: f64) -> Result<()> {
    let truth = io::read_truth(truth)?;
    let estimates = est
        .iter()
        .map(|p| {
            let (tag, rows) = io::read_estimate(p)?;
            let label = tag.unwrap_or_else(|| p.file_stem().unwrap_or_default().to_string_lossy().into_owned());
            Ok((label, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    let records = compare(&estimates, &truth, max_skew)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
        est[0]
            .parent()
            .map(|p| p.join("rmse.csv"))
            .unwrap_or_else(|| PathBuf::from("rmse.csv"))
    });
    io::write_rmse(&out, &records)?;
    print!("{}", format_table(&records));
    Ok(())
}

fn cmd_demo(seed: u64, out: &Path) -> Result<()> {
    for (kind, name) in [(GaitKind::Walk, "walk"), (GaitKind::RunInPlace, "run_in_place")] {
        let mut cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        cfg.gait.preset = kind;
        cfg.validate()?;
        let dir = out.join(name);
        let sim = simulate(&cfg.scenario())?;
        write_recording(&cfg, &sim, &dir)?;
        let truth: Vec<TruthRow> = sim
            .truth
            .iter()
            .map(|s| TruthRow {
                t: s.t,
                joints: s.joints,
            })
            .collect();
        let rec = Recording {
            upper: sim.imu.upper,
            lower: sim.imu.lower,
            observations: sim.observations,
            truth: Some(truth),
        };
        let mut estimates = Vec::new();
        for v in [Variant::ImuOnly, Variant::CameraOnly, Variant::Fused] {
            let rows = run_variant(&cfg, &rec, v)?;
            io::write_estimate(&dir.join(format!("estimate_{}.csv", v.name())), v, &rows)?;
            estimates.push((v.name().to_string(), rows));
        }
        let truth = rec.truth.as_deref().unwrap_or_default();
        let records = compare(&estimates, truth, 0.5 / cfg.rates.imu_hz)?;
        io::write_rmse(&dir.join("rmse.csv"), &records)?;
        println!("== {name} (seed {seed})");
        print!("{}", format_table(&records));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Track(args) => cmd_track(&args),
        Command::Evaluate {
            est,
            truth,
            out,
            max_skew,
        } => cmd_evaluate(&est, &truth, out.as_deref(), max_skew),
        Command::Demo { seed, out } => cmd_demo(seed, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("legtrack: error: {}", e.message().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}
