use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use fsp_core::background::BackgroundMap;
use fsp_core::cluster::VehicleClass;
use fsp_core::eval::{
    compute_metrics, format_timing_csv, match_frame, metrics_table, parse_timing_csv, profile_report,
    read_annotations, ConfusionCounts, MatchThresholds, MetricsReport, Outcome,
};
use fsp_core::geo::GeodeticCoord;
use fsp_core::io::{read_frame, read_frame_dir};
use fsp_core::pipeline::synth::{synth_scene, SynthSceneParams};
use fsp_core::pipeline::{
    build_background_from_frames, calibrate_static, calibrate_trajectory, forward_records, read_gps_trajectory_csv,
    read_jsonl, read_lidar_trajectory_csv, read_static_pairs_csv, run_detect, write_jsonl, DetectionRecord,
    ExtrinsicArtifact, Geolocation, PipelineConfig, DEFAULT_RESAMPLE_SPACING,
};
use fsp_core::Point3;

#[derive(Parser)]
#[command(name = "fsp", version, about = "Roadside LiDAR truck detection for freight signal priority")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the detection pipeline over a directory of frames.
    Detect(DetectArgs),
    /// Build a background map from vehicle-free frames.
    BuildBackground(BuildBackgroundArgs),
    /// Estimate the LiDAR to ENU extrinsic from static point pairs.
    CalibrateStatic(CalibrateStaticArgs),
    /// Refine an extrinsic from matched LiDAR and GPS trajectories.
    CalibrateTrajectory(CalibrateTrajectoryArgs),
    /// Score detection records against scenario annotations.
    EvalFsp(EvalArgs),
    /// Summarize per-frame processing times.
    Profile(ProfileArgs),
    /// Generate a seeded synthetic scene.
    Synth(SynthArgs),
    /// Relay a record stream to another consumer.
    Forward(ForwardArgs),
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    background: PathBuf,
    /// Overrides `extrinsic_path` from the config.
    #[arg(long)]
    extrinsic: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    requests: Option<PathBuf>,
    #[arg(long)]
    timing: Option<PathBuf>,
}

#[derive(Args)]
struct BuildBackgroundArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateStaticArgs {
    /// CSV rows `lidar_x,lidar_y,lidar_z,lat,lon,alt`.
    #[arg(long)]
    pairs: PathBuf,
    /// `lat,lon,alt`; defaults to the first GPS fix in the pairs file.
    #[arg(long, value_parser = parse_geodetic, allow_hyphen_values = true)]
    enu_origin: Option<GeodeticCoord>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateTrajectoryArgs {
    #[arg(long)]
    extrinsic: PathBuf,
    /// CSV rows `timestamp,x,y,z`; one file per pass.
    #[arg(long = "lidar-traj", num_args = 1.., required = true)]
    lidar_traj: Vec<PathBuf>,
    /// CSV rows `timestamp,lat,lon,alt`; same order as `--lidar-traj`.
    #[arg(long = "gps-traj", num_args = 1.., required = true)]
    gps_traj: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESAMPLE_SPACING)]
    spacing: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value = "long=10,compact=4", value_parser = parse_thresholds)]
    thresholds: MatchThresholds,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    timing: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    budget: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ForwardArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Destination file, or `-` for stdout.
    #[arg(long)]
    out: PathBuf,
    /// Keep polling the input for appended lines.
    #[arg(long)]
    follow: bool,
    /// With `--follow`, stop after this many seconds without new data.
    #[arg(long, default_value_t = 10.0)]
    idle_timeout: f64,
}

fn parse_geodetic(s: &str) -> Result<GeodeticCoord, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| format!("`{f}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [lat, lon, alt] => GeodeticCoord::new(lat, lon, alt).map_err(|e| e.to_string()),
        _ => Err(format!("expected lat,lon,alt, got {} values", v.len())),
    }
}

fn parse_thresholds(s: &str) -> Result<MatchThresholds, String> {
    MatchThresholds::parse(s).map_err(|e| e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn detect(a: DetectArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let background = BackgroundMap::load(&a.background)
        .with_context(|| format!("loading background map {}", a.background.display()))?;
    let geolocation = match a.extrinsic.as_ref().or(cfg.extrinsic_path.as_ref()) {
        Some(p) => Some(Geolocation::from_artifact(
            &ExtrinsicArtifact::load(p).with_context(|| format!("loading extrinsic {}", p.display()))?,
        )?),
        None => None,
    };
    let stream = read_frame_dir(&a.frames)?;
    let out = run_detect(&cfg, &stream, background, geolocation)?;
    write_jsonl(&a.out, &out.records)?;
    if let Some(p) = &a.requests {
        write_jsonl(p, &out.requests)?;
    }
    if let Some(p) = &a.timing {
        fs::write(p, format_timing_csv(&out.timing))?;
    }
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    Ok(())
}

fn build_bg(a: BuildBackgroundArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let stream = read_frame_dir(&a.frames)?;
    if stream.frames.is_empty() {
        bail!("no readable frames in {}", a.frames.display());
    }
    let map = build_background_from_frames(&cfg, &stream.frames)?;
    map.save(&a.out)?;
    info!("background map: {} points from {} frames", map.len(), stream.frames.len());
    println!(
        "{}",
        serde_json::json!({"points": map.len(), "frames": stream.frames.len(), "skipped": stream.skipped.len()})
    );
    Ok(())
}

fn cal_static(a: CalibrateStaticArgs) -> Result<()> {
    let pairs = read_static_pairs_csv(&a.pairs)?;
    let origin = match a.enu_origin {
        Some(o) => o,
        None => pairs.first().map(|p| p.1).context("pairs file is empty")?,
    };
    let cal = calibrate_static(&pairs, origin)?;
    cal.artifact.save(&a.out)?;
    println!(
        "{}",
        serde_json::json!({
            "pairs": pairs.len(),
            "condition_ratio": cal.condition_ratio,
            "static_error": {"mean": cal.residuals.mean, "max": cal.residuals.max, "per_point": cal.residuals.per_point},
        })
    );
    Ok(())
}

fn cal_trajectory(a: CalibrateTrajectoryArgs) -> Result<()> {
    if a.lidar_traj.len() != a.gps_traj.len() {
        bail!("{} --lidar-traj files but {} --gps-traj files", a.lidar_traj.len(), a.gps_traj.len());
    }
    let artifact = ExtrinsicArtifact::load(&a.extrinsic)?;
    let lidar = a
        .lidar_traj
        .iter()
        .map(|p| Ok(read_lidar_trajectory_csv(p)?.into_iter().map(|(_, x)| x).collect()))
        .collect::<Result<Vec<Vec<Point3>>>>()?;
    let gps = a
        .gps_traj
        .iter()
        .map(|p| Ok(read_gps_trajectory_csv(p)?.into_iter().map(|(_, g)| g).collect()))
        .collect::<Result<Vec<Vec<GeodeticCoord>>>>()?;
    let (refined, report) = calibrate_trajectory(&artifact, &lidar, &gps, a.spacing)?;
    refined.save(&a.out)?;
    write_json(&a.report, &report)?;
    println!(
        "{}",
        serde_json::json!({"before_refinement": report.before_refinement, "after_refinement": report.after_refinement})
    );
    Ok(())
}

#[derive(Serialize)]
struct ScenarioResult {
    scenario_id: String,
    frame_id: u64,
    outcome: Outcome,
}

#[derive(Serialize)]
struct EvalReport {
    thresholds: MatchThresholds,
    counts: ConfusionCounts,
    metrics: MetricsReport,
    scenarios: Vec<ScenarioResult>,
    table: String,
}

fn eval_fsp(a: EvalArgs) -> Result<()> {
    let annotations = read_annotations(&a.annotations)?;
    let records: Vec<DetectionRecord> = read_jsonl(&a.records)?;
    let base = a.annotations.parent().unwrap_or(Path::new("."));
    let mut scenarios = Vec::new();
    for ann in &annotations {
        let frame_id = match ann.frame_id {
            Some(id) => id,
            None => {
                let path = base.join(&ann.frame_file);
                read_frame(&path)
                    .with_context(|| format!("scenario {}: reading {}", ann.scenario_id, path.display()))?
                    .frame_id
            }
        };
        let preds: Vec<(VehicleClass, Point3)> = records
            .iter()
            .filter(|r| r.frame_id == frame_id)
            .map(|r| (r.vehicle_class, r.position_lidar))
            .collect();
        scenarios.push(ScenarioResult {
            scenario_id: ann.scenario_id.clone(),
            frame_id,
            outcome: match_frame(ann, &preds, &a.thresholds),
        });
    }
    let counts: ConfusionCounts = scenarios.iter().map(|s| s.outcome).collect();
    let metrics = compute_metrics(&counts);
    let table = metrics_table(&counts, &metrics);
    print!("{table}");
    write_json(
        &a.out,
        &EvalReport {
            thresholds: a.thresholds,
            counts,
            metrics,
            scenarios,
            table,
        },
    )
}

fn profile(a: ProfileArgs) -> Result<()> {
    let text = fs::read_to_string(&a.timing).with_context(|| format!("reading {}", a.timing.display()))?;
    let samples = parse_timing_csv(&text, &a.timing)?;
    let report = profile_report(&samples, a.budget)?;
    write_json(&a.out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&a.params).with_context(|| format!("reading {}", a.params.display()))?;
    let params: SynthSceneParams = serde_json::from_str(&text)?;
    let scene = synth_scene(&params, &a.out_dir)?;
    println!(
        "{}",
        serde_json::json!({
            "frames": scene.frames_dir,
            "background": scene.background_dir,
            "ground_truth": scene.ground_truth,
            "config": scene.config,
            "truck_tracks": scene.truck_tracks,
        })
    );
    Ok(())
}

fn forward(a: ForwardArgs) -> Result<()> {
    let mut sink: Box<dyn Write> = if a.out.as_os_str() == "-" {
        Box::new(io::stdout().lock())
    } else {
        Box::new(
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&a.out)
                .with_context(|| format!("opening {}", a.out.display()))?,
        )
    };
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let mut reader = BufReader::new(file);
    let (mut forwarded, mut rejected) = (0, 0);
    if !a.follow {
        (forwarded, rejected) = forward_records(reader, &mut sink)?;
    } else {
        let idle = Duration::from_secs_f64(a.idle_timeout.max(0.0));
        let mut last = Instant::now();
        let mut pending = String::new();
        loop {
            let mut line = String::new();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                if last.elapsed() >= idle {
                    break;
                }
                thread::sleep(Duration::from_millis(50));
                continue;
            }
            pending.push_str(&line);
            if !pending.ends_with('\n') {
                continue; // partial write; wait for the rest
            }
            let (f, r) = forward_records(pending.as_bytes(), &mut sink)?;
            forwarded += f;
            rejected += r;
            pending.clear();
            last = Instant::now();
        }
    }
    eprintln!("forwarded {forwarded} records, rejected {rejected} lines");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Detect(a) => detect(a),
        Command::BuildBackground(a) => build_bg(a),
        Command::CalibrateStatic(a) => cal_static(a),
        Command::CalibrateTrajectory(a) => cal_trajectory(a),
        Command::EvalFsp(a) => eval_fsp(a),
        Command::Profile(a) => profile(a),
        Command::Synth(a) => synth(a),
        Command::Forward(a) => forward(a),
    }
}
