//! `mpgtrack`: synthesize keypoints, track poses, evaluate results and dump
//! occupancy grids.
//!
//! Exit codes: 0 on success (a diverged track is still a success), 1 on
//! usage errors, 2 on data errors.

mod io;
mod manifest;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use manifest::{sidecar, ManifestBuilder};
use mpgtrack_core::frame::write_frames;
use mpgtrack_core::{
    evaluate, mean_joint_deviation, occupancy_grid, randomize_sequence, synthesize_keypoints, track,
    walking_sequence, write_motion, ChamferDirection, ConfidenceMode, EvalOptions, Frustum, MotionSequence,
    NoEstimator, NoiseConfig, TrackerConfig, WalkParams,
};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser, Debug)]
#[command(name = "mpgtrack", version, about = "Absolute 3D human pose tracking from 2D keypoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Project a motion file through a camera into keypoint JSONL.
    Synth(SynthArgs),
    /// Track poses from keypoint JSONL.
    Track(TrackArgs),
    /// Compare predicted poses with ground truth.
    Eval(EvalArgs),
    /// Dump the agent-centric occupancy grid as CSV.
    Grid(GridArgs),
    /// Generate a procedural walking motion file.
    Walk(WalkArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Motion file: header line with frame_rate, then one pose per line.
    #[arg(long)]
    motion: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian pixel noise standard deviation.
    #[arg(long = "noise.std", default_value_t = 0.0)]
    noise_std: f64,
    /// Per-keypoint dropout probability.
    #[arg(long = "noise.dropout", default_value_t = 0.0)]
    noise_dropout: f64,
    /// Confidence of kept keypoints: `fixed` (1.0) or `uniform` in [0, 1].
    #[arg(long, value_enum, default_value_t = Confidence::Fixed)]
    confidence: Confidence,
    /// Re-place the motion at a random position and heading inside the
    /// camera frustum before projecting. Needs image size in the camera file.
    #[arg(long)]
    place: bool,
    #[arg(long, default_value_t = 1.0, requires = "place")]
    near: f64,
    #[arg(long, default_value_t = 10.0, requires = "place")]
    far: f64,
    /// Where to write the placed motion, if `--place` is given.
    #[arg(long, requires = "place")]
    motion_out: Option<PathBuf>,
    /// Keypoint JSONL output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Confidence {
    Fixed,
    Uniform,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Initial pose: a motion file (its first pose is used), tracker output,
    /// or a single JSON array of 75 numbers.
    #[arg(long)]
    init: PathBuf,
    /// Reference poses, one per keypoint frame, for per-frame deviation and
    /// divergence detection.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Tracker configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "mpg.steps")]
    mpg_steps: Option<usize>,
    #[arg(long = "mpg.step-size")]
    mpg_step_size: Option<f64>,
    /// Pose JSONL output; summary, CSV series and manifest are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted poses (tracker output or motion file).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth poses (motion file or tracker output).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Report penetration metrics; requires `--scene`.
    #[arg(long)]
    penetration: bool,
    /// Observed point clouds, one JSON array of [x, y, z] per frame.
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Direction::ObservationToBody)]
    chamfer_direction: Direction,
    #[arg(long, default_value_t = 10)]
    limb_samples: usize,
    /// JSON report output; the table and CSV series are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Direction {
    ObservationToBody,
    BodyToObservation,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Agent root position as x,y,z in meters.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    position: Vector3<f64>,
    /// Agent heading (yaw) in radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    heading: f64,
    #[arg(long, default_value_t = mpgtrack_core::scene::DEFAULT_SIGMA)]
    sigma: f64,
    /// CSV output with columns x,y,z,value.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct WalkArgs {
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    frames: usize,
    #[arg(long, default_value_t = 30.0)]
    frame_rate: f64,
    /// Forward speed, m/s.
    #[arg(long, default_value_t = 0.8)]
    speed: f64,
    /// Heading change, rad/s.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    turn_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_vector(s: &str) -> std::result::Result<Vector3<f64>, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z, got {} values", parts.len())),
    }
}

/// A bad combination of otherwise valid flags; exits with code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Walk(a) => cmd_walk(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let noise = NoiseConfig {
        pixel_noise_std: a.noise_std,
        dropout_probability: a.noise_dropout,
        confidence_mode: match a.confidence {
            Confidence::Fixed => ConfidenceMode::Fixed { value: 1.0 },
            Confidence::Uniform => ConfidenceMode::Uniform,
        },
        rng_seed: a.seed,
    };
    noise.validate()?;
    let mut manifest = ManifestBuilder::new(
        "synth",
        json!({ "noise": noise, "place": a.place.then_some([a.near, a.far]) }),
        Some(a.seed),
    );
    manifest
        .input("motion", Some(&a.motion))
        .input("camera", Some(&a.camera))
        .input("skeleton", a.skeleton.as_deref());

    let camera = io::camera(&a.camera)?;
    let tree = io::skeleton(a.skeleton.as_deref())?;
    let mut seq = mpgtrack_core::load_motion_path(&a.motion)
        .with_context(|| format!("motion file {}", a.motion.display()))?;
    if a.place {
        let (Some(width), Some(height)) = (camera.width, camera.height) else {
            return Err(UsageError("--place needs width and height in the camera file".into()).into());
        };
        let frustum = Frustum { width, height, near: a.near, far: a.far };
        // Placement draws from its own stream so noise stays tied to the seed alone.
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
        seq = randomize_sequence(&seq, &camera, &frustum, &mut rng)?.0;
        if let Some(path) = &a.motion_out {
            let mut w = io::create(path)?;
            write_motion(&mut w, &seq)?;
            w.flush()?;
            manifest.output(path);
        }
    }
    let frames = synthesize_keypoints(&seq, &tree, &camera, &noise)?;
    let mut w = io::create(&a.out)?;
    write_frames(&mut w, &frames)?;
    w.flush()?;
    manifest.output(&a.out).write_for(&a.out)?;
    Ok(())
}

fn cmd_track(a: TrackArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            TrackerConfig::from_json_str(&text).with_context(|| format!("config file {}", p.display()))?
        }
        None => TrackerConfig::default(),
    };
    if let Some(k) = a.mpg_steps {
        config.mpg.steps = k;
    }
    if let Some(s) = a.mpg_step_size {
        config.mpg.step_size = s;
    }
    config.validate()?;

    let mut manifest = ManifestBuilder::new("track", serde_json::to_value(&config)?, None);
    manifest
        .input("keypoints", Some(&a.keypoints))
        .input("camera", Some(&a.camera))
        .input("scene", a.scene.as_deref())
        .input("skeleton", a.skeleton.as_deref())
        .input("init", Some(&a.init))
        .input("reference", a.reference.as_deref())
        .input("config", a.config.as_deref());

    let frames = io::keypoints(&a.keypoints)?;
    let camera = io::camera(&a.camera)?;
    let tree = io::skeleton(a.skeleton.as_deref())?;
    let scene = a.scene.as_deref().map(io::scene).transpose()?;
    let init = io::poses(&a.init)?.swap_remove(0);
    let references = a.reference.as_deref().map(io::poses).transpose()?;

    let result = track(
        &init,
        &frames,
        &tree,
        &camera,
        scene.as_ref(),
        &config,
        references.as_deref(),
        Arc::new(NoEstimator),
    )?;

    let mut w = io::create(&a.out)?;
    for r in &result.reports {
        writeln!(w, "{}", r.to_json_line())?;
    }
    w.flush()?;

    let summary_path = sidecar(&a.out, "summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&result.summary)? + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;

    let series_path = sidecar(&a.out, "series.csv");
    let mut w = io::create(&series_path)?;
    writeln!(w, "frame,loss_before,loss_after,deviation")?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &result.reports {
        writeln!(w, "{},{},{},{}", r.frame, cell(r.loss_before), cell(r.loss_after), cell(r.deviation))?;
    }
    w.flush()?;

    manifest.output(&a.out).output(&summary_path).output(&series_path).write_for(&a.out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.penetration && a.scene.is_none() {
        return Err(UsageError("--penetration requires --scene".into()).into());
    }
    let direction = match a.chamfer_direction {
        Direction::ObservationToBody => ChamferDirection::ObservationToBody,
        Direction::BodyToObservation => ChamferDirection::BodyToObservation,
    };
    let mut manifest = ManifestBuilder::new(
        "eval",
        json!({ "chamfer_direction": direction, "limb_samples": a.limb_samples, "penetration": a.scene.is_some() }),
        None,
    );
    manifest
        .input("pred", Some(&a.pred))
        .input("gt", Some(&a.gt))
        .input("skeleton", a.skeleton.as_deref())
        .input("scene", a.scene.as_deref())
        .input("observations", a.observations.as_deref());

    let pred = io::poses(&a.pred)?;
    let gt = io::poses(&a.gt)?;
    if pred.len() != gt.len() {
        anyhow::bail!("{} has {} poses but {} has {}", a.pred.display(), pred.len(), a.gt.display(), gt.len());
    }
    let tree = io::skeleton(a.skeleton.as_deref())?;
    let scene = a.scene.as_deref().map(io::scene).transpose()?;
    let observations = a.observations.as_deref().map(io::clouds).transpose()?;
    let options = EvalOptions {
        scene: scene.as_ref(),
        observations: observations.as_deref(),
        chamfer_direction: direction,
        limb_samples: a.limb_samples,
        ..Default::default()
    };
    let report = evaluate(&tree, &pred, &gt, &options)?;

    std::fs::write(&a.out, report.to_json_string() + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    let table_path = sidecar(&a.out, "txt");
    std::fs::write(&table_path, report.to_table()).with_context(|| format!("writing {}", table_path.display()))?;
    print!("{}", report.to_table());

    let series_path = sidecar(&a.out, "series.csv");
    let mut w = io::create(&series_path)?;
    writeln!(w, "frame,deviation")?;
    for (i, (p, g)) in pred.iter().zip(&gt).enumerate() {
        writeln!(w, "{i},{}", mean_joint_deviation(&tree, p, g))?;
    }
    w.flush()?;

    manifest.output(&a.out).output(&table_path).output(&series_path).write_for(&a.out)?;
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "grid",
        json!({ "position": [a.position.x, a.position.y, a.position.z], "heading": a.heading, "sigma": a.sigma }),
        None,
    );
    manifest.input("scene", Some(&a.scene));
    let scene = io::scene(&a.scene)?;
    let grid = occupancy_grid(&scene, &a.position, a.heading, a.sigma)?;
    let mut w = io::create(&a.out)?;
    writeln!(w, "x,y,z,value")?;
    for (p, v) in grid.points().iter().zip(&grid.values) {
        writeln!(w, "{},{},{},{}", p.x, p.y, p.z, v)?;
    }
    w.flush()?;
    manifest.output(&a.out).write_for(&a.out)?;
    Ok(())
}

fn cmd_walk(a: WalkArgs) -> Result<()> {
    let params = WalkParams {
        frames: a.frames,
        frame_rate: a.frame_rate,
        speed: a.speed,
        turn_rate: a.turn_rate,
        ..Default::default()
    };
    let mut manifest = ManifestBuilder::new("walk", serde_json::to_value(params)?, None);
    manifest.input("skeleton", a.skeleton.as_deref());
    let tree = io::skeleton(a.skeleton.as_deref())?;
    let seq: MotionSequence = walking_sequence(&tree, &params)?;
    let mut w = io::create(&a.out)?;
    write_motion(&mut w, &seq)?;
    w.flush()?;
    manifest.output(&a.out).write_for(&a.out)?;
    Ok(())
}
