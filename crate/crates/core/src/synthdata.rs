//! Synthetic paired data: motion files, random placement in front of a
//! camera, and noisy 2D keypoint synthesis.
//!
//! Motion files are JSONL. The first line is a header `{"frame_rate": hz}`;
//! each following non-blank line is one pose as a JSON array of 75 numbers.

use crate::camera::{CameraModel, Frustum};
use crate::error::{Error, Result};
use crate::frame::{Keypoint2D, KeypointFrame, CONFIDENCE_THRESHOLD};
use crate::kinematics::{forward_kinematics, select_keypoints, KinematicTree, Pose, KEYPOINT_COUNT, POSE_DIM};
use crate::rotation;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub poses: Vec<Pose>,
    pub frame_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct MotionHeader {
    frame_rate: f64,
}

impl MotionSequence {
    pub fn new(poses: Vec<Pose>, frame_rate: f64) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidInput("motion sequence has no frames".into()));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("frame rate must be positive, got {frame_rate}")));
        }
        if let Some(i) = poses.iter().position(|p| !p.is_finite()) {
            return Err(Error::Schema { frame: i, message: "pose is not finite".into() });
        }
        Ok(MotionSequence { poses, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

pub fn load_motion(reader: impl BufRead) -> Result<MotionSequence> {
    let mut frame_rate = None;
    let mut poses = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match frame_rate {
            None => {
                let h: MotionHeader = serde_json::from_str(text).map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("expected header {{\"frame_rate\": ..}}: {e}"),
                })?;
                frame_rate = Some(h.frame_rate);
            }
            Some(_) => {
                let values: Vec<f64> = serde_json::from_str(text).map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                let frame = poses.len();
                if values.len() != POSE_DIM {
                    return Err(Error::Schema {
                        frame,
                        message: format!("expected {POSE_DIM} values, found {}", values.len()),
                    });
                }
                poses.push(Pose::from_slice(&values).map_err(|e| Error::Schema {
                    frame,
                    message: e.to_string(),
                })?);
            }
        }
    }
    let Some(frame_rate) = frame_rate else {
        return Err(Error::Parse { line: 1, message: "empty motion file".into() });
    };
    if poses.is_empty() {
        return Err(Error::Parse { line: 2, message: "motion file has a header but no poses".into() });
    }
    MotionSequence::new(poses, frame_rate)
}

pub fn load_motion_path(path: impl AsRef<Path>) -> Result<MotionSequence> {
    load_motion(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_motion(mut writer: impl Write, seq: &MotionSequence) -> Result<()> {
    writeln!(
        writer,
        "{}",
        serde_json::to_string(&MotionHeader { frame_rate: seq.frame_rate })?
    )?;
    for p in &seq.poses {
        writeln!(writer, "{}", serde_json::to_string(&p.to_vec())?)?;
    }
    Ok(())
}

/// Rigid heading change and planar shift applied to a whole sequence.
///
/// The yaw pivots about the first frame's root (projected to the ground), so
/// `offset` is where that root ends up relative to where it started.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub yaw: f64,
    pub offset: [f64; 2],
}

pub fn place_sequence(seq: &MotionSequence, placement: &Placement) -> MotionSequence {
    let first = seq.poses[0].root_translation;
    let pivot = Vector3::new(first.x, first.y, 0.0);
    let offset = Vector3::new(placement.offset[0], placement.offset[1], 0.0);
    let poses = if placement.yaw == 0.0 {
        seq.poses
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.root_translation += offset;
                q
            })
            .collect()
    } else {
        let r = rotation::yaw(placement.yaw);
        let t = pivot + offset - r * pivot;
        seq.poses.iter().map(|p| p.transformed(&r, &t)).collect()
    };
    MotionSequence { poses, frame_rate: seq.frame_rate }
}

/// Whether every root of `seq` lies inside `frustum`.
pub fn roots_in_frustum(seq: &MotionSequence, camera: &CameraModel, frustum: &Frustum) -> bool {
    seq.poses
        .iter()
        .all(|p| camera.frustum_contains(&p.root_translation, frustum))
}

/// Random yaw plus a start position drawn inside the frustum, retried until
/// every frame's root is inside it.
pub fn randomize_sequence(
    seq: &MotionSequence,
    camera: &CameraModel,
    frustum: &Frustum,
    rng: &mut impl Rng,
) -> Result<(MotionSequence, Placement)> {
    if !(frustum.width > 0.0 && frustum.height > 0.0 && frustum.near > 0.0 && frustum.far > frustum.near) {
        return Err(Error::InvalidInput(format!("invalid frustum {frustum:?}")));
    }
    let first = seq.poses[0].root_translation;
    let r_cw: Matrix3<f64> = camera.rotation().transpose();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let yaw = rng.random_range(-PI..PI);
        let u = rng.random_range(0.0..=frustum.width);
        let depth = rng.random_range(frustum.near..=frustum.far);
        let pc = Vector3::new((u - camera.cx) * depth / camera.fx, 0.0, depth);
        let start = r_cw * (pc - camera.translation());
        let placement = Placement { yaw, offset: [start.x - first.x, start.y - first.y] };
        let placed = place_sequence(seq, &placement);
        if roots_in_frustum(&placed, camera, frustum) {
            return Ok((placed, placement));
        }
    }
    Err(Error::PlacementFailure { attempts: MAX_PLACEMENT_ATTEMPTS })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ConfidenceMode {
    /// Confidence drawn from U[0, 1].
    Uniform,
    Fixed { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub pixel_noise_std: f64,
    pub dropout_probability: f64,
    pub confidence_mode: ConfidenceMode,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            pixel_noise_std: 0.0,
            dropout_probability: 0.0,
            confidence_mode: ConfidenceMode::Fixed { value: 1.0 },
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_noise_std >= 0.0 && self.pixel_noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "pixel_noise_std must be non-negative, got {}",
                self.pixel_noise_std
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_probability) {
            return Err(Error::Config(format!(
                "dropout_probability must lie in [0, 1], got {}",
                self.dropout_probability
            )));
        }
        if let ConfidenceMode::Fixed { value } = self.confidence_mode {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("fixed confidence must lie in [0, 1], got {value}")));
            }
        }
        Ok(())
    }
}

/// Projects every pose to 12 keypoints with pixel noise, sampled confidences
/// and random dropout. Deterministic given `noise.rng_seed`.
///
/// Every keypoint of every frame must be in front of the camera; otherwise
/// all offending `(frame, keypoint)` pairs are reported.
pub fn synthesize_keypoints(
    seq: &MotionSequence,
    tree: &KinematicTree,
    camera: &CameraModel,
    noise: &NoiseConfig,
) -> Result<Vec<KeypointFrame>> {
    noise.validate()?;
    let keypoints = seq
        .poses
        .iter()
        .map(|p| select_keypoints(&forward_kinematics(tree, p)))
        .collect::<Result<Vec<_>>>()?;

    let mut offenders = Vec::new();
    let mut projected = Vec::with_capacity(keypoints.len());
    for (f, kp) in keypoints.iter().enumerate() {
        let mut uv = Vec::with_capacity(KEYPOINT_COUNT);
        for (k, p) in kp.positions.iter().enumerate() {
            match camera.project_point(p) {
                Some(x) => uv.push(x),
                None => offenders.push((f, k)),
            }
        }
        projected.push(uv);
    }
    if !offenders.is_empty() {
        return Err(Error::BehindCameraFrames(offenders));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let gauss = Normal::new(0.0, noise.pixel_noise_std).expect("validated std");
    projected
        .into_iter()
        .enumerate()
        .map(|(f, uv)| {
            let mut kps = [Keypoint2D::new(0.0, 0.0, 0.0); KEYPOINT_COUNT];
            for (slot, p) in kps.iter_mut().zip(uv) {
                let (du, dv) = if noise.pixel_noise_std > 0.0 {
                    (gauss.sample(&mut rng), gauss.sample(&mut rng))
                } else {
                    (0.0, 0.0)
                };
                let mut c = match noise.confidence_mode {
                    ConfidenceMode::Uniform => rng.random_range(0.0..=1.0),
                    ConfidenceMode::Fixed { value } => value,
                };
                if noise.dropout_probability > 0.0 && rng.random_bool(noise.dropout_probability) {
                    c = rng.random_range(0.0..CONFIDENCE_THRESHOLD);
                }
                *slot = Keypoint2D::new(p.x + du, p.y + dv, c);
            }
            KeypointFrame::new(f, kps)
        })
        .collect()
}

/// Parameters of the procedural walk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkParams {
    pub frames: usize,
    pub frame_rate: f64,
    /// Forward speed, m/s.
    pub speed: f64,
    /// Heading change, rad/s. Non-zero values walk a circle.
    pub turn_rate: f64,
    /// Full gait cycles per second.
    pub cadence: f64,
    /// Peak hip flexion, radians.
    pub stride: f64,
    pub initial_heading: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            frames: 120,
            frame_rate: 30.0,
            speed: 0.8,
            turn_rate: 0.0,
            cadence: 0.9,
            stride: 0.45,
            initial_heading: 0.0,
        }
    }
}

const L_HIP: usize = 1;
const R_HIP: usize = 2;
const SPINE: usize = 3;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const L_SHOULDER: usize = 16;
const R_SHOULDER: usize = 17;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

/// A smooth procedural walk starting at the rest root. The body faces −y at
/// zero heading; legs and arms swing about the local x axis.
pub fn walking_sequence(tree: &KinematicTree, params: &WalkParams) -> Result<MotionSequence> {
    if params.frames == 0 {
        return Err(Error::InvalidInput("walk needs at least one frame".into()));
    }
    let rest = tree.rest_pose();
    let dt = 1.0 / params.frame_rate;
    let mut heading = params.initial_heading;
    let mut position = rest.root_translation;
    let mut poses = Vec::with_capacity(params.frames);
    for f in 0..params.frames {
        let t = f as f64 * dt;
        let phase = 2.0 * PI * params.cadence * t;
        let swing = params.stride * phase.sin();
        let mut p = rest.clone();
        p.root_orientation = Vector3::new(0.0, 0.0, heading);
        p.root_translation = position + Vector3::new(0.0, 0.0, 0.015 * (2.0 * phase).cos());
        // Negative rotation about x swings a limb forward (toward −y).
        let mut set = |j: usize, v: Vector3<f64>| p.joint_angles[j - 1] = v;
        set(L_HIP, Vector3::new(-swing, 0.0, 0.0));
        set(R_HIP, Vector3::new(swing, 0.0, 0.0));
        set(L_KNEE, Vector3::new(0.8 * params.stride * (phase - PI / 2.0).sin().max(0.0), 0.0, 0.0));
        set(R_KNEE, Vector3::new(0.8 * params.stride * (phase + PI / 2.0).sin().max(0.0), 0.0, 0.0));
        set(SPINE, Vector3::new(-0.05, 0.0, 0.08 * phase.sin()));
        set(L_SHOULDER, Vector3::new(0.6 * swing, 0.0, -1.2));
        set(R_SHOULDER, Vector3::new(-0.6 * swing, 0.0, 1.2));
        set(L_ELBOW, Vector3::new(0.0, 0.0, -0.3));
        set(R_ELBOW, Vector3::new(0.0, 0.0, 0.3));
        poses.push(p);

        let forward = Vector3::new(heading.sin(), -heading.cos(), 0.0);
        position += forward * (params.speed * dt);
        heading += params.turn_rate * dt;
    }
    MotionSequence::new(poses, params.frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reproj::reprojection_loss;
    use crate::testutil::{demo_camera, demo_tree};
    use proptest::prelude::*;

    fn frustum() -> Frustum {
        Frustum { width: 1280.0, height: 720.0, near: 2.0, far: 8.0 }
    }

    fn short_walk() -> MotionSequence {
        walking_sequence(&demo_tree(), &WalkParams { frames: 40, speed: 0.5, ..Default::default() }).unwrap()
    }

    #[test]
    fn motion_file_round_trip() {
        let seq = short_walk();
        let mut buf = Vec::new();
        write_motion(&mut buf, &seq).unwrap();
        let back = load_motion(buf.as_slice()).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn motion_file_errors() {
        let row = |n: usize| serde_json::to_string(&vec![0.0; n]).unwrap();
        let two = format!("{{\"frame_rate\": 30}}\n{}\n{}\n", row(75), row(75));
        assert_eq!(load_motion(two.as_bytes()).unwrap().len(), 2);

        let short = format!("{{\"frame_rate\": 30}}\n{}\n{}\n", row(75), row(74));
        match load_motion(short.as_bytes()) {
            Err(Error::Schema { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_motion("".as_bytes()), Err(Error::Parse { .. })));
        let garbage = format!("{{\"frame_rate\": 30}}\n{}\n[1, 2,\n", row(75));
        match load_motion(garbage.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad_rate = format!("{{\"frame_rate\": 0}}\n{}\n", row(75));
        assert!(load_motion(bad_rate.as_bytes()).is_err());
    }

    #[test]
    fn identity_placement_is_exact() {
        let seq = short_walk();
        assert_eq!(place_sequence(&seq, &Placement::default()), seq);
    }

    #[test]
    fn randomize_is_rigid_and_deterministic() {
        let seq = short_walk();
        let cam = demo_camera();
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let (x, px) = randomize_sequence(&seq, &cam, &frustum(), &mut a).unwrap();
        let (y, py) = randomize_sequence(&seq, &cam, &frustum(), &mut b).unwrap();
        assert_eq!(px, py);
        assert_eq!(x, y);
        assert!(roots_in_frustum(&x, &cam, &frustum()));
        for t in 1..seq.len() {
            let before = (seq.poses[t].root_translation - seq.poses[t - 1].root_translation).norm();
            let after = (x.poses[t].root_translation - x.poses[t - 1].root_translation).norm();
            assert!((before - after).abs() <= 1e-12);
            assert_eq!(x.poses[t].joint_angles, seq.poses[t].joint_angles);
        }
    }

    #[test]
    fn impossible_placement_fails() {
        let seq = short_walk();
        let cam = demo_camera();
        let tiny = Frustum { width: 1.0, height: 1.0, near: 2.0, far: 2.0001 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            randomize_sequence(&seq, &cam, &tiny, &mut rng),
            Err(Error::PlacementFailure { attempts: 100 })
        ));
    }

    #[test]
    fn clean_synthesis_reprojects_exactly() {
        let tree = demo_tree();
        let cam = demo_camera();
        let seq = short_walk();
        let frames = synthesize_keypoints(&seq, &tree, &cam, &NoiseConfig::default()).unwrap();
        for (p, f) in seq.poses.iter().zip(&frames) {
            assert!(reprojection_loss(p, &tree, &cam, f).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn full_dropout_hides_everything() {
        let tree = demo_tree();
        let cam = demo_camera();
        let seq = short_walk();
        let noise = NoiseConfig { dropout_probability: 1.0, pixel_noise_std: 5.0, ..Default::default() };
        let frames = synthesize_keypoints(&seq, &tree, &cam, &noise).unwrap();
        for (p, f) in seq.poses.iter().zip(&frames) {
            assert!(f.keypoints.iter().all(|k| k.confidence < 0.1));
            assert_eq!(reprojection_loss(p, &tree, &cam, f).unwrap(), 0.0);
        }
    }

    #[test]
    fn synthesis_lists_every_offender() {
        let tree = demo_tree();
        let cam = demo_camera();
        let mut seq = short_walk();
        seq.poses[5].root_translation.y -= 10.0;
        seq.poses[9].root_translation.y -= 10.0;
        match synthesize_keypoints(&seq, &tree, &cam, &NoiseConfig::default()) {
            Err(Error::BehindCameraFrames(v)) => {
                assert_eq!(v.len(), 2 * KEYPOINT_COUNT);
                assert_eq!(v[0], (5, 0));
                assert_eq!(v[KEYPOINT_COUNT], (9, 0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pixel_noise_has_rayleigh_mean() {
        let tree = demo_tree();
        let cam = demo_camera();
        let seq = walking_sequence(&tree, &WalkParams { frames: 834, speed: 0.0, ..Default::default() }).unwrap();
        let clean = synthesize_keypoints(&seq, &tree, &cam, &NoiseConfig::default()).unwrap();
        let noisy = synthesize_keypoints(
            &seq,
            &tree,
            &cam,
            &NoiseConfig { pixel_noise_std: 2.0, rng_seed: 17, ..Default::default() },
        )
        .unwrap();
        let residuals: Vec<f64> = clean
            .iter()
            .zip(&noisy)
            .flat_map(|(a, b)| {
                a.keypoints
                    .iter()
                    .zip(&b.keypoints)
                    .map(|(p, q)| (p.position() - q.position()).norm())
                    .collect::<Vec<_>>()
            })
            .collect();
        assert!(residuals.len() >= 10_000);
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let expected = 2.0 * (PI / 2.0).sqrt();
        assert!((mean - expected).abs() <= 0.05 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn uniform_confidence_spans_unit_interval() {
        let tree = demo_tree();
        let cam = demo_camera();
        let noise = NoiseConfig { confidence_mode: ConfidenceMode::Uniform, rng_seed: 2, ..Default::default() };
        let frames = synthesize_keypoints(&short_walk(), &tree, &cam, &noise).unwrap();
        let c: Vec<f64> = frames.iter().flat_map(|f| f.keypoints.iter().map(|k| k.confidence)).collect();
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        assert!((mean - 0.5).abs() < 0.05);
        assert!(c.iter().any(|x| *x < 0.1));
    }

    #[test]
    fn noise_config_validation_and_json() {
        assert!(NoiseConfig { dropout_probability: 1.5, ..Default::default() }.validate().is_err());
        assert!(NoiseConfig { pixel_noise_std: -1.0, ..Default::default() }.validate().is_err());
        let c: NoiseConfig =
            serde_json::from_str(r#"{"pixel_noise_std": 2, "confidence_mode": {"mode": "uniform"}}"#).unwrap();
        assert_eq!(c.confidence_mode, ConfidenceMode::Uniform);
    }

    #[test]
    fn walk_advances_along_heading() {
        let tree = demo_tree();
        let seq = walking_sequence(&tree, &WalkParams { frames: 31, speed: 1.0, ..Default::default() }).unwrap();
        let d = seq.poses[30].root_translation - seq.poses[0].root_translation;
        assert!((d.y + 1.0).abs() < 1e-9 && d.x.abs() < 1e-9, "{d}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn placement_preserves_root_steps(yaw in -3.0..3.0f64, ox in -2.0..2.0f64, oy in -2.0..2.0f64) {
            let seq = short_walk();
            let placed = place_sequence(&seq, &Placement { yaw, offset: [ox, oy] });
            let r = rotation::yaw(yaw);
            for t in 1..seq.len() {
                let a = seq.poses[t].root_translation - seq.poses[t - 1].root_translation;
                let b = placed.poses[t].root_translation - placed.poses[t - 1].root_translation;
                prop_assert!((r * a - b).norm() <= 1e-12);
            }
        }
    }
}
