//! Causal per-frame tracker driven by MPG refinements.
//!
//! Each step appends the incoming frame to a window of the last `μ + 1`
//! frames, runs MPG from the current pose against it, and adopts the refined
//! pose. There is no learned policy or physics here: the refined pose is the
//! next pose.
//!
//! Frames with no visible keypoint hold the pose. Frames whose visible
//! keypoints fall behind the camera also hold the pose and are flagged.

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::frame::KeypointFrame;
use crate::kinematics::{forward_kinematics, KinematicTree, Pose};
use crate::mpg::{compute_mpg, MpgConfig, MpgWarning, NoEstimator, OrientationEstimator};
use crate::reproj::reprojection_loss;
use crate::rotation;
use crate::scene::SceneGeometry;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

/// Iteration cap for the root clamp.
const MAX_CLAMP_ITERATIONS: usize = 16;
/// Extra clearance added when pushing the root out of geometry, meters.
const CLAMP_MARGIN: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub mpg: MpgConfig,
    pub apply_orientation_delta: bool,
    pub orientation_blend: f64,
    /// Mean per-joint deviation from the reference, meters.
    pub divergence_threshold: f64,
    pub scene_clamp: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            mpg: MpgConfig::default(),
            apply_orientation_delta: true,
            orientation_blend: 0.5,
            divergence_threshold: 0.3,
            scene_clamp: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.mpg.validate()?;
        if !(0.0..=1.0).contains(&self.orientation_blend) {
            return Err(Error::Config(format!(
                "orientation_blend must lie in [0, 1], got {}",
                self.orientation_blend
            )));
        }
        if !(self.divergence_threshold > 0.0 && self.divergence_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "divergence_threshold must be positive, got {}",
                self.divergence_threshold
            )));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let c: TrackerConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerStatus {
    Tracking,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepFlag {
    InsufficientObservations,
    DegenerateGeometry,
    /// No visible keypoint; pose held.
    Occluded,
    /// A visible keypoint projected behind the camera; pose held.
    BehindCamera,
    SceneClamped,
    Diverged,
}

impl From<MpgWarning> for StepFlag {
    fn from(w: MpgWarning) -> Self {
        match w {
            MpgWarning::InsufficientObservations => StepFlag::InsufficientObservations,
            MpgWarning::DegenerateGeometry => StepFlag::DegenerateGeometry,
        }
    }
}

/// One output record per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub frame: usize,
    pub pose: Vec<f64>,
    /// Loss of the incoming pose against this frame. `None` when it cannot
    /// be evaluated.
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    pub deviation: Option<f64>,
    pub flags: Vec<StepFlag>,
}

impl StepReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Clone, Debug)]
pub struct TrackerState {
    pub current_pose: Pose,
    /// Number of frames consumed so far.
    pub frame_index: usize,
    pub window: VecDeque<KeypointFrame>,
    pub status: TrackerStatus,
    pub deviation_history: Vec<f64>,
}

/// Mean Euclidean distance between corresponding joints of two poses.
pub fn mean_joint_deviation(tree: &KinematicTree, a: &Pose, b: &Pose) -> f64 {
    let ja = forward_kinematics(tree, a);
    let jb = forward_kinematics(tree, b);
    let sum: f64 = ja
        .positions
        .iter()
        .zip(&jb.positions)
        .map(|(p, q)| (p - q).norm())
        .sum();
    sum / ja.positions.len() as f64
}

pub struct Tracker {
    tree: KinematicTree,
    camera: CameraModel,
    scene: Option<SceneGeometry>,
    config: TrackerConfig,
    estimator: Arc<dyn OrientationEstimator>,
    state: TrackerState,
}

impl Tracker {
    pub fn new(
        first_pose: Pose,
        tree: KinematicTree,
        camera: CameraModel,
        scene: Option<SceneGeometry>,
        config: TrackerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !first_pose.is_finite() {
            return Err(Error::InvalidInput("initial pose is not finite".into()));
        }
        if scene.as_ref().is_some_and(|s| s.is_empty()) && config.scene_clamp {
            return Err(Error::EmptyScene);
        }
        let capacity = config.mpg.window + 1;
        Ok(Tracker {
            tree,
            camera,
            scene,
            config,
            estimator: Arc::new(NoEstimator),
            state: TrackerState {
                current_pose: first_pose.canonicalized(),
                frame_index: 0,
                window: VecDeque::with_capacity(capacity),
                status: TrackerStatus::Tracking,
                deviation_history: Vec::new(),
            },
        })
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn OrientationEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn pose(&self) -> &Pose {
        &self.state.current_pose
    }

    pub fn step(&mut self, frame: &KeypointFrame, reference: Option<&Pose>) -> Result<StepReport> {
        if self.state.status == TrackerStatus::Diverged {
            return Err(Error::Diverged);
        }
        let window_len = self.config.mpg.window + 1;
        if self.state.window.len() == window_len {
            self.state.window.pop_front();
        }
        self.state.window.push_back(frame.clone());
        self.state.frame_index += 1;

        let mut flags = Vec::new();
        let previous = self.state.current_pose.clone();
        let (loss_before, loss_after) = if frame.visible_count() == 0 {
            flags.push(StepFlag::Occluded);
            (Some(0.0), Some(0.0))
        } else {
            let window = self.state.window.make_contiguous();
            match compute_mpg(
                &previous,
                &self.tree,
                &self.camera,
                window,
                &self.config.mpg,
                self.estimator.as_ref(),
            ) {
                Ok(feature) => {
                    flags.extend(feature.warnings.iter().map(|w| StepFlag::from(*w)));
                    let mut pose = feature.refined_pose;
                    if self.config.apply_orientation_delta && feature.orientation_delta != nalgebra::Vector3::zeros() {
                        let target = rotation::exp(&previous.root_orientation)
                            * rotation::exp(&feature.orientation_delta);
                        let blended = rotation::slerp(
                            &rotation::exp(&pose.root_orientation),
                            &target,
                            self.config.orientation_blend,
                        );
                        pose.root_orientation = rotation::log(&blended);
                    }
                    if self.config.scene_clamp && self.clamp_root(&mut pose)? {
                        flags.push(StepFlag::SceneClamped);
                    }
                    let after = reprojection_loss(&pose, &self.tree, &self.camera, frame).ok();
                    self.state.current_pose = pose;
                    (Some(feature.losses[0]), after)
                }
                Err(Error::BehindCamera { .. }) => {
                    flags.push(StepFlag::BehindCamera);
                    (None, None)
                }
                Err(e) => return Err(e),
            }
        };

        let deviation = reference.map(|r| mean_joint_deviation(&self.tree, &self.state.current_pose, r));
        if let Some(d) = deviation {
            self.state.deviation_history.push(d);
            if d > self.config.divergence_threshold {
                self.state.status = TrackerStatus::Diverged;
                flags.push(StepFlag::Diverged);
            }
        }

        Ok(StepReport {
            frame: frame.frame,
            pose: self.state.current_pose.to_vec(),
            loss_before,
            loss_after,
            deviation,
            flags,
        })
    }

    /// Pushes the root out of penetrated primitives along the SDF gradient.
    /// Returns whether the root moved.
    fn clamp_root(&self, pose: &mut Pose) -> Result<bool> {
        let Some(scene) = &self.scene else {
            return Ok(false);
        };
        let mut moved = false;
        for _ in 0..MAX_CLAMP_ITERATIONS {
            let d = scene.sdf(&pose.root_translation)?;
            if d >= 0.0 {
                break;
            }
            let g = scene.sdf_gradient(&pose.root_translation, 1e-5)?;
            let n = g.norm();
            if !(n > 1e-9) {
                break;
            }
            pose.root_translation += g / n * (-d + CLAMP_MARGIN);
            moved = true;
        }
        Ok(moved)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub frames: usize,
    pub success: bool,
    /// Frame position (0-based within the input) at which divergence was
    /// first detected.
    pub diverged_at: Option<usize>,
    pub mean_loss_before: Option<f64>,
    pub mean_loss_after: Option<f64>,
    pub skipped_frames: usize,
}

#[derive(Clone, Debug)]
pub struct TrackResult {
    pub poses: Vec<Pose>,
    pub reports: Vec<StepReport>,
    pub summary: TrackSummary,
}

/// Runs a tracker over `frames`.
///
/// After divergence the last pose is held for the remaining frames and each
/// of their reports carries the `diverged` flag, so the output always has
/// one pose per frame.
#[allow(clippy::too_many_arguments)]
pub fn track(
    initial_pose: &Pose,
    frames: &[KeypointFrame],
    tree: &KinematicTree,
    camera: &CameraModel,
    scene: Option<&SceneGeometry>,
    config: &TrackerConfig,
    references: Option<&[Pose]>,
    estimator: Arc<dyn OrientationEstimator>,
) -> Result<TrackResult> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to track".into()));
    }
    if let Some(r) = references {
        if r.len() != frames.len() {
            return Err(Error::InvalidInput(format!(
                "{} reference poses for {} frames",
                r.len(),
                frames.len()
            )));
        }
    }
    let mut tracker = Tracker::new(
        initial_pose.clone(),
        tree.clone(),
        camera.clone(),
        scene.cloned(),
        config.clone(),
    )?
    .with_estimator(estimator);

    let mut poses = Vec::with_capacity(frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    let mut diverged_at = None;
    for (i, frame) in frames.iter().enumerate() {
        let report = if diverged_at.is_some() {
            StepReport {
                frame: frame.frame,
                pose: tracker.pose().to_vec(),
                loss_before: None,
                loss_after: None,
                deviation: None,
                flags: vec![StepFlag::Diverged],
            }
        } else {
            let r = tracker.step(frame, references.map(|r| &r[i]))?;
            if tracker.state().status == TrackerStatus::Diverged {
                diverged_at = Some(i);
            }
            r
        };
        poses.push(tracker.pose().clone());
        reports.push(report);
    }

    let mean = |f: fn(&StepReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let summary = TrackSummary {
        frames: frames.len(),
        success: diverged_at.is_none(),
        diverged_at,
        mean_loss_before: mean(|r| r.loss_before),
        mean_loss_after: mean(|r| r.loss_after),
        skipped_frames: reports
            .iter()
            .filter(|r| {
                r.flags
                    .iter()
                    .any(|f| matches!(f, StepFlag::Occluded | StepFlag::BehindCamera | StepFlag::Diverged))
            })
            .count(),
    };
    Ok(TrackResult { poses, reports, summary })
}
