//! Multi-step projection gradient (MPG).
//!
//! Starting from the current pose, MPG takes `K` modified gradient steps on
//! the reprojection loss against the newest keypoint frame. Each step:
//!
//! 1. computes the analytic gradient at `q^k`,
//! 2. solves a rigid-body translation correction `Δ` by linear least squares
//!    and adds it to the translation block,
//! 3. steps `q^{k+1} = q^k + Δ − s·g`, halving `s` up to
//!    [`MAX_HALVINGS`] times until the loss does not increase (when the loss
//!    guard is on).
//!
//! The root orientation is stepped along its world-frame rotation tangent,
//! `R ← exp(−s·η) R`, rather than additively in axis-angle coordinates. This
//! keeps the whole procedure equivariant under a rigid change of world frame
//! applied jointly to the body and the camera.
//!
//! The feature is `q^K − q^0` split by block, plus an orientation delta from an
//! external [`OrientationEstimator`], computed once per call.

use crate::camera::{CameraModel, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::frame::KeypointFrame;
use crate::kinematics::{
    forward_kinematics, select_keypoints, KinematicTree, Pose, JOINT_COUNT,
};
use crate::reproj::{loss_and_gradient, reprojection_loss};
use crate::rotation;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const MAX_HALVINGS: u32 = 8;
/// Singular value ratio below which the translation system is degenerate.
pub const MIN_SINGULAR_RATIO: f64 = 1e-10;
pub const MIN_REFINE_KEYPOINTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpgConfig {
    pub steps: usize,
    pub step_size: f64,
    pub loss_guard: bool,
    /// Orientation window μ in frames; the tracker keeps μ + 1 frames.
    pub window: usize,
}

impl Default for MpgConfig {
    fn default() -> Self {
        MpgConfig {
            steps: 5,
            step_size: 1e-3,
            loss_guard: true,
            window: 81,
        }
    }
}

impl MpgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("mpg.steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "mpg.step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.window < 1 {
            return Err(Error::Config("mpg.window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpgWarning {
    /// Fewer than three visible keypoints; translation correction skipped.
    InsufficientObservations,
    /// Translation system was rank deficient; correction skipped.
    DegenerateGeometry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpgFeature {
    /// Rotation from the current root to the estimator's world orientation.
    pub orientation_delta: Vector3<f64>,
    pub d_root_orientation: Vector3<f64>,
    pub d_root_translation: Vector3<f64>,
    pub d_joint_angles: [Vector3<f64>; JOINT_COUNT - 1],
    pub refined_pose: Pose,
    /// Loss at `q^0, q^1, …, q^K`.
    pub losses: Vec<f64>,
    pub warnings: Vec<MpgWarning>,
}

impl MpgFeature {
    /// Flat 78-vector `[Δr^R, ∂r^R, ∂r^T, ∂θ]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(78);
        out.extend_from_slice(self.orientation_delta.as_slice());
        out.extend_from_slice(self.d_root_orientation.as_slice());
        out.extend_from_slice(self.d_root_translation.as_slice());
        for a in &self.d_joint_angles {
            out.extend_from_slice(a.as_slice());
        }
        out
    }
}

/// Produces a camera-frame root orientation from a window of keypoint
/// frames, or abstains.
pub trait OrientationEstimator: Send + Sync {
    fn estimate(&self, window: &[KeypointFrame]) -> Option<Matrix3<f64>>;
}

/// Always abstains.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoEstimator;

impl OrientationEstimator for NoEstimator {
    fn estimate(&self, _window: &[KeypointFrame]) -> Option<Matrix3<f64>> {
        None
    }
}

/// Ground-truth world orientations perturbed by a random rotation whose
/// angle is normally distributed with standard deviation `noise_rad`.
///
/// Looks orientations up by the newest frame's `frame` index; abstains when
/// out of range. Noise is a pure function of `(seed, frame)`.
#[derive(Clone, Debug)]
pub struct OracleNoiseEstimator {
    world_orientations: Vec<Matrix3<f64>>,
    camera_rotation: Matrix3<f64>,
    noise_rad: f64,
    seed: u64,
}

impl OracleNoiseEstimator {
    pub fn new(reference: &[Pose], camera: &CameraModel, noise_rad: f64, seed: u64) -> Self {
        OracleNoiseEstimator {
            world_orientations: reference
                .iter()
                .map(|p| rotation::exp(&p.root_orientation))
                .collect(),
            camera_rotation: *camera.rotation(),
            noise_rad,
            seed,
        }
    }
}

impl OrientationEstimator for OracleNoiseEstimator {
    fn estimate(&self, window: &[KeypointFrame]) -> Option<Matrix3<f64>> {
        let frame = window.last()?.frame;
        let truth = self.world_orientations.get(frame)?;
        let noise = if self.noise_rad > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let axis = loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v / n;
                }
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            rotation::exp(&(axis * (z * self.noise_rad)))
        } else {
            Matrix3::identity()
        };
        Some(self.camera_rotation * noise * truth)
    }
}

/// Rigid translation `Δ` (meters, world frame) that best aligns the projected
/// keypoints of `pose` with `frame`.
///
/// Solves the depth-linearized system `f·(x + Δx_c) + (c − u)·(z + Δz_c) = 0`
/// per visible keypoint and image axis for `Δ_c = R Δ`, by SVD. With
/// `guard`, a `Δ` that would raise the true reprojection loss is replaced by
/// zero.
pub fn geometric_translation_refine(
    pose: &Pose,
    tree: &KinematicTree,
    camera: &CameraModel,
    frame: &KeypointFrame,
    guard: bool,
) -> Result<Vector3<f64>> {
    let visible: Vec<usize> = (0..frame.keypoints.len())
        .filter(|&i| frame.keypoints[i].is_visible())
        .collect();
    if visible.len() < MIN_REFINE_KEYPOINTS {
        return Err(Error::InsufficientObservations {
            visible: visible.len(),
            required: MIN_REFINE_KEYPOINTS,
        });
    }
    let kp3d = select_keypoints(&forward_kinematics(tree, pose))?;
    let r = camera.rotation();
    let mut a = DMatrix::zeros(2 * visible.len(), 3);
    let mut b = DVector::zeros(2 * visible.len());
    for (row, &i) in visible.iter().enumerate() {
        let pc = camera.to_camera(&kp3d.positions[i]);
        if !(pc.z > MIN_DEPTH) {
            return Err(Error::BehindCamera { index: i, depth: pc.z });
        }
        let kp = &frame.keypoints[i];
        let (du, dv) = (camera.cx - kp.u, camera.cy - kp.v);
        a[(2 * row, 0)] = camera.fx;
        a[(2 * row, 2)] = du;
        a[(2 * row + 1, 1)] = camera.fy;
        a[(2 * row + 1, 2)] = dv;
        b[2 * row] = -(camera.fx * pc.x + du * pc.z);
        b[2 * row + 1] = -(camera.fy * pc.y + dv * pc.z);
    }

    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(ratio >= MIN_SINGULAR_RATIO) {
        return Err(Error::DegenerateGeometry { ratio });
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::InvalidInput(format!("SVD solve failed: {e}")))?;
    // The system is solved for the camera-frame shift; report it in world.
    let delta = r.transpose() * Vector3::new(x[0], x[1], x[2]);

    if guard {
        let before = reprojection_loss(pose, tree, camera, frame)?;
        let mut moved = pose.clone();
        moved.root_translation += delta;
        match reprojection_loss(&moved, tree, camera, frame) {
            Ok(after) if after <= before => {}
            _ => return Ok(Vector3::zeros()),
        }
    }
    Ok(delta)
}

/// Rotation taking the current root orientation to the estimator's world
/// orientation, `(R_root)⁻¹ · R_est_world`, as axis-angle. Zero when the
/// estimator abstains.
pub fn root_orientation_delta(
    current_root: &Vector3<f64>,
    estimate_in_camera: Option<&Matrix3<f64>>,
    camera: &CameraModel,
) -> Result<Vector3<f64>> {
    let Some(est) = estimate_in_camera else {
        return Ok(Vector3::zeros());
    };
    let world = camera.rotation_to_world(est)?;
    Ok(rotation::log(&(rotation::exp(current_root).transpose() * world)))
}

fn take_step(base: &Pose, grad: &crate::reproj::LossAndGradient, step: f64) -> Pose {
    let mut q = base.clone();
    let root = rotation::exp(&(grad.root_tangent * -step)) * rotation::exp(&base.root_orientation);
    q.root_orientation = rotation::log(&root);
    q.root_translation -= grad.gradient.d_root_translation * step;
    for (a, g) in q.joint_angles.iter_mut().zip(&grad.gradient.d_joint_angles) {
        *a = rotation::canonicalize(&(*a - g * step));
    }
    q
}

/// Runs `config.steps` MPG iterations against the newest frame of `window`.
pub fn compute_mpg(
    pose: &Pose,
    tree: &KinematicTree,
    camera: &CameraModel,
    window: &[KeypointFrame],
    config: &MpgConfig,
    estimator: &dyn OrientationEstimator,
) -> Result<MpgFeature> {
    config.validate()?;
    let target = window
        .last()
        .ok_or_else(|| Error::InvalidInput("MPG needs at least one keypoint frame".into()))?;

    let orientation_delta =
        root_orientation_delta(&pose.root_orientation, estimator.estimate(window).as_ref(), camera)?;

    let mut warnings = Vec::new();
    let mut q = pose.clone();
    let mut losses = vec![reprojection_loss(&q, tree, camera, target)?];

    for _ in 0..config.steps {
        let grad = loss_and_gradient(&q, tree, camera, target)?;

        let delta = match geometric_translation_refine(&q, tree, camera, target, config.loss_guard) {
            Ok(d) => d,
            Err(Error::InsufficientObservations { .. }) => {
                push_once(&mut warnings, MpgWarning::InsufficientObservations);
                Vector3::zeros()
            }
            Err(Error::DegenerateGeometry { .. }) => {
                push_once(&mut warnings, MpgWarning::DegenerateGeometry);
                Vector3::zeros()
            }
            Err(e) => return Err(e),
        };
        let mut base = q.clone();
        base.root_translation += delta;

        q = if config.loss_guard {
            let base_loss = if delta == Vector3::zeros() {
                grad.loss
            } else {
                reprojection_loss(&base, tree, camera, target)?
            };
            let mut accepted = None;
            let mut step = config.step_size;
            for _ in 0..=MAX_HALVINGS {
                let candidate = take_step(&base, &grad, step);
                if let Ok(l) = reprojection_loss(&candidate, tree, camera, target) {
                    if l <= base_loss {
                        accepted = Some(candidate);
                        break;
                    }
                }
                step *= 0.5;
            }
            accepted.unwrap_or(base)
        } else {
            take_step(&base, &grad, config.step_size)
        };
        losses.push(reprojection_loss(&q, tree, camera, target)?);
    }

    let mut d_joint_angles = [Vector3::zeros(); JOINT_COUNT - 1];
    for (d, (a, b)) in d_joint_angles
        .iter_mut()
        .zip(q.joint_angles.iter().zip(&pose.joint_angles))
    {
        *d = a - b;
    }
    Ok(MpgFeature {
        orientation_delta,
        d_root_orientation: q.root_orientation - pose.root_orientation,
        d_root_translation: q.root_translation - pose.root_translation,
        d_joint_angles,
        refined_pose: q,
        losses,
        warnings,
    })
}

fn push_once(warnings: &mut Vec<MpgWarning>, w: MpgWarning) {
    if !warnings.contains(&w) {
        warnings.push(w);
    }
}
