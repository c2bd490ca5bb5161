//! Reprojection loss over the 12 keypoints and its gradient with respect to
//! the full 75-dimensional pose.
//!
//! The loss is the sum of per-keypoint Euclidean pixel distances over
//! keypoints at or above [`CONFIDENCE_THRESHOLD`]. It is not squared, so each
//! term is non-differentiable at zero residual; residuals shorter than
//! [`ZERO_RESIDUAL`] contribute a zero subgradient.
//!
//! The analytic gradient is a reverse pass over the kinematic tree. A change
//! `δ` in joint `a`'s axis-angle rotates every descendant about joint `a` by
//! the world-frame vector `η = G_parent · J_l(ω_a) · δ`, so
//! `∂L/∂ω_a = J_lᵀ G_parentᵀ Σ_d (p_d − p_a) × ∂L/∂p_d`.

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::frame::{KeypointFrame, CONFIDENCE_THRESHOLD};
use crate::kinematics::{
    forward_kinematics_state, KinematicTree, Pose, JOINT_COUNT, KEYPOINT_SOURCES, POSE_DIM,
};
use crate::rotation;
use nalgebra::{Matrix3, Vector3};

/// Residual norm (pixels) below which a keypoint's gradient is taken as zero.
pub const ZERO_RESIDUAL: f64 = 1e-9;

/// Derivative of the loss with respect to each pose coordinate, laid out like
/// [`Pose`].
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGradient {
    pub d_root_orientation: Vector3<f64>,
    pub d_root_translation: Vector3<f64>,
    pub d_joint_angles: [Vector3<f64>; JOINT_COUNT - 1],
}

impl PoseGradient {
    pub fn zero() -> Self {
        PoseGradient {
            d_root_orientation: Vector3::zeros(),
            d_root_translation: Vector3::zeros(),
            d_joint_angles: [Vector3::zeros(); JOINT_COUNT - 1],
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let p = Pose::from_slice(values)?;
        Ok(PoseGradient {
            d_root_orientation: p.root_orientation,
            d_root_translation: p.root_translation,
            d_joint_angles: p.joint_angles,
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        Pose {
            root_orientation: self.d_root_orientation,
            root_translation: self.d_root_translation,
            joint_angles: self.d_joint_angles,
        }
        .to_vec()
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Loss, coordinate gradient, and the root gradient expressed as a
/// world-frame rotation tangent (left perturbation about the root joint).
pub(crate) struct LossAndGradient {
    pub loss: f64,
    pub gradient: PoseGradient,
    pub root_tangent: Vector3<f64>,
}

fn check_tree(tree: &KinematicTree) -> Result<()> {
    if tree.joint_count() != JOINT_COUNT {
        return Err(Error::InvalidInput(format!(
            "reprojection needs a {JOINT_COUNT}-joint tree, got {}",
            tree.joint_count()
        )));
    }
    Ok(())
}

pub fn reprojection_loss(
    pose: &Pose,
    tree: &KinematicTree,
    camera: &CameraModel,
    frame: &KeypointFrame,
) -> Result<f64> {
    check_tree(tree)?;
    let positions = forward_kinematics_state(tree, pose).positions;
    let mut loss = 0.0;
    for (i, (kp, sources)) in frame.keypoints.iter().zip(KEYPOINT_SOURCES).enumerate() {
        if kp.confidence < CONFIDENCE_THRESHOLD {
            continue;
        }
        let point = keypoint_position(&positions, sources);
        let pc = camera.to_camera(&point);
        let uv = camera
            .project_camera_point(&pc)
            .ok_or(Error::BehindCamera { index: i, depth: pc.z })?;
        loss += (uv - kp.position()).norm();
    }
    Ok(loss)
}

fn keypoint_position(positions: &[Vector3<f64>], sources: &[usize]) -> Vector3<f64> {
    let sum: Vector3<f64> = sources.iter().map(|&j| positions[j]).sum();
    sum / sources.len() as f64
}

pub(crate) fn loss_and_gradient(
    pose: &Pose,
    tree: &KinematicTree,
    camera: &CameraModel,
    frame: &KeypointFrame,
) -> Result<LossAndGradient> {
    check_tree(tree)?;
    let fk = forward_kinematics_state(tree, pose);
    let mut loss = 0.0;
    let mut joint_grad = vec![Vector3::zeros(); JOINT_COUNT];

    for (i, (kp, sources)) in frame.keypoints.iter().zip(KEYPOINT_SOURCES).enumerate() {
        if kp.confidence < CONFIDENCE_THRESHOLD {
            continue;
        }
        let point = keypoint_position(&fk.positions, sources);
        let pc = camera.to_camera(&point);
        let uv = camera
            .project_camera_point(&pc)
            .ok_or(Error::BehindCamera { index: i, depth: pc.z })?;
        let residual = uv - kp.position();
        let norm = residual.norm();
        loss += norm;
        if norm < ZERO_RESIDUAL {
            continue;
        }
        let g_point = camera.projection_jacobian(&point).transpose() * (residual / norm);
        let share = g_point / sources.len() as f64;
        for &j in sources.iter() {
            joint_grad[j] += share;
        }
    }

    let mut gradient = PoseGradient::zero();
    gradient.d_root_translation = joint_grad.iter().sum();

    let mut root_tangent = Vector3::zeros();
    for a in 0..JOINT_COUNT {
        let pivot = fk.positions[a];
        let eta: Vector3<f64> = tree
            .descendants(a)
            .iter()
            .map(|&d| (fk.positions[d] - pivot).cross(&joint_grad[d]))
            .sum();
        let parent_rot = match tree.parent(a) {
            Some(p) => fk.globals[p],
            None => Matrix3::identity(),
        };
        let jl = rotation::left_jacobian(pose.rotation_of(a));
        let d = jl.transpose() * (parent_rot.transpose() * eta);
        if a == 0 {
            root_tangent = eta;
            gradient.d_root_orientation = d;
        } else {
            gradient.d_joint_angles[a - 1] = d;
        }
    }

    Ok(LossAndGradient {
        loss,
        gradient,
        root_tangent,
    })
}

/// Analytic gradient of [`reprojection_loss`].
pub fn reprojection_gradient(
    pose: &Pose,
    tree: &KinematicTree,
    camera: &CameraModel,
    frame: &KeypointFrame,
) -> Result<PoseGradient> {
    Ok(loss_and_gradient(pose, tree, camera, frame)?.gradient)
}

/// Central differences `(L(q + h eᵢ) − L(q − h eᵢ)) / 2h` per coordinate.
pub fn finite_difference_gradient(
    pose: &Pose,
    tree: &KinematicTree,
    camera: &CameraModel,
    frame: &KeypointFrame,
    h: f64,
) -> Result<PoseGradient> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h must be positive, got {h}")));
    }
    let base = pose.to_vec();
    let mut grad = vec![0.0; POSE_DIM];
    let mut probe = base.clone();
    for i in 0..POSE_DIM {
        probe[i] = base[i] + h;
        let plus = reprojection_loss(&Pose::from_slice(&probe)?, tree, camera, frame)?;
        probe[i] = base[i] - h;
        let minus = reprojection_loss(&Pose::from_slice(&probe)?, tree, camera, frame)?;
        probe[i] = base[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    PoseGradient::from_slice(&grad)
}
