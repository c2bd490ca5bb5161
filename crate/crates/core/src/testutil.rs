//! Shared fixtures for tests and benchmarks. Not part of the stable API.

use crate::camera::CameraModel;
use crate::frame::{Keypoint2D, KeypointFrame};
use crate::kinematics::{forward_kinematics, select_keypoints, KinematicTree, Pose, KEYPOINT_COUNT};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn demo_tree() -> KinematicTree {
    KinematicTree::bundled()
}

/// 1280×720 camera four meters in front of the origin, slightly above hip height.
pub fn demo_camera() -> CameraModel {
    CameraModel::look_at(
        1000.0,
        1000.0,
        640.0,
        360.0,
        Vector3::new(0.4, -4.0, 1.4),
        Vector3::new(0.0, 0.0, 0.9),
    )
    .expect("valid camera")
    .with_image_size(1280.0, 720.0)
}

/// Random upright-ish pose near the origin; joint angle components are
/// uniform in `±joint_scale`.
pub fn random_pose(tree: &KinematicTree, rng: &mut impl Rng, joint_scale: f64) -> Pose {
    let mut pose = tree.rest_pose();
    pose.root_orientation = Vector3::new(
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(-3.0..3.0),
    );
    pose.root_translation += Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.1..0.1),
    );
    for a in pose.joint_angles.iter_mut() {
        *a = Vector3::new(
            rng.random_range(-joint_scale..joint_scale),
            rng.random_range(-joint_scale..joint_scale),
            rng.random_range(-joint_scale..joint_scale),
        );
    }
    pose
}

/// Exact projection of `pose`, every keypoint fully confident.
pub fn exact_frame(pose: &Pose, tree: &KinematicTree, camera: &CameraModel) -> KeypointFrame {
    noisy_frame(pose, tree, camera, &mut rand::rng(), 0.0)
}

/// Projection of `pose` with isotropic Gaussian pixel noise.
pub fn noisy_frame(
    pose: &Pose,
    tree: &KinematicTree,
    camera: &CameraModel,
    rng: &mut impl Rng,
    noise_px: f64,
) -> KeypointFrame {
    let kp = select_keypoints(&forward_kinematics(tree, pose)).expect("24 joints");
    let uv = camera.project(&kp.positions).expect("pose in front of camera");
    let mut kps = [Keypoint2D::new(0.0, 0.0, 1.0); KEYPOINT_COUNT];
    for (k, p) in kps.iter_mut().zip(uv) {
        let (du, dv) = if noise_px > 0.0 {
            let n = Normal::new(0.0, noise_px).unwrap();
            (n.sample(rng), n.sample(rng))
        } else {
            (0.0, 0.0)
        };
        *k = Keypoint2D::new(p.x + du, p.y + dv, 1.0);
    }
    KeypointFrame::new(0, kps).expect("valid frame")
}
