//! Fixed-limb skeleton, forward kinematics and the 12-keypoint subset.
//!
//! Joint numbering follows the SMPL 24-joint convention. Limb offsets are
//! taken once from a rest pose (all joint angles zero) and never change, so
//! bone lengths are pose independent.
//!
//! The 12 evaluation keypoints are, in output order:
//!
//! | slot | source joints |
//! |------|---------------|
//! | 0..=9 | 15, 16, 17, 20, 21, 22, 2, 3, 6, 7 (copied) |
//! | 10 | mean of 15 and 20 ("mid-chest") |
//! | 11 | mean of 0, 1 and 5 ("pelvis") |
//!
//! The index list is used exactly as defined. In the standard SMPL
//! numbering 15 is the head and 20 the left wrist, so slot 10 is not an
//! anatomical chest point; likewise slot 11 mixes pelvis, left hip and left
//! knee.

use crate::error::{Error, Result};
use crate::rotation;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const JOINT_COUNT: usize = 24;
pub const POSE_DIM: usize = 75;
pub const KEYPOINT_COUNT: usize = 12;
/// Slot of the pelvis keypoint in the 12-point set.
pub const PELVIS_KEYPOINT: usize = 11;

/// Source joints for each of the 12 keypoints; multi-joint entries are averaged.
pub const KEYPOINT_SOURCES: [&[usize]; KEYPOINT_COUNT] = [
    &[15],
    &[16],
    &[17],
    &[20],
    &[21],
    &[22],
    &[2],
    &[3],
    &[6],
    &[7],
    &[15, 20],
    &[0, 1, 5],
];

/// SMPL kinematic tree parents, root = -1.
pub const SMPL_PARENTS: [i64; JOINT_COUNT] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// Body configuration: root orientation, root translation and 23 local joint
/// rotations, all axis-angle in radians; translation in meters.
///
/// Flattened layout (75 scalars): `[root_orientation(3), root_translation(3),
/// joint_angles(69)]`, joint `j` (1..=23) at offset `6 + 3 (j - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub root_orientation: Vector3<f64>,
    pub root_translation: Vector3<f64>,
    pub joint_angles: [Vector3<f64>; JOINT_COUNT - 1],
}

impl Default for Pose {
    fn default() -> Self {
        Self::zero()
    }
}

impl Pose {
    pub fn zero() -> Self {
        Pose {
            root_orientation: Vector3::zeros(),
            root_translation: Vector3::zeros(),
            joint_angles: [Vector3::zeros(); JOINT_COUNT - 1],
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != POSE_DIM {
            return Err(Error::InvalidInput(format!(
                "pose has {} values, expected {POSE_DIM}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("pose value {i} is not finite")));
        }
        let v3 = |o: usize| Vector3::new(values[o], values[o + 1], values[o + 2]);
        let mut pose = Pose {
            root_orientation: v3(0),
            root_translation: v3(3),
            joint_angles: [Vector3::zeros(); JOINT_COUNT - 1],
        };
        for (j, angle) in pose.joint_angles.iter_mut().enumerate() {
            *angle = v3(6 + 3 * j);
        }
        Ok(pose)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(POSE_DIM);
        out.extend_from_slice(self.root_orientation.as_slice());
        out.extend_from_slice(self.root_translation.as_slice());
        for a in &self.joint_angles {
            out.extend_from_slice(a.as_slice());
        }
        out
    }

    /// Local rotation vector of joint `j`; joint 0 is the root orientation.
    pub fn rotation_of(&self, j: usize) -> &Vector3<f64> {
        if j == 0 {
            &self.root_orientation
        } else {
            &self.joint_angles[j - 1]
        }
    }

    /// Same pose with every axis-angle block remapped to an angle in `[0, π]`.
    pub fn canonicalized(&self) -> Self {
        let mut out = self.clone();
        out.root_orientation = rotation::canonicalize(&out.root_orientation);
        for a in out.joint_angles.iter_mut() {
            *a = rotation::canonicalize(a);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    /// Applies a world-frame rigid transform to the root: `p ↦ R p + t`.
    pub fn transformed(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.root_orientation = rotation::log(&(r * rotation::exp(&self.root_orientation)));
        out.root_translation = r * self.root_translation + t;
        out
    }
}

/// World-frame joint positions in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSet3D {
    pub positions: Vec<Vector3<f64>>,
}

impl JointSet3D {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Fixed-limb skeleton built from rest-pose joint positions.
#[derive(Clone, Debug)]
pub struct KinematicTree {
    parents: Vec<Option<usize>>,
    offsets: Vec<Vector3<f64>>,
    rest_root: Vector3<f64>,
    /// Parent-before-child ordering.
    order: Vec<usize>,
    /// Strict descendants of each joint.
    descendants: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SkeletonFile {
    joints: Vec<[f64; 3]>,
    parents: Vec<i64>,
}

impl KinematicTree {
    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    /// Child-from-parent offset in the parent's rest frame; zero for the root.
    pub fn local_offset(&self, j: usize) -> &Vector3<f64> {
        &self.offsets[j]
    }

    /// Root position of the rest pose the tree was built from.
    pub fn rest_root(&self) -> &Vector3<f64> {
        &self.rest_root
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn descendants(&self, j: usize) -> &[usize] {
        &self.descendants[j]
    }

    pub fn keypoint_map(&self) -> &'static [&'static [usize]; KEYPOINT_COUNT] {
        &KEYPOINT_SOURCES
    }

    /// Zero joint angles with the root at its rest position; FK of this pose
    /// reproduces the rest joints.
    pub fn rest_pose(&self) -> Pose {
        Pose {
            root_translation: self.rest_root,
            ..Pose::zero()
        }
    }

    /// Bone length of joint `j` to its parent.
    pub fn limb_length(&self, j: usize) -> f64 {
        self.offsets[j].norm()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SkeletonFile = serde_json::from_str(text)?;
        let joints: Vec<Vector3<f64>> = file.joints.iter().map(|j| Vector3::from(*j)).collect();
        build_tree(&joints, &file.parents)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// The bundled adult rest skeleton, z-up, feet on the ground plane.
    pub fn bundled() -> Self {
        Self::from_json_str(REST_SKELETON_JSON).expect("bundled skeleton parses")
    }
}

/// Skeleton file shipped with the crate (`data/rest_skeleton.json`).
pub const REST_SKELETON_JSON: &str = include_str!("../../../data/rest_skeleton.json");

/// Builds a fixed-limb tree from rest-pose joints and parent indices
/// (`-1` marks the root, which must be joint 0).
pub fn build_tree(rest_joints: &[Vector3<f64>], parent_indices: &[i64]) -> Result<KinematicTree> {
    let n = rest_joints.len();
    if n == 0 || n > JOINT_COUNT {
        return Err(Error::InvalidInput(format!(
            "expected 1..={JOINT_COUNT} joints, got {n}"
        )));
    }
    if parent_indices.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} joints but {} parent indices",
            parent_indices.len()
        )));
    }
    if let Some(j) = rest_joints.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput(format!("rest joint {j} is not finite")));
    }
    if parent_indices[0] != -1 {
        return Err(Error::InvalidTree("joint 0 must be the root".into()));
    }

    let mut parents = vec![None; n];
    for (j, &p) in parent_indices.iter().enumerate().skip(1) {
        if p < 0 || p as usize >= n || p as usize == j {
            return Err(Error::InvalidTree(format!("joint {j} has invalid parent {p}")));
        }
        parents[j] = Some(p as usize);
    }

    // Every joint must reach the root within n hops.
    for start in 0..n {
        let mut j = start;
        let mut hops = 0;
        while let Some(p) = parents[j] {
            j = p;
            hops += 1;
            if hops > n {
                return Err(Error::InvalidTree(format!("cycle through joint {start}")));
            }
        }
    }

    let mut children = vec![Vec::new(); n];
    for (j, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(j);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0usize];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev());
    }

    let mut descendants = vec![Vec::new(); n];
    for &j in order.iter().rev() {
        let mut sub = Vec::new();
        for &c in &children[j] {
            sub.push(c);
            sub.extend_from_slice(&descendants[c]);
        }
        descendants[j] = sub;
    }

    let offsets = (0..n)
        .map(|j| match parents[j] {
            Some(p) => rest_joints[j] - rest_joints[p],
            None => Vector3::zeros(),
        })
        .collect();

    Ok(KinematicTree {
        parents,
        offsets,
        rest_root: rest_joints[0],
        order,
        descendants,
    })
}

/// Joint positions together with each joint's global rotation.
pub(crate) struct FkState {
    pub positions: Vec<Vector3<f64>>,
    pub globals: Vec<Matrix3<f64>>,
}

pub(crate) fn forward_kinematics_state(tree: &KinematicTree, pose: &Pose) -> FkState {
    let n = tree.joint_count();
    let mut positions = vec![Vector3::zeros(); n];
    let mut globals = vec![Matrix3::identity(); n];
    for &j in &tree.order {
        let local = rotation::exp(pose.rotation_of(j));
        match tree.parents[j] {
            None => {
                positions[j] = pose.root_translation;
                globals[j] = local;
            }
            Some(p) => {
                positions[j] = positions[p] + globals[p] * tree.offsets[j];
                globals[j] = globals[p] * local;
            }
        }
    }
    FkState { positions, globals }
}

/// World joint positions for `pose`; the root sits at `root_translation`.
pub fn forward_kinematics(tree: &KinematicTree, pose: &Pose) -> JointSet3D {
    JointSet3D {
        positions: forward_kinematics_state(tree, pose).positions,
    }
}

/// Reduces 24 joints to the 12 evaluation keypoints (see module docs).
pub fn select_keypoints(joints: &JointSet3D) -> Result<JointSet3D> {
    if joints.len() != JOINT_COUNT {
        return Err(Error::InvalidInput(format!(
            "keypoint selection needs {JOINT_COUNT} joints, got {}",
            joints.len()
        )));
    }
    let positions = KEYPOINT_SOURCES
        .iter()
        .map(|sources| {
            let sum: Vector3<f64> = sources.iter().map(|&j| joints.positions[j]).sum();
            sum / sources.len() as f64
        })
        .collect();
    Ok(JointSet3D { positions })
}
