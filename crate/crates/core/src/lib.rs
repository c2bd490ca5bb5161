//! Causal absolute 3D human pose tracking from streaming 2D keypoints.
//!
//! The pipeline: a fixed-limb skeleton ([`kinematics`]) is projected through
//! a pinhole [`camera`]; the reprojection loss and its analytic gradient
//! ([`reproj`]) drive the multi-step projection gradient ([`mpg`]), which the
//! [`tracker`] applies frame by frame. [`scene`] provides primitive SDFs and
//! the agent-centric occupancy sensor, [`synthdata`] generates paired
//! training/evaluation data and [`metrics`] implements the evaluation battery.

// Validation uses `!(x > 0.0)` style checks so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod error;
pub mod frame;
pub mod kinematics;
pub mod metrics;
pub mod mpg;
pub mod reproj;
pub mod rotation;
pub mod scene;
pub mod synthdata;
pub mod tracker;
#[doc(hidden)]
pub mod testutil;

pub use camera::{CameraModel, Frustum};
pub use error::{Error, Result};
pub use frame::{Keypoint2D, KeypointFrame, CONFIDENCE_THRESHOLD};
pub use kinematics::{
    build_tree, forward_kinematics, select_keypoints, JointSet3D, KinematicTree, Pose,
    JOINT_COUNT, KEYPOINT_COUNT, POSE_DIM,
};
pub use reproj::{finite_difference_gradient, reprojection_gradient, reprojection_loss, PoseGradient};
pub use mpg::{
    compute_mpg, geometric_translation_refine, root_orientation_delta, MpgConfig, MpgFeature,
    MpgWarning, NoEstimator, OracleNoiseEstimator, OrientationEstimator,
};
pub use scene::{
    occupancy_grid, penetration_metrics, OccupancyGrid, Penetration, PenetrationReport, Primitive,
    SceneGeometry, Shape, Tag,
};
pub use tracker::{
    mean_joint_deviation, track, StepFlag, StepReport, TrackResult, TrackSummary, Tracker,
    TrackerConfig, TrackerState, TrackerStatus,
};
pub use synthdata::{
    load_motion, load_motion_path, place_sequence, randomize_sequence, synthesize_keypoints,
    walking_sequence, write_motion, ConfidenceMode, MotionSequence, NoiseConfig, Placement,
    WalkParams,
};
pub use metrics::{
    acceleration, chamfer_directed, chamfer_one_way, densify_limbs, evaluate, mpjpe_family,
    success_rate, ChamferDirection, EvalOptions, MetricsReport, MpjpeFamily, SuccessRate,
};
