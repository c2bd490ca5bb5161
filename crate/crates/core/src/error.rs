use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A point projected at index `index` lies at or behind the camera plane.
    #[error("point {index} is behind the camera (depth {depth:.6} m)")]
    BehindCamera { index: usize, depth: f64 },

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("insufficient observations: {visible} visible keypoints, need at least {required}")]
    InsufficientObservations { visible: usize, required: usize },

    #[error("degenerate geometry: singular value ratio {ratio:e}")]
    DegenerateGeometry { ratio: f64 },

    #[error("scene has no primitives")]
    EmptyScene,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient frames: {found}, need at least {required}")]
    InsufficientFrames { found: usize, required: usize },

    #[error("tracker has diverged; reinitialize before stepping")]
    Diverged,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at frame {frame}: {message}")]
    Schema { frame: usize, message: String },

    #[error("could not place sequence inside the camera frustum after {attempts} attempts")]
    PlacementFailure { attempts: usize },

    /// Keypoints behind the camera during synthesis, as (frame, keypoint) pairs.
    #[error("{} keypoints behind the camera, first at frame {} keypoint {}", .0.len(), .0[0].0, .0[0].1)]
    BehindCameraFrames(Vec<(usize, usize)>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
