use anyhow::{bail, Context, Result};
use mpgtrack_core::frame::read_frames;
use mpgtrack_core::{CameraModel, KeypointFrame, KinematicTree, Pose, SceneGeometry};
use nalgebra::Vector3;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

pub fn camera(path: &Path) -> Result<CameraModel> {
    CameraModel::load(path).with_context(|| format!("camera file {}", path.display()))
}

pub fn scene(path: &Path) -> Result<SceneGeometry> {
    SceneGeometry::load(path).with_context(|| format!("scene file {}", path.display()))
}

pub fn skeleton(path: Option<&Path>) -> Result<KinematicTree> {
    match path {
        Some(p) => KinematicTree::load(p).with_context(|| format!("skeleton file {}", p.display())),
        None => Ok(KinematicTree::bundled()),
    }
}

pub fn keypoints(path: &Path) -> Result<Vec<KeypointFrame>> {
    read_frames(open(path)?).with_context(|| format!("keypoint file {}", path.display()))
}

/// Reads poses from either a motion file (header line plus one 75-float
/// array per line) or tracker output (objects carrying a `pose` array).
pub fn poses(path: &Path) -> Result<Vec<Pose>> {
    let ctx = || format!("pose file {}", path.display());
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(ctx)?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("{}: line {}", ctx(), i + 1))?;
        let values = match &value {
            serde_json::Value::Object(map) if map.contains_key("frame_rate") && out.is_empty() => continue,
            serde_json::Value::Object(map) => map.get("pose").cloned(),
            serde_json::Value::Array(_) => Some(value.clone()),
            _ => None,
        };
        let Some(values) = values else {
            bail!("{}: line {}: expected a pose array or an object with a \"pose\" field", ctx(), i + 1);
        };
        let values: Vec<f64> =
            serde_json::from_value(values).with_context(|| format!("{}: line {}", ctx(), i + 1))?;
        out.push(Pose::from_slice(&values).with_context(|| format!("{}: line {}", ctx(), i + 1))?);
    }
    if out.is_empty() {
        bail!("{}: no poses", ctx());
    }
    Ok(out)
}

/// Per-frame point clouds, one JSON array of `[x, y, z]` per line.
pub fn clouds(path: &Path) -> Result<Vec<Vec<Vector3<f64>>>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let points: Vec<[f64; 3]> = serde_json::from_str(&line)
            .with_context(|| format!("observation file {}: line {}", path.display(), i + 1))?;
        out.push(points.into_iter().map(Vector3::from).collect());
    }
    Ok(out)
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(std::io::BufWriter::new(file))
}
