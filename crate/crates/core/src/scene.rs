//! Primitive-shape scenes, exact signed distances, the agent-centric
//! occupancy sensor and penetration statistics.
//!
//! Distances are in meters and negative inside geometry. The world is z-up.

use crate::error::{Error, Result};
use crate::rotation;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const GRID_RESOLUTION: usize = 16;
pub const GRID_EDGE: f64 = 1.8;
pub const GRID_SPACING: f64 = GRID_EDGE / GRID_RESOLUTION as f64;
pub const GRID_POINTS: usize = GRID_RESOLUTION * GRID_RESOLUTION * GRID_RESOLUTION;
pub const DEFAULT_SIGMA: f64 = 0.05;
/// Penetration deeper than this (meters) counts toward the frequency metric.
pub const PENETRATION_THRESHOLD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Axis-aligned box in its local frame.
    Box { half_extents: Vector3<f64> },
    /// Capped cylinder along the local z axis.
    Cylinder { radius: f64, half_height: f64 },
    /// Solid below the plane `n·p = offset` (local frame), `n` unit length.
    Halfspace { normal: Vector3<f64>, offset: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Ground,
    #[default]
    Furniture,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Local-to-world rotation.
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub tag: Tag,
}

impl Primitive {
    pub fn new(
        shape: Shape,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tag: Tag,
    ) -> Result<Self> {
        let shape = match shape {
            Shape::Box { half_extents } => {
                if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "box half extents must be positive, got {half_extents:?}"
                    )));
                }
                Shape::Box { half_extents }
            }
            Shape::Cylinder { radius, half_height } => {
                if !(radius > 0.0 && half_height > 0.0 && radius.is_finite() && half_height.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "cylinder dimensions must be positive, got r={radius} h={half_height}"
                    )));
                }
                Shape::Cylinder { radius, half_height }
            }
            Shape::Halfspace { normal, offset } => {
                let n = normal.norm();
                if !(n > 0.0 && n.is_finite() && offset.is_finite()) {
                    return Err(Error::InvalidInput("halfspace normal must be non-zero".into()));
                }
                Shape::Halfspace { normal: normal / n, offset }
            }
        };
        if !rotation::is_rotation(&rotation, 1e-9) {
            return Err(Error::InvalidRotation("primitive rotation is not orthonormal".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("primitive translation is not finite".into()));
        }
        Ok(Primitive { shape, rotation, translation, tag })
    }

    /// Shape at `translation` with identity rotation.
    pub fn at(shape: Shape, translation: Vector3<f64>, tag: Tag) -> Result<Self> {
        Self::new(shape, Matrix3::identity(), translation, tag)
    }

    /// Ground plane `z = height`, solid below.
    pub fn ground(height: f64) -> Self {
        Self::at(
            Shape::Halfspace { normal: Vector3::z(), offset: height },
            Vector3::zeros(),
            Tag::Ground,
        )
        .expect("valid ground plane")
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let local = self.rotation.transpose() * (p - self.translation);
        match &self.shape {
            Shape::Box { half_extents } => box_sdf(&local, half_extents),
            Shape::Cylinder { radius, half_height } => cylinder_sdf(&local, *radius, *half_height),
            Shape::Halfspace { normal, offset } => normal.dot(&local) - offset,
        }
    }

    /// Moves the primitive by the world transform `p ↦ R p + t`.
    pub fn transformed(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        Primitive {
            shape: self.shape.clone(),
            rotation: r * self.rotation,
            translation: r * self.translation + t,
            tag: self.tag,
        }
    }
}

pub fn box_sdf(p: &Vector3<f64>, half_extents: &Vector3<f64>) -> f64 {
    let q = p.abs() - half_extents;
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.max().min(0.0);
    outside + inside
}

pub fn cylinder_sdf(p: &Vector3<f64>, radius: f64, half_height: f64) -> f64 {
    let d = Vector2::new(p.xy().norm() - radius, p.z.abs() - half_height);
    let outside = d.map(|v| v.max(0.0)).norm();
    let inside = d.x.max(d.y).min(0.0);
    outside + inside
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneGeometry {
    pub primitives: Vec<Primitive>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
enum ShapeRecord {
    Box { half_extents: [f64; 3] },
    Cylinder { radius: f64, half_height: f64 },
    Halfspace { normal: [f64; 3], offset: f64 },
}

#[derive(Serialize, Deserialize)]
struct PrimitiveRecord {
    #[serde(flatten)]
    shape: ShapeRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    translation: Option<[f64; 3]>,
    #[serde(default)]
    tag: Tag,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    primitives: Vec<PrimitiveRecord>,
}

impl SceneGeometry {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        SceneGeometry { primitives }
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Minimum signed distance over all primitives.
    pub fn sdf(&self, p: &Vector3<f64>) -> Result<f64> {
        if self.primitives.is_empty() {
            return Err(Error::EmptyScene);
        }
        Ok(self.min_sdf(p, |_| true).expect("non-empty"))
    }

    /// Minimum signed distance over primitives carrying `tag`, if any do.
    pub fn sdf_tagged(&self, p: &Vector3<f64>, tag: Tag) -> Option<f64> {
        self.min_sdf(p, |prim| prim.tag == tag)
    }

    fn min_sdf(&self, p: &Vector3<f64>, keep: impl Fn(&Primitive) -> bool) -> Option<f64> {
        self.primitives
            .iter()
            .filter(|prim| keep(prim))
            .map(|prim| prim.sdf(p))
            .reduce(f64::min)
    }

    /// Central-difference SDF gradient.
    pub fn sdf_gradient(&self, p: &Vector3<f64>, h: f64) -> Result<Vector3<f64>> {
        let mut g = Vector3::zeros();
        for axis in 0..3 {
            let mut e = Vector3::zeros();
            e[axis] = h;
            g[axis] = (self.sdf(&(p + e))? - self.sdf(&(p - e))?) / (2.0 * h);
        }
        Ok(g)
    }

    pub fn transformed(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        SceneGeometry {
            primitives: self.primitives.iter().map(|p| p.transformed(r, t)).collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text)?;
        let primitives = file
            .primitives
            .into_iter()
            .map(|rec| {
                let shape = match rec.shape {
                    ShapeRecord::Box { half_extents } => Shape::Box {
                        half_extents: Vector3::from(half_extents),
                    },
                    ShapeRecord::Cylinder { radius, half_height } => {
                        Shape::Cylinder { radius, half_height }
                    }
                    ShapeRecord::Halfspace { normal, offset } => Shape::Halfspace {
                        normal: Vector3::from(normal),
                        offset,
                    },
                };
                let r = rec
                    .rotation
                    .map(|m| Matrix3::from_row_slice(&m.concat()))
                    .unwrap_or_else(Matrix3::identity);
                let t = rec.translation.map(Vector3::from).unwrap_or_else(Vector3::zeros);
                Primitive::new(shape, r, t, rec.tag)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneGeometry { primitives })
    }

    pub fn to_json_string(&self) -> String {
        let primitives = self
            .primitives
            .iter()
            .map(|p| {
                let shape = match &p.shape {
                    Shape::Box { half_extents } => ShapeRecord::Box {
                        half_extents: (*half_extents).into(),
                    },
                    Shape::Cylinder { radius, half_height } => ShapeRecord::Cylinder {
                        radius: *radius,
                        half_height: *half_height,
                    },
                    Shape::Halfspace { normal, offset } => ShapeRecord::Halfspace {
                        normal: (*normal).into(),
                        offset: *offset,
                    },
                };
                let r = &p.rotation;
                PrimitiveRecord {
                    shape,
                    rotation: Some([
                        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
                    ]),
                    translation: Some(p.translation.into()),
                    tag: p.tag,
                }
            })
            .collect();
        serde_json::to_string_pretty(&SceneFile { primitives }).expect("scene serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Thresholded occupancy of one sample: 1 inside, 0 beyond `sigma`, linear
/// in between.
pub fn occupancy_value(sdf: f64, sigma: f64) -> f64 {
    if sdf <= 0.0 {
        1.0
    } else if sdf > sigma {
        0.0
    } else {
        1.0 - sdf / sigma
    }
}

/// 16³ occupancy samples in a 1.8 m cube centered on the agent root and
/// rotated by the agent's heading (yaw only).
///
/// Samples sit at cell centers: local coordinate `−0.9 + (i + ½)·0.1125` per
/// axis. `values` is indexed `(i·16 + j)·16 + k` for local x, y, z.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub center: Vector3<f64>,
    pub heading: f64,
    pub sigma: f64,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn index(i: usize, j: usize, k: usize) -> usize {
        (i * GRID_RESOLUTION + j) * GRID_RESOLUTION + k
    }

    pub fn local_offset(i: usize, j: usize, k: usize) -> Vector3<f64> {
        let c = |n: usize| -GRID_EDGE / 2.0 + (n as f64 + 0.5) * GRID_SPACING;
        Vector3::new(c(i), c(j), c(k))
    }

    /// World positions of all samples, in `values` order.
    pub fn points(&self) -> Vec<Vector3<f64>> {
        grid_points(&self.center, self.heading)
    }
}

fn grid_points(center: &Vector3<f64>, heading: f64) -> Vec<Vector3<f64>> {
    let r = rotation::yaw(heading);
    let mut out = Vec::with_capacity(GRID_POINTS);
    for i in 0..GRID_RESOLUTION {
        for j in 0..GRID_RESOLUTION {
            for k in 0..GRID_RESOLUTION {
                out.push(center + r * OccupancyGrid::local_offset(i, j, k));
            }
        }
    }
    out
}

pub fn occupancy_grid(
    scene: &SceneGeometry,
    agent_root: &Vector3<f64>,
    agent_heading: f64,
    sigma: f64,
) -> Result<OccupancyGrid> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let values = grid_points(agent_root, agent_heading)
        .iter()
        .map(|p| scene.sdf(p).map(|d| occupancy_value(d, sigma)))
        .collect::<Result<Vec<_>>>()?;
    Ok(OccupancyGrid {
        center: *agent_root,
        heading: agent_heading,
        sigma,
        values,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Penetration {
    /// Fraction of frames with any point deeper than the threshold.
    pub freq: f64,
    /// Mean penetration depth over penetrating point-frames, millimeters.
    pub pen: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenetrationReport {
    pub all: Penetration,
    /// Present when the scene tags at least one primitive as ground.
    pub ground: Option<Penetration>,
    /// Non-ground primitives, present when there are any.
    pub scene: Option<Penetration>,
}

fn penetration_from(
    trajectories: &[Vec<Vector3<f64>>],
    threshold: f64,
    sdf: impl Fn(&Vector3<f64>) -> f64,
) -> Penetration {
    let mut deep_frames = 0usize;
    let mut depth_sum = 0.0;
    let mut depth_count = 0usize;
    for frame in trajectories {
        let mut deep = false;
        for p in frame {
            let d = sdf(p);
            if d < 0.0 {
                depth_sum += -d;
                depth_count += 1;
            }
            if d < -threshold {
                deep = true;
            }
        }
        deep_frames += deep as usize;
    }
    Penetration {
        freq: deep_frames as f64 / trajectories.len() as f64,
        pen: if depth_count > 0 { 1000.0 * depth_sum / depth_count as f64 } else { 0.0 },
    }
}

/// Penetration frequency and mean depth of `trajectories` (frames × points).
pub fn penetration_metrics(
    scene: &SceneGeometry,
    trajectories: &[Vec<Vector3<f64>>],
    threshold: f64,
) -> Result<PenetrationReport> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    if trajectories.is_empty() {
        return Err(Error::InvalidInput("no frames to measure penetration on".into()));
    }
    let has = |tag| scene.primitives.iter().any(|p| p.tag == tag);
    let all = penetration_from(trajectories, threshold, |p| {
        scene.sdf(p).expect("non-empty scene")
    });
    let ground = has(Tag::Ground).then(|| {
        penetration_from(trajectories, threshold, |p| {
            scene.sdf_tagged(p, Tag::Ground).expect("tag present")
        })
    });
    let furniture = has(Tag::Furniture).then(|| {
        penetration_from(trajectories, threshold, |p| {
            scene.sdf_tagged(p, Tag::Furniture).expect("tag present")
        })
    });
    Ok(PenetrationReport { all, ground, scene: furniture })
}
