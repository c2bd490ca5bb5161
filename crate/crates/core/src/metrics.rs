//! Evaluation metrics: the MPJPE family, acceleration, one-way chamfer
//! distance and success rate. Penetration lives in [`crate::scene`].
//!
//! Distances are reported in millimeters.

use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, select_keypoints, JointSet3D, KinematicTree, Pose, JOINT_COUNT,
    KEYPOINT_COUNT, PELVIS_KEYPOINT,
};
use crate::scene::{penetration_metrics, Penetration, SceneGeometry, PENETRATION_THRESHOLD};
use crate::tracker::mean_joint_deviation;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const DEFAULT_LIMB_SAMPLES: usize = 10;
pub const SUCCESS_THRESHOLD: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpjpeFamily {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub a_mpjpe: f64,
}

fn root_index(joint_count: usize) -> Result<usize> {
    match joint_count {
        KEYPOINT_COUNT => Ok(PELVIS_KEYPOINT),
        JOINT_COUNT => Ok(0),
        n => Err(Error::InvalidInput(format!(
            "expected {KEYPOINT_COUNT} keypoints or {JOINT_COUNT} joints, got {n}"
        ))),
    }
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Similarity transform `s R x + t` minimizing `Σ |s R x_i + t − y_i|²`,
/// applied to `x`.
pub fn procrustes_align(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    if x == y {
        return y.to_vec();
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / n;
    let my = y.iter().sum::<Vector3<f64>>() / n;
    let var_x = x.iter().map(|p| (p - mx).norm_squared()).sum::<f64>() / n;
    if var_x <= f64::EPSILON {
        return vec![my; x.len()];
    }
    let cov = x
        .iter()
        .zip(y)
        .map(|(p, q)| (q - my) * (p - mx).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_x;
    let t = my - scale * r * mx;
    x.iter().map(|p| scale * r * p + t).collect()
}

/// Per-frame errors averaged over frames and joints, millimeters.
///
/// `a_mpjpe` is the raw world-frame error, `mpjpe` subtracts each frame's
/// pelvis first, `pa_mpjpe` applies a per-frame similarity alignment.
pub fn mpjpe_family(pred: &[JointSet3D], gt: &[JointSet3D]) -> Result<MpjpeFamily> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no frames to evaluate".into()));
    }
    let (mut a, mut m, mut pa) = (0.0, 0.0, 0.0);
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(Error::InvalidInput(format!(
                "frame {i}: {} predicted joints vs {} ground-truth joints",
                p.len(),
                g.len()
            )));
        }
        let root = root_index(p.len())?;
        a += mean_distance(&p.positions, &g.positions);
        let pr: Vec<_> = p.positions.iter().map(|x| x - p.positions[root]).collect();
        let gr: Vec<_> = g.positions.iter().map(|x| x - g.positions[root]).collect();
        m += mean_distance(&pr, &gr);
        pa += mean_distance(&procrustes_align(&p.positions, &g.positions), &g.positions);
    }
    let k = 1000.0 / pred.len() as f64;
    Ok(MpjpeFamily { mpjpe: m * k, pa_mpjpe: pa * k, a_mpjpe: a * k })
}

/// Mean second-difference magnitude over joints and interior frames,
/// millimeters per frame².
pub fn acceleration(joints: &[JointSet3D]) -> Result<f64> {
    if joints.len() < 3 {
        return Err(Error::InsufficientFrames { found: joints.len(), required: 3 });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in joints.windows(3) {
        if w[0].len() != w[1].len() || w[1].len() != w[2].len() {
            return Err(Error::InvalidInput("joint count changes between frames".into()));
        }
        for j in 0..w[1].len() {
            sum += (w[2].positions[j] - 2.0 * w[1].positions[j] + w[0].positions[j]).norm();
            count += 1;
        }
    }
    Ok(1000.0 * sum / count as f64)
}

type Cell = [i64; 3];

/// Uniform-grid nearest neighbour index over a fixed point set. Cells are
/// stored densely: `order[start[c]..start[c + 1]]` lists the points in cell `c`.
pub struct SpatialHash<'a> {
    points: &'a [Vector3<f64>],
    origin: Vector3<f64>,
    cell: f64,
    /// Cells per axis.
    dims: Cell,
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        assert!(!points.is_empty(), "spatial hash needs points");
        let lo = points.iter().fold(Vector3::repeat(f64::INFINITY), |a, p| a.inf(p));
        let hi = points.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
        let extent = (hi - lo).max();
        let cell = if extent > 0.0 {
            extent / (points.len() as f64).cbrt().max(1.0)
        } else {
            1.0
        };
        let top = cell_index(&lo, cell, &hi);
        let dims = [top[0] + 1, top[1] + 1, top[2] + 1];
        let mut index = SpatialHash { points, origin: lo, cell, dims, start: Vec::new(), order: Vec::new() };

        let flat: Vec<usize> = points.iter().map(|p| index.flat(cell_index(&lo, cell, p))).collect();
        let mut start = vec![0usize; (dims[0] * dims[1] * dims[2]) as usize + 1];
        for &c in &flat {
            start[c + 1] += 1;
        }
        for c in 1..start.len() {
            start[c] += start[c - 1];
        }
        let mut fill = start.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &c) in flat.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        index.start = start;
        index.order = order;
        index
    }

    fn flat(&self, c: Cell) -> usize {
        ((c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]) as usize
    }

    /// Distance from `p` to the nearest indexed point.
    pub fn nearest_distance(&self, p: &Vector3<f64>) -> f64 {
        let q = cell_index(&self.origin, self.cell, p);
        let outside = |a: usize| (-q[a]).max(q[a] - (self.dims[a] - 1)).max(0);
        let first_ring = outside(0).max(outside(1)).max(outside(2));
        let last_ring = (0..3).map(|a| q[a].abs().max((self.dims[a] - 1 - q[a]).abs())).max().unwrap_or(0);
        let mut best = f64::INFINITY;
        for r in first_ring..=last_ring {
            self.visit_ring(q, r, |i| best = best.min((p - self.points[i]).norm()));
            // Points in rings beyond `r` are at least `r` whole cells away.
            if best <= r as f64 * self.cell {
                break;
            }
        }
        best
    }

    /// Visits the points of every in-grid cell at Chebyshev distance `r` from `q`.
    fn visit_ring(&self, q: Cell, r: i64, mut f: impl FnMut(usize)) {
        let range = |a: usize| (q[a] - r).max(0)..=(q[a] + r).min(self.dims[a] - 1);
        for x in range(0) {
            for y in range(1) {
                let on_shell = (x - q[0]).abs() == r || (y - q[1]).abs() == r;
                let mut visit = |z: i64| {
                    let c = self.flat([x, y, z]);
                    self.order[self.start[c]..self.start[c + 1]].iter().for_each(|&i| f(i));
                };
                if on_shell {
                    range(2).for_each(&mut visit);
                } else {
                    for z in [q[2] - r, q[2] + r] {
                        if (0..self.dims[2]).contains(&z) {
                            visit(z);
                        }
                    }
                }
            }
        }
    }
}

fn cell_index(origin: &Vector3<f64>, cell: f64, p: &Vector3<f64>) -> Cell {
    let c = (p - origin) / cell;
    [c.x.floor() as i64, c.y.floor() as i64, c.z.floor() as i64]
}

/// Mean distance from each of `points` to its nearest `surface_samples`
/// entry, millimeters.
pub fn chamfer_one_way(points: &[Vector3<f64>], surface_samples: &[Vector3<f64>]) -> Result<f64> {
    if points.is_empty() || surface_samples.is_empty() {
        return Err(Error::InvalidInput("chamfer distance needs two non-empty sets".into()));
    }
    let index = SpatialHash::new(surface_samples);
    let sum: f64 = points.iter().map(|p| index.nearest_distance(p)).sum();
    Ok(1000.0 * sum / points.len() as f64)
}

/// Reference O(n·m) version of [`chamfer_one_way`].
pub fn chamfer_one_way_brute_force(points: &[Vector3<f64>], surface_samples: &[Vector3<f64>]) -> Result<f64> {
    if points.is_empty() || surface_samples.is_empty() {
        return Err(Error::InvalidInput("chamfer distance needs two non-empty sets".into()));
    }
    let sum: f64 = points
        .iter()
        .map(|p| {
            surface_samples
                .iter()
                .map(|s| (p - s).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(1000.0 * sum / points.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferDirection {
    /// Observed points to their nearest body sample.
    #[default]
    ObservationToBody,
    BodyToObservation,
}

pub fn chamfer_directed(
    observation: &[Vector3<f64>],
    body: &[Vector3<f64>],
    direction: ChamferDirection,
) -> Result<f64> {
    match direction {
        ChamferDirection::ObservationToBody => chamfer_one_way(observation, body),
        ChamferDirection::BodyToObservation => chamfer_one_way(body, observation),
    }
}

/// Joint positions plus `samples_per_limb` evenly spaced interior points on
/// every parent-child segment.
pub fn densify_limbs(tree: &KinematicTree, joints: &JointSet3D, samples_per_limb: usize) -> Vec<Vector3<f64>> {
    let mut out = joints.positions.clone();
    for j in 0..tree.joint_count() {
        if let Some(p) = tree.parent(j) {
            let (a, b) = (joints.positions[p], joints.positions[j]);
            for k in 1..=samples_per_limb {
                let s = k as f64 / (samples_per_limb + 1) as f64;
                out.push(a + (b - a) * s);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub rate: f64,
    /// Set when there were no sequences; `rate` is then 1.
    pub vacuous: bool,
}

/// Fraction of sequences whose deviation never exceeds `threshold` meters.
pub fn success_rate(deviation_histories: &[Vec<f64>], threshold: f64) -> SuccessRate {
    if deviation_histories.is_empty() {
        return SuccessRate { rate: 1.0, vacuous: true };
    }
    let ok = deviation_histories
        .iter()
        .filter(|h| h.iter().all(|d| *d <= threshold))
        .count();
    SuccessRate { rate: ok as f64 / deviation_histories.len() as f64, vacuous: false }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub a_mpjpe: f64,
    /// `None` for sequences shorter than three frames.
    pub accel: Option<f64>,
    pub acd: f64,
    pub chamfer_direction: ChamferDirection,
    pub success: bool,
    pub max_deviation: f64,
    pub ground_penetration: Option<Penetration>,
    pub scene_penetration: Option<Penetration>,
}

#[derive(Clone, Debug)]
pub struct EvalOptions<'a> {
    pub scene: Option<&'a SceneGeometry>,
    /// Per-frame observed point clouds. Without them the densified
    /// ground-truth body stands in for the observation.
    pub observations: Option<&'a [Vec<Vector3<f64>>]>,
    pub chamfer_direction: ChamferDirection,
    pub limb_samples: usize,
    pub success_threshold: f64,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        EvalOptions {
            scene: None,
            observations: None,
            chamfer_direction: ChamferDirection::default(),
            limb_samples: DEFAULT_LIMB_SAMPLES,
            success_threshold: SUCCESS_THRESHOLD,
        }
    }
}

/// Full metric battery for a predicted pose sequence against ground truth.
pub fn evaluate(tree: &KinematicTree, pred: &[Pose], gt: &[Pose], options: &EvalOptions) -> Result<MetricsReport> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!(
            "need equal non-empty sequences, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    if let Some(obs) = options.observations {
        if obs.len() != pred.len() {
            return Err(Error::InvalidInput(format!(
                "{} observation frames for {} poses",
                obs.len(),
                pred.len()
            )));
        }
    }
    let pred_joints: Vec<_> = pred.iter().map(|p| forward_kinematics(tree, p)).collect();
    let gt_joints: Vec<_> = gt.iter().map(|p| forward_kinematics(tree, p)).collect();
    let pred_kp = pred_joints.iter().map(select_keypoints).collect::<Result<Vec<_>>>()?;
    let gt_kp = gt_joints.iter().map(select_keypoints).collect::<Result<Vec<_>>>()?;
    let family = mpjpe_family(&pred_kp, &gt_kp)?;
    let accel = match acceleration(&pred_kp) {
        Ok(a) => Some(a),
        Err(Error::InsufficientFrames { .. }) => None,
        Err(e) => return Err(e),
    };

    let pred_body: Vec<_> = pred_joints
        .iter()
        .map(|j| densify_limbs(tree, j, options.limb_samples))
        .collect();
    let mut acd = 0.0;
    for (i, body) in pred_body.iter().enumerate() {
        let obs = match options.observations {
            Some(o) => o[i].clone(),
            None => densify_limbs(tree, &gt_joints[i], options.limb_samples),
        };
        acd += chamfer_directed(&obs, body, options.chamfer_direction)?;
    }
    acd /= pred.len() as f64;

    let deviations: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| mean_joint_deviation(tree, p, g)).collect();
    let max_deviation = deviations.iter().cloned().fold(0.0, f64::max);
    let success = success_rate(&[deviations], options.success_threshold).rate == 1.0;

    let (ground_penetration, scene_penetration) = match options.scene {
        Some(s) => {
            let r = penetration_metrics(s, &pred_body, PENETRATION_THRESHOLD)?;
            (r.ground, r.scene)
        }
        None => (None, None),
    };

    Ok(MetricsReport {
        frames: pred.len(),
        mpjpe: family.mpjpe,
        pa_mpjpe: family.pa_mpjpe,
        a_mpjpe: family.a_mpjpe,
        accel,
        acd,
        chamfer_direction: options.chamfer_direction,
        success,
        max_deviation,
        ground_penetration,
        scene_penetration,
    })
}

impl MetricsReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column plain-text table.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>, unit: &str| match v {
            Some(x) => format!("{x:.3} {unit}"),
            None => "n/a".to_string(),
        };
        let mut rows = vec![
            ("frames", self.frames.to_string()),
            ("MPJPE", fmt(Some(self.mpjpe), "mm")),
            ("PA-MPJPE", fmt(Some(self.pa_mpjpe), "mm")),
            ("A-MPJPE", fmt(Some(self.a_mpjpe), "mm")),
            ("Accel", fmt(self.accel, "mm/frame^2")),
            ("ACD", fmt(Some(self.acd), "mm")),
            ("success", self.success.to_string()),
            ("max deviation", fmt(Some(self.max_deviation), "m")),
        ];
        for (name, p) in [("ground", self.ground_penetration), ("scene", self.scene_penetration)] {
            if let Some(p) = p {
                rows.push((if name == "ground" { "ground freq" } else { "scene freq" }, format!("{:.4}", p.freq)));
                rows.push((if name == "ground" { "ground pen" } else { "scene pen" }, fmt(Some(p.pen), "mm")));
            }
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}
