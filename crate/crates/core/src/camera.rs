//! Ideal pinhole camera.
//!
//! Image convention: `u` grows rightward, `v` downward, origin at the top-left
//! pixel corner. Extrinsics map world points into the camera frame,
//! `p_c = R p_w + t`, with the camera looking down +z.

use crate::error::{Error, Result};
use crate::rotation;
use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Points with camera-frame depth at or below this are rejected.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub width: Option<f64>,
    pub height: Option<f64>,
}

/// Visible volume: image bounds plus an accepted depth interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frustum {
    pub width: f64,
    pub height: f64,
    pub near: f64,
    pub far: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    rotation: [[f64; 3]; 3],
    t: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite() && translation.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput("camera parameters must be finite".into()));
        }
        if !rotation::is_rotation(&rotation, 1e-9) {
            return Err(Error::InvalidRotation(
                "extrinsic rotation is not a proper orthonormal matrix".into(),
            ));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width: None,
            height: None,
        })
    }

    /// Camera at world position `eye` looking toward `target`, with world +z
    /// rendered as image-up.
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let up = Vector3::z();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidInput("look_at direction is vertical".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(fx, fy, cx, cy, r, -(r * eye))
    }

    pub fn with_image_size(mut self, width: f64, height: f64) -> Self {
        self.width = Some(width);
        self.height = Some(height);
        self
    }

    /// World-to-camera rotation.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Projects a camera-frame point, `None` if it is not in front of the camera.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if !(pc.z > MIN_DEPTH) {
            return None;
        }
        Some(Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.project_camera_point(&self.to_camera(p))
    }

    /// Projects world points; fails on the first point not in front of the camera.
    pub fn project(&self, points: &[Vector3<f64>]) -> Result<Vec<Vector2<f64>>> {
        points
            .iter()
            .enumerate()
            .map(|(index, p)| {
                let pc = self.to_camera(p);
                self.project_camera_point(&pc)
                    .ok_or(Error::BehindCamera { index, depth: pc.z })
            })
            .collect()
    }

    /// Jacobian of the pixel coordinates with respect to the world point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let pc = self.to_camera(p);
        let iz = 1.0 / pc.z;
        let d = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * pc.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * pc.y * iz * iz,
        );
        d * self.rotation
    }

    /// Moves a camera-frame rotation into the world frame: `Rᵀ · input`.
    pub fn rotation_to_world(&self, in_camera: &Matrix3<f64>) -> Result<Matrix3<f64>> {
        check_orthonormal(in_camera)?;
        Ok(self.rotation.transpose() * in_camera)
    }

    /// Inverse of [`rotation_to_world`](Self::rotation_to_world).
    pub fn rotation_to_camera(&self, in_world: &Matrix3<f64>) -> Result<Matrix3<f64>> {
        check_orthonormal(in_world)?;
        Ok(self.rotation * in_world)
    }

    pub fn frustum_contains(&self, point: &Vector3<f64>, frustum: &Frustum) -> bool {
        let pc = self.to_camera(point);
        if pc.z < frustum.near || pc.z > frustum.far {
            return false;
        }
        match self.project_camera_point(&pc) {
            Some(uv) => {
                (0.0..=frustum.width).contains(&uv.x) && (0.0..=frustum.height).contains(&uv.y)
            }
            None => false,
        }
    }

    /// The same physical setup seen after moving the world by `p ↦ R p + t`:
    /// camera-frame coordinates of transformed points are unchanged.
    pub fn transformed(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Result<Self> {
        let rot = self.rotation * r.transpose();
        let trans = self.translation - rot * t;
        let mut cam = Self::new(self.fx, self.fy, self.cx, self.cy, rot, trans)?;
        cam.width = self.width;
        cam.height = self.height;
        Ok(cam)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CameraFile = serde_json::from_str(text)?;
        let r = Matrix3::from_row_slice(&file.rotation.concat());
        let mut cam = Self::new(file.fx, file.fy, file.cx, file.cy, r, Vector3::from(file.t))?;
        cam.width = file.width;
        cam.height = file.height;
        Ok(cam)
    }

    pub fn to_json_string(&self) -> String {
        let r = &self.rotation;
        let file = CameraFile {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            t: [self.translation.x, self.translation.y, self.translation.z],
            width: self.width,
            height: self.height,
        };
        serde_json::to_string_pretty(&file).expect("camera serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

fn check_orthonormal(r: &Matrix3<f64>) -> Result<()> {
    let err = rotation::orthonormality_error(r);
    if !(err <= 1e-6) {
        return Err(Error::InvalidRotation(format!(
            "|RᵀR − I| = {err:e} exceeds 1e-6"
        )));
    }
    Ok(())
}
