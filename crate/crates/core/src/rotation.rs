//! SO(3) helpers for the axis-angle pose parameterization.
//!
//! Rotations are stored as axis-angle vectors (axis × angle) and composed as
//! rotation matrices. Every map has a Taylor branch below [`SMALL_ANGLE`].

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::PI;

/// Below this angle (radians) the closed forms switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric cross-product matrix, `hat(a) * b == a × b`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from axis-angle to a rotation matrix (Rodrigues).
pub fn exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0, 0.5)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of the exponential map:
/// `exp(ω + δ) ≈ exp(hat(J_l(ω) δ)) · exp(ω)` for small `δ`.
pub fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(omega);
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5, 1.0 / 6.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * b + k * k * c
}

/// Logarithm map from a rotation matrix to a canonical axis-angle vector
/// with angle in `[0, π]`.
///
/// Goes through a unit quaternion so that accuracy holds near both the
/// identity and half turns.
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    log_quaternion(q.quaternion())
}

fn log_quaternion(q: &Quaternion<f64>) -> Vector3<f64> {
    // q and -q are the same rotation; pick w >= 0 so the angle is at most π.
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < SMALL_ANGLE {
        return v * (2.0 / w);
    }
    let theta = 2.0 * s.atan2(w);
    v * (theta / s)
}

/// Remaps an axis-angle vector so its angle lies in `[0, π]`, describing the
/// same rotation.
pub fn canonicalize(omega: &Vector3<f64>) -> Vector3<f64> {
    let theta = omega.norm();
    if theta <= PI {
        return *omega;
    }
    let axis = omega / theta;
    let wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped <= PI {
        axis * wrapped
    } else {
        -axis * (2.0 * PI - wrapped)
    }
}

/// Rotation about the world vertical (+z) axis.
pub fn yaw(angle: f64) -> Matrix3<f64> {
    exp(&Vector3::new(0.0, 0.0, angle))
}

/// Heading of a rotation: yaw of its forward (-y) axis projected onto the
/// ground plane, measured from the identity heading.
pub fn heading(r: &Matrix3<f64>) -> f64 {
    let forward = r * Vector3::new(0.0, -1.0, 0.0);
    (forward.x).atan2(-forward.y)
}

/// Spherical interpolation between two rotations, `t = 0` gives `from`.
pub fn slerp(from: &Matrix3<f64>, to: &Matrix3<f64>, t: f64) -> Matrix3<f64> {
    let delta = log(&(from.transpose() * to));
    from * exp(&(delta * t))
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    r.iter().all(|x| x.is_finite())
        && orthonormality_error(r) <= tol
        && (r.determinant() - 1.0).abs() <= tol
}
