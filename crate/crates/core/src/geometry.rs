//! Rigid-body math, scan motion compensation and equirectangular projection.
//!
//! Frames follow the robotics convention used across the crate: x forward,
//! y left, z up. Poses map body coordinates into the world frame.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;
const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("rotation is not orthonormal with determinant +1")]
    NotOrthonormal,
    #[error("timestamp {point} precedes scan start {start}")]
    NegativeDt { point: f64, start: f64 },
    #[error("cannot project a zero-norm point")]
    ZeroNorm,
    #[error("pixel ({u}, {v}) outside a {width}x{height} panorama")]
    PixelOutOfRange { u: f64, v: f64, width: u32, height: u32 },
    #[error("panorama must be at least 2x2, got {width}x{height}")]
    PanoramaTooSmall { width: u32, height: u32 },
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Rigid transform world <- body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    /// Validating constructor.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|c| c.is_finite()) || !finite(&translation) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal);
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Planar pose: position plus heading about +z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vec3::z_axis(), yaw).matrix(),
            translation: Vec3::new(x, y, z),
        }
    }

    /// Heading of the body x axis projected on the world XY plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn position(&self) -> Vec3 {
        self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// Maps a world point into the body frame of `pose`: `Rᵀ (p − t)`.
pub fn to_local(p_world: &Vec3, pose: &Pose) -> Vec3 {
    pose.rotation.transpose() * (p_world - pose.translation)
}

fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// SO(3) exponential of a rotation vector via Rodrigues' formula, with the
/// second-order series below `1e-8` rad.
pub fn so3_exp(rotvec: &Vec3) -> Matrix3<f64> {
    let theta = rotvec.norm();
    let k = skew(rotvec);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionState {
    pub pose_at_scan_start: Pose,
    pub angular_velocity: Vec3,
    pub linear_velocity: Vec3,
    pub scan_start_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub position: Vec3,
    pub timestamp: f64,
}

/// De-skews one raw scan point into the world frame.
///
/// Computes `T_wb · exp(ω̂ Δt) · (T_bc · p) + v Δt` with `Δt = t_i − t_k`,
/// where the velocity term is added in the world frame exactly as written.
pub fn compensate_point(p: &TimedPoint, m: &MotionState, extrinsic: &Pose) -> Result<Vec3, GeometryError> {
    if !finite(&p.position) || !p.timestamp.is_finite() {
        return Err(GeometryError::NonFinite("point"));
    }
    if !finite(&m.angular_velocity) || !finite(&m.linear_velocity) || !m.scan_start_time.is_finite() {
        return Err(GeometryError::NonFinite("motion state"));
    }
    let dt = p.timestamp - m.scan_start_time;
    if dt < 0.0 {
        return Err(GeometryError::NegativeDt { point: p.timestamp, start: m.scan_start_time });
    }
    let in_body = extrinsic.apply(&p.position);
    let deskewed = so3_exp(&(m.angular_velocity * dt)) * in_body;
    Ok(m.pose_at_scan_start.apply(&deskewed) + m.linear_velocity * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanoramaSpec {
    pub width: u32,
    pub height: u32,
}

impl Default for PanoramaSpec {
    fn default() -> Self {
        Self { width: 1920, height: 640 }
    }
}

impl PanoramaSpec {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width < 2 || height < 2 {
            return Err(GeometryError::PanoramaTooSmall { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Real-valued equirectangular pixel for an egocentric point.
///
/// `atan2(0, 0)` is taken as 0, so points on the vertical axis land on
/// column `W/2`.
pub fn project_equirect(p: &Vec3, spec: &PanoramaSpec) -> Result<(f64, f64), GeometryError> {
    if !finite(p) {
        return Err(GeometryError::NonFinite("point"));
    }
    let n = p.norm();
    if n == 0.0 {
        return Err(GeometryError::ZeroNorm);
    }
    let theta = if p.x == 0.0 && p.y == 0.0 { 0.0 } else { p.y.atan2(p.x) };
    let phi = (p.z / n).clamp(-1.0, 1.0).asin();
    let w = spec.width as f64;
    let h = spec.height as f64;
    Ok((w / 2.0 * (1.0 + theta / PI), h / 2.0 * (1.0 - phi / FRAC_PI_2)))
}

/// Unit direction for a panorama pixel; inverse of [`project_equirect`].
pub fn unproject_equirect(u: f64, v: f64, spec: &PanoramaSpec) -> Result<Vec3, GeometryError> {
    let w = spec.width as f64;
    let h = spec.height as f64;
    if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
        return Err(GeometryError::PixelOutOfRange { u, v, width: spec.width, height: spec.height });
    }
    let theta = (2.0 * u / w - 1.0) * PI;
    let phi = (1.0 - 2.0 * v / h) * FRAC_PI_2;
    Ok(Vec3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin()))
}
