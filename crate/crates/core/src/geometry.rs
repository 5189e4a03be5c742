//! Rotations, rigid transforms and the pinhole camera.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points closer than this to the camera plane are never rendered or projected.
pub const NEAR_PLANE: f64 = 0.01;

/// Quaternion stored as `w, x, y, z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    /// Exponential map of a rotation vector.
    pub fn exp(omega: Vec3) -> Self {
        let theta = omega.norm();
        if theta < 1e-12 {
            return Self::new(1.0, 0.5 * omega.x, 0.5 * omega.y, 0.5 * omega.z).normalized();
        }
        Self::from_axis_angle(omega, theta)
    }

    /// Rotation vector of this (unit) quaternion, angle in `[0, pi]`.
    pub fn log(self) -> Vec3 {
        let q = if self.w < 0.0 { -self } else { self };
        let v = Vec3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-12 {
            return 2.0 * v;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Unit quaternion; a zero quaternion maps to the identity.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::IDENTITY;
        }
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(self, o: Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Hamilton product `self * o`, i.e. rotate by `o` first.
    pub fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        self.to_matrix() * v
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_matrix(self) -> Mat3 {
        let Quat { w, x, y, z } = self.normalized();
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Inverse of [`Quat::to_matrix`] for a proper rotation matrix (sign is
    /// chosen with `w >= 0`).
    pub fn from_matrix(m: &Mat3) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = q.normalized();
        if q.w < 0.0 {
            -q
        } else {
            q
        }
    }
}

impl std::ops::Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Gradient of a scalar w.r.t. the components of a unit quaternion `q`,
/// given the gradient `g` w.r.t. its rotation matrix.
pub(crate) fn rotation_matrix_vjp(q: Quat, g: &Mat3) -> [f64; 4] {
    let Quat { w, x, y, z } = q;
    let dot = |d: [[f64; 3]; 3]| -> f64 {
        let mut s = 0.0;
        for (r, row) in d.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                s += g[(r, c)] * v;
            }
        }
        s
    };
    let dw = [
        [0.0, -2.0 * z, 2.0 * y],
        [2.0 * z, 0.0, -2.0 * x],
        [-2.0 * y, 2.0 * x, 0.0],
    ];
    let dx = [
        [0.0, 2.0 * y, 2.0 * z],
        [2.0 * y, -4.0 * x, -2.0 * w],
        [2.0 * z, 2.0 * w, -4.0 * x],
    ];
    let dy = [
        [-4.0 * y, 2.0 * x, 2.0 * w],
        [2.0 * x, 0.0, 2.0 * z],
        [-2.0 * w, 2.0 * z, -4.0 * y],
    ];
    let dz = [
        [-4.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * w, -4.0 * z, 2.0 * y],
        [2.0 * x, 2.0 * y, 0.0],
    ];
    [dot(dw), dot(dx), dot(dy), dot(dz)]
}

/// Pulls a gradient w.r.t. `raw / |raw|` back to `raw`.
pub(crate) fn normalize_vjp(raw: Quat, g: [f64; 4]) -> [f64; 4] {
    let n = raw.norm();
    let u = raw.normalized().to_array();
    let proj: f64 = u.iter().zip(&g).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (g[k] - u[k] * proj) / n;
    }
    out
}

/// Element of SE(3): `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Quat::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation: rotation.normalized(),
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Quat::IDENTITY, t)
    }

    /// Rotation by `q` about the fixed point `center`.
    pub fn rotation_about(center: Vec3, q: Quat) -> Self {
        let q = q.normalized();
        Self::new(q, center - q.rotate(center))
    }

    pub fn apply(&self, x: Vec3) -> Vec3 {
        self.rotation.rotate(x) + self.translation
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(&self, b: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation.mul(b.rotation),
            self.rotation.rotate(b.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let r = self.rotation.conjugate();
        RigidTransform::new(r, -r.rotate(self.translation))
    }

    pub fn renormalized(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub world_to_camera: RigidTransform,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, world_to_camera: RigidTransform) -> Result<Self> {
        let k = &intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) || !k.cx.is_finite() || !k.cy.is_finite() {
            return Err(Error::Domain(format!(
                "focal lengths must be positive, got fx={} fy={}",
                k.fx, k.fy
            )));
        }
        if k.width == 0 || k.height == 0 {
            return Err(Error::Domain("image size must be nonzero".into()));
        }
        Ok(Self {
            intrinsics,
            world_to_camera: world_to_camera.renormalized(),
        })
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image y
    /// points along `-up`).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Domain("up vector parallel to viewing direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes in world frame.
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let q = Quat::from_matrix(&r);
        let t = -(r * eye);
        Self::new(intrinsics, RigidTransform::new(q, t))
    }

    /// Simple symmetric intrinsics with horizontal field of view `fov_x` (radians).
    pub fn intrinsics_from_fov(width: usize, height: usize, fov_x: f64) -> Intrinsics {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3 {
        self.world_to_camera.inverse().translation
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.world_to_camera.rotation.to_matrix()
    }

    /// Camera-space ray through continuous pixel coordinates, scaled to unit depth.
    pub fn pixel_ray(&self, px: f64, py: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0)
    }

    /// Projects a world point to `(px, py, depth)`; points at or behind the
    /// near plane are rejected.
    pub fn project(&self, world: Vec3) -> Option<(f64, f64, f64)> {
        let p = self.world_to_camera.apply(world);
        self.project_camera_space(p)
    }

    pub fn project_camera_space(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        if !(p.z > NEAR_PLANE) {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
    }
}
