//! Rigid-body geometry: SE(3) poses, camera-frame twists, the pinhole camera
//! and look-at construction.
//!
//! A [`Pose`] maps camera coordinates into world coordinates: `rotation`
//! holds the camera axes as columns and `translation` is the camera centre.
//! Cameras follow the usual vision convention (x right, y down, z forward).

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("look-at eye and target coincide")]
    DegenerateLookAt,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Mat3::identity(), translation)
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Maps a point from the local (camera) frame into the parent (world) frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Maps a world point into the local (camera) frame.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Rotates the pose about its own z (focal) axis.
    pub fn rolled(&self, angle_rad: f64) -> Pose {
        Pose {
            rotation: self.rotation * rot_z(angle_rad),
            translation: self.translation,
        }
    }

    /// Orthonormality defect `‖RᵀR − I‖`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).norm()
    }
}

/// Linear and angular velocity, both expressed in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: Vec3::new(v[0], v[1], v[2]),
            angular: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn scaled(&self, s: f64) -> Twist {
        Twist {
            linear: self.linear * s,
            angular: self.angular * s,
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// 640×480 with RealSense-D435i-like focal lengths.
    fn default() -> Self {
        Self {
            fx: 605.0,
            fy: 605.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Pinhole projection of a camera-frame point. Returns the pixel and the depth.
    pub fn project(&self, p: &Vec3) -> Result<(Vec2, f64), GeometryError> {
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth(p.z));
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Ok((Vec2::new(u, v), p.z))
    }

    pub fn pixel_to_normalized(&self, pixel: &Vec2) -> Vec2 {
        Vec2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    pub fn normalized_to_pixel(&self, xy: &Vec2) -> Vec2 {
        Vec2::new(self.fx * xy.x + self.cx, self.fy * xy.y + self.cy)
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rodrigues' formula.
pub fn so3_exp(omega: &Vec3) -> Mat3 {
    let theta = omega.norm();
    let k = skew(omega);
    if theta < 1e-8 {
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + a * k + b * k * k
}

/// Rotation vector of `r`, with angle in `[0, π]`.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-10 {
        return w;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return w * (theta / sin);
    }
    // Near π the antisymmetric part vanishes; recover the axis from R + I.
    let b = (r + Mat3::identity()) * 0.5;
    let mut col = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(col, col)] {
            col = i;
        }
    }
    let mut axis: Vec3 = b.column(col).into_owned();
    axis /= axis.norm();
    // Resolve the sign ambiguity using whatever antisymmetric signal remains.
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Geodesic angle of a rotation matrix, radians in `[0, π]`.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    w.norm().atan2(cos)
}

/// Nearest rotation in the Frobenius sense (polar decomposition).
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Closed-form SE(3) exponential of a body twist (already multiplied by time).
pub fn se3_exp(xi: &Twist) -> Pose {
    let omega = xi.angular;
    let theta = omega.norm();
    let k = skew(&omega);
    let rotation = so3_exp(&omega);
    let v = if theta < 1e-8 {
        Mat3::identity() + 0.5 * k + k * k / 6.0
    } else {
        let t2 = theta * theta;
        Mat3::identity() + (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
    };
    Pose::new(rotation, v * xi.linear)
}

/// Moves `pose` by the camera-frame `twist` held constant for `dt` seconds.
pub fn integrate_twist(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    let delta = se3_exp(&twist.scaled(dt));
    let mut next = pose.compose(&delta);
    next.rotation = orthonormalize(&next.rotation);
    next
}

/// Camera pose at `eye` whose z-axis points at `target`, rotated by `roll`
/// about that axis. At zero roll the image "up" direction follows world +y
/// (world +x when looking along ±y).
pub fn look_at(eye: &Vec3, target: &Vec3, roll: f64) -> Result<Pose, GeometryError> {
    let dir = target - eye;
    let dist = dir.norm();
    if dist <= 1e-9 {
        return Err(GeometryError::DegenerateLookAt);
    }
    let z = dir / dist;
    // Image y points down, i.e. along world -y when possible.
    let mut down = Vec3::new(0.0, -1.0, 0.0);
    if z.cross(&down).norm() < 1e-6 {
        down = Vec3::new(-1.0, 0.0, 0.0);
    }
    let y = (down - z * z.dot(&down)).normalize();
    let x = y.cross(&z);
    let rotation = Mat3::from_columns(&[x, y, z]);
    Ok(Pose::new(rotation, *eye).rolled(roll))
}

/// Translation error in metres and geodesic rotation error in degrees.
pub fn pose_error(current: &Pose, desired: &Pose) -> (f64, f64) {
    let trans = (current.translation - desired.translation).norm();
    let rel = desired.rotation.transpose() * current.rotation;
    (trans, rotation_angle(&rel).to_degrees())
}
