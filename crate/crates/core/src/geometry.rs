//! Pinhole camera math: projection, back-projection, rigid poses,
//! reprojection between views, and 4×4 projection matrices.
//!
//! Extrinsics are world-to-camera: `x_cam = R · x_world + t`. Camera axes
//! are x right, y down, z forward. Pixel coordinates are continuous with
//! pixel `(col, row)` spanning `[col, col + 1) × [row, row + 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Mat3, Mat4, Vec3};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal (error {0:e})")]
    NotOrthonormal(f64),
    #[error("projection matrix is singular")]
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self, GeometryError> {
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
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be nonzero");
        }
        if !(self.cx >= T::zero() && self.cx < T::from_usize_lossy(self.width)) {
            return bad("cx outside image");
        }
        if !(self.cy >= T::zero() && self.cy < T::from_usize_lossy(self.height)) {
            return bad("cy outside image");
        }
        Ok(())
    }

    /// Centered principal point with equal focal lengths.
    pub fn centered(focal: T, width: usize, height: usize) -> Result<Self, GeometryError> {
        let half = T::lit(0.5);
        Self::new(
            focal,
            focal,
            T::from_usize_lossy(width) * half,
            T::from_usize_lossy(height) * half,
            width,
            height,
        )
    }

    pub fn matrix(&self) -> Mat3<T> {
        let (z, o) = (T::zero(), T::one());
        Mat3::from_rows([[self.fx, z, self.cx], [z, self.fy, self.cy], [z, z, o]])
    }

    /// `K` padded to 4×4 with `(3,3) = 1`.
    pub fn matrix4(&self) -> Mat4<T> {
        let (z, o) = (T::zero(), T::one());
        Mat4::from_rows([
            [self.fx, z, self.cx, z],
            [z, self.fy, self.cy, z],
            [z, z, o, z],
            [z, z, z, o],
        ])
    }

    #[inline]
    pub fn contains(&self, u: T, v: T) -> bool {
        u >= T::zero()
            && v >= T::zero()
            && u < T::from_usize_lossy(self.width)
            && v < T::from_usize_lossy(self.height)
    }
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self, GeometryError> {
        let tol = T::ortho_tolerance();
        if !rotation.is_rotation(tol) {
            return Err(GeometryError::NotOrthonormal(
                rotation.orthonormality_error().to_f64_lossy(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera placed at `eye` looking towards `target`. `up` is the world
    /// direction that should appear upwards in the image (camera −y).
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self, GeometryError> {
        let z = (target - eye).normalized();
        let x = z.cross(up);
        if !(x.norm() > T::epsilon()) {
            return Err(GeometryError::NotOrthonormal(f64::NAN));
        }
        let x = x.normalized();
        let y = z.cross(x);
        let rotation = Mat3::from_rows([x.to_array(), y.to_array(), z.to_array()]);
        let translation = -(rotation.mul_vec(eye));
        Self::new(rotation, translation)
    }

    /// Camera at `center` with the given world-to-camera rotation.
    pub fn from_center(rotation: Mat3<T>, center: Vec3<T>) -> Result<Self, GeometryError> {
        let translation = -(rotation.mul_vec(center));
        Self::new(rotation, translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(p - self.translation)
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3<T> {
        -(self.rotation.transpose().mul_vec(self.translation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt.mul_vec(self.translation)),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }

    pub fn matrix4(&self) -> Mat4<T> {
        Mat4::from_rigid(&self.rotation, self.translation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<T> {
    pub intrinsics: Intrinsics<T>,
    pub pose: Pose<T>,
}

impl<T: Real> Camera<T> {
    pub fn new(intrinsics: Intrinsics<T>, pose: Pose<T>) -> Self {
        Self { intrinsics, pose }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }
}

/// Continuous image coordinate. `valid` means in front of the camera and
/// inside the image; the coordinates are never clamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord<T> {
    pub u: T,
    pub v: T,
    pub valid: bool,
}

impl<T: Real> PixelCoord<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v, valid: true }
    }
}

/// Camera-frame point to pixel coordinates. Returns `(coord, depth)`.
#[inline]
pub fn project_camera_point<T: Real>(k: &Intrinsics<T>, p: Vec3<T>) -> (PixelCoord<T>, T) {
    let depth = p.z;
    let u = k.fx * p.x / depth + k.cx;
    let v = k.fy * p.y / depth + k.cy;
    let valid = depth > T::zero() && u.is_finite() && v.is_finite() && k.contains(u, v);
    (PixelCoord { u, v, valid }, depth)
}

/// Perspective projection of a world point.
#[inline]
pub fn project<T: Real>(camera: &Camera<T>, point: Vec3<T>) -> (PixelCoord<T>, T) {
    project_camera_point(&camera.intrinsics, camera.pose.world_to_camera(point))
}

/// Lifts pixel `(u, v)` at z-depth `depth` into camera coordinates.
#[inline]
pub fn unproject_to_camera<T: Real>(k: &Intrinsics<T>, u: T, v: T, depth: T) -> Vec3<T> {
    Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth)
}

/// Lifts a pixel with z-depth into world coordinates.
///
/// The pixel is not required to lie inside the image; only the depth is
/// checked.
pub fn back_project<T: Real>(
    camera: &Camera<T>,
    coord: PixelCoord<T>,
    depth: T,
) -> Result<Vec3<T>, GeometryError> {
    if !(depth > T::zero()) {
        return Err(GeometryError::NonPositiveDepth(depth.to_f64_lossy()));
    }
    let p = unproject_to_camera(&camera.intrinsics, coord.u, coord.v, depth);
    Ok(camera.pose.camera_to_world(p))
}

/// Result of moving a pixel from one view into another.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reprojection<T> {
    pub coord: PixelCoord<T>,
    /// z-depth of the point in the target camera.
    pub depth: T,
}

/// `Π(K_j T_j T_i⁻¹ K_i⁻¹ (u, v, D))`: back-project from `cam_i`, move into
/// `cam_j`, and project with perspective division.
///
/// A non-positive source depth yields an invalid coordinate.
pub fn reproject<T: Real>(
    coord: PixelCoord<T>,
    depth: T,
    cam_i: &Camera<T>,
    cam_j: &Camera<T>,
) -> Reprojection<T> {
    let p_i = unproject_to_camera(&cam_i.intrinsics, coord.u, coord.v, depth);
    let world = cam_i.pose.camera_to_world(p_i);
    let p_j = cam_j.pose.world_to_camera(world);
    let (mut c, d) = project_camera_point(&cam_j.intrinsics, p_j);
    if !(depth > T::zero()) {
        c.valid = false;
    }
    Reprojection { coord: c, depth: d }
}

/// Per-frame 4×4 projection matrix `K₄ · [R t; 0 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionMatrix<T> {
    pub mat: Mat4<T>,
}

impl<T: Real> ProjectionMatrix<T> {
    pub fn new(mat: Mat4<T>) -> Result<Self, GeometryError> {
        if !(mat.det().abs() > T::lit(1e-12)) {
            return Err(GeometryError::Singular);
        }
        Ok(Self { mat })
    }

    pub fn from_camera(camera: &Camera<T>) -> Self {
        Self {
            mat: camera.intrinsics.matrix4() * camera.pose.matrix4(),
        }
    }

    pub fn identity() -> Self {
        Self {
            mat: Mat4::identity(),
        }
    }

    /// Divides by `|m₃₃|`, or by the Frobenius norm when that entry is ~0.
    pub fn normalized(&self) -> Self {
        let corner = self.mat[(3, 3)].abs();
        let scale = if corner > T::lit(1e-9) {
            corner
        } else {
            self.mat.frobenius_norm()
        };
        Self {
            mat: self.mat.scale(T::one() / scale),
        }
    }

    pub fn inverse(&self) -> Result<Mat4<T>, GeometryError> {
        if !(self.mat.det().abs() > T::lit(1e-12)) {
            return Err(GeometryError::Singular);
        }
        self.mat.inverse().ok_or(GeometryError::Singular)
    }
}

/// `P₁ · P₂⁻¹`, the projective transform relating two views.
pub fn relative_projection<T: Real>(
    p1: &ProjectionMatrix<T>,
    p2: &ProjectionMatrix<T>,
) -> Result<Mat4<T>, GeometryError> {
    Ok(p1.mat * p2.inverse()?)
}

/// JSON form `{fx,fy,cx,cy,width,height,R:[9],t:[3]}`, row-major `R`,
/// world-to-camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub t: Vec<f64>,
}

impl From<&Camera<f64>> for CameraJson {
    fn from(c: &Camera<f64>) -> Self {
        let k = &c.intrinsics;
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            r: c.pose.rotation.to_row_vec(),
            t: c.pose.translation.to_array().to_vec(),
        }
    }
}

impl TryFrom<&CameraJson> for Camera<f64> {
    type Error = GeometryError;

    fn try_from(j: &CameraJson) -> Result<Self, GeometryError> {
        if j.r.len() != 9 || j.t.len() != 3 {
            return Err(GeometryError::InvalidIntrinsics(
                "R needs 9 entries and t needs 3".into(),
            ));
        }
        let k = Intrinsics::new(j.fx, j.fy, j.cx, j.cy, j.width, j.height)?;
        let pose = Pose::new(
            Mat3::from_row_slice(&j.r),
            Vec3::new(j.t[0], j.t[1], j.t[2]),
        )?;
        Ok(Camera::new(k, pose))
    }
}

impl Serialize for Camera<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CameraJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Camera<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = CameraJson::deserialize(d)?;
        Camera::try_from(&j).map_err(serde::de::Error::custom)
    }
}
