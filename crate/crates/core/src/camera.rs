//! Pinhole cameras in the COLMAP/OpenCV convention: x right, y down, z
//! forward, pixel centers at half-integer coordinates.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// One training or evaluation view.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub name: String,
    pub intrinsics: Intrinsics,
    /// Rotation part of the world-to-camera transform.
    pub rotation: Matrix3<f64>,
    /// Translation part of the world-to-camera transform.
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

const ORTHONORMAL_TOL: f64 = 1e-6;

impl CameraView {
    pub fn new(
        name: impl Into<String>,
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let view = CameraView {
            name: name.into(),
            intrinsics,
            rotation,
            translation,
            width,
            height,
        };
        view.validate()?;
        Ok(view)
    }

    /// Builds a view from a COLMAP-style world-to-camera quaternion (w, x, y, z)
    /// and translation.
    pub fn from_quaternion(
        name: impl Into<String>,
        intrinsics: Intrinsics,
        qvec: [f64; 4],
        tvec: [f64; 3],
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let q = Quaternion::new(qvec[0], qvec[1], qvec[2], qvec[3]);
        if q.norm() < 1e-12 {
            return Err(Error::Camera("zero quaternion".into()));
        }
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        Self::new(
            name,
            intrinsics,
            *rot.matrix(),
            Vector3::from(tvec),
            width,
            height,
        )
    }

    /// Camera placed at `eye` looking at `target`. `up` is the approximate
    /// world up direction; the camera's y axis points opposite to it.
    pub fn look_at(
        name: impl Into<String>,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        intrinsics: Intrinsics,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Camera("look_at: up is parallel to view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(name, intrinsics, rotation, translation, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::Camera(format!("non-positive focal length ({}, {})", k.fx, k.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("zero image dimension".into()));
        }
        if !(k.cx > 0.0 && k.cx < self.width as f64 && k.cy > 0.0 && k.cy < self.height as f64) {
            return Err(Error::Camera(format!(
                "principal point ({}, {}) outside {}x{} image",
                k.cx, k.cy, self.width, self.height
            )));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL || (self.rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Camera(format!(
                "rotation of view `{}` is not orthonormal (error {err:.3e})",
                self.name
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pixel coordinates of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some([k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy])
    }

    /// World-to-camera rotation as a COLMAP quaternion (w, x, y, z) with w >= 0.
    pub fn qvec(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
