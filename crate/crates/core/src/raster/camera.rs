use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camera description as stored in JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
}

/// Pinhole camera looking down +z in camera space, x right, y down. The
/// principal point is the image center; `fov` is vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    position: Vector3<f64>,
    /// Rows are the right, down and forward axes in world space.
    world_to_cam: Matrix3<f64>,
    fov_y: f64,
    width: usize,
    height: usize,
    focal: f64,
}

impl Camera {
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::input(format!("fov_deg must be in (0, 180), got {fov_deg}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::input("camera width and height must be at least 1"));
        }
        let all_finite = position.iter().chain(target.iter()).chain(up.iter()).all(|v| v.is_finite());
        let fwd = target - position;
        if !all_finite || fwd.norm() == 0.0 {
            return Err(Error::input("camera position and look_at must be finite and distinct"));
        }
        let fwd = fwd.normalize();
        let right = fwd.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::input("camera up vector is parallel to the view direction"));
        }
        let right = right.normalize();
        let down = fwd.cross(&right);
        let world_to_cam = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let fov_y = fov_deg.to_radians();
        let focal = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Ok(Camera { position, world_to_cam, fov_y, width, height, focal })
    }

    pub fn from_spec(s: &CameraSpec) -> Result<Self> {
        Camera::look_at(
            Vector3::from(s.position),
            Vector3::from(s.look_at),
            Vector3::from(s.up),
            s.fov_deg,
            s.width as usize,
            s.height as usize,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: CameraSpec = serde_json::from_str(&text)?;
        Camera::from_spec(&spec)
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn world_to_cam(&self) -> &Matrix3<f64> {
        &self.world_to_cam
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fov_y(&self) -> f64 {
        self.fov_y
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (0.5 * self.width as f64, 0.5 * self.height as f64)
    }

    /// Same pose with the focal length multiplied by `k`.
    pub fn zoomed(&self, k: f64) -> Camera {
        let mut c = self.clone();
        c.focal *= k;
        c.fov_y = 2.0 * (0.5 * self.height as f64 / c.focal).atan();
        c
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_cam * (p - self.position)
    }

    /// Pixel coordinates (continuous, pixel centers at `i + 0.5`) and depth.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let (cx, cy) = self.principal_point();
        Some((self.focal * c.x / c.z + cx, self.focal * c.y / c.z + cy, c.z))
    }

    /// Camera-space point at depth `z` behind pixel position `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let (cx, cy) = self.principal_point();
        Vector3::new((u - cx) / self.focal * z, (v - cy) / self.focal * z, z)
    }

    /// Unit direction from `p` toward the camera.
    pub fn direction_from(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = self.position - p;
        let n = d.norm();
        if n > 0.0 {
            d / n
        } else {
            -self.world_to_cam.row(2).transpose()
        }
    }
}
