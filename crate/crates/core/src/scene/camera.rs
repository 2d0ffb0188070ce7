use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole depth camera. Pixel `(col, row)` covers `[col, col+1) × [row, row+1)`
/// in image coordinates; the optical axis is +z, +x right, +y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
    /// Rays per pixel along each axis; pixel depth is the mean over rays.
    pub supersample: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::with_vertical_fov(32, 32, 45f64.to_radians(), 0.05, 1.5)
    }
}

impl CameraModel {
    /// Square pixels, centered principal point.
    pub fn with_vertical_fov(width: usize, height: usize, fov: f64, near: f64, far: f64) -> Self {
        let f = 0.5 * height as f64 / (0.5 * fov).tan();
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            near,
            far,
            supersample: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > 64 || self.height > 64 {
            return Err(Error::Config(format!(
                "image size {}x{} outside 1..=64",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if !(0.0 < self.near && self.near < self.far) {
            return Err(Error::Config("depth range must satisfy 0 < near < far".into()));
        }
        if self.supersample == 0 {
            return Err(Error::Config("supersample must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Image coordinates of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Closed image rectangle `[0, W] × [0, H]`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width as f64).contains(&u) && (0.0..=self.height as f64).contains(&v)
    }

    /// Camera-frame ray direction through image point `(u, v)` with unit z,
    /// so the ray parameter equals depth along the optical axis.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Maps depth in meters to `[0, 1]`.
    #[inline]
    pub fn normalize_depth(&self, d: f64) -> f64 {
        (d - self.near) / (self.far - self.near)
    }
}

/// Depth in meters, row-major; invalid pixels carry the far-plane value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension {
                context: "DepthImage::new",
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Pixels mapped to `[0, 1]` with the camera's depth range.
    pub fn normalized(&self, cam: &CameraModel) -> Vec<f64> {
        self.data.iter().map(|&d| cam.normalize_depth(d)).collect()
    }

    pub fn same_dims(&self, other: &DepthImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}
