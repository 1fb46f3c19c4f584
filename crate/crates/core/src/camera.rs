//! Pinhole camera: depth back-projection and perspective projection.
//!
//! Pixel coordinates refer to pixel centers: pixel `(u, v)` sits at the
//! continuous position `(u, v)`. Camera frame is x right, y down, z forward.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
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

    /// Focal lengths positive, principal point inside the image.
    pub fn validate(&self) -> Result<()> {
        self.validate_focal()?;
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// The checks that still apply to crop cameras, whose principal point may
    /// legitimately fall outside the crop.
    pub(crate) fn validate_focal(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be non-zero"));
        }
        Ok(())
    }

    /// `(u, v, z)` for a point in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        if p.z <= 0.0 || !p.z.is_finite() {
            return Err(Error::BehindCamera { z: p.z });
        }
        Ok(Vector3::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        ))
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }
}

/// Free-function form of [`CameraIntrinsics::project`].
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    k.project(point)
}

/// Metric depth in meters; `0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "depth buffer has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(bad) = data.iter().find(|z| !z.is_finite() || **z < 0.0) {
            return Err(Error::invalid(format!("depth values must be finite and >= 0, got {bad}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self::from_vec(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Multiplies every depth by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::from_vec(self.width, self.height, self.data.iter().map(|z| z * s).collect())
    }
}

/// Back-projected points in row-major pixel order, one slot per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    width: usize,
    height: usize,
    points: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl PointCloud {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn point(&self, u: usize, v: usize) -> Option<&Vector3<f64>> {
        let i = v * self.width + u;
        self.valid[i].then(|| &self.points[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.points
            .iter()
            .zip(&self.valid)
            .filter_map(|(p, &ok)| ok.then_some(p))
    }
}

/// Lifts every masked pixel with positive depth to its 3D camera-frame point.
pub fn backproject(depth: &DepthMap, k: &CameraIntrinsics, mask: &Mask) -> Result<PointCloud> {
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::invalid(format!(
            "depth {}x{} does not match intrinsics {}x{}",
            depth.width, depth.height, k.width, k.height
        )));
    }
    if mask.width() != k.width || mask.height() != k.height {
        return Err(Error::invalid(format!(
            "mask {}x{} does not match intrinsics {}x{}",
            mask.width(),
            mask.height(),
            k.width,
            k.height
        )));
    }
    let n = k.width * k.height;
    let mut points = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for v in 0..k.height {
        for u in 0..k.width {
            let z = depth.get(u, v);
            if z > 0.0 && mask.get(u, v) {
                points.push(k.unproject(u as f64, v as f64, z));
                valid.push(true);
            } else {
                points.push(Vector3::zeros());
                valid.push(false);
            }
        }
    }
    Ok(PointCloud {
        width: k.width,
        height: k.height,
        points,
        valid,
    })
}
