//! Pinhole cameras posed in a shared ego frame.
//!
//! Camera frame convention: x right, y down, z forward along the optical
//! axis. The stored pose maps camera coordinates into the ego frame,
//! `p_ego = R p_cam + t`. No lens distortion is modelled.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Points closer than this along the optical axis count as behind the camera.
pub const BEHIND_CAMERA_EPS: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx_px: f64,
    pub fy_px: f64,
    pub cu_px: f64,
    pub cv_px: f64,
    pub width_px: u32,
    pub height_px: u32,
    /// Row-major rotation taking camera-frame vectors to the ego frame.
    pub rotation_cam_to_ego: [[f64; 3]; 3],
    /// Optical center in the ego frame.
    pub translation_m: [f64; 3],
}

impl CameraModel {
    pub fn new(
        focal_px: (f64, f64),
        principal_px: (f64, f64),
        image_px: (u32, u32),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let mut rot = [[0.0; 3]; 3];
        for (r, row) in rot.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = rotation[(r, c)];
            }
        }
        let cam = Self {
            fx_px: focal_px.0,
            fy_px: focal_px.1,
            cu_px: principal_px.0,
            cv_px: principal_px.1,
            width_px: image_px.0,
            height_px: image_px.1,
            rotation_cam_to_ego: rot,
            translation_m: [translation.x, translation.y, translation.z],
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Checks the model invariants; deserialized cameras should go through this.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.fx_px > 0.0 && self.fy_px > 0.0,
            "focal lengths must be positive, got ({}, {})",
            self.fx_px,
            self.fy_px
        );
        ensure!(
            self.width_px > 0 && self.height_px > 0,
            "image must be non-empty"
        );
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        ensure!(
            err <= ORTHONORMAL_TOL,
            "rotation is not orthonormal (max |RᵀR - I| = {err:e})"
        );
        ensure!(
            self.translation_m.iter().all(|t| t.is_finite())
                && [self.fx_px, self.fy_px, self.cu_px, self.cv_px]
                    .iter()
                    .all(|v| v.is_finite()),
            "camera parameters must be finite"
        );
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation_cam_to_ego[r][c])
    }

    pub fn optical_center(&self) -> Vector3<f64> {
        Vector3::from(self.translation_m)
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width_px as f64).contains(&u) && (0.0..=self.height_px as f64).contains(&v)
    }

    /// Strict on-image test used for projected centers: `[0, W) × [0, H)`.
    pub fn pixel_on_image(&self, u: f64, v: f64) -> bool {
        (0.0..self.width_px as f64).contains(&u) && (0.0..self.height_px as f64).contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit length.
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// The ray through pixel `(u, v)` expressed in the ego frame.
pub fn pixel_ray(cam: &CameraModel, u: f64, v: f64) -> Result<Ray> {
    ensure!(
        cam.contains_pixel(u, v),
        "pixel ({u}, {v}) outside {}x{} image",
        cam.width_px,
        cam.height_px
    );
    let local = Vector3::new((u - cam.cu_px) / cam.fx_px, (v - cam.cv_px) / cam.fy_px, 1.0);
    Ok(Ray {
        origin: cam.optical_center(),
        direction: (cam.rotation() * local).normalize(),
    })
}

/// How depth samples are spaced along each ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepthBinning {
    /// Gaps grow linearly with the bin index.
    #[default]
    LinearIncreasing,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthConfig {
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub bins: usize,
    #[serde(default)]
    pub binning: DepthBinning,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            d_min_m: 1.0,
            d_max_m: 61.2,
            bins: 8,
            binning: DepthBinning::LinearIncreasing,
        }
    }
}

impl DepthConfig {
    /// Number of sampled depths per ray (`bins + 1`).
    pub fn samples(&self) -> usize {
        self.bins + 1
    }

    pub fn depths(&self) -> Result<Vec<f64>> {
        match self.binning {
            DepthBinning::LinearIncreasing => lid_depth_bins(self.d_min_m, self.d_max_m, self.bins),
            DepthBinning::Uniform => uniform_depth_bins(self.d_min_m, self.d_max_m, self.bins),
        }
    }
}

fn check_depth_range(d_min: f64, d_max: f64, bins: usize) -> Result<()> {
    ensure!(
        d_min > 0.0 && d_min < d_max && d_max.is_finite(),
        "depth range must satisfy 0 < d_min < d_max, got [{d_min}, {d_max}]"
    );
    ensure!(bins >= 1, "need at least one depth bin");
    Ok(())
}

/// Linear-increasing depth discretization with `bins + 1` boundaries:
/// `d_i = d_min + (d_max - d_min) * i (i + 1) / (D (D + 1))`.
pub fn lid_depth_bins(d_min: f64, d_max: f64, bins: usize) -> Result<Vec<f64>> {
    check_depth_range(d_min, d_max, bins)?;
    let denom = (bins * (bins + 1)) as f64;
    Ok((0..=bins)
        .map(|i| {
            if i == bins {
                d_max
            } else {
                d_min + (d_max - d_min) * (i * (i + 1)) as f64 / denom
            }
        })
        .collect())
}

pub fn uniform_depth_bins(d_min: f64, d_max: f64, bins: usize) -> Result<Vec<f64>> {
    check_depth_range(d_min, d_max, bins)?;
    Ok((0..=bins)
        .map(|i| {
            if i == bins {
                d_max
            } else {
                d_min + (d_max - d_min) * i as f64 / bins as f64
            }
        })
        .collect())
}

/// Points `o + t_i d` in depth order.
pub fn sample_ray_points(ray: &Ray, depths: &[f64]) -> Vec<Vector3<f64>> {
    depths.iter().map(|&t| ray.at(t)).collect()
}

/// Axis-aligned normalization region in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi3D {
    pub min_m: [f64; 3],
    pub max_m: [f64; 3],
}

impl Default for Roi3D {
    fn default() -> Self {
        Self {
            min_m: [-61.2, -61.2, -10.0],
            max_m: [61.2, 61.2, 10.0],
        }
    }
}

impl Roi3D {
    pub fn new(min_m: [f64; 3], max_m: [f64; 3]) -> Result<Self> {
        let roi = Self { min_m, max_m };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            ensure!(
                self.min_m[axis] < self.max_m[axis],
                "roi axis {axis}: min {} must be below max {}",
                self.min_m[axis],
                self.max_m[axis]
            );
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.max_m[a] - self.min_m[a])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min_m[a] && p[a] <= self.max_m[a])
    }

    /// Maps a point in `[0, 1]³` back to metres.
    pub fn denormalize(&self, n: [f64; 3]) -> Vector3<f64> {
        let e = self.extent();
        Vector3::new(
            self.min_m[0] + n[0] * e[0],
            self.min_m[1] + n[1] * e[1],
            self.min_m[2] + n[2] * e[2],
        )
    }
}

/// Per-axis `(x - min) / (max - min)` clamped to `[0, 1]`.
pub fn normalize_points(points: &[Vector3<f64>], roi: &Roi3D) -> Vec<Vector3<f64>> {
    let e = roi.extent();
    points
        .iter()
        .map(|p| {
            Vector3::from_fn(|a, _| ((p[a] - roi.min_m[a]) / e[a]).clamp(0.0, 1.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

impl Projection {
    pub fn pixel(&self) -> Option<(f64, f64)> {
        match *self {
            Projection::Visible { u, v, .. } => Some((u, v)),
            Projection::BehindCamera => None,
        }
    }
}

/// Ego-frame point into the camera's pixel coordinates.
pub fn project_point(cam: &CameraModel, p: &Vector3<f64>) -> Projection {
    let pc = cam.rotation().transpose() * (p - cam.optical_center());
    if pc.z <= BEHIND_CAMERA_EPS {
        return Projection::BehindCamera;
    }
    Projection::Visible {
        u: cam.cu_px + cam.fx_px * pc.x / pc.z,
        v: cam.cv_px + cam.fy_px * pc.y / pc.z,
        depth: pc.z,
    }
}

/// Which geometric quantities feed the alignment networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConeContent {
    /// Direction and origin only (6 reals).
    Ray,
    /// Direction, origin, focal lengths and mean footprint (9 reals).
    #[default]
    Cone,
}

impl ConeContent {
    pub fn dim(self) -> usize {
        match self {
            ConeContent::Ray => 6,
            ConeContent::Cone => 9,
        }
    }
}

/// The frustum viewed by one token: its ray plus the angular footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeParams {
    pub direction: Vector3<f64>,
    pub origin: Vector3<f64>,
    pub fx_px: f64,
    pub fy_px: f64,
    /// `(stride / fx, stride / fy)`.
    pub footprint: (f64, f64),
}

impl ConeParams {
    pub fn to_vec(&self, content: ConeContent) -> Vec<f64> {
        let d = &self.direction;
        let o = &self.origin;
        let mut v = vec![d.x, d.y, d.z, o.x, o.y, o.z];
        if content == ConeContent::Cone {
            v.extend([
                self.fx_px,
                self.fy_px,
                0.5 * (self.footprint.0 + self.footprint.1),
            ]);
        }
        v
    }
}

pub fn frustum_cone(cam: &CameraModel, u: f64, v: f64, stride: u32) -> Result<ConeParams> {
    ensure!(stride >= 1, "stride must be at least 1");
    let ray = pixel_ray(cam, u, v)?;
    Ok(ConeParams {
        direction: ray.direction,
        origin: ray.origin,
        fx_px: cam.fx_px,
        fy_px: cam.fy_px,
        footprint: (stride as f64 / cam.fx_px, stride as f64 / cam.fy_px),
    })
}

/// Rotation for a horizontal camera looking along ego yaw `yaw_rad`
/// (ego frame: x forward, y left, z up).
pub fn outward_rotation(yaw_rad: f64) -> Matrix3<f64> {
    let (s, c) = yaw_rad.sin_cos();
    let forward = Vector3::new(c, s, 0.0);
    let right = Vector3::new(s, -c, 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    Matrix3::from_columns(&[right, down, forward])
}
