//! Instance-guided focal token sampling.
//!
//! Targets ([`targets`]) describe, per token, which object it belongs to,
//! where the object's sides are, how close it is to the projected center and
//! what IoU its matched prediction reached. The losses ([`losses`]) score
//! per-token quality and centerness predictions against those targets, and
//! [`selection`] ranks tokens by `P = Q^α · C^(1-α)` and keeps the top ratio.

pub mod losses;
pub mod selection;
pub mod targets;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub use losses::{
    auxiliary_loss_total, centerness_focal_loss, giou_loss, l1_loss, quality_focal_loss,
    quality_focal_loss_sum, AuxComponents, AuxWeights, CenternessParams,
};
pub use selection::{
    sampling_priority, select_per_camera, select_random, select_top_ratio, QualityMaps,
    SelectionScope,
};
pub use targets::{
    center_offset_targets, gaussian_heatmap, heatmap_sigma, ltrb_targets, HeatmapCenter,
    HeatmapConfig, HeatmapResult, TokenTargets,
};

/// Axis-aligned image box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.x_min < self.x_max && self.y_min < self.y_max,
            "degenerate box ({}, {}, {}, {})",
            self.x_min,
            self.y_min,
            self.x_max,
            self.y_max
        );
        Ok(())
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x_min && u <= self.x_max && v >= self.y_min && v <= self.y_max
    }

    /// `(cx, cy, w, h)`.
    pub fn center_size(&self) -> [f64; 4] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
            self.width(),
            self.height(),
        ]
    }

    /// IoU with another box, in `[0, 1]`.
    pub fn iou(&self, other: &Box2D) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = iw * ih;
        inter / (self.area() + other.area() - inter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_basics() {
        assert!(Box2D::new(0.0, 0.0, 0.0, 1.0).is_err());
        let b = Box2D::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let c = Box2D::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert_eq!(b.iou(&c), 1.0 / 7.0);
        assert_eq!(b.iou(&b), 1.0);
        assert_eq!(b.center_size(), [1.0, 1.0, 2.0, 2.0]);
        assert!(b.contains(0.0, 2.0));
        assert!(!b.contains(2.1, 1.0));
    }
}
