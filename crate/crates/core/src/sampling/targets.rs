//! Per-token supervision targets: side distances, Gaussian center heatmap,
//! center offsets and IoU quality.

use serde::{Deserialize, Serialize};

use super::Box2D;
use crate::error::{ensure, Result};

/// Distances from `(u, v)` to the left, top, right and bottom sides, each
/// divided by `normalizer`.
pub fn ltrb_targets(b: &Box2D, (u, v): (f64, f64), normalizer: f64) -> [f64; 4] {
    [
        (u - b.x_min) / normalizer,
        (v - b.y_min) / normalizer,
        (b.x_max - u) / normalizer,
        (b.y_max - v) / normalizer,
    ]
}

/// Size adaptation for the center heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    /// Radius as a fraction of the object's smallest side, in tokens.
    pub radius_fraction: f64,
    /// Lower bound on the Gaussian's variance, in tokens².
    pub min_delta: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            radius_fraction: 0.15,
            min_delta: 0.25,
        }
    }
}

/// Variance `δ` for a center whose distances to the box sides are `ltrb`
/// (token units). The smallest side is taken as twice the smallest distance.
pub fn heatmap_sigma(ltrb_tokens: [f64; 4], cfg: &HeatmapConfig) -> f64 {
    let min_dist = ltrb_tokens.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    (cfg.radius_fraction * 2.0 * min_dist).powi(2).max(cfg.min_delta)
}

/// `exp(-d² / 2δ)`.
pub fn gaussian_value(dist2: f64, delta: f64) -> f64 {
    (-dist2 / (2.0 * delta)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCenter {
    /// Projected 2.5D center in pixels.
    pub center_px: (f64, f64),
    pub bbox: Box2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapResult {
    /// Row-major, one value per token.
    pub values: Vec<f64>,
    /// Centers falling outside the grid.
    pub skipped: usize,
}

/// The token cell containing pixel `(u, v)`, if it is on the grid.
pub fn token_of_pixel(
    (u, v): (f64, f64),
    stride: u32,
    width: usize,
    height: usize,
) -> Option<(usize, usize)> {
    let s = stride as f64;
    let (col, row) = ((u / s).floor(), (v / s).floor());
    if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
        return None;
    }
    Some((col as usize, row as usize))
}

/// Gaussian heatmap over a `width × height` token grid; overlapping
/// objects combine by elementwise maximum.
pub fn gaussian_heatmap(
    centers: &[HeatmapCenter],
    width: usize,
    height: usize,
    stride: u32,
    cfg: &HeatmapConfig,
) -> HeatmapResult {
    let mut values = vec![0.0f64; width * height];
    let mut skipped = 0;
    let s = stride as f64;
    for c in centers {
        let Some((cx, cy)) = token_of_pixel(c.center_px, stride, width, height) else {
            skipped += 1;
            continue;
        };
        let ltrb = ltrb_targets(&c.bbox, c.center_px, s);
        let delta = heatmap_sigma(ltrb, cfg);
        for row in 0..height {
            for col in 0..width {
                let dx = col as f64 - cx as f64;
                let dy = row as f64 - cy as f64;
                let h = gaussian_value(dx * dx + dy * dy, delta);
                let slot = &mut values[row * width + col];
                *slot = (*slot).max(h);
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} heatmap center(s) fell outside the {width}x{height} grid");
    }
    HeatmapResult { values, skipped }
}

/// Token cell `(col, row)` containing the center and the center's
/// fractional position inside it, in `[0, 1)²`.
pub fn center_offset_targets(
    center_px: (f64, f64),
    stride: u32,
    width: usize,
    height: usize,
) -> Option<((usize, usize), [f64; 2])> {
    let (col, row) = token_of_pixel(center_px, stride, width, height)?;
    let s = stride as f64;
    let du = center_px.0 / s - col as f64;
    let dv = center_px.1 / s - row as f64;
    Some(((col, row), [du.clamp(0.0, next_below_one()), dv.clamp(0.0, next_below_one())]))
}

fn next_below_one() -> f64 {
    f64::from_bits(1f64.to_bits() - 1)
}

/// Supervision for every token of one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTargets {
    pub width: usize,
    pub height: usize,
    /// Class of the object owning each token, `None` for background.
    pub class: Vec<Option<usize>>,
    /// Index (into the scene's object list) of the owning object.
    pub owner: Vec<Option<usize>>,
    /// Normalized side distances; zero for background tokens.
    pub ltrb: Vec<[f64; 4]>,
    pub heatmap: Vec<f64>,
    /// Fractional center position, set only on the token containing a center.
    pub offset: Vec<Option<[f64; 2]>>,
    /// IoU of the matched prediction, zero for unmatched tokens.
    pub iou: Vec<f64>,
}

impl TokenTargets {
    pub fn background(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            class: vec![None; n],
            owner: vec![None; n],
            ltrb: vec![[0.0; 4]; n],
            heatmap: vec![0.0; n],
            offset: vec![None; n],
            iou: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        ensure!(
            [
                self.class.len(),
                self.owner.len(),
                self.ltrb.len(),
                self.heatmap.len(),
                self.offset.len(),
                self.iou.len()
            ]
            .iter()
            .all(|&l| l == n),
            "target arrays must all have {n} entries"
        );
        for t in 0..n {
            if self.class[t].is_some() {
                ensure!(
                    self.ltrb[t].iter().all(|&x| x >= 0.0),
                    "foreground token {t} has negative side distance"
                );
            } else {
                ensure!(self.iou[t] == 0.0, "background token {t} has nonzero IoU target");
            }
            ensure!((0.0..=1.0).contains(&self.heatmap[t]), "heatmap out of range at {t}");
            ensure!((0.0..=1.0).contains(&self.iou[t]), "IoU target out of range at {t}");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ltrb_examples() {
        let sq = Box2D::new(0.0, 0.0, 8.0, 8.0).unwrap();
        assert_eq!(ltrb_targets(&sq, (4.0, 4.0), 8.0), [0.5; 4]);
        let b = Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(ltrb_targets(&b, (2.0, 8.0), 1.0), [2.0, 8.0, 8.0, 2.0]);
        assert_eq!(ltrb_targets(&b, (0.0, 5.0), 3.0)[0], 0.0);
    }

    #[test]
    fn sigma_floor_and_growth() {
        let cfg = HeatmapConfig::default();
        assert_eq!(heatmap_sigma([0.0, 1.0, 1.0, 1.0], &cfg), 0.25);
        let big = heatmap_sigma([10.0, 12.0, 10.0, 12.0], &cfg);
        assert_abs_diff_eq!(big, 9.0, epsilon = 1e-12);
    }

    fn center_with_unit_delta() -> HeatmapCenter {
        // min distance 10/3 tokens → radius 0.15 * 20/3 = 1 → δ = 1 (stride 1).
        let r = 10.0 / 3.0;
        HeatmapCenter {
            center_px: (10.5, 10.5),
            bbox: Box2D::new(10.5 - r, 10.5 - r, 10.5 + 2.0 * r, 10.5 + 2.0 * r).unwrap(),
        }
    }

    #[test]
    fn heatmap_peak_and_e_inverse() {
        let hm = gaussian_heatmap(&[center_with_unit_delta()], 24, 24, 1, &HeatmapConfig::default());
        assert_eq!(hm.skipped, 0);
        assert_eq!(hm.values[10 * 24 + 10], 1.0);
        // (11, 11) sits at squared distance 2 = 2δ.
        assert_abs_diff_eq!(hm.values[11 * 24 + 11], (-1.0f64).exp(), epsilon = 1e-9);
        assert!(hm.values[23 * 24] < 1e-20);
    }

    #[test]
    fn heatmap_skips_off_grid_centers() {
        let mut c = center_with_unit_delta();
        c.center_px = (-3.0, 4.0);
        let hm = gaussian_heatmap(&[c], 8, 8, 1, &HeatmapConfig::default());
        assert_eq!(hm.skipped, 1);
        assert!(hm.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offsets() {
        assert_eq!(center_offset_targets((40.0, 8.0), 16, 8, 4), Some(((2, 0), [0.5, 0.5])));
        assert_eq!(center_offset_targets((32.0, 16.0), 16, 8, 4), Some(((2, 1), [0.0, 0.0])));
        assert_eq!(center_offset_targets((200.0, 8.0), 16, 8, 4), None);
        assert_eq!(center_offset_targets((-0.1, 8.0), 16, 8, 4), None);
    }

    #[test]
    fn background_targets_validate() {
        let mut t = TokenTargets::background(2, 2);
        t.validate().unwrap();
        t.iou[1] = 0.5;
        assert!(t.validate().is_err());
    }

    proptest! {
        #[test]
        fn offsets_in_unit_square(u in 0.0f64..128.0, v in 0.0f64..64.0) {
            if let Some((_, [du, dv])) = center_offset_targets((u, v), 16, 8, 4) {
                prop_assert!((0.0..1.0).contains(&du) && (0.0..1.0).contains(&dv));
            }
        }

        #[test]
        fn heatmap_order_invariant(
            pts in prop::collection::vec((0.0f64..128.0, 0.0f64..64.0, 2.0f64..40.0), 1..6)
        ) {
            let centers: Vec<HeatmapCenter> = pts
                .iter()
                .map(|&(u, v, half)| HeatmapCenter {
                    center_px: (u, v),
                    bbox: Box2D::new(u - half, v - half, u + half, v + half).unwrap(),
                })
                .collect();
            let mut reversed = centers.clone();
            reversed.reverse();
            let a = gaussian_heatmap(&centers, 8, 4, 16, &HeatmapConfig::default());
            let b = gaussian_heatmap(&reversed, 8, 4, 16, &HeatmapConfig::default());
            prop_assert_eq!(a, b);
        }
    }
}
