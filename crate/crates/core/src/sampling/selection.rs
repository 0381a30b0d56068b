//! Sampling priority and top-ratio token selection.

use std::cmp::Ordering;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numeric::seeded_rng;

/// `Q^α · C^(1-α)`.
pub fn sampling_priority(q: f64, c: f64, alpha: f64) -> f64 {
    q.powf(alpha) * c.powf(1.0 - alpha)
}

/// `⌈ratio · n⌉`, tolerant of representation error in `ratio · n`.
pub fn sample_count(n: usize, ratio: f64) -> usize {
    let k = (ratio * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.clamp(1.min(n), n)
}

fn check_ratio(ratio: f64) -> Result<()> {
    ensure!(
        ratio > 0.0 && ratio <= 1.0,
        "sampling ratio must lie in (0, 1], got {ratio}"
    );
    Ok(())
}

/// Indices of the `⌈ρN⌉` highest priorities, returned in ascending order.
/// Equal priorities prefer the lower index.
pub fn select_top_ratio(priority: &[f64], ratio: f64) -> Result<Vec<usize>> {
    ensure!(!priority.is_empty(), "cannot select from an empty token set");
    check_ratio(ratio)?;
    ensure!(
        priority.iter().all(|p| !p.is_nan()),
        "priorities must not be NaN"
    );
    let k = sample_count(priority.len(), ratio);
    let mut order: Vec<usize> = (0..priority.len()).collect();
    order.sort_by(|&a, &b| {
        priority[b]
            .partial_cmp(&priority[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Top-ratio selection applied to each camera's slice separately.
/// `camera_sizes` partitions `priority` in order; returned indices are flat.
pub fn select_per_camera(priority: &[f64], camera_sizes: &[usize], ratio: f64) -> Result<Vec<usize>> {
    ensure!(
        camera_sizes.iter().sum::<usize>() == priority.len(),
        "camera sizes do not cover the {} priorities",
        priority.len()
    );
    let mut out = Vec::new();
    let mut offset = 0;
    for &n in camera_sizes {
        if n > 0 {
            let local = select_top_ratio(&priority[offset..offset + n], ratio)?;
            out.extend(local.into_iter().map(|i| i + offset));
        }
        offset += n;
    }
    Ok(out)
}

/// Uniformly random subset of size `⌈ρN⌉`, for baseline comparisons.
pub fn select_random(n: usize, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    ensure!(n > 0, "cannot select from an empty token set");
    check_ratio(ratio)?;
    let mut picked = index::sample(&mut seeded_rng(seed), n, sample_count(n, ratio)).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Whether the top ratio is taken over all cameras at once or per camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScope {
    #[default]
    Global,
    PerCamera,
}

/// Per-token scores, priority and the resulting selection, flattened
/// camera-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityMaps {
    pub quality: Vec<f64>,
    pub centerness: Vec<f64>,
    pub priority: Vec<f64>,
    pub alpha: f64,
    pub ratio: f64,
    pub sampled: Vec<bool>,
}

impl QualityMaps {
    pub fn new(
        quality: Vec<f64>,
        centerness: Vec<f64>,
        alpha: f64,
        ratio: f64,
        scope: SelectionScope,
        camera_sizes: &[usize],
    ) -> Result<Self> {
        ensure!(
            quality.len() == centerness.len(),
            "{} quality scores but {} centerness scores",
            quality.len(),
            centerness.len()
        );
        ensure!(
            (0.0..=1.0).contains(&alpha),
            "alpha must lie in [0, 1], got {alpha}"
        );
        ensure!(
            quality
                .iter()
                .chain(&centerness)
                .all(|s| (0.0..=1.0).contains(s)),
            "scores must lie in [0, 1]"
        );
        let priority: Vec<f64> = quality
            .iter()
            .zip(&centerness)
            .map(|(&q, &c)| sampling_priority(q, c, alpha))
            .collect();
        let picked = match scope {
            SelectionScope::Global => select_top_ratio(&priority, ratio)?,
            SelectionScope::PerCamera => select_per_camera(&priority, camera_sizes, ratio)?,
        };
        let mut sampled = vec![false; priority.len()];
        for i in picked {
            sampled[i] = true;
        }
        Ok(Self {
            quality,
            centerness,
            priority,
            alpha,
            ratio,
            sampled,
        })
    }

    pub fn sampled_indices(&self) -> Vec<usize> {
        self.sampled
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn priority_examples() {
        assert_eq!(sampling_priority(0.3, 0.8, 1.0), 0.3);
        assert_eq!(sampling_priority(0.3, 0.8, 0.0), 0.8);
        assert_abs_diff_eq!(sampling_priority(0.81, 0.25, 0.5), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn top_ratio_examples() {
        assert_eq!(select_top_ratio(&[0.1, 0.9, 0.5, 0.4], 1.0).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(select_top_ratio(&[0.1, 0.9, 0.5, 0.4], 0.5).unwrap(), vec![1, 2]);
        assert_eq!(select_top_ratio(&[0.7; 5], 0.5).unwrap(), vec![0, 1, 2]);
        assert!(select_top_ratio(&[], 0.5).is_err());
        assert!(select_top_ratio(&[0.1], 0.0).is_err());
        assert!(select_top_ratio(&[0.1], 1.5).is_err());
    }

    #[test]
    fn sample_count_is_ceiling() {
        assert_eq!(sample_count(192, 0.25), 48);
        assert_eq!(sample_count(10, 0.3), 3);
        assert_eq!(sample_count(10, 0.31), 4);
        assert_eq!(sample_count(7, 0.01), 1);
        assert_eq!(sample_count(16896, 0.75), 12672);
    }

    #[test]
    fn per_camera_selection() {
        let p = [0.9, 0.8, 0.7, 0.6, 0.1, 0.2, 0.3, 0.4];
        assert_eq!(select_per_camera(&p, &[4, 4], 0.5).unwrap(), vec![0, 1, 6, 7]);
        assert_eq!(select_top_ratio(&p, 0.5).unwrap(), vec![0, 1, 2, 3]);
        assert!(select_per_camera(&p, &[4, 3], 0.5).is_err());
    }

    #[test]
    fn random_baseline_is_seeded() {
        let a = select_random(100, 0.25, 3).unwrap();
        assert_eq!(a.len(), 25);
        assert_eq!(a, select_random(100, 0.25, 3).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn quality_maps_count_and_priority() {
        let q = vec![0.1, 0.9, 0.5, 0.4];
        let c = vec![0.2, 0.3, 0.8, 0.1];
        let m = QualityMaps::new(q.clone(), c.clone(), 0.5, 0.5, SelectionScope::Global, &[4]).unwrap();
        assert_eq!(m.sampled.iter().filter(|&&s| s).count(), 2);
        for i in 0..4 {
            assert!((m.priority[i] - q[i].powf(0.5) * c[i].powf(0.5)).abs() < 1e-12);
        }
        assert!(QualityMaps::new(q.clone(), c.clone(), 1.5, 0.5, SelectionScope::Global, &[4]).is_err());
        assert!(QualityMaps::new(vec![1.2, 0.0, 0.0, 0.0], c, 0.5, 0.5, SelectionScope::Global, &[4]).is_err());
    }

    proptest! {
        #[test]
        fn priority_monotone(q in 0.01f64..0.99, c in 0.01f64..0.99, dq in 0.001f64..0.01, alpha in 0.05f64..0.95) {
            prop_assert!(sampling_priority(q + dq, c, alpha) > sampling_priority(q, c, alpha));
            prop_assert!(sampling_priority(q, c + dq, alpha) > sampling_priority(q, c, alpha));
        }

        #[test]
        fn selection_is_nested(
            p in prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]), 1..80),
            r1 in 0.01f64..1.0, r2 in 0.01f64..1.0,
        ) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let small = select_top_ratio(&p, lo).unwrap();
            let large = select_top_ratio(&p, hi).unwrap();
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }
    }
}
