//! Auxiliary losses for the sampling heads, each returned together with
//! its analytic gradient with respect to the prediction.

use serde::{Deserialize, Serialize};

use super::Box2D;
use crate::assignment::giou_2d;
use crate::error::{ensure, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-6;

/// Default modulating exponent of the quality focal loss.
pub const QUALITY_BETA: f64 = 2.0;

fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (c, c != p)
}

/// Quality focal loss for one token:
/// `-|y - q|^β · ((1 - y) ln(1 - q) + y ln q)`.
///
/// Returns `(loss, dloss/dq)`. The gradient is zero where `q` was clamped.
pub fn quality_focal_loss(q: f64, y: f64, beta: f64) -> (f64, f64) {
    let (q, clamped) = clamp_prob(q);
    let diff = q - y;
    let s = diff.abs();
    let ce = (1.0 - y) * (1.0 - q).ln() + y * q.ln();
    let modulator = s.powf(beta);
    let loss = -modulator * ce;
    if clamped {
        return (loss, 0.0);
    }
    // At q == y the modulator's derivative is 0 for β > 1 and undefined
    // below; 0 is used throughout.
    let dmod = if s == 0.0 {
        0.0
    } else {
        beta * s.powf(beta - 1.0) * diff.signum()
    };
    let dce = -(1.0 - y) / (1.0 - q) + y / q;
    (loss, -(dmod * ce + modulator * dce))
}

/// Sum of [`quality_focal_loss`] over tokens, with per-token gradients.
pub fn quality_focal_loss_sum(q: &[f64], y: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    ensure!(q.len() == y.len(), "{} predictions for {} targets", q.len(), y.len());
    ensure!(beta >= 0.0, "beta must be non-negative");
    let mut total = 0.0;
    let grad = q
        .iter()
        .zip(y)
        .map(|(&qi, &yi)| {
            let (l, g) = quality_focal_loss(qi, yi, beta);
            total += l;
            g
        })
        .collect();
    Ok((total, grad))
}

/// Exponents of the penalty-reduced centerness focal loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenternessParams {
    /// Focusing exponent on the prediction.
    pub a: f64,
    /// Penalty reduction exponent on `1 - H` away from peaks.
    pub b: f64,
}

impl Default for CenternessParams {
    fn default() -> Self {
        Self { a: 2.0, b: 4.0 }
    }
}

/// Mean over tokens of
/// `-(1 - C)^a ln C` where `H == 1` and `-(1 - H)^b C^a ln(1 - C)` elsewhere.
pub fn centerness_focal_loss(
    c: &[f64],
    h: &[f64],
    params: CenternessParams,
) -> Result<(f64, Vec<f64>)> {
    ensure!(c.len() == h.len(), "{} predictions for {} targets", c.len(), h.len());
    ensure!(!c.is_empty(), "centerness loss needs at least one token");
    let n = c.len() as f64;
    let CenternessParams { a, b } = params;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(c.len());
    for (&ci, &hi) in c.iter().zip(h) {
        let (p, clamped) = clamp_prob(ci);
        let (l, g) = if hi == 1.0 {
            let l = -(1.0 - p).powf(a) * p.ln();
            let g = a * (1.0 - p).powf(a - 1.0) * p.ln() - (1.0 - p).powf(a) / p;
            (l, g)
        } else {
            let w = (1.0 - hi).powf(b);
            let l = -w * p.powf(a) * (1.0 - p).ln();
            let g = -w * (a * p.powf(a - 1.0) * (1.0 - p).ln() - p.powf(a) / (1.0 - p));
            (l, g)
        };
        total += l;
        grad.push(if clamped { 0.0 } else { g / n });
    }
    Ok((total / n, grad))
}

/// `Σ |p - t|` with sign gradient (zero at exact equality).
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure!(
        pred.len() == target.len(),
        "{} predictions for {} targets",
        pred.len(),
        target.len()
    );
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d == 0.0 {
                0.0
            } else {
                d.signum()
            }
        })
        .collect();
    Ok((loss, grad))
}

/// `1 - GIoU(pred, target)` and its gradient with respect to `pred`.
pub fn giou_loss(pred: &Box2D, target: &Box2D) -> Result<(f64, [f64; 4])> {
    let (g, dg) = giou_2d(pred, target)?;
    Ok((1.0 - g, dg.map(|x| -x)))
}

/// Weights of the five auxiliary terms, in the order quality, 2.5D offset,
/// GIoU, side distances, centerness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxWeights(pub [f64; 5]);

impl Default for AuxWeights {
    fn default() -> Self {
        Self([2.0, 10.0, 5.0, 2.0, 1.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AuxComponents {
    pub quality: f64,
    pub center_offset: f64,
    pub giou: f64,
    pub ltrb: f64,
    pub centerness: f64,
}

impl AuxComponents {
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.quality,
            self.center_offset,
            self.giou,
            self.ltrb,
            self.centerness,
        ]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            quality: self.quality * c,
            center_offset: self.center_offset * c,
            giou: self.giou * c,
            ltrb: self.ltrb * c,
            centerness: self.centerness * c,
        }
    }
}

/// Weighted sum of the components divided by the number of positives.
/// A scene without positives contributes zero.
pub fn auxiliary_loss_total(components: &AuxComponents, weights: &AuxWeights, n_pos: usize) -> f64 {
    if n_pos == 0 {
        log::warn!("auxiliary loss requested with no positive samples; returning 0");
        return 0.0;
    }
    let weighted: f64 = components
        .to_array()
        .iter()
        .zip(weights.0.iter())
        .map(|(c, w)| c * w)
        .sum();
    weighted / n_pos as f64
}
