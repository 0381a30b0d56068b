//! Anchor-query transformer decoder over sampled tokens.
//!
//! Each layer: optional query self-attention, cross-attention of
//! `state + pos` against the token keys, feed-forward block; every sub-block
//! is residual. A head shared across layers turns each query state into a
//! 3D box and class logits.

use serde::{Deserialize, Serialize};

use crate::camera::Roi3D;
use crate::error::{ensure, Result};
use crate::numeric::{seeded_rng, softmax_rows, DenseMatrix, Linear, Mlp2};

/// Center offsets are bounded to this fraction of the ROI extent.
pub const CENTER_OFFSET_FRACTION: f64 = 0.1;

/// Raw log-sizes are clamped to `±LOG_SIZE_CLAMP` before `exp`.
pub const LOG_SIZE_CLAMP: f64 = 20.0;

/// Learnable reference points and the query vectors derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorQuerySet {
    /// Normalized anchor positions in `[0, 1]³`.
    pub anchors: Vec<[f64; 3]>,
    /// Initial query content, one row per anchor.
    pub content: DenseMatrix,
    /// Query position embedding, one row per anchor.
    pub pos: DenseMatrix,
}

impl AnchorQuerySet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn d_model(&self) -> usize {
        self.content.cols()
    }
}

/// `n` anchors drawn uniformly from the unit cube, zero content and
/// `pos = Mlp2(anchor)` with a seeded `3 → d → d` network.
pub fn init_anchor_queries(n: usize, d_model: usize, seed: u64) -> Result<AnchorQuerySet> {
    ensure!(n >= 1, "need at least one query");
    ensure!(d_model >= 1, "d_model must be positive");
    let mut rng = seeded_rng(seed);
    let anchors: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            use rand::Rng;
            [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
        })
        .collect();
    let pos_net = Mlp2::from_rng(3, d_model, d_model, &mut rng);
    let flat: Vec<f64> = anchors.iter().flatten().copied().collect();
    let pos = pos_net.forward_rows(&DenseMatrix::new(n, 3, flat)?)?;
    Ok(AnchorQuerySet {
        anchors,
        content: DenseMatrix::zeros(n, d_model),
        pos,
    })
}

/// `softmax(q kᵀ · s) v` with `s = 1/√d` when `scaled`, else 1.
/// Returns the attended values and the attention weights.
pub fn cross_attention(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    scaled: bool,
) -> Result<(DenseMatrix, DenseMatrix)> {
    attention_impl(q, k, v, None, scaled)
}

/// [`cross_attention`] with tokens where `keep[j]` is false forced to zero
/// weight (logit `-inf`).
pub fn cross_attention_masked(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    keep: &[bool],
    scaled: bool,
) -> Result<(DenseMatrix, DenseMatrix)> {
    ensure!(
        keep.len() == k.rows(),
        "mask has {} entries for {} tokens",
        keep.len(),
        k.rows()
    );
    ensure!(keep.iter().any(|&b| b), "mask removes every token");
    attention_impl(q, k, v, Some(keep), scaled)
}

fn attention_impl(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    keep: Option<&[bool]>,
    scaled: bool,
) -> Result<(DenseMatrix, DenseMatrix)> {
    ensure!(k.rows() >= 1, "attention needs at least one token");
    ensure!(
        k.rows() == v.rows(),
        "{} keys but {} values",
        k.rows(),
        v.rows()
    );
    ensure!(
        q.cols() == k.cols(),
        "query width {} does not match key width {}",
        q.cols(),
        k.cols()
    );
    let mut logits = q.matmul_transposed(k)?;
    if scaled {
        logits = logits.scale(1.0 / (q.cols() as f64).sqrt());
    }
    if let Some(keep) = keep {
        for r in 0..logits.rows() {
            for (x, &kept) in logits.row_mut(r).iter_mut().zip(keep) {
                if !kept {
                    *x = f64::NEG_INFINITY;
                }
            }
        }
    }
    let weights = softmax_rows(&logits);
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub d_ff: usize,
    pub n_classes: usize,
    /// Query self-attention before cross-attention in every layer.
    pub self_attention: bool,
    /// Scale attention logits by `1/√d_model`.
    pub scale_attention: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            d_ff: 64,
            n_classes: 3,
            self_attention: true,
            scale_attention: true,
        }
    }
}

/// Maps a query state to a 3D box and class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionHead {
    /// Outputs `(offset x, y, z, log l, log w, log h, sin, cos)`.
    pub box_head: Linear,
    pub cls_head: Linear,
}

impl PredictionHead {
    pub fn zeros(d_model: usize, n_classes: usize) -> Self {
        Self {
            box_head: Linear::zeros(d_model, 8),
            cls_head: Linear::zeros(d_model, n_classes),
        }
    }

    pub fn predict(&self, state: &[f64], anchor: [f64; 3], roi: &Roi3D) -> Result<Box3DPrediction> {
        let raw = self.box_head.forward(state)?;
        let base = roi.denormalize(anchor);
        let extent = roi.extent();
        let mut center_m = [0.0; 3];
        for a in 0..3 {
            let squashed = sigmoid(raw[a]) - 0.5;
            center_m[a] = base[a] + squashed * 2.0 * CENTER_OFFSET_FRACTION * extent[a];
        }
        let size_m = [3, 4, 5].map(|i| raw[i].clamp(-LOG_SIZE_CLAMP, LOG_SIZE_CLAMP).exp());
        let mut yaw_rad = raw[6].atan2(raw[7]);
        if yaw_rad <= -std::f64::consts::PI {
            yaw_rad = std::f64::consts::PI;
        }
        Ok(Box3DPrediction {
            center_m,
            size_m,
            yaw_rad,
            logits: self.cls_head.forward(state)?,
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3DPrediction {
    pub center_m: [f64; 3],
    /// `(length, width, height)`, strictly positive.
    pub size_m: [f64; 3],
    /// In `(-π, π]`.
    pub yaw_rad: f64,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub ffn: Mlp2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub layers: Vec<DecoderLayer>,
    pub head: PredictionHead,
}

impl Decoder {
    /// Seeded random feed-forward blocks and head.
    pub fn seeded(d_model: usize, config: DecoderConfig, seed: u64) -> Result<Self> {
        Self::check(d_model, &config)?;
        let mut rng = seeded_rng(seed);
        let layers = (0..config.layers)
            .map(|_| DecoderLayer {
                ffn: Mlp2::from_rng(d_model, config.d_ff, d_model, &mut rng),
            })
            .collect();
        let head = PredictionHead {
            box_head: Linear::from_rng(d_model, 8, &mut rng),
            cls_head: Linear::from_rng(d_model, config.n_classes, &mut rng),
        };
        Ok(Self {
            config,
            layers,
            head,
        })
    }

    /// All weights zero: the feed-forward blocks add nothing and the head
    /// predicts unit boxes at the anchors.
    pub fn zeros(d_model: usize, config: DecoderConfig) -> Result<Self> {
        Self::check(d_model, &config)?;
        Ok(Self {
            config,
            layers: (0..config.layers)
                .map(|_| DecoderLayer {
                    ffn: Mlp2::zeros(d_model, config.d_ff, d_model),
                })
                .collect(),
            head: PredictionHead::zeros(d_model, config.n_classes),
        })
    }

    fn check(d_model: usize, config: &DecoderConfig) -> Result<()> {
        ensure!(config.layers >= 1, "decoder needs at least one layer");
        ensure!(d_model >= 1 && config.d_ff >= 1, "decoder widths must be positive");
        ensure!(config.n_classes >= 1, "need at least one class");
        Ok(())
    }

    /// Runs every layer and records states, attention and predictions.
    pub fn decode(
        &self,
        queries: &AnchorQuerySet,
        keys: &DenseMatrix,
        values: &DenseMatrix,
        roi: &Roi3D,
    ) -> Result<DecoderTrace> {
        self.decode_impl(queries, keys, values, None, roi)
    }

    /// [`Decoder::decode`] with tokens where `keep[j]` is false masked out.
    pub fn decode_masked(
        &self,
        queries: &AnchorQuerySet,
        keys: &DenseMatrix,
        values: &DenseMatrix,
        keep: &[bool],
        roi: &Roi3D,
    ) -> Result<DecoderTrace> {
        self.decode_impl(queries, keys, values, Some(keep), roi)
    }

    fn decode_impl(
        &self,
        queries: &AnchorQuerySet,
        keys: &DenseMatrix,
        values: &DenseMatrix,
        keep: Option<&[bool]>,
        roi: &Roi3D,
    ) -> Result<DecoderTrace> {
        ensure!(
            self.layers.len() == self.config.layers,
            "decoder has {} layers but is configured for {}",
            self.layers.len(),
            self.config.layers
        );
        ensure!(
            queries.d_model() == keys.cols() && keys.cols() == values.cols(),
            "query, key and value widths differ"
        );
        let scaled = self.config.scale_attention;
        let mut state = queries.content.clone();
        let mut trace = DecoderTrace {
            states: Vec::with_capacity(self.layers.len()),
            attention: Vec::with_capacity(self.layers.len()),
            predictions: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            if self.config.self_attention {
                let q = state.add(&queries.pos)?;
                let (sa, _) = cross_attention(&q, &q, &state, scaled)?;
                state = state.add(&sa)?;
            }
            let q = state.add(&queries.pos)?;
            let (ca, weights) = match keep {
                Some(keep) => cross_attention_masked(&q, keys, values, keep, scaled)?,
                None => cross_attention(&q, keys, values, scaled)?,
            };
            state = state.add(&ca)?;
            state = state.add(&layer.ffn.forward_rows(&state)?)?;

            let predictions = state
                .row_iter()
                .zip(&queries.anchors)
                .map(|(s, &a)| self.head.predict(s, a, roi))
                .collect::<Result<Vec<_>>>()?;
            trace.states.push(state.clone());
            trace.attention.push(weights);
            trace.predictions.push(predictions);
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderTrace {
    pub states: Vec<DenseMatrix>,
    /// Cross-attention weights per layer, `queries × tokens`.
    pub attention: Vec<DenseMatrix>,
    pub predictions: Vec<Vec<Box3DPrediction>>,
}

impl DecoderTrace {
    pub fn layers(&self) -> usize {
        self.attention.len()
    }

    /// Largest `|Σ_j a_ij - 1|` over all layers and rows.
    pub fn max_row_sum_error(&self) -> f64 {
        self.attention
            .iter()
            .flat_map(|a| a.row_iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()))
            .fold(0.0, f64::max)
    }
}
