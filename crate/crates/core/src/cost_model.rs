//! Analytic FLOPs and memory model of the detection head.
//!
//! All counts use 1 multiply-accumulate = 2 FLOPs. Memory is in bytes.
//! The model is pure integer arithmetic, so sweeps are bit-reproducible.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::sampling::selection::sample_count;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub queries: u64,
    /// Tokens before sampling, across all cameras.
    pub tokens: u64,
    pub d_model: u64,
    pub d_ff: u64,
    pub layers: u64,
    pub ratio: f64,
    pub bytes_per_scalar: u64,
    /// Whether the per-token scoring heads run.
    pub sampling_enabled: bool,
    pub self_attention: bool,
    pub ffn: bool,
    /// Multiply-accumulates per token spent by the scoring heads.
    pub sampling_macs_per_token: u64,
}

impl HeadConfig {
    /// Full-resolution setting: 6 cameras of 1408×512 at stride 16, 900
    /// queries of width 256, 6 layers, fp32. `d_ff` and the scoring cost
    /// are calibrated; the frozen copy lives in the test fixtures.
    pub fn reference_scale() -> Self {
        Self {
            queries: 900,
            tokens: 6 * (1408 / 16) * (512 / 16),
            d_model: 256,
            d_ff: 12800,
            layers: 6,
            ratio: 1.0,
            bytes_per_scalar: 4,
            sampling_enabled: false,
            self_attention: true,
            ffn: true,
            sampling_macs_per_token: 109_500,
        }
    }

    /// Reads a JSON head configuration; every field is required.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.queries > 0 && self.tokens > 0 && self.d_model > 0 && self.d_ff > 0,
            "head dimensions must be positive"
        );
        ensure!(self.bytes_per_scalar > 0, "bytes per scalar must be positive");
        ensure!(
            self.ratio > 0.0 && self.ratio <= 1.0,
            "sampling ratio must lie in (0, 1], got {}",
            self.ratio
        );
        Ok(())
    }

    /// `⌈ρ · N_t⌉`.
    pub fn sampled_tokens(&self) -> u64 {
        sample_count(self.tokens as usize, self.ratio) as u64
    }

    pub fn with_ratio(&self, ratio: f64) -> Self {
        Self { ratio, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub cross_attn: u64,
    pub self_attn: u64,
    pub ffn: u64,
    pub projections: u64,
    pub sampling_overhead: u64,
    pub total: u64,
}

/// FLOPs per forward pass.
///
/// Cross-attention counts `q kᵀ` and the weighted sum, `2·N_q·N_s·d` MACs
/// per layer. Projections are the query/key/value/output maps of the
/// cross-attention and, if enabled, of the self-attention.
pub fn decoder_flops(cfg: &HeadConfig) -> Result<FlopsBreakdown> {
    cfg.validate()?;
    let (l, nq, d) = (cfg.layers, cfg.queries, cfg.d_model);
    let ns = cfg.sampled_tokens();
    let cross_attn = 2 * l * 2 * nq * ns * d;
    let self_attn = if cfg.self_attention { 2 * l * 2 * nq * nq * d } else { 0 };
    let ffn = if cfg.ffn { 2 * l * 2 * nq * d * cfg.d_ff } else { 0 };
    let self_proj = if cfg.self_attention { 4 * nq * d * d } else { 0 };
    let projections = 2 * l * (2 * nq * d * d + 2 * ns * d * d + self_proj);
    let sampling_overhead = if cfg.sampling_enabled {
        2 * cfg.tokens * cfg.sampling_macs_per_token
    } else {
        0
    };
    Ok(FlopsBreakdown {
        cross_attn,
        self_attn,
        ffn,
        projections,
        sampling_overhead,
        total: cross_attn + self_attn + ffn + projections + sampling_overhead,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub attn_matrices: u64,
    pub kv_buffers: u64,
    pub query_states: u64,
    /// Hidden activations of the feed-forward blocks.
    pub ffn_activations: u64,
    pub total: u64,
}

/// Activation memory of one forward pass in bytes.
pub fn decoder_memory(cfg: &HeadConfig) -> Result<MemoryBreakdown> {
    cfg.validate()?;
    let (l, nq, d, b) = (cfg.layers, cfg.queries, cfg.d_model, cfg.bytes_per_scalar);
    let ns = cfg.sampled_tokens();
    let attn_matrices = l * nq * ns * b;
    let kv_buffers = 2 * ns * d * b;
    let query_states = l * nq * d * b;
    let ffn_activations = if cfg.ffn { l * nq * cfg.d_ff * b } else { 0 };
    Ok(MemoryBreakdown {
        attn_matrices,
        kv_buffers,
        query_states,
        ffn_activations,
        total: attn_matrices + kv_buffers + query_states + ffn_activations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub sampled_tokens: u64,
    pub flops: FlopsBreakdown,
    pub memory: MemoryBreakdown,
    pub delta_flops_pct: f64,
    pub delta_mem_pct: f64,
}

/// Costs at each ratio with deltas against the same head at `ρ = 1` and no
/// scoring heads. Scoring heads run at every `ρ < 1`.
pub fn ratio_sweep(cfg: &HeadConfig, ratios: &[f64]) -> Result<Vec<SweepRow>> {
    ensure!(!ratios.is_empty(), "ratio sweep needs at least one ratio");
    let base_cfg = HeadConfig {
        ratio: 1.0,
        sampling_enabled: false,
        ..*cfg
    };
    let base_flops = decoder_flops(&base_cfg)?.total as f64;
    let base_mem = decoder_memory(&base_cfg)?.total as f64;
    ratios
        .iter()
        .map(|&ratio| {
            let c = HeadConfig {
                ratio,
                sampling_enabled: ratio < 1.0,
                ..*cfg
            };
            let flops = decoder_flops(&c)?;
            let memory = decoder_memory(&c)?;
            Ok(SweepRow {
                ratio,
                sampled_tokens: c.sampled_tokens(),
                flops,
                memory,
                delta_flops_pct: 100.0 * (flops.total as f64 / base_flops - 1.0),
                delta_mem_pct: 100.0 * (memory.total as f64 / base_mem - 1.0),
            })
        })
        .collect()
}

/// Writes the sweep as CSV with a fixed column set.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "ratio",
        "flops_total",
        "flops_cross_attn",
        "mem_total",
        "mem_attn",
        "delta_flops_pct",
        "delta_mem_pct",
    ])?;
    for r in rows {
        w.write_record(&[
            r.ratio.to_string(),
            r.flops.total.to_string(),
            r.flops.cross_attn.to_string(),
            r.memory.total.to_string(),
            r.memory.attn_matrices.to_string(),
            format!("{:.4}", r.delta_flops_pct),
            format!("{:.4}", r.delta_mem_pct),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Fixed-width table in GFLOPs and GB (10⁹).
pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "FLOPs counted as 2 per multiply-accumulate; G = 1e9");
    let _ = writeln!(
        s,
        "{:>6} {:>8} {:>12} {:>10} {:>10} {:>9}",
        "ratio", "tokens", "FLOPs(G)", "dFLOPs%", "Mem(G)", "dMem%"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6.2} {:>8} {:>12.2} {:>10.2} {:>10.3} {:>9.2}",
            r.ratio,
            r.sampled_tokens,
            r.flops.total as f64 / 1e9,
            r.delta_flops_pct,
            r.memory.total as f64 / 1e9,
            r.delta_mem_pct
        );
    }
    s
}
