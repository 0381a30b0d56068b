//! Full forward chain on a synthetic scene and the resulting report.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{AlignmentKind, SyntheticScene};
use super::truth::{render_targets, CameraTruth};
use crate::camera::ConeParams;
use crate::cost_model::{ratio_sweep, HeadConfig, SweepRow};
use crate::decoder::{init_anchor_queries, Box3DPrediction, Decoder, DecoderConfig, DecoderTrace};
use crate::encoding::{align_features, compose_key_value, position_embedding, AlignmentNet, EncodingMode, KeyValue, TokenGrid};
use crate::error::{ensure, Error, Result};
use crate::numeric::{seeded_rng, DenseMatrix, Mlp2};
use crate::sampling::{
    auxiliary_loss_total, centerness_focal_loss, giou_loss, l1_loss, quality_focal_loss_sum, AuxComponents,
    AuxWeights, CenternessParams, QualityMaps,
};
use crate::sampling::losses::QUALITY_BETA;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Ratios tabulated in every report.
pub const REPORT_RATIOS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Independent random streams derived from the scene seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Features = 1,
    Embedding,
    Alignment,
    Queries,
    Decoder,
    RandomScores,
}

fn sub_seed(seed: u64, stream: Stream) -> u64 {
    seed.wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreSource {
    /// `Q = y`, `C = H`.
    Oracle,
    /// Uniform scores from the scene seed.
    Random,
    /// CSV with columns `camera,row,col,Q,C`.
    File(PathBuf),
}

impl FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(ScoreSource::Oracle),
            "random" => Ok(ScoreSource::Random),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(ScoreSource::File(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "unknown score source {s:?} (expected oracle, random or file:<path>)"
                ))),
            },
        }
    }
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreSource::Oracle => f.write_str("oracle"),
            ScoreSource::Random => f.write_str("random"),
            ScoreSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub mode: EncodingMode,
    /// Overrides the scene's ratio.
    pub rho: Option<f64>,
    /// Overrides the scene's alpha.
    pub alpha: Option<f64>,
    pub scores: ScoreSource,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: EncodingMode::Focal,
            rho: None,
            alpha: None,
            scores: ScoreSource::Oracle,
        }
    }
}

/// Per-token scores, flattened camera-major.
pub fn load_scores(
    source: &ScoreSource,
    scene: &SyntheticScene,
    truth: &[CameraTruth],
) -> Result<(Vec<f64>, Vec<f64>)> {
    match source {
        ScoreSource::Oracle => Ok((
            truth.iter().flat_map(|t| t.targets.iou.iter().copied()).collect(),
            truth.iter().flat_map(|t| t.targets.heatmap.iter().copied()).collect(),
        )),
        ScoreSource::Random => {
            let n: usize = truth.iter().map(|t| t.targets.len()).sum();
            let mut rng = seeded_rng(sub_seed(scene.config.seed, Stream::RandomScores));
            let q = (0..n).map(|_| rng.gen::<f64>()).collect();
            let c = (0..n).map(|_| rng.gen::<f64>()).collect();
            Ok((q, c))
        }
        ScoreSource::File(path) => read_score_file(path, truth),
    }
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    camera: usize,
    row: usize,
    col: usize,
    #[serde(rename = "Q")]
    q: f64,
    #[serde(rename = "C")]
    c: f64,
}

fn read_score_file(path: &Path, truth: &[CameraTruth]) -> Result<(Vec<f64>, Vec<f64>)> {
    let input_err = |line: u64, message: String| Error::Input {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut offsets = Vec::with_capacity(truth.len());
    let mut n = 0;
    for t in truth {
        offsets.push(n);
        n += t.targets.len();
    }
    let mut q = vec![f64::NAN; n];
    let mut c = vec![f64::NAN; n];
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => input_err(0, format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| input_err(1, e.to_string()))?.clone();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            input_err(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let r: ScoreRow = record
            .deserialize(Some(&headers))
            .map_err(|e| input_err(line, e.to_string()))?;
        let t = truth
            .get(r.camera)
            .ok_or_else(|| input_err(line, format!("camera {} does not exist", r.camera)))?;
        if r.row >= t.targets.height || r.col >= t.targets.width {
            return Err(input_err(line, format!("token ({}, {}) is off the grid", r.row, r.col)));
        }
        if !((0.0..=1.0).contains(&r.q) && (0.0..=1.0).contains(&r.c)) {
            return Err(input_err(line, "scores must lie in [0, 1]".into()));
        }
        let i = offsets[r.camera] + r.row * t.targets.width + r.col;
        if !q[i].is_nan() {
            return Err(input_err(line, format!("duplicate entry for camera {} token ({}, {})", r.camera, r.row, r.col)));
        }
        q[i] = r.q;
        c[i] = r.c;
    }
    if let Some(missing) = q.iter().position(|x| x.is_nan()) {
        let cam = offsets.iter().rposition(|&o| o <= missing).unwrap_or(0);
        let local = missing - offsets[cam];
        let w = truth[cam].targets.width;
        return Err(input_err(
            reader.position().line(),
            format!("no score for camera {cam} token ({}, {})", local / w, local % w),
        ));
    }
    Ok((q, c))
}

/// Auxiliary losses with perfect predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLosses {
    /// Centerness scored at the loss minimizer (1 on peaks, 0 elsewhere).
    pub components: AuxComponents,
    pub positives: usize,
    pub total: f64,
    /// Centerness loss when the prediction equals the heatmap itself.
    pub centerness_at_heatmap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub predictions: Vec<Box3DPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub seed: u64,
    pub mode: EncodingMode,
    pub scores: String,
    pub alpha: f64,
    pub rho: f64,
    pub total_tokens: usize,
    pub sampled_tokens: usize,
    pub foreground_tokens: usize,
    pub visible_centers: usize,
    pub retained_centers: usize,
    pub foreground_recall: f64,
    pub max_attention_row_sum_error: f64,
    pub oracle_losses: OracleLosses,
    pub layers: Vec<LayerReport>,
    pub cost_table: Vec<SweepRow>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Everything a run produces; the report is the serializable summary.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub truth: Vec<CameraTruth>,
    pub maps: QualityMaps,
    pub grids: Vec<TokenGrid>,
    pub embeddings: DenseMatrix,
    /// Aligned features of the sampled tokens (focal mode only).
    pub aligned: Option<DenseMatrix>,
    pub kv: KeyValue,
    pub trace: DecoderTrace,
}

/// Random encoder features and position embeddings for every camera,
/// concatenated camera-major.
pub fn encode_scene(scene: &SyntheticScene) -> Result<(Vec<TokenGrid>, DenseMatrix, Vec<ConeParams>)> {
    let cfg = &scene.config;
    let d = cfg.d_model;
    let phi = Mlp2::seeded(3 * cfg.depth.samples(), cfg.embed_hidden, d, sub_seed(cfg.seed, Stream::Embedding));
    let mut rng = seeded_rng(sub_seed(cfg.seed, Stream::Features));
    let mut grids = Vec::with_capacity(scene.cameras.len());
    let mut embeds = Vec::with_capacity(scene.cameras.len());
    let mut cones = Vec::new();
    for (k, cam) in scene.cameras.iter().enumerate() {
        let (w, h) = TokenGrid::dims_for(cam, cfg.stride)?;
        let data = (0..w * h * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grid = TokenGrid::new(k, w, h, cfg.stride, DenseMatrix::new(w * h, d, data)?)?;
        embeds.push(position_embedding(&grid, cam, &phi, &cfg.depth, &cfg.roi)?.embeddings);
        cones.extend(grid.cones(cam)?);
        grids.push(grid);
    }
    let embeddings = DenseMatrix::vstack(&embeds.iter().collect::<Vec<_>>())?;
    Ok((grids, embeddings, cones))
}

pub fn alignment_net(scene: &SyntheticScene) -> Option<AlignmentNet> {
    let cfg = &scene.config;
    match cfg.alignment {
        AlignmentKind::Seeded => Some(AlignmentNet::seeded(
            cfg.d_model,
            cfg.align_hidden,
            cfg.cone_content,
            sub_seed(cfg.seed, Stream::Alignment),
        )),
        AlignmentKind::Identity => Some(AlignmentNet::identity(cfg.d_model, cfg.align_hidden, cfg.cone_content)),
        AlignmentKind::Off => None,
    }
}

pub fn run_pipeline(scene: &SyntheticScene, opts: &RunOptions) -> Result<RunOutput> {
    scene.validate()?;
    let cfg = &scene.config;
    let alpha = opts.alpha.unwrap_or(cfg.alpha);
    let rho = opts.rho.unwrap_or(cfg.rho);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho {rho} outside (0, 1]")));
    }

    let (grids, embeddings, cones) = encode_scene(scene)?;
    let truth = render_targets(scene)?;
    let (q, c) = load_scores(&opts.scores, scene, &truth)?;
    let camera_sizes: Vec<usize> = grids.iter().map(TokenGrid::len).collect();
    let maps = QualityMaps::new(q, c, alpha, rho, cfg.scope, &camera_sizes)?;
    let sampled = maps.sampled_indices();

    let all_features = DenseMatrix::vstack(&grids.iter().map(|g| &g.features).collect::<Vec<_>>())?;
    let features = all_features.select_rows(&sampled)?;
    let pos = embeddings.select_rows(&sampled)?;
    let aligned = match opts.mode {
        EncodingMode::Petr => None,
        EncodingMode::Focal => Some(match alignment_net(scene) {
            Some(net) => {
                let sampled_cones: Vec<ConeParams> = sampled.iter().map(|&i| cones[i]).collect();
                align_features(&features, &sampled_cones, &net)?
            }
            None => features.clone(),
        }),
    };
    let kv = compose_key_value(&features, aligned.as_ref(), &pos, opts.mode)?;

    let queries = init_anchor_queries(cfg.queries, cfg.d_model, sub_seed(cfg.seed, Stream::Queries))?;
    let dec_cfg = DecoderConfig {
        layers: cfg.layers,
        d_ff: cfg.d_ff,
        n_classes: cfg.classes,
        self_attention: cfg.self_attention,
        scale_attention: true,
    };
    let decoder = Decoder::seeded(cfg.d_model, dec_cfg, sub_seed(cfg.seed, Stream::Decoder))?;
    let trace = decoder.decode(&queries, &kv.keys, &kv.values, &cfg.roi)?;

    let (visible_centers, retained_centers) = center_recall(&truth, &maps.sampled);
    let head = HeadConfig {
        queries: cfg.queries as u64,
        tokens: maps.sampled.len() as u64,
        d_model: cfg.d_model as u64,
        d_ff: cfg.d_ff as u64,
        layers: cfg.layers as u64,
        ratio: 1.0,
        bytes_per_scalar: 4,
        sampling_enabled: false,
        self_attention: cfg.self_attention,
        ffn: true,
        // Two linear scoring heads on d_model-wide tokens.
        sampling_macs_per_token: 2 * cfg.d_model as u64,
    };
    let report = RunReport {
        format_version: REPORT_FORMAT_VERSION,
        seed: cfg.seed,
        mode: opts.mode,
        scores: opts.scores.to_string(),
        alpha,
        rho,
        total_tokens: maps.sampled.len(),
        sampled_tokens: sampled.len(),
        foreground_tokens: truth
            .iter()
            .map(|t| t.targets.class.iter().filter(|c| c.is_some()).count())
            .sum(),
        visible_centers,
        retained_centers,
        foreground_recall: if visible_centers == 0 {
            1.0
        } else {
            retained_centers as f64 / visible_centers as f64
        },
        max_attention_row_sum_error: trace.max_row_sum_error(),
        oracle_losses: oracle_losses(&truth)?,
        layers: trace
            .predictions
            .iter()
            .enumerate()
            .map(|(layer, p)| LayerReport {
                layer,
                predictions: p.clone(),
            })
            .collect(),
        cost_table: ratio_sweep(&head, &REPORT_RATIOS)?,
    };
    Ok(RunOutput {
        report,
        truth,
        maps,
        grids,
        embeddings,
        aligned,
        kv,
        trace,
    })
}

/// `(visible, retained)` counts of center-holding tokens over all cameras.
pub fn center_recall(truth: &[CameraTruth], sampled: &[bool]) -> (usize, usize) {
    let mut offset = 0;
    let (mut visible, mut retained) = (0, 0);
    for t in truth {
        for tok in t.center_tokens.iter().flatten() {
            visible += 1;
            if sampled[offset + tok] {
                retained += 1;
            }
        }
        offset += t.targets.len();
    }
    (visible, retained)
}

/// Loss components when every prediction equals its target: quality
/// `Q = y`, exact offsets and side distances, matched boxes equal to
/// their ground truth, and centerness at its minimizer.
pub fn oracle_losses(truth: &[CameraTruth]) -> Result<OracleLosses> {
    let mut y = Vec::new();
    let mut h = Vec::new();
    let mut c = AuxComponents::default();
    let mut positives = 0;
    for t in truth {
        let tt = &t.targets;
        y.extend_from_slice(&tt.iou);
        h.extend_from_slice(&tt.heatmap);
        for off in tt.offset.iter().flatten() {
            c.center_offset += l1_loss(off, off)?.0;
        }
        for &(tok, j) in &t.matches {
            if tt.class[tok].is_none() {
                continue;
            }
            positives += 1;
            let gt = &t.objects[j].bbox;
            c.giou += giou_loss(gt, gt)?.0;
            c.ltrb += l1_loss(&tt.ltrb[tok], &tt.ltrb[tok])?.0;
        }
    }
    ensure!(!y.is_empty(), "scene has no tokens");
    c.quality = quality_focal_loss_sum(&y, &y, QUALITY_BETA)?.0;
    let peaks: Vec<f64> = h.iter().map(|&v| if v == 1.0 { 1.0 } else { 0.0 }).collect();
    c.centerness = centerness_focal_loss(&peaks, &h, CenternessParams::default())?.0;
    let centerness_at_heatmap = centerness_focal_loss(&h, &h, CenternessParams::default())?.0;
    Ok(OracleLosses {
        components: c,
        positives,
        total: auxiliary_loss_total(&c, &AuxWeights::default(), positives),
        centerness_at_heatmap,
    })
}

/// Writes `report` as pretty JSON.
pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scene::{generate_scene, SceneConfig};

    fn scene(seed: u64) -> SyntheticScene {
        generate_scene(&SceneConfig { seed, ..Default::default() }).unwrap()
    }

    #[test]
    fn score_source_parsing() {
        assert_eq!("oracle".parse::<ScoreSource>().unwrap(), ScoreSource::Oracle);
        assert_eq!("file:a.csv".parse::<ScoreSource>().unwrap(), ScoreSource::File("a.csv".into()));
        assert!("file:".parse::<ScoreSource>().is_err());
        assert!("magic".parse::<ScoreSource>().is_err());
    }

    #[test]
    fn oracle_run_recalls_every_center() {
        let out = run_pipeline(&scene(3), &RunOptions::default()).unwrap();
        let r = &out.report;
        assert_eq!(r.total_tokens, 192);
        assert_eq!(r.sampled_tokens, 48);
        assert_eq!(r.foreground_recall, 1.0);
        assert_eq!(r.layers.len(), 3);
        assert!(r.max_attention_row_sum_error < 1e-9);
        assert_eq!(out.trace.attention[0].cols(), 48);
    }

    #[test]
    fn oracle_losses_vanish() {
        let out = run_pipeline(&scene(4), &RunOptions::default()).unwrap();
        let l = &out.report.oracle_losses;
        assert!(l.positives > 0);
        assert!(l.total.abs() < 1e-5, "{l:?}");
        assert!(l.components.quality < 1e-9);
        assert_eq!(l.components.giou, 0.0);
        assert!(l.centerness_at_heatmap > 0.0);
    }

    #[test]
    fn petr_full_ratio_matches_unsampled_composition() {
        let mut s = scene(5);
        s.config.alignment = AlignmentKind::Off;
        let opts = RunOptions { mode: EncodingMode::Petr, rho: Some(1.0), ..Default::default() };
        let out = run_pipeline(&s, &opts).unwrap();
        let raw = DenseMatrix::vstack(&out.grids.iter().map(|g| &g.features).collect::<Vec<_>>()).unwrap();
        let direct = compose_key_value(&raw, None, &out.embeddings, EncodingMode::Petr).unwrap();
        assert_eq!(out.kv, direct);
    }

    #[test]
    fn runs_are_deterministic() {
        let s = scene(6);
        let opts = RunOptions { scores: ScoreSource::Random, ..Default::default() };
        let a = run_pipeline(&s, &opts).unwrap().report.to_json().unwrap();
        let b = run_pipeline(&s, &opts).unwrap().report.to_json().unwrap();
        assert_eq!(a, b);
    }
}
