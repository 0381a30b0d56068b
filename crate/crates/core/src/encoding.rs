//! Token grids, implicit 3D position embeddings, cone-conditioned feature
//! alignment and key/value composition.
//!
//! Position embedding: each token's pixel-center ray is sampled at the
//! configured depths, the points are normalized into the ROI cube,
//! flattened and pushed through a two-layer MLP.
//!
//! Alignment: two MLPs read the token's frustum cone and emit a per-channel
//! scale `w` and shift `b`; the aligned feature is `w ⊙ F + b`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::{
    frustum_cone, normalize_points, pixel_ray, sample_ray_points, CameraModel, ConeContent,
    ConeParams, DepthConfig, Roi3D,
};
use crate::error::{ensure, Error, Result};
use crate::numeric::{DenseMatrix, Mlp2};

/// Content vectors for one camera's feature map, one row per token.
///
/// Tokens are stored row-major: flat index `row * width + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub camera: usize,
    pub width: usize,
    pub height: usize,
    pub stride: u32,
    pub features: DenseMatrix,
}

impl TokenGrid {
    pub fn new(
        camera: usize,
        width: usize,
        height: usize,
        stride: u32,
        features: DenseMatrix,
    ) -> Result<Self> {
        ensure!(stride >= 1, "stride must be at least 1");
        ensure!(
            features.rows() == width * height,
            "grid {width}x{height} needs {} feature rows, got {}",
            width * height,
            features.rows()
        );
        Ok(Self {
            camera,
            width,
            height,
            stride,
            features,
        })
    }

    /// Grid dimensions implied by an image and a stride.
    pub fn dims_for(cam: &CameraModel, stride: u32) -> Result<(usize, usize)> {
        ensure!(stride >= 1, "stride must be at least 1");
        ensure!(
            cam.width_px >= stride && cam.height_px >= stride,
            "image {}x{} smaller than stride {stride}",
            cam.width_px,
            cam.height_px
        );
        Ok((
            (cam.width_px / stride) as usize,
            (cam.height_px / stride) as usize,
        ))
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_model(&self) -> usize {
        self.features.cols()
    }

    /// `((col + 0.5) * stride, (row + 0.5) * stride)`.
    pub fn pixel_center(&self, token: usize) -> (f64, f64) {
        let (row, col) = (token / self.width, token % self.width);
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    pub fn pixel_centers(&self) -> Vec<(f64, f64)> {
        (0..self.len()).map(|t| self.pixel_center(t)).collect()
    }

    pub fn cones(&self, cam: &CameraModel) -> Result<Vec<ConeParams>> {
        self.pixel_centers()
            .into_iter()
            .map(|(u, v)| frustum_cone(cam, u, v, self.stride))
            .collect()
    }
}

/// Per-token position embeddings for one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PosEmbedGrid {
    pub embeddings: DenseMatrix,
}

/// Embeds every token of `grid`.
pub fn position_embedding(
    grid: &TokenGrid,
    cam: &CameraModel,
    phi: &Mlp2,
    depth: &DepthConfig,
    roi: &Roi3D,
) -> Result<PosEmbedGrid> {
    let embeddings = embed_pixels(cam, &grid.pixel_centers(), phi, depth, roi)?;
    Ok(PosEmbedGrid { embeddings })
}

/// Embeds arbitrary pixel positions; one output row per pixel.
pub fn embed_pixels(
    cam: &CameraModel,
    pixels: &[(f64, f64)],
    phi: &Mlp2,
    depth: &DepthConfig,
    roi: &Roi3D,
) -> Result<DenseMatrix> {
    let depths = depth.depths()?;
    ensure!(
        phi.in_dim() == 3 * depths.len(),
        "position MLP expects {} inputs but {} depth samples give {}",
        phi.in_dim(),
        depths.len(),
        3 * depths.len()
    );
    let mut data = Vec::with_capacity(pixels.len() * phi.out_dim());
    let mut flat = Vec::with_capacity(phi.in_dim());
    for &(u, v) in pixels {
        let ray = pixel_ray(cam, u, v)?;
        let pts = normalize_points(&sample_ray_points(&ray, &depths), roi);
        flat.clear();
        flat.extend(pts.iter().flat_map(|p| [p.x, p.y, p.z]));
        data.extend(phi.forward(&flat)?);
    }
    DenseMatrix::new(pixels.len(), phi.out_dim(), data)
}

/// The pair of networks producing per-token scale and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentNet {
    pub weight_net: Mlp2,
    pub bias_net: Mlp2,
    pub content: ConeContent,
}

impl AlignmentNet {
    pub fn new(weight_net: Mlp2, bias_net: Mlp2, content: ConeContent) -> Result<Self> {
        for (name, net) in [("weight", &weight_net), ("bias", &bias_net)] {
            ensure!(
                net.in_dim() == content.dim(),
                "{name} network takes {} inputs, cone content provides {}",
                net.in_dim(),
                content.dim()
            );
        }
        ensure!(
            weight_net.out_dim() == bias_net.out_dim(),
            "weight and bias networks disagree on output width"
        );
        Ok(Self {
            weight_net,
            bias_net,
            content,
        })
    }

    pub fn seeded(d_model: usize, hidden: usize, content: ConeContent, seed: u64) -> Self {
        Self {
            weight_net: Mlp2::seeded(content.dim(), hidden, d_model, seed),
            bias_net: Mlp2::seeded(content.dim(), hidden, d_model, seed.wrapping_add(1)),
            content,
        }
    }

    /// Scale network fixed at 1, shift network fixed at 0.
    pub fn identity(d_model: usize, hidden: usize, content: ConeContent) -> Self {
        Self {
            weight_net: Mlp2::constant(content.dim(), hidden, &vec![1.0; d_model]),
            bias_net: Mlp2::constant(content.dim(), hidden, &vec![0.0; d_model]),
            content,
        }
    }

    pub fn d_model(&self) -> usize {
        self.weight_net.out_dim()
    }
}

/// `w ⊙ F + b` row by row; `cones[i]` belongs to feature row `i`.
pub fn align_features(
    features: &DenseMatrix,
    cones: &[ConeParams],
    net: &AlignmentNet,
) -> Result<DenseMatrix> {
    ensure!(
        cones.len() == features.rows(),
        "{} cones for {} tokens",
        cones.len(),
        features.rows()
    );
    ensure!(
        net.d_model() == features.cols(),
        "alignment width {} does not match feature width {}",
        net.d_model(),
        features.cols()
    );
    let mut data = Vec::with_capacity(features.rows() * features.cols());
    for (f, cone) in features.row_iter().zip(cones) {
        let input = cone.to_vec(net.content);
        let w = net.weight_net.forward(&input)?;
        let b = net.bias_net.forward(&input)?;
        data.extend(f.iter().zip(w.iter().zip(&b)).map(|(x, (wi, bi))| wi * x + bi));
    }
    DenseMatrix::new(features.rows(), features.cols(), data)
}

/// Aligned copy of `grid`; the input grid is left untouched.
pub fn spatial_align(grid: &TokenGrid, cones: &[ConeParams], net: &AlignmentNet) -> Result<TokenGrid> {
    let features = align_features(&grid.features, cones, net)?;
    TokenGrid::new(grid.camera, grid.width, grid.height, grid.stride, features)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    /// Keys `F + E`, values `F`.
    Petr,
    /// Keys `F* + E`, values `F*` with `F*` the aligned features.
    #[default]
    Focal,
}

impl FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "petr" => Ok(EncodingMode::Petr),
            "focal" => Ok(EncodingMode::Focal),
            other => Err(Error::Config(format!(
                "unknown encoding mode {other:?} (expected petr or focal)"
            ))),
        }
    }
}

impl fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodingMode::Petr => "petr",
            EncodingMode::Focal => "focal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyValue {
    pub keys: DenseMatrix,
    pub values: DenseMatrix,
}

/// Builds attention keys and values.
///
/// `raw` are the encoder features; `aligned` must be present in focal mode.
pub fn compose_key_value(
    raw: &DenseMatrix,
    aligned: Option<&DenseMatrix>,
    pos: &DenseMatrix,
    mode: EncodingMode,
) -> Result<KeyValue> {
    let content = match mode {
        EncodingMode::Petr => raw,
        EncodingMode::Focal => aligned
            .ok_or_else(|| Error::contract("focal mode needs aligned features"))?,
    };
    ensure!(
        content.rows() == raw.rows() && content.cols() == raw.cols(),
        "aligned features do not match raw feature shape"
    );
    Ok(KeyValue {
        keys: content.add(pos)?,
        values: content.clone(),
    })
}
