//! Pose to positional feature map: frequency encoding, MLP reprojection,
//! row-major reshape and nearest-neighbour upsampling.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{uniform_fan_in, ParamStore};
use crate::pose::{normalize_pose, NormalizedPose, Pose6D, PoseStats};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmbeddingVariant {
    /// Raw pose through the MLP.
    MlpOnly,
    /// Normalised pose tiled over the grid.
    NormOnly,
    /// Encoded normalised pose tiled over the grid.
    NormPosenc,
    /// Normalised pose through the MLP.
    NormMlp,
    /// Normalise, encode, MLP.
    Full,
}

impl EmbeddingVariant {
    pub const ALL: [EmbeddingVariant; 5] = [Self::MlpOnly, Self::NormOnly, Self::NormPosenc, Self::NormMlp, Self::Full];

    pub fn label(self) -> &'static str {
        match self {
            Self::MlpOnly => "MLP",
            Self::NormOnly => "Norm",
            Self::NormPosenc => "Norm+PosEnc",
            Self::NormMlp => "Norm+MLP",
            Self::Full => "Norm+PosEnc+MLP",
        }
    }

    pub fn has_mlp(self) -> bool {
        matches!(self, Self::MlpOnly | Self::NormMlp | Self::Full)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase().replace(['-', '+'], "_");
        Ok(match k.as_str() {
            "mlp_only" | "mlp" => Self::MlpOnly,
            "norm_only" | "norm" => Self::NormOnly,
            "norm_posenc" => Self::NormPosenc,
            "norm_mlp" => Self::NormMlp,
            "full" | "norm_posenc_mlp" => Self::Full,
            _ => return Err(Error::Config(format!("unknown embedding variant `{s}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub variant: EmbeddingVariant,
    /// Frequencies per pose component.
    pub m: usize,
    pub sigma: f64,
    /// Hidden MLP widths; the output width is `h * w`.
    pub hidden: Vec<usize>,
    pub h: usize,
    pub w: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl EmbeddingConfig {
    /// Defaults for an image of `height x width`: grid at 1/8 resolution.
    pub fn new(variant: EmbeddingVariant, height: usize, width: usize) -> Self {
        Self {
            variant,
            m: 32,
            sigma: 16.0,
            hidden: vec![512, 1024],
            h: (height / 8).max(1),
            w: (width / 8).max(1),
            height,
            width,
            channels: 1,
        }
    }

    pub fn d1(&self) -> usize {
        2 * self.m * 6
    }

    pub fn d2(&self) -> usize {
        self.h * self.w
    }

    /// Integer upsampling factor from grid to image.
    pub fn alpha(&self) -> usize {
        self.height / self.h
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("encoding depth m must be at least 1".into()));
        }
        if !(self.sigma > 1.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be a finite value > 1, got {}", self.sigma)));
        }
        if self.channels != 1 {
            return Err(Error::Config("positional feature map has exactly one channel".into()));
        }
        if self.h == 0 || self.w == 0 || self.height % self.h != 0 || self.width % self.w != 0 {
            return Err(Error::Config(format!(
                "grid {}x{} does not divide image {}x{}",
                self.h, self.w, self.height, self.width
            )));
        }
        if self.height / self.h != self.width / self.w {
            return Err(Error::Config("grid aspect ratio differs from image aspect ratio".into()));
        }
        Ok(())
    }

    fn mlp(&self) -> Option<Mlp> {
        let input = match self.variant {
            EmbeddingVariant::Full => self.d1(),
            EmbeddingVariant::NormMlp | EmbeddingVariant::MlpOnly => 6,
            _ => return None,
        };
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(self.d2());
        Some(Mlp::new("embedding.mlp", widths))
    }
}

/// Fully connected stack with ReLU between layers and a linear output.
/// Weights are stored `(out, in)` as `{prefix}.{i}.weight` / `.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub widths: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, widths: Vec<usize>) -> Self {
        Self { prefix: prefix.into(), widths }
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight_name(&self, i: usize) -> String {
        format!("{}.{i}.weight", self.prefix)
    }

    pub fn bias_name(&self, i: usize) -> String {
        format!("{}.{i}.bias", self.prefix)
    }

    pub fn init<F: Scalar>(&self, store: &mut ParamStore<F>, rng: &mut ChaCha8Rng) {
        for i in 0..self.layers() {
            let (fan_in, out) = (self.widths[i], self.widths[i + 1]);
            store.insert(self.weight_name(i), uniform_fan_in(rng, &[out, fan_in], fan_in), true);
            store.insert(self.bias_name(i), uniform_fan_in(rng, &[out], fan_in), true);
        }
    }

    /// `x (n, in) -> (n, out)`.
    pub fn forward<'g, F: Scalar>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Result<Var<'g, F>> {
        let mut h = x;
        for i in 0..self.layers() {
            let w = g.param(store, &self.weight_name(i))?;
            let b = g.param(store, &self.bias_name(i))?;
            h = h.linear(w, Some(b))?;
            if i + 1 < self.layers() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// `cos(2 pi sigma^(j/m) p), sin(...)` per component `p` and `j < m`,
/// laid out component-major, frequency-minor, cosine before sine.
pub fn encode_position(pbar: &[f64], m: usize, sigma: f64) -> Result<Vec<f64>> {
    if m == 0 || !(sigma > 1.0) {
        return Err(Error::Config(format!("positional encoding needs m >= 1 and sigma > 1 (m={m}, sigma={sigma})")));
    }
    let mut out = Vec::with_capacity(2 * m * pbar.len());
    for &p in pbar {
        for j in 0..m {
            let arg = std::f64::consts::TAU * sigma.powf(j as f64 / m as f64) * p;
            out.push(arg.cos());
            out.push(arg.sin());
        }
    }
    Ok(out)
}

/// Single-vector MLP forward pass.
pub fn project<F: Scalar>(enc: &[f64], mlp: &Mlp, store: &ParamStore<F>) -> Result<Vec<F>> {
    if enc.len() != mlp.widths[0] {
        return Err(Error::Shape(format!("MLP expects {} inputs, got {}", mlp.widths[0], enc.len())));
    }
    let g = Graph::inference();
    let x = g.constant(Tensor::new([1, enc.len()], enc.iter().map(|&v| F::of(v)).collect())?);
    Ok(mlp.forward(&g, store, x)?.value().data().to_vec())
}

/// Row-major inverse vectorisation into a `(1, 1, h, w)` grid.
pub fn reshape_to_grid<F: Scalar>(rho: &[F], h: usize, w: usize) -> Result<Tensor<F>> {
    if rho.len() != h * w {
        return Err(Error::Shape(format!("cannot reshape {} values into {h}x{w}", rho.len())));
    }
    Tensor::new([1, 1, h, w], rho.to_vec())
}

/// Replicates every grid element into an `alpha x alpha` block.
pub fn upsample_nearest<F: Scalar>(grid: &Tensor<F>, alpha: usize) -> Result<Tensor<F>> {
    let g = Graph::inference();
    Ok((*g.constant(grid.clone()).upsample_nearest(alpha)?.value()).clone())
}

/// Like [`upsample_nearest`] but checks that `target` is an integer multiple
/// of the grid size.
pub fn upsample_to<F: Scalar>(grid: &Tensor<F>, height: usize, width: usize) -> Result<Tensor<F>> {
    let (_, _, h, w) = grid.dims4()?;
    if h == 0 || height % h != 0 || width % w != 0 || height / h != width / w {
        return Err(Error::Config(format!("{h}x{w} grid cannot be upsampled to {height}x{width} by an integer factor")));
    }
    upsample_nearest(grid, height / h)
}

fn tile(v: &[f64], n: usize) -> Vec<f64> {
    v.iter().copied().cycle().take(n).collect()
}

/// Vector that a variant feeds into its MLP (or tiles over the grid), plus
/// the normalised pose carrying any out-of-range warning.
pub fn pose_features(p: &Pose6D, stats: &PoseStats, cfg: &EmbeddingConfig) -> Result<(Vec<f64>, NormalizedPose)> {
    let pbar = normalize_pose(p, stats)?;
    let v = match cfg.variant {
        EmbeddingVariant::MlpOnly => p.to_array().to_vec(),
        EmbeddingVariant::NormOnly | EmbeddingVariant::NormMlp => pbar.values.to_vec(),
        EmbeddingVariant::NormPosenc | EmbeddingVariant::Full => encode_position(&pbar.values, cfg.m, cfg.sigma)?,
    };
    Ok((v, pbar))
}

/// Learned state of the embedding (nothing for the tiled variants).
pub fn init_params<F: Scalar>(cfg: &EmbeddingConfig, store: &mut ParamStore<F>, rng: &mut ChaCha8Rng) {
    if let Some(mlp) = cfg.mlp() {
        mlp.init(store, rng);
    }
}

pub fn mlp_of(cfg: &EmbeddingConfig) -> Option<Mlp> {
    cfg.mlp()
}

/// Batched embedding, `feats[i]` from [`pose_features`]; output `(n, 1, H, W)`.
pub fn embed_graph<'g, F: Scalar>(
    g: &'g Graph<F>,
    store: &ParamStore<F>,
    cfg: &EmbeddingConfig,
    feats: &[Vec<f64>],
) -> Result<Var<'g, F>> {
    let n = feats.len();
    let width = feats.first().map_or(0, Vec::len);
    if n == 0 || feats.iter().any(|f| f.len() != width) {
        return Err(Error::Shape("embedding batch is empty or ragged".into()));
    }
    let grid = match cfg.mlp() {
        Some(mlp) => {
            if width != mlp.widths[0] {
                return Err(Error::Shape(format!("MLP expects {} inputs, got {width}", mlp.widths[0])));
            }
            let x = g.constant(Tensor::new([n, width], feats.iter().flatten().map(|&v| F::of(v)).collect())?);
            mlp.forward(g, store, x)?.reshape([n, 1, cfg.h, cfg.w])?
        }
        None => {
            let d2 = cfg.d2();
            let data = feats.iter().flat_map(|f| tile(f, d2)).map(F::of).collect();
            g.constant(Tensor::new([n, 1, cfg.h, cfg.w], data)?)
        }
    };
    grid.upsample_nearest(cfg.alpha())
}

/// Positional feature map `(1, 1, H, W)` for one pose.
pub fn embed<F: Scalar>(p: &Pose6D, stats: &PoseStats, cfg: &EmbeddingConfig, store: &ParamStore<F>) -> Result<Tensor<F>> {
    cfg.validate()?;
    let (feats, _) = pose_features(p, stats, cfg)?;
    let g = Graph::inference();
    Ok((*embed_graph(&g, store, cfg, &[feats])?.value()).clone())
}
