//! The rendering network: a frozen residual backbone (encoder I), a
//! position-aware convolutional encoder (encoder II) with skip outputs, and
//! an upsampling decoder.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{self, EmbeddingConfig, EmbeddingVariant};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::params::{he_normal, uniform_fan_in, ParamStore};
use crate::pose::{Pose6D, PoseStats};
use crate::tensor::{Scalar, Tensor};

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
const BN_EPS: f64 = 1e-5;
/// Output stride of the truncated backbone and of encoder II.
pub const FEATURE_STRIDE: usize = 8;
pub const BACKBONE_CHANNELS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    Full,
    Lite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Encoder1Kind {
    PretrainedResnet,
    None,
}

impl Encoder1Kind {
    pub fn label(self) -> &'static str {
        match self {
            Self::PretrainedResnet => "ResNet",
            Self::None => "-",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder1: Encoder1Kind,
    pub embedding: EmbeddingConfig,
    pub height: usize,
    pub width: usize,
    /// Encoder II conv widths; the last entry is `d3`.
    pub encoder2_widths: Vec<usize>,
    /// Output widths of the stride-2 transposed-conv decoder stages.
    pub decoder_widths: Vec<usize>,
    /// Channels of the expanded backbone features `F1'`.
    pub f1_channels: usize,
    /// Backbone weights in torchvision ResNet-18 naming (safetensors). When
    /// absent the backbone is seeded and its normalisation calibrated.
    #[serde(default)]
    pub backbone_weights: Option<PathBuf>,
    #[serde(default = "yes")]
    pub freeze_encoder1: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn new(variant: Variant, embedding: EmbeddingVariant, height: usize, width: usize) -> Self {
        let (encoder2_widths, decoder_widths, f1_channels) = match variant {
            Variant::Full => (vec![32, 64, 64, 128, 256], vec![128, 64], 512),
            Variant::Lite => (vec![16, 32, 64, 128], vec![64], 256),
        };
        Self {
            variant,
            encoder1: Encoder1Kind::PretrainedResnet,
            embedding: EmbeddingConfig::new(embedding, height, width),
            height,
            width,
            encoder2_widths,
            decoder_widths,
            f1_channels,
            backbone_weights: None,
            freeze_encoder1: true,
            seed: 0,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(Variant::Full, EmbeddingVariant::Full, height, width)
    }

    pub fn lite(height: usize, width: usize) -> Self {
        Self::new(Variant::Lite, EmbeddingVariant::Full, height, width)
    }

    pub fn with_encoder1(mut self, e: Encoder1Kind) -> Self {
        self.encoder1 = e;
        self
    }

    pub fn with_embedding(mut self, v: EmbeddingVariant) -> Self {
        self.embedding.variant = v;
        self
    }

    pub fn d3(&self) -> usize {
        *self.encoder2_widths.last().unwrap_or(&0)
    }

    /// Number of skip maps passed from encoder II to the decoder.
    pub fn skip_count(&self) -> usize {
        2
    }

    pub fn concat_channels(&self) -> usize {
        self.d3() + if self.encoder1 == Encoder1Kind::None { 0 } else { self.f1_channels }
    }

    /// Short identifier, e.g. `LITE/RESNET/FULL@64x64`.
    pub fn variant_id(&self) -> String {
        format!(
            "{}/{}/{}@{}x{}",
            match self.variant {
                Variant::Full => "FULL",
                Variant::Lite => "LITE",
            },
            match self.encoder1 {
                Encoder1Kind::PretrainedResnet => "RESNET",
                Encoder1Kind::None => "NONE",
            },
            serde_json::to_value(self.embedding.variant).unwrap().as_str().unwrap(),
            self.height,
            self.width
        )
    }

    /// Same architecture at another resolution (embedding grid rescaled).
    pub fn at_resolution(&self, height: usize, width: usize) -> Self {
        let mut c = self.clone();
        c.height = height;
        c.width = width;
        c.embedding.height = height;
        c.embedding.width = width;
        c.embedding.h = (height / 8).max(1);
        c.embedding.w = (width / 8).max(1);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        if (self.embedding.height, self.embedding.width) != (self.height, self.width) {
            return Err(Error::Config("embedding resolution differs from model resolution".into()));
        }
        if self.height % 8 != 0 || self.width % 8 != 0 || self.height < 32 || self.width < 32 {
            return Err(Error::ImageTooSmall(format!(
                "{}x{}: both sides must be multiples of 8 and at least 32",
                self.height, self.width
            )));
        }
        if self.embedding.alpha() != FEATURE_STRIDE {
            return Err(Error::Config(format!(
                "embedding grid must sit at 1/{FEATURE_STRIDE} resolution (upsample factor {})",
                self.embedding.alpha()
            )));
        }
        let n2 = self.encoder2_widths.len();
        if n2 < 3 || self.decoder_widths.is_empty() || self.decoder_widths.len() > 2 {
            return Err(Error::Config(
                "encoder II needs at least 3 convs and the decoder 1 or 2 upsampling stages".into(),
            ));
        }
        if self.encoder2_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) || self.f1_channels == 0 {
            return Err(Error::Config("zero layer width".into()));
        }
        Ok(())
    }
}

/// Outputs of both encoders for a batch.
pub struct FeaturePack<'g, F: Scalar> {
    pub f1_prime: Option<Var<'g, F>>,
    pub f2: Var<'g, F>,
    /// `S_1` at full resolution, `S_2` at quarter resolution.
    pub skips: Vec<Var<'g, F>>,
}

/// Architecture plus parameters.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
}

struct BlockSpec {
    name: String,
    cin: usize,
    cout: usize,
    stride: usize,
    dil1: usize,
    dil2: usize,
    downsample: bool,
}

fn backbone_blocks() -> Vec<BlockSpec> {
    let mut v = Vec::new();
    // layer3 trades its stride for dilation so the output stride stays 8.
    let layers = [(1, 64, 64, 1, 1, 1), (2, 64, 128, 2, 1, 1), (3, 128, 256, 1, 1, 2)];
    for (l, cin, cout, stride, prev_dil, dil) in layers {
        for b in 0..2 {
            v.push(BlockSpec {
                name: format!("encoder1.layer{l}.{b}"),
                cin: if b == 0 { cin } else { cout },
                cout,
                stride: if b == 0 { stride } else { 1 },
                dil1: if b == 0 { prev_dil } else { dil },
                dil2: dil,
                downsample: b == 0 && (stride != 1 || cin != cout),
            });
        }
    }
    v
}

fn conv_shape(cout: usize, cin: usize, k: usize) -> [usize; 4] {
    [cout, cin, k, k]
}

/// Per-channel statistics collected while calibrating the seeded backbone.
type Calibration<F> = HashMap<String, (Tensor<F>, Tensor<F>)>;

impl<F: Scalar> Model<F> {
    /// Fresh parameters for `config`, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        Self::init(config, true)
    }

    /// Parameter layout of `config` with unset backbone normalisation; the
    /// values are meant to be overwritten, e.g. by a checkpoint.
    pub fn skeleton(config: ModelConfig) -> Result<Self> {
        Self::init(config, false)
    }

    fn init(config: ModelConfig, prepare_backbone: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut m = Self { config, params: ParamStore::new() };
        if m.config.encoder1 == Encoder1Kind::PretrainedResnet {
            m.init_backbone(&mut params, &mut rng);
            let e = m.config.f1_channels;
            params.insert("encoder1.expand.weight", he_normal(&mut rng, &conv_shape(e, 256, 3), 256 * 9), true);
            params.insert("encoder1.expand.bias", Tensor::zeros([e]), true);
        }
        embedding::init_params(&m.config.embedding, &mut params, &mut rng);
        let mut cin = 4;
        for (i, &c) in m.config.encoder2_widths.iter().enumerate() {
            params.insert(format!("encoder2.conv{i}.weight"), he_normal(&mut rng, &conv_shape(c, cin, 3), cin * 9), true);
            params.insert(format!("encoder2.conv{i}.bias"), Tensor::zeros([c]), true);
            cin = c;
        }
        let widths = m.config.encoder2_widths.clone();
        let n2 = widths.len();
        let (s1_c, s2_c) = (widths[n2 - 3], widths[n2 - 2]);
        let mut cin = m.config.concat_channels();
        for (k, &c) in m.config.decoder_widths.clone().iter().enumerate() {
            params.insert(format!("decoder.up{k}.weight"), he_normal(&mut rng, &[cin, c, 4, 4], cin * 4), true);
            params.insert(format!("decoder.up{k}.bias"), Tensor::zeros([c]), true);
            cin = c + if k == 0 { s2_c } else { 0 };
        }
        cin += s1_c;
        params.insert("decoder.head.weight", uniform_fan_in(&mut rng, &[cin, 3, 3, 3], cin * 9), true);
        params.insert("decoder.head.bias", Tensor::zeros([3]), true);
        m.params = params;
        if m.config.encoder1 == Encoder1Kind::PretrainedResnet {
            match m.config.backbone_weights.clone() {
                _ if !prepare_backbone => {}
                Some(path) => m.load_backbone(&path)?,
                None => m.calibrate_backbone(&mut rng)?,
            }
            let trainable = !m.config.freeze_encoder1;
            for i in 0..m.params.len() {
                let name = m.params.name(i);
                if name.starts_with("encoder1.") && !name.starts_with("encoder1.expand") {
                    m.params.set_trainable(i, trainable);
                }
            }
        }
        Ok(m)
    }

    fn init_backbone(&self, params: &mut ParamStore<F>, rng: &mut ChaCha8Rng) {
        let bn = |params: &mut ParamStore<F>, name: &str, c: usize| {
            params.insert(format!("{name}.scale"), Tensor::full([c], F::one()), false);
            params.insert(format!("{name}.shift"), Tensor::zeros([c]), false);
        };
        params.insert("encoder1.conv1.weight", he_normal(rng, &conv_shape(64, 3, 7), 3 * 49), false);
        bn(params, "encoder1.bn1", 64);
        for b in backbone_blocks() {
            params.insert(format!("{}.conv1.weight", b.name), he_normal(rng, &conv_shape(b.cout, b.cin, 3), b.cin * 9), false);
            bn(params, &format!("{}.bn1", b.name), b.cout);
            params.insert(format!("{}.conv2.weight", b.name), he_normal(rng, &conv_shape(b.cout, b.cout, 3), b.cout * 9), false);
            bn(params, &format!("{}.bn2", b.name), b.cout);
            if b.downsample {
                params.insert(format!("{}.downsample.conv.weight", b.name), he_normal(rng, &conv_shape(b.cout, b.cin, 1), b.cin), false);
                bn(params, &format!("{}.downsample.bn", b.name), b.cout);
            }
        }
    }

    /// Sets every backbone normalisation so its outputs have zero mean and
    /// unit variance over a batch of procedural textures.
    fn calibrate_backbone(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let imgs: Vec<Image> = (0..6).map(|_| procedural_texture(rng, 64, 64)).collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let x = Image::batch::<F>(&refs)?;
        let g = Graph::inference();
        let mut calib = Calibration::new();
        self.backbone(&g, g.constant(x), Some(&mut calib))?;
        for (name, (scale, shift)) in calib {
            self.params.insert(format!("{name}.scale"), scale, false);
            self.params.insert(format!("{name}.shift"), shift, false);
        }
        Ok(())
    }

    /// Loads torchvision ResNet-18 tensors (`conv1.weight`, `bn1.*`,
    /// `layerL.B.*`), folding batch-norm running statistics into the
    /// per-channel affine maps.
    fn load_backbone(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::MissingPretrainedWeights(format!("{}: {e}", path.display())))?;
        let st = safetensors::SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::MissingPretrainedWeights(format!("{}: {e}", path.display())))?;
        let read = |name: &str, shape: &[usize]| -> Result<Tensor<F>> {
            let v = st
                .tensor(name)
                .map_err(|_| Error::MissingPretrainedWeights(format!("{} lacks `{name}`", path.display())))?;
            if v.shape() != shape || v.dtype() != safetensors::Dtype::F32 {
                return Err(Error::MissingPretrainedWeights(format!(
                    "`{name}` is {:?} {:?}, expected F32 {shape:?}",
                    v.dtype(),
                    v.shape()
                )));
            }
            let data = v
                .data()
                .chunks_exact(4)
                .map(|b| F::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect();
            Tensor::new(shape.to_vec(), data)
        };
        let mut conv = |dst: &str, src: &str, shape: [usize; 4]| -> Result<()> {
            let t = read(src, &shape)?;
            self.params.insert(dst, t, false);
            Ok(())
        };
        let mut pairs = vec![("encoder1.conv1".to_string(), "conv1".to_string(), conv_shape(64, 3, 7))];
        let mut bns = vec![("encoder1.bn1".to_string(), "bn1".to_string(), 64)];
        for b in backbone_blocks() {
            let src = b.name.trim_start_matches("encoder1.").to_string();
            pairs.push((format!("{}.conv1", b.name), format!("{src}.conv1"), conv_shape(b.cout, b.cin, 3)));
            pairs.push((format!("{}.conv2", b.name), format!("{src}.conv2"), conv_shape(b.cout, b.cout, 3)));
            bns.push((format!("{}.bn1", b.name), format!("{src}.bn1"), b.cout));
            bns.push((format!("{}.bn2", b.name), format!("{src}.bn2"), b.cout));
            if b.downsample {
                pairs.push((format!("{}.downsample.conv", b.name), format!("{src}.downsample.0"), conv_shape(b.cout, b.cin, 1)));
                bns.push((format!("{}.downsample.bn", b.name), format!("{src}.downsample.1"), b.cout));
            }
        }
        for (dst, src, shape) in pairs {
            conv(&format!("{dst}.weight"), &format!("{src}.weight"), shape)?;
        }
        for (dst, src, c) in bns {
            let gamma = read(&format!("{src}.weight"), &[c])?;
            let beta = read(&format!("{src}.bias"), &[c])?;
            let mean = read(&format!("{src}.running_mean"), &[c])?;
            let var = read(&format!("{src}.running_var"), &[c])?;
            let scale = Tensor::from_fn([c], |i| gamma.data()[i] / (var.data()[i] + F::of(BN_EPS)).sqrt());
            let shift = Tensor::from_fn([c], |i| beta.data()[i] - mean.data()[i] * scale.data()[i]);
            self.params.insert(format!("{dst}.scale"), scale, false);
            self.params.insert(format!("{dst}.shift"), shift, false);
        }
        Ok(())
    }

    fn bn<'g>(
        &self,
        g: &'g Graph<F>,
        name: &str,
        x: Var<'g, F>,
        calib: &mut Option<&mut Calibration<F>>,
    ) -> Result<Var<'g, F>> {
        if let Some(c) = calib {
            let v = x.value();
            let (n, ch, h, w) = v.dims4()?;
            let cnt = (n * h * w) as f64;
            let mut scale = Vec::with_capacity(ch);
            let mut shift = Vec::with_capacity(ch);
            for k in 0..ch {
                let vals = (0..n).flat_map(|b| v.outer(b)[k * h * w..(k + 1) * h * w].iter().map(|q| q.f64()));
                let (s, ss) = vals.fold((0.0, 0.0), |(s, ss), q| (s + q, ss + q * q));
                let mean = s / cnt;
                let var = (ss / cnt - mean * mean).max(0.0);
                let inv = 1.0 / (var + BN_EPS).sqrt();
                scale.push(F::of(inv));
                shift.push(F::of(-mean * inv));
            }
            let (st, sh) = (Tensor::new([ch], scale)?, Tensor::new([ch], shift)?);
            let out = x.channel_affine(g.constant(st.clone()), g.constant(sh.clone()));
            c.insert(name.to_string(), (st, sh));
            return out;
        }
        x.channel_affine(g.param(&self.params, &format!("{name}.scale"))?, g.param(&self.params, &format!("{name}.shift"))?)
    }

    /// Truncated backbone: `(n, 3, H, W)` in `[0, 1]` to `(n, 256, H/8, W/8)`.
    fn backbone<'g>(
        &self,
        g: &'g Graph<F>,
        x: Var<'g, F>,
        mut calib: Option<&mut Calibration<F>>,
    ) -> Result<Var<'g, F>> {
        let p = |name: &str| g.param(&self.params, name);
        let scale = Tensor::from_fn([3], |i| F::of(1.0 / IMAGENET_STD[i]));
        let shift = Tensor::from_fn([3], |i| F::of(-IMAGENET_MEAN[i] / IMAGENET_STD[i]));
        let x = x.channel_affine(g.constant(scale), g.constant(shift))?;
        let x = x.conv2d(p("encoder1.conv1.weight")?, None, 2, 3, 1)?;
        let mut x = self.bn(g, "encoder1.bn1", x, &mut calib)?.relu().max_pool(2)?;
        for b in backbone_blocks() {
            let h = x.conv2d(p(&format!("{}.conv1.weight", b.name))?, None, b.stride, b.dil1, b.dil1)?;
            let h = self.bn(g, &format!("{}.bn1", b.name), h, &mut calib)?.relu();
            let h = h.conv2d(p(&format!("{}.conv2.weight", b.name))?, None, 1, b.dil2, b.dil2)?;
            let h = self.bn(g, &format!("{}.bn2", b.name), h, &mut calib)?;
            let id = if b.downsample {
                let d = x.conv2d(p(&format!("{}.downsample.conv.weight", b.name))?, None, b.stride, 0, 1)?;
                self.bn(g, &format!("{}.downsample.bn", b.name), d, &mut calib)?
            } else {
                x
            };
            x = h.add(id)?.relu();
        }
        Ok(x)
    }

    fn check_input(&self, x: &Var<'_, F>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("expected (n, 3, H, W) images, got {s:?}")));
        }
        if (s[2], s[3]) != (self.config.height, self.config.width) {
            return Err(Error::Resolution {
                expected_h: self.config.height,
                expected_w: self.config.width,
                got_h: s[2],
                got_w: s[3],
            });
        }
        Ok(s[0])
    }

    /// Frozen backbone features `F1 (n, 256, H/8, W/8)`; `None` without encoder I.
    pub fn backbone_graph<'g>(&self, g: &'g Graph<F>, x: Var<'g, F>) -> Result<Option<Var<'g, F>>> {
        self.check_input(&x)?;
        if self.config.encoder1 == Encoder1Kind::None {
            return Ok(None);
        }
        self.backbone(g, x, None).map(Some)
    }

    /// Expansion `F1 -> F1'`.
    pub fn expand_graph<'g>(&self, g: &'g Graph<F>, f1: Var<'g, F>) -> Result<Var<'g, F>> {
        let p = |name: &str| g.param(&self.params, name);
        Ok(f1.conv2d(p("encoder1.expand.weight")?, Some(p("encoder1.expand.bias")?), 1, 1, 1)?.relu())
    }

    /// Encoder II on `T = [I_s, rho]`.
    pub fn encode_position_aware_graph<'g>(
        &self,
        g: &'g Graph<F>,
        x: Var<'g, F>,
        emb: Var<'g, F>,
    ) -> Result<(Var<'g, F>, Vec<Var<'g, F>>)> {
        let n = self.check_input(&x)?;
        let (h, w) = (self.config.height, self.config.width);
        if emb.shape() != [n, 1, h, w] {
            return Err(Error::Shape(format!("embedding {:?} for images {:?}", emb.shape(), x.shape())));
        }
        let mut t = Var::concat_channels(&[x, emb])?;
        let m = self.config.encoder2_widths.len();
        let mut skips = Vec::with_capacity(2);
        for i in 0..m {
            let p = |s: &str| g.param(&self.params, &format!("encoder2.conv{i}.{s}"));
            t = t.conv2d(p("weight")?, Some(p("bias")?), 1, 1, 1)?.relu();
            if i == m - 3 {
                skips.push(t);
            } else if i == m - 2 {
                t = t.max_pool(4)?;
                skips.push(t);
            } else if i == m - 1 {
                t = t.max_pool(2)?;
            }
        }
        Ok((t, skips))
    }

    /// Decoder from both encoders' outputs to an `(n, 3, H, W)` image in `[0, 1]`.
    pub fn decode_graph<'g>(&self, g: &'g Graph<F>, pack: &FeaturePack<'g, F>) -> Result<Var<'g, F>> {
        let p = |name: &str| g.param(&self.params, name);
        if pack.skips.len() != self.config.skip_count() {
            return Err(Error::Shape(format!("decoder needs {} skips, got {}", self.config.skip_count(), pack.skips.len())));
        }
        if (pack.f1_prime.is_some()) != (self.config.encoder1 != Encoder1Kind::None) {
            return Err(Error::Shape("encoder I features present/absent contrary to config".into()));
        }
        let mut x = match pack.f1_prime {
            Some(f1) => Var::concat_channels(&[f1, pack.f2])?,
            None => pack.f2,
        };
        let stages = self.config.decoder_widths.len();
        for k in 0..stages {
            x = x
                .conv_transpose2d(p(&format!("decoder.up{k}.weight"))?, Some(p(&format!("decoder.up{k}.bias"))?), 2, 1)?
                .relu();
            if k == 0 {
                x = Var::concat_channels(&[x, pack.skips[1]])?;
            }
        }
        x = x.upsample_bilinear(FEATURE_STRIDE >> stages)?;
        x = Var::concat_channels(&[x, pack.skips[0]])?;
        Ok(x.conv_transpose2d(p("decoder.head.weight")?, Some(p("decoder.head.bias")?), 1, 1)?.sigmoid())
    }

    /// Full forward pass. `feats` come from [`embedding::pose_features`];
    /// `f1` may carry precomputed backbone features.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<F>,
        images: Var<'g, F>,
        feats: &[Vec<f64>],
        f1: Option<Var<'g, F>>,
    ) -> Result<Var<'g, F>> {
        let emb = embedding::embed_graph(g, &self.params, &self.config.embedding, feats)?;
        let f1 = match f1 {
            Some(f) => Some(f),
            None => self.backbone_graph(g, images)?,
        };
        let f1_prime = match f1 {
            Some(f) if self.config.encoder1 != Encoder1Kind::None => Some(self.expand_graph(g, f)?),
            _ => None,
        };
        let (f2, skips) = self.encode_position_aware_graph(g, images, emb)?;
        self.decode_graph(g, &FeaturePack { f1_prime, f2, skips })
    }

    /// `F1' (1, f1_channels, H/8, W/8)` for one image.
    pub fn encode_image(&self, img: &Image) -> Result<Tensor<F>> {
        if self.config.encoder1 == Encoder1Kind::None {
            return Err(Error::Config("model has no encoder I".into()));
        }
        check_range(img)?;
        let g = Graph::inference();
        let f1 = self.backbone_graph(&g, g.constant(img.to_tensor()))?.expect("encoder I present");
        Ok((*self.expand_graph(&g, f1)?.value()).clone())
    }

    /// `(F2, skips)` for one image and its positional feature map.
    pub fn encode_position_aware(&self, img: &Image, emb: &Tensor<F>) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
        let g = Graph::inference();
        let (f2, skips) = self.encode_position_aware_graph(&g, g.constant(img.to_tensor()), g.constant(emb.clone()))?;
        Ok(((*f2.value()).clone(), skips.iter().map(|s| (*s.value()).clone()).collect()))
    }

    pub fn decode(&self, f1_prime: Option<&Tensor<F>>, f2: &Tensor<F>, skips: &[Tensor<F>]) -> Result<Image> {
        let g = Graph::inference();
        let pack = FeaturePack {
            f1_prime: f1_prime.map(|t| g.constant(t.clone())),
            f2: g.constant(f2.clone()),
            skips: skips.iter().map(|s| g.constant(s.clone())).collect(),
        };
        Image::from_tensor(&self.decode_graph(&g, &pack)?.value(), 0)
    }

    /// Novel view of `img` at `pose`, relative to the input camera.
    pub fn synthesize(&self, img: &Image, pose: &Pose6D, stats: &PoseStats) -> Result<Image> {
        check_range(img)?;
        let (feats, _) = embedding::pose_features(pose, stats, &self.config.embedding)?;
        let g = Graph::inference();
        let out = self.forward(&g, g.constant(img.to_tensor()), &[feats], None)?;
        Image::from_tensor(&out.value(), 0)
    }

    pub fn param_count(&self) -> usize {
        self.params.count(false)
    }
}

fn check_range(img: &Image) -> Result<()> {
    if !img.is_valid() {
        return Err(Error::Shape("image values must be finite and within [0, 1]".into()));
    }
    Ok(())
}

/// Random sinusoid gratings over colour blocks.
pub fn procedural_texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let waves: Vec<[f32; 5]> = (0..4)
        .map(|_| {
            [
                rng.random_range(0.02..0.5),
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.1..0.3),
                rng.random_range(0.0..3.0),
            ]
        })
        .collect();
    let base: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    Image::from_fn(h, w, |c, y, x| {
        let mut v = base[c];
        for wv in &waves {
            let a = wv[1].cos() * x as f32 + wv[1].sin() * y as f32;
            v += wv[3] * (wv[0] * a + wv[2] + wv[4] * c as f32).sin();
        }
        v.clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::PoseStats;

    fn stats() -> PoseStats {
        PoseStats::new([-0.1, -0.1, -0.1, -0.1, -0.1, -0.1], [0.1; 6]).unwrap()
    }

    fn img(h: usize, w: usize, seed: u64) -> Image {
        procedural_texture(&mut ChaCha8Rng::seed_from_u64(seed), h, w)
    }

    #[test]
    fn feature_shapes_full_256_trace() {
        let m = Model::<f32>::new(ModelConfig::full(256, 256)).unwrap();
        let f1p = m.encode_image(&img(256, 256, 1)).unwrap();
        assert_eq!(f1p.shape(), &[1, 512, 32, 32]);
        let emb = embedding::embed(&Pose6D::IDENTITY, &stats(), &m.config.embedding, &m.params).unwrap();
        assert_eq!(emb.shape(), &[1, 1, 256, 256]);
        let (f2, skips) = m.encode_position_aware(&img(256, 256, 1), &emb).unwrap();
        assert_eq!(f2.shape(), &[1, 256, 32, 32]);
        assert_eq!(skips.len(), m.config.skip_count());
        assert_eq!(skips[0].shape(), &[1, 64, 256, 256]);
        assert_eq!(skips[1].shape(), &[1, 128, 64, 64]);
        let out = m.decode(Some(&f1p), &f2, &skips).unwrap();
        assert_eq!((out.height(), out.width()), (256, 256));
        assert!(out.is_valid());
    }

    #[test]
    fn lite_and_no_encoder_shapes() {
        let m = Model::<f32>::new(ModelConfig::lite(64, 64)).unwrap();
        let out = m.synthesize(&img(64, 64, 2), &Pose6D::IDENTITY, &stats()).unwrap();
        assert_eq!((out.height(), out.width()), (64, 64));
        let none = Model::<f32>::new(ModelConfig::lite(64, 64).with_encoder1(Encoder1Kind::None)).unwrap();
        assert_eq!(none.config.concat_channels(), 128);
        let out = none.synthesize(&img(64, 64, 2), &Pose6D::translation(0.05, 0.0, 0.0), &stats()).unwrap();
        assert!(out.is_valid());
        assert!(none.encode_image(&img(64, 64, 2)).is_err());
    }

    #[test]
    fn zero_image_is_finite_and_deterministic() {
        let m = Model::<f32>::new(ModelConfig::lite(64, 64)).unwrap();
        let z = Image::filled(64, 64, [0.0; 3]);
        assert!(m.encode_image(&z).unwrap().all_finite());
        let a = m.encode_image(&img(64, 64, 3)).unwrap();
        let b = m.encode_image(&img(64, 64, 3)).unwrap();
        assert_eq!(a, b);
        let p = Pose6D::new(0.02, 0.01, -0.03, 0.05, 0.0, 0.01);
        let s1 = m.synthesize(&img(64, 64, 3), &p, &stats()).unwrap();
        let s2 = m.synthesize(&img(64, 64, 3), &p, &stats()).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn embedding_channel_is_live() {
        let m = Model::<f32>::new(ModelConfig::lite(64, 64)).unwrap();
        let i = img(64, 64, 4);
        let zeros = Tensor::zeros([1, 1, 64, 64]);
        let ones = Tensor::full([1, 1, 64, 64], 1.0);
        let (a, _) = m.encode_position_aware(&i, &zeros).unwrap();
        let (b, _) = m.encode_position_aware(&i, &ones).unwrap();
        assert!(a.max_abs_diff(&b) > 0.0);
        assert!(m.encode_position_aware(&i, &Tensor::zeros([1, 1, 32, 32])).is_err());
    }

    #[test]
    fn composed_stages_match_synthesize_bitwise() {
        let m = Model::<f32>::new(ModelConfig::lite(64, 64)).unwrap();
        let i = img(64, 64, 5);
        let p = Pose6D::translation(0.03, -0.04, 0.02);
        let emb = embedding::embed(&p, &stats(), &m.config.embedding, &m.params).unwrap();
        let f1p = m.encode_image(&i).unwrap();
        let (f2, skips) = m.encode_position_aware(&i, &emb).unwrap();
        let manual = m.decode(Some(&f1p), &f2, &skips).unwrap();
        let direct = m.synthesize(&i, &p, &stats()).unwrap();
        assert!(manual.data().iter().zip(direct.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn parameter_count_algebra() {
        let full = Model::<f32>::new(ModelConfig::full(64, 64)).unwrap().param_count();
        let lite = Model::<f32>::new(ModelConfig::lite(64, 64)).unwrap().param_count();
        let lite_none = Model::<f32>::new(ModelConfig::lite(64, 64).with_encoder1(Encoder1Kind::None)).unwrap().param_count();
        let full_none = Model::<f32>::new(ModelConfig::full(64, 64).with_encoder1(Encoder1Kind::None)).unwrap().param_count();
        assert!(lite < full);
        assert!(lite_none < lite);
        assert!(full_none < full);
    }

    #[test]
    fn resolution_errors() {
        let m = Model::<f32>::new(ModelConfig::lite(64, 64)).unwrap();
        let err = m.synthesize(&img(32, 32, 1), &Pose6D::IDENTITY, &stats()).unwrap_err();
        assert!(err.to_string().contains("64x64"), "{err}");
        assert!(matches!(ModelConfig::lite(16, 16).validate(), Err(Error::ImageTooSmall(_))));
    }

    #[test]
    fn calibrated_backbone_is_normalised() {
        let m = Model::<f64>::new(ModelConfig::lite(64, 64)).unwrap();
        let f1p = m.encode_image(&img(64, 64, 77)).unwrap();
        assert!(f1p.all_finite());
        let mean = f1p.sum() / f1p.numel() as f64;
        assert!(mean.abs() < 10.0);
        assert!(f1p.data().iter().any(|&v| v > 0.0));
    }
}
