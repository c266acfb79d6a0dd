//! Training losses: L1, multi-scale SSIM, focal frequency and VGG-19
//! perceptual, plus their weighted total.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{he_normal, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const K1: f64 = 0.01;
const K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Normalised 1-D Gaussian taps centred on `size / 2`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    /// Dynamic range of the pixel values.
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: SSIM_WINDOW, sigma: SSIM_SIGMA, data_range: 1.0 }
    }
}

/// Largest scale count (at most 5) whose coarsest level still fits the window.
pub fn max_scales(h: usize, w: usize, window: usize) -> usize {
    (1..=5).rev().find(|&s| h.min(w) >= (1 << (s - 1)) * window).unwrap_or(0)
}

/// Per-`(n, c)` mean SSIM and contrast-structure terms at one scale.
fn ssim_terms<'g, F: Scalar>(
    x: Var<'g, F>,
    y: Var<'g, F>,
    kernel: &Arc<Vec<F>>,
    cfg: &SsimConfig,
) -> Result<(Var<'g, F>, Var<'g, F>)> {
    let c1 = F::of((K1 * cfg.data_range).powi(2));
    let c2 = F::of((K2 * cfg.data_range).powi(2));
    let two = F::of(2.0);
    let blur = |v: Var<'g, F>| v.blur_valid(kernel.clone());
    let mu1 = blur(x)?;
    let mu2 = blur(y)?;
    let mu1_sq = mu1.square();
    let mu2_sq = mu2.square();
    let mu12 = mu1.mul(mu2)?;
    let s1 = blur(x.square())?.sub(mu1_sq)?;
    let s2 = blur(y.square())?.sub(mu2_sq)?;
    let s12 = blur(x.mul(y)?)?.sub(mu12)?;
    let cs_map = s12.scale(two).add_scalar(c2).div(s1.add(s2)?.add_scalar(c2))?;
    let lum = mu12.scale(two).add_scalar(c1).div(mu1_sq.add(mu2_sq)?.add_scalar(c1))?;
    let ssim_map = lum.mul(cs_map)?;
    Ok((ssim_map.mean_spatial()?, cs_map.mean_spatial()?))
}

fn check_pair<F: Scalar>(pred: Var<'_, F>, target: Var<'_, F>, what: &str) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    if pred.shape().len() != 4 {
        return Err(Error::Shape(format!("{what}: expected (n, c, h, w), got {:?}", pred.shape())));
    }
    Ok(())
}

/// Single-scale SSIM averaged over batch and channels.
pub fn ssim_graph<'g, F: Scalar>(pred: Var<'g, F>, target: Var<'g, F>, cfg: &SsimConfig) -> Result<Var<'g, F>> {
    check_pair(pred, target, "ssim")?;
    let kernel = Arc::new(gaussian_window(cfg.window, cfg.sigma).into_iter().map(F::of).collect());
    let (ssim, _) = ssim_terms(pred, target, &kernel, cfg)?;
    Ok(ssim.mean())
}

/// Multi-scale SSIM: product of clamped contrast-structure terms at the
/// coarser scales and the SSIM term at the coarsest, each raised to its
/// scale weight; averaged over batch and channels. With fewer than five
/// scales the leading weights are renormalised to sum to one.
pub fn ms_ssim_graph<'g, F: Scalar>(
    pred: Var<'g, F>,
    target: Var<'g, F>,
    scales: usize,
    cfg: &SsimConfig,
) -> Result<Var<'g, F>> {
    check_pair(pred, target, "ms_ssim")?;
    let s = pred.shape();
    let fit = max_scales(s[2], s[3], cfg.window);
    if scales == 0 || scales > 5 || scales > fit {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} images support at most {fit} MS-SSIM scales with an {}-tap window, {scales} requested",
            s[2], s[3], cfg.window
        )));
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let kernel = Arc::new(gaussian_window(cfg.window, cfg.sigma).into_iter().map(F::of).collect());
    let (mut x, mut y) = (pred, target);
    let mut acc: Option<Var<'g, F>> = None;
    for i in 0..scales {
        let (ssim, cs) = ssim_terms(x, y, &kernel, cfg)?;
        let last = i + 1 == scales;
        let term = if last { ssim } else { cs }.relu().powf(F::of(MS_SSIM_WEIGHTS[i] / wsum));
        acc = Some(match acc {
            Some(a) => a.mul(term)?,
            None => term,
        });
        if !last {
            x = x.avg_pool2()?;
            y = y.avg_pool2()?;
        }
    }
    Ok(acc.expect("at least one scale").mean())
}

/// `1 - MS-SSIM`.
pub fn ms_ssim_loss_graph<'g, F: Scalar>(
    pred: Var<'g, F>,
    target: Var<'g, F>,
    scales: usize,
    cfg: &SsimConfig,
) -> Result<Var<'g, F>> {
    Ok(ms_ssim_graph(pred, target, scales, cfg)?.scale(-F::one()).add_scalar(F::one()))
}

pub fn l1_graph<'g, F: Scalar>(pred: Var<'g, F>, target: Var<'g, F>) -> Result<Var<'g, F>> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("l1: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    Ok(pred.sub(target)?.abs().mean())
}

/// Orthonormal 2-D DFT of every `h x w` plane, in place.
fn fft2(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut column = vec![Complex::default(); h];
    for plane in data.chunks_mut(h * w) {
        for r in plane.chunks_mut(w) {
            row.process(r);
        }
        for c in 0..w {
            for r in 0..h {
                column[r] = plane[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                plane[r * w + c] = column[r] * norm;
            }
        }
    }
}

/// Focal frequency loss: mean over batch, channels and frequencies of
/// `w(u, v) |F_pred - F_target|^2` with orthonormal spectra. The weight is
/// `|F_pred - F_target|^exponent` scaled so its maximum per plane is 1 and
/// is held constant when differentiating.
pub fn focal_frequency_graph<'g, F: Scalar>(pred: Var<'g, F>, target: Var<'g, F>, exponent: f64) -> Result<Var<'g, F>> {
    check_pair(pred, target, "focal frequency loss")?;
    let s = pred.shape();
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let (pv, tv) = (pred.value(), target.value());
    let mut d: Vec<Complex<f64>> =
        pv.data().iter().zip(tv.data()).map(|(a, b)| Complex::new(a.f64() - b.f64(), 0.0)).collect();
    fft2(&mut d, h, w, false);
    let mut weight = vec![0.0; d.len()];
    for (wp, dp) in weight.chunks_mut(plane).zip(d.chunks(plane)) {
        for (wv, dv) in wp.iter_mut().zip(dp) {
            *wv = dv.norm().powf(exponent);
        }
        let max = wp.iter().cloned().fold(0.0, f64::max);
        for wv in wp.iter_mut() {
            let v = *wv / max;
            *wv = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }
    let count = d.len() as f64;
    let loss = weight.iter().zip(&d).map(|(wv, dv)| wv * dv.norm_sqr()).sum::<f64>() / count;
    let shape = s.clone();
    let backward = move |gy: &Tensor<F>| {
        // dL/dx = (2 / count) Re(IDFT(w * D)) for both real inputs (with sign).
        let mut z: Vec<Complex<f64>> = weight.iter().zip(&d).map(|(wv, dv)| dv * *wv).collect();
        fft2(&mut z, h, w, true);
        let k = 2.0 * gy.data()[0].f64() / count;
        let gp = Tensor::new(shape.clone(), z.iter().map(|v| F::of(k * v.re)).collect()).expect("ffl grad");
        let gt = gp.map(|v| -v);
        vec![Some(gp), Some(gt)]
    };
    Ok(Var::custom(&[pred, target], Tensor::scalar(F::of(loss)), backward))
}

/// VGG-19 convolutional trunk (`features` in torchvision numbering).
#[derive(Clone, Debug)]
pub struct Vgg19<F: Scalar> {
    params: ParamStore<F>,
}

/// `(features index, out channels)` of each conv; `None` marks a max pool.
const VGG19_LAYOUT: [Option<(usize, usize)>; 21] = [
    Some((0, 64)),
    Some((2, 64)),
    None,
    Some((5, 128)),
    Some((7, 128)),
    None,
    Some((10, 256)),
    Some((12, 256)),
    Some((14, 256)),
    Some((16, 256)),
    None,
    Some((19, 512)),
    Some((21, 512)),
    Some((23, 512)),
    Some((25, 512)),
    None,
    Some((28, 512)),
    Some((30, 512)),
    Some((32, 512)),
    Some((34, 512)),
    None,
];

pub const DEFAULT_VGG_LAYERS: [&str; 5] = ["relu1_2", "relu2_2", "relu3_4", "relu4_4", "relu5_4"];

/// `reluB_K` -> number of convs run to reach it.
fn vgg_layer_depth(name: &str) -> Result<usize> {
    let bad = || Error::Config(format!("unknown VGG-19 layer `{name}` (expected reluB_K)"));
    let rest = name.strip_prefix("relu").ok_or_else(bad)?;
    let (b, k) = rest.split_once('_').ok_or_else(bad)?;
    let (b, k): (usize, usize) = (b.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?);
    let per_block = [2, 2, 4, 4, 4];
    if !(1..=5).contains(&b) || k == 0 || k > per_block[b - 1] {
        return Err(bad());
    }
    Ok(per_block[..b - 1].iter().sum::<usize>() + k)
}

impl<F: Scalar> Vgg19<F> {
    /// Loads `features.{i}.weight/bias` from a safetensors file.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::MissingPretrainedWeights(format!("VGG-19 weights {}: {e}", path.display())))?;
        let st = safetensors::SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::MissingPretrainedWeights(format!("VGG-19 weights {}: {e}", path.display())))?;
        let mut params = ParamStore::new();
        let mut cin = 3;
        for (idx, cout) in VGG19_LAYOUT.iter().flatten() {
            for (suffix, shape) in [("weight", vec![*cout, cin, 3, 3]), ("bias", vec![*cout])] {
                let name = format!("features.{idx}.{suffix}");
                let v = st
                    .tensor(&name)
                    .map_err(|_| Error::MissingPretrainedWeights(format!("{} lacks `{name}`", path.display())))?;
                if v.shape() != shape.as_slice() || v.dtype() != safetensors::Dtype::F32 {
                    return Err(Error::MissingPretrainedWeights(format!("`{name}` has shape {:?}", v.shape())));
                }
                let data = v
                    .data()
                    .chunks_exact(4)
                    .map(|b| F::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                    .collect();
                params.insert(name, Tensor::new(shape, data)?, false);
            }
            cin = *cout;
        }
        Ok(Self { params })
    }

    /// Randomly initialised trunk, for tests of the loss plumbing.
    pub fn seeded(seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut cin = 3;
        for (idx, cout) in VGG19_LAYOUT.iter().flatten() {
            params.insert(format!("features.{idx}.weight"), he_normal(&mut rng, &[*cout, cin, 3, 3], cin * 9), false);
            params.insert(format!("features.{idx}.bias"), Tensor::zeros([*cout]), false);
            cin = *cout;
        }
        Self { params }
    }

    /// Activations at the requested depths (conv counts), in order.
    fn features<'g>(&self, g: &'g Graph<F>, x: Var<'g, F>, depths: &[usize]) -> Result<Vec<Var<'g, F>>> {
        let mean = [0.485, 0.456, 0.406];
        let std = [0.229, 0.224, 0.225];
        let scale = Tensor::from_fn([3], |i| F::of(1.0 / std[i]));
        let shift = Tensor::from_fn([3], |i| F::of(-mean[i] / std[i]));
        let mut h = x.channel_affine(g.constant(scale), g.constant(shift))?;
        let deepest = depths.iter().copied().max().unwrap_or(0);
        let mut out = vec![None; depths.len()];
        let mut convs = 0;
        for entry in VGG19_LAYOUT {
            if convs == deepest {
                break;
            }
            match entry {
                Some((idx, _)) => {
                    let w = g.param(&self.params, &format!("features.{idx}.weight"))?;
                    let b = g.param(&self.params, &format!("features.{idx}.bias"))?;
                    h = h.conv2d(w, Some(b), 1, 1, 1)?.relu();
                    convs += 1;
                    for (slot, &d) in out.iter_mut().zip(depths) {
                        if d == convs {
                            *slot = Some(h);
                        }
                    }
                }
                None => {
                    let s = h.shape();
                    if s[2] < 2 || s[3] < 2 {
                        return Err(Error::ImageTooSmall(format!("VGG-19 input too small to reach depth {deepest}")));
                    }
                    h = h.max_pool(2)?;
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("layer reached")).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptualLayer {
    pub layer: String,
    /// Fixed weight; `None` means one over the layer's element count.
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub ffl_exponent: f64,
    /// `None` picks the largest scale count (at most 5) the images allow.
    pub msssim_scales: Option<usize>,
    pub ssim: SsimConfig,
    /// VGG-19 weights; the perceptual term is off when unset.
    pub vgg_weights: Option<PathBuf>,
    pub perceptual_layers: Vec<PerceptualLayer>,
    pub perceptual_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.84,
            beta: 1.0,
            ffl_exponent: 1.0,
            msssim_scales: None,
            ssim: SsimConfig::default(),
            vgg_weights: None,
            perceptual_layers: DEFAULT_VGG_LAYERS
                .iter()
                .map(|l| PerceptualLayer { layer: l.to_string(), lambda: None })
                .collect(),
            perceptual_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !ok(self.beta) || !ok(self.ffl_exponent) || !ok(self.perceptual_weight) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        for l in &self.perceptual_layers {
            vgg_layer_depth(&l.layer)?;
            if l.lambda.is_some_and(|v| !ok(v)) {
                return Err(Error::Config(format!("lambda for {} must be finite and non-negative", l.layer)));
            }
        }
        Ok(())
    }

    /// Scale count for `h x w` images, warning when fewer than five fit.
    pub fn scales_for(&self, h: usize, w: usize) -> Result<usize> {
        match self.msssim_scales {
            Some(s) => Ok(s),
            None => {
                let s = max_scales(h, w, self.ssim.window);
                if s == 0 {
                    return Err(Error::ImageTooSmall(format!(
                        "{h}x{w} is smaller than the {}-tap SSIM window",
                        self.ssim.window
                    )));
                }
                if s < 5 {
                    log::warn!("{h}x{w} images: MS-SSIM reduced to {s} scales");
                }
                Ok(s)
            }
        }
    }
}

/// Perceptual loss bound to a loaded feature network.
pub struct Perceptual<F: Scalar> {
    pub net: Vgg19<F>,
    pub layers: Vec<PerceptualLayer>,
}

impl<F: Scalar> Perceptual<F> {
    pub fn from_config(cfg: &LossConfig) -> Result<Option<Self>> {
        match &cfg.vgg_weights {
            None => Ok(None),
            Some(p) => Ok(Some(Self { net: Vgg19::load(p)?, layers: cfg.perceptual_layers.clone() })),
        }
    }

    /// `sum_l lambda_l * ||phi_l(pred) - phi_l(target)||_1`.
    pub fn graph<'g>(&self, g: &'g Graph<F>, pred: Var<'g, F>, target: Var<'g, F>) -> Result<Var<'g, F>> {
        check_pair(pred, target, "perceptual loss")?;
        let depths: Vec<usize> = self.layers.iter().map(|l| vgg_layer_depth(&l.layer)).collect::<Result<_>>()?;
        let fp = self.net.features(g, pred, &depths)?;
        let ft = self.net.features(g, target, &depths)?;
        let mut total: Option<Var<'g, F>> = None;
        for ((a, b), layer) in fp.into_iter().zip(ft).zip(&self.layers) {
            let elements = a.value().numel() as f64;
            let lambda = layer.lambda.unwrap_or(1.0 / elements);
            let term = a.sub(b)?.abs().sum().scale(F::of(lambda));
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
        total.ok_or_else(|| Error::Config("no perceptual layers".into()))
    }
}

/// Default weight for a layer with `elements` activations.
pub fn default_lambda(elements: usize) -> f64 {
    1.0 / elements as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    /// `1 - MS-SSIM`.
    pub ms_ssim: f64,
    pub ffl: f64,
    /// Already multiplied by the perceptual weight.
    pub perceptual: f64,
    pub total: f64,
}

/// `alpha * L1 + (1 - alpha) * (1 - MS-SSIM) + beta * FFL + L_VGG`.
pub fn total_loss_graph<'g, F: Scalar>(
    g: &'g Graph<F>,
    pred: Var<'g, F>,
    target: Var<'g, F>,
    cfg: &LossConfig,
    perceptual: Option<&Perceptual<F>>,
) -> Result<(Var<'g, F>, LossReport)> {
    cfg.validate()?;
    check_pair(pred, target, "total loss")?;
    let s = pred.shape();
    let l1 = l1_graph(pred, target)?;
    let ms = ms_ssim_loss_graph(pred, target, cfg.scales_for(s[2], s[3])?, &cfg.ssim)?;
    let ffl = focal_frequency_graph(pred, target, cfg.ffl_exponent)?;
    let mut total = l1.scale(F::of(cfg.alpha)).add(ms.scale(F::of(1.0 - cfg.alpha)))?;
    total = total.add(ffl.scale(F::of(cfg.beta)))?;
    let mut report = LossReport { l1: l1.item().f64(), ms_ssim: ms.item().f64(), ffl: ffl.item().f64(), ..Default::default() };
    match (perceptual, &cfg.vgg_weights) {
        (Some(p), _) => {
            let v = p.graph(g, pred, target)?.scale(F::of(cfg.perceptual_weight));
            report.perceptual = v.item().f64();
            total = total.add(v)?;
        }
        (None, Some(path)) => {
            return Err(Error::MissingPretrainedWeights(format!(
                "perceptual loss configured with {} but no network was loaded",
                path.display()
            )))
        }
        (None, None) => {}
    }
    report.total = total.item().f64();
    Ok((total, report))
}

fn eval2<F: Scalar>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    f: impl for<'g> Fn(Var<'g, F>, Var<'g, F>) -> Result<Var<'g, F>>,
) -> Result<f64> {
    let g = Graph::inference();
    Ok(f(g.constant(pred.clone()), g.constant(target.clone()))?.item().f64())
}

pub fn l1_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
    eval2(pred, target, l1_graph)
}

pub fn ms_ssim_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>, scales: usize, cfg: &SsimConfig) -> Result<f64> {
    eval2(pred, target, |a, b| ms_ssim_loss_graph(a, b, scales, cfg))
}

pub fn focal_frequency_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>, exponent: f64) -> Result<f64> {
    eval2(pred, target, |a, b| focal_frequency_graph(a, b, exponent))
}

pub fn perceptual_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>, p: &Perceptual<F>) -> Result<f64> {
    let g = Graph::inference();
    Ok(p.graph(&g, g.constant(pred.clone()), g.constant(target.clone()))?.item().f64())
}

pub fn total_loss<F: Scalar>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    cfg: &LossConfig,
    perceptual: Option<&Perceptual<F>>,
) -> Result<LossReport> {
    let g = Graph::inference();
    Ok(total_loss_graph(&g, g.constant(pred.clone()), g.constant(target.clone()), cfg, perceptual)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random::<f64>())
    }

    /// Direct `O(N^4)` orthonormal DFT version of the focal frequency loss.
    fn ffl_oracle(a: &Tensor<f64>, b: &Tensor<f64>, exponent: f64) -> f64 {
        let s = a.shape();
        let (h, w) = (s[2], s[3]);
        let mut total = 0.0;
        let mut count = 0.0;
        for p in 0..s[0] * s[1] {
            let d: Vec<f64> = (0..h * w).map(|i| a.data()[p * h * w + i] - b.data()[p * h * w + i]).collect();
            let mut spec = vec![(0.0, 0.0); h * w];
            for u in 0..h {
                for v in 0..w {
                    let (mut re, mut im) = (0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let ang = -std::f64::consts::TAU * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                            re += d[y * w + x] * ang.cos();
                            im += d[y * w + x] * ang.sin();
                        }
                    }
                    let n = ((h * w) as f64).sqrt();
                    spec[u * w + v] = (re / n, im / n);
                }
            }
            let mag: Vec<f64> = spec.iter().map(|(r, i)| (r * r + i * i).sqrt()).collect();
            let wts: Vec<f64> = mag.iter().map(|m| m.powf(exponent)).collect();
            let max = wts.iter().cloned().fold(0.0, f64::max);
            for (m, wv) in mag.iter().zip(&wts) {
                let wn = if max > 0.0 { (wv / max).clamp(0.0, 1.0) } else { 0.0 };
                total += wn * m * m;
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn l1_cases() {
        let a = rand_t([2, 3, 5, 4], 1);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.1);
        assert!((l1_loss(&b, &a).unwrap() - 0.1).abs() < 1e-12);
        let c = rand_t([2, 3, 5, 4], 2);
        let oracle = a.data().iter().zip(c.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64;
        assert!((l1_loss(&a, &c).unwrap() - oracle).abs() < 1e-7);
        assert_eq!(l1_loss(&a, &c).unwrap(), l1_loss(&c, &a).unwrap());
        assert!(l1_loss(&a, &rand_t([1, 3, 5, 4], 2)).is_err());
    }

    #[test]
    fn ffl_matches_direct_dft() {
        let a = rand_t([2, 2, 4, 4], 3);
        let b = rand_t([2, 2, 4, 4], 4);
        for e in [0.0, 1.0, 2.0] {
            let got = focal_frequency_loss(&a, &b, e).unwrap();
            assert!((got - ffl_oracle(&a, &b, e)).abs() < 1e-9, "exponent {e}");
        }
        let mut one = Tensor::<f64>::zeros([1, 1, 4, 4]);
        one.data_mut()[5] = 1.0;
        let z = Tensor::zeros([1, 1, 4, 4]);
        assert!((focal_frequency_loss(&one, &z, 1.0).unwrap() - ffl_oracle(&one, &z, 1.0)).abs() < 1e-12);
        assert_eq!(focal_frequency_loss(&a, &a, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn ffl_exponent_zero_is_quadratic_and_symmetric() {
        let a = rand_t([1, 1, 6, 8], 5);
        let b = rand_t([1, 1, 6, 8], 6);
        let d2 = Tensor::from_fn([1, 1, 6, 8], |i| b.data()[i] + 2.0 * (a.data()[i] - b.data()[i]));
        let l1 = focal_frequency_loss(&a, &b, 0.0).unwrap();
        let l2 = focal_frequency_loss(&d2, &b, 0.0).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12 * l2);
        assert!((l1 - focal_frequency_loss(&b, &a, 0.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ms_ssim_identity_and_inversion() {
        let a = rand_t([1, 3, 64, 64], 7);
        let cfg = SsimConfig::default();
        assert!(ms_ssim_loss(&a, &a, 3, &cfg).unwrap().abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ms_ssim_loss(&inv, &a, 3, &cfg).unwrap() > 0.5);
        let err = ms_ssim_loss(&a, &a, 5, &cfg).unwrap_err();
        assert!(err.to_string().contains("at most 3"), "{err}");
        assert_eq!(max_scales(256, 256, 11), 5);
        assert_eq!(max_scales(176, 300, 11), 5);
        assert_eq!(max_scales(175, 300, 11), 4);
    }

    #[test]
    fn total_loss_recombines() {
        let a = rand_t([2, 3, 32, 32], 8);
        let b = rand_t([2, 3, 32, 32], 9);
        let cfg = LossConfig::default();
        let r = total_loss(&a, &b, &cfg, None).unwrap();
        let hand = 0.84 * r.l1 + 0.16 * r.ms_ssim + 1.0 * r.ffl + r.perceptual;
        assert!((r.total - hand).abs() <= 1e-6 * hand.abs());
        assert!((r.l1 - l1_loss(&a, &b).unwrap()).abs() < 1e-15);
        assert!((r.ms_ssim - ms_ssim_loss(&a, &b, 2, &cfg.ssim).unwrap()).abs() < 1e-15);
        let zero = total_loss(&a, &a, &cfg, None).unwrap();
        assert!(zero.l1 == 0.0 && zero.ffl == 0.0 && zero.ms_ssim.abs() < 1e-12 && zero.total.abs() < 1e-12);
        let l1_only = LossConfig { alpha: 1.0, beta: 0.0, ..LossConfig::default() };
        let r = total_loss(&a, &b, &l1_only, None).unwrap();
        assert_eq!(r.total, r.l1);
        let bad = LossConfig { vgg_weights: Some("/nonexistent/vgg19.safetensors".into()), ..LossConfig::default() };
        assert!(matches!(Perceptual::<f64>::from_config(&bad), Err(Error::MissingPretrainedWeights(_))));
        assert!(matches!(total_loss(&a, &b, &bad, None), Err(Error::MissingPretrainedWeights(_))));
    }

    #[test]
    fn perceptual_plumbing_with_seeded_trunk() {
        let p = Perceptual { net: Vgg19::<f64>::seeded(1), layers: LossConfig::default().perceptual_layers };
        let a = rand_t([1, 3, 16, 16], 10);
        assert_eq!(perceptual_loss(&a, &a, &p).unwrap(), 0.0);
        let noise = rand_t([1, 3, 16, 16], 11);
        let noisy = a.zip_map(&noise, |v, n| v + 1e-4 * (n - 0.5));
        let other = rand_t([1, 3, 16, 16], 12);
        assert!(perceptual_loss(&noisy, &a, &p).unwrap() < perceptual_loss(&other, &a, &p).unwrap());
        assert_eq!(default_lambda(2000), 0.5 * default_lambda(1000));
        assert!(vgg_layer_depth("relu3_5").is_err());
        assert_eq!(vgg_layer_depth("relu5_4").unwrap(), 16);
        // fixed lambda matches hand-weighted per-layer sums
        let layers = vec![PerceptualLayer { layer: "relu1_1".into(), lambda: Some(2.0) }];
        let p1 = Perceptual { net: Vgg19::<f64>::seeded(1), layers };
        let g = Graph::inference();
        let fa = p1.net.features(&g, g.constant(other.clone()), &[1]).unwrap()[0].value();
        let fb = p1.net.features(&g, g.constant(a.clone()), &[1]).unwrap()[0].value();
        let hand = 2.0 * fa.data().iter().zip(fb.data()).map(|(x, y)| (x - y).abs()).sum::<f64>();
        assert!((perceptual_loss(&other, &a, &p1).unwrap() - hand).abs() < 1e-9 * hand);
    }

    #[test]
    fn gaussian_window_is_normalised_and_symmetric() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert!((g[i] - g[10 - i]).abs() < 1e-18);
        }
    }
}
