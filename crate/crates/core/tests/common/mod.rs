//! Finite-difference checks shared by the gradient tests and the acceptance
//! runner.

#![allow(dead_code)]

pub mod reference;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewsynth_core::data::{generate_synthetic, dataset_pose_stats, SyntheticSceneSpec};
use viewsynth_core::embedding::pose_features;
use viewsynth_core::losses::{focal_frequency_graph, l1_graph, ms_ssim_loss_graph, total_loss_graph, LossConfig, SsimConfig};
use viewsynth_core::{Graph, Image, Model, ModelConfig, Result, Tensor, Var};

const STEP: f64 = 1e-6;

/// Worst relative error between an analytic and a central-difference
/// derivative. Pairs where both are below `floor` count as agreeing.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl GradCheck {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, fd: f64, floor: f64) {
        self.checked += 1;
        let scale = analytic.abs().max(fd.abs());
        let rel = if scale < floor { 0.0 } else { (analytic - fd).abs() / scale };
        if rel > self.worst || self.worst_at.is_empty() {
            self.worst = rel.max(self.worst);
            self.worst_at = format!("{} (analytic {analytic:.6e}, fd {fd:.6e})", what());
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum LossKind {
    L1,
    MsSsim,
    Ffl,
}

fn random_pair(side: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor::from_fn([1, 3, side, side], |_| rng.random_range(0.05..0.95));
    let b = Tensor::from_fn([1, 3, side, side], |_| rng.random_range(0.05..0.95));
    (a, b)
}

fn loss_value<'g>(kind: LossKind, p: Var<'g, f64>, t: Var<'g, f64>, side: usize) -> Result<Var<'g, f64>> {
    match kind {
        LossKind::L1 => l1_graph(p, t),
        LossKind::MsSsim => {
            let scales = if side >= 32 { 2 } else { 1 };
            ms_ssim_loss_graph(p, t, scales, &SsimConfig::default())
        }
        // exponent 0 keeps the spectral weight exactly constant, so the
        // true derivative equals the one the loss propagates
        LossKind::Ffl => focal_frequency_graph(p, t, 0.0),
    }
}

/// Derivative of a loss with respect to every prediction pixel.
pub fn loss_gradient(kind: LossKind, side: usize, seed: u64) -> Result<GradCheck> {
    let (pred, target) = random_pair(side, seed);
    let g = Graph::new();
    let p = g.input(pred.clone(), true);
    let loss = loss_value(kind, p, g.constant(target.clone()), side)?;
    let grads = g.backward(loss)?;
    let analytic = grads.wrt(p).expect("prediction gradient").clone();
    let eval = |x: &Tensor<f64>| -> Result<f64> {
        let g = Graph::inference();
        Ok(loss_value(kind, g.constant(x.clone()), g.constant(target.clone()), side)?.item())
    };
    let mut check = GradCheck::default();
    let mut x = pred.clone();
    for k in 0..pred.numel() {
        let v = x.data()[k];
        x.data_mut()[k] = v + STEP;
        let up = eval(&x)?;
        x.data_mut()[k] = v - STEP;
        let down = eval(&x)?;
        x.data_mut()[k] = v;
        check.record(|| format!("{kind:?}@{side} pixel {k}"), analytic.data()[k], (up - down) / (2.0 * STEP), 1e-6);
    }
    Ok(check)
}

/// Every trainable tensor of a 32x32 LITE model through
/// synthesize -> total loss. Each tensor gets its largest-gradient entries
/// plus a few random ones. Returns the check and the names of trainable
/// tensors that received no gradient at all. The focal-frequency weight is
/// a constant to the loss, so this runs it at exponent 0 where that is exact.
pub fn model_gradient(per_tensor: usize, seed: u64) -> Result<(GradCheck, Vec<String>)> {
    let spec = SyntheticSceneSpec { positions: 1, samples_per_position: 2, height: 32, width: 32, ..Default::default() };
    let data = generate_synthetic(&spec)?;
    let stats = dataset_pose_stats(&data)?;
    let mut model = Model::<f64>::new(ModelConfig::lite(32, 32))?;
    let sources: Vec<&Image> = data.iter().map(|s| &s.source).collect();
    let targets: Vec<&Image> = data.iter().map(|s| &s.target).collect();
    let x = Image::batch::<f64>(&sources)?;
    let y = Image::batch::<f64>(&targets)?;
    let feats: Vec<Vec<f64>> = data
        .iter()
        .map(|s| pose_features(&s.relative_pose(), &stats, &model.config.embedding).map(|f| f.0))
        .collect::<Result<_>>()?;
    let loss_cfg = LossConfig { ffl_exponent: 0.0, ..LossConfig::default() };
    let objective = |m: &Model<f64>, g: &Graph<f64>| -> Result<f64> {
        let pred = m.forward(g, g.constant(x.clone()), &feats, None)?;
        Ok(total_loss_graph(g, pred, g.constant(y.clone()), &loss_cfg, None)?.0.item())
    };

    let g = Graph::new();
    let pred = model.forward(&g, g.constant(x.clone()), &feats, None)?;
    let (loss, _) = total_loss_graph(&g, pred, g.constant(y.clone()), &loss_cfg, None)?;
    let grads = g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = GradCheck::default();
    let mut missing = Vec::new();
    for idx in 0..model.params.len() {
        if !model.params.is_trainable(idx) {
            continue;
        }
        let name = model.params.name(idx).to_string();
        let Some(analytic) = grads.param(idx).cloned() else {
            missing.push(name);
            continue;
        };
        let mut order: Vec<usize> = (0..analytic.numel()).collect();
        order.sort_by(|&a, &b| analytic.data()[b].abs().total_cmp(&analytic.data()[a].abs()));
        let mut picks: Vec<usize> = order.iter().take(per_tensor / 2).copied().collect();
        while picks.len() < per_tensor.min(analytic.numel()) {
            let k = rng.random_range(0..analytic.numel());
            if !picks.contains(&k) {
                picks.push(k);
            }
        }
        for k in picks {
            let v = model.params.value(idx).data()[k];
            model.params.value_mut(idx).data_mut()[k] = v + STEP;
            let up = objective(&model, &Graph::inference())?;
            model.params.value_mut(idx).data_mut()[k] = v - STEP;
            let down = objective(&model, &Graph::inference())?;
            model.params.value_mut(idx).data_mut()[k] = v;
            check.record(|| format!("{name}[{k}]"), analytic.data()[k], (up - down) / (2.0 * STEP), 1e-7);
        }
    }
    Ok((check, missing))
}

/// Orthonormal 2-D DFT of `pred - target` per plane, by direct summation.
fn dft_diff(pred: &Tensor<f64>, target: &Tensor<f64>) -> Vec<(f64, f64)> {
    let s = pred.shape();
    let (h, w) = (s[2], s[3]);
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = Vec::with_capacity(pred.numel());
    for off in (0..pred.numel()).step_by(h * w) {
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let d = pred.data()[off + y * w + x] - target.data()[off + y * w + x];
                        let a = -std::f64::consts::TAU * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        re += d * a.cos();
                        im += d * a.sin();
                    }
                }
                out.push((re * norm, im * norm));
            }
        }
    }
    out
}

/// Focal frequency loss with a fixed weight map.
fn ffl_frozen(pred: &Tensor<f64>, target: &Tensor<f64>, weight: &[f64]) -> f64 {
    let d = dft_diff(pred, target);
    d.iter().zip(weight).map(|((re, im), w)| w * (re * re + im * im)).sum::<f64>() / d.len() as f64
}

/// `|D|^exponent`, max-normalised per plane.
fn ffl_weight(pred: &Tensor<f64>, target: &Tensor<f64>, exponent: f64) -> Vec<f64> {
    let s = pred.shape();
    let d = dft_diff(pred, target);
    let mut out = Vec::with_capacity(d.len());
    for plane in d.chunks(s[2] * s[3]) {
        let raw: Vec<f64> = plane.iter().map(|(re, im)| re.hypot(*im).powf(exponent)).collect();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        out.extend(raw.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }));
    }
    out
}

/// Focal frequency loss by direct O(N^4) DFT.
pub fn ffl_direct(pred: &Tensor<f64>, target: &Tensor<f64>, exponent: f64) -> f64 {
    ffl_frozen(pred, target, &ffl_weight(pred, target, exponent))
}

/// FFL with exponent 1 against central differences of the loss with its
/// weight frozen at `pred`, which is the derivative the loss defines.
pub fn ffl_focal_gradient(side: usize, seed: u64) -> Result<GradCheck> {
    let (pred, target) = random_pair(side, seed);
    let g = Graph::new();
    let p = g.input(pred.clone(), true);
    let loss = focal_frequency_graph(p, g.constant(target.clone()), 1.0)?;
    let grads = g.backward(loss)?;
    let analytic = grads.wrt(p).expect("prediction gradient").clone();
    let weight = ffl_weight(&pred, &target, 1.0);
    let mut check = GradCheck::default();
    let mut x = pred.clone();
    for k in 0..pred.numel() {
        let v = x.data()[k];
        x.data_mut()[k] = v + STEP;
        let up = ffl_frozen(&x, &target, &weight);
        x.data_mut()[k] = v - STEP;
        let down = ffl_frozen(&x, &target, &weight);
        x.data_mut()[k] = v;
        check.record(|| format!("focal FFL@{side} pixel {k}"), analytic.data()[k], (up - down) / (2.0 * STEP), 1e-6);
    }
    Ok(check)
}
