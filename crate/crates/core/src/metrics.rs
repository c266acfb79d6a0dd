//! Evaluation metrics (PSNR, SSIM, MS-SSIM) and evaluation tables.

use serde::{Deserialize, Serialize};

use crate::checkpoint::ViewSynthesizer;
use crate::data::{dataset_hash, Sample};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::Image;
use crate::losses::{self, max_scales, SsimConfig};
use crate::tensor::Tensor;

/// `10 log10(peak^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr<T: Copy + Into<f64>>(pred: &[T], target: &[T], peak: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!("psnr over {} and {} values", pred.len(), target.len())));
    }
    if !(peak > 0.0) {
        return Err(Error::Config(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = pred.iter().zip(target).map(|(&a, &b)| (a.into() - b.into()).powi(2)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn psnr_images(pred: &Image, target: &Image) -> Result<f64> {
    check_images(pred, target)?;
    psnr(pred.data(), target.data(), 1.0)
}

fn check_images(pred: &Image, target: &Image) -> Result<()> {
    if (pred.height(), pred.width()) != (target.height(), target.width()) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    Ok(())
}

/// Single-scale SSIM of `(n, c, h, w)` tensors, any channel count.
pub fn ssim_tensor(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    let g = Graph::inference();
    Ok(losses::ssim_graph(g.constant(pred.clone()), g.constant(target.clone()), &SsimConfig::default())?.item())
}

/// MS-SSIM with as many scales (at most five) as the resolution allows.
/// Defined as `1 - ms_ssim_loss` so the metric and the loss cannot drift.
pub fn ms_ssim_tensor(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    let cfg = SsimConfig::default();
    let s = pred.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("ms_ssim: expected (n, c, h, w), got {s:?}")));
    }
    let scales = max_scales(s[2], s[3], cfg.window).max(1);
    Ok(1.0 - losses::ms_ssim_loss(pred, target, scales, &cfg)?)
}

pub fn ssim(pred: &Image, target: &Image) -> Result<f64> {
    check_images(pred, target)?;
    ssim_tensor(&pred.to_tensor(), &target.to_tensor())
}

pub fn ms_ssim(pred: &Image, target: &Image) -> Result<f64> {
    check_images(pred, target)?;
    ms_ssim_tensor(&pred.to_tensor(), &target.to_tensor())
}

/// JSON has no infinity; non-finite values travel as strings.
mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Num {
            F(f64),
            S(String),
        }
        match Num::deserialize(d)? {
            Num::F(v) => Ok(v),
            Num::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Protocol {
    /// Synthesized target against the ground-truth target.
    Direct,
    /// Synthesize the target, synthesize back to the source pose from it and
    /// compare against the original input.
    RoundTrip,
}

impl Protocol {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "direct" => Ok(Self::Direct),
            "round_trip" | "roundtrip" => Ok(Self::RoundTrip),
            _ => Err(Error::Parse(format!("unknown protocol `{s}` (direct, round_trip)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    #[serde(with = "lenient_f64")]
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub protocol: Protocol,
    pub dataset_id: String,
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    #[serde(with = "lenient_f64")]
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    /// Columns for externally computed perceptual metrics.
    #[serde(default)]
    pub vifp: Option<f64>,
    #[serde(default)]
    pub dists: Option<f64>,
    #[serde(default)]
    pub lpips: Option<f64>,
    pub per_sample: Vec<SampleMetrics>,
}

/// Evaluates `model` on every sample. Sample poses are made relative to the
/// source camera before synthesis.
pub fn evaluate_table(model: &dyn ViewSynthesizer, dataset: &[Sample], protocol: Protocol) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (h, w) = model.resolution();
    let mut per_sample = Vec::with_capacity(dataset.len());
    for (index, s) in dataset.iter().enumerate() {
        let rel = s.relative_pose();
        let out = model.synthesize(&s.source, &rel)?.image;
        let (pred, reference) = match protocol {
            Protocol::Direct => (out, &s.target),
            Protocol::RoundTrip => (model.synthesize(&out, &rel.inverse())?.image, &s.source),
        };
        per_sample.push(SampleMetrics {
            index,
            psnr: psnr_images(&pred, reference)?,
            ssim: ssim(&pred, reference)?,
            ms_ssim: ms_ssim(&pred, reference)?,
        });
    }
    let n = per_sample.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        model: model.variant_id(),
        protocol,
        dataset_id: dataset_hash(dataset),
        height: h,
        width: w,
        samples: per_sample.len(),
        psnr: mean(|m| m.psnr),
        ssim: mean(|m| m.ssim),
        ms_ssim: mean(|m| m.ms_ssim),
        vifp: None,
        dists: None,
        lpips: None,
        per_sample,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_infinite() => "inf".into(),
        Some(v) => format!("{v:.4}"),
        None => "-".into(),
    }
}

/// Aligned text table, one row per labelled report.
pub fn render_table(rows: &[(String, &MetricsReport)]) -> String {
    let header = ["Method", "PSNR↑", "SSIM↑", "MS-SSIM↑", "VIFP↑", "DISTS↓", "LPIPS↓"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|(label, r)| {
            [
                label.clone(),
                cell(Some(r.psnr)),
                cell(Some(r.ssim)),
                cell(Some(r.ms_ssim)),
                cell(r.vifp),
                cell(r.dists),
                cell(r.lpips),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = w - c.chars().count();
                if i == 0 { format!("{c}{}", " ".repeat(pad)) } else { format!("{}{c}", " ".repeat(pad)) }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
