//! End-to-end inference timing: warmup passes, then timed `synthesize`
//! calls (embedding included) on a random input.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ViewSynthesizer};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::renderer::Model;

pub const MIN_WARMUP: usize = 5;
pub const MIN_REPEATS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub height: usize,
    pub width: usize,
    pub variant: String,
    pub mean_s: f64,
    pub fps: f64,
    pub warmup: usize,
    pub measured: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub device: String,
    pub rows: Vec<LatencyRow>,
}

pub fn device_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).map(|l| l.split(':').nth(1).unwrap_or("").trim().to_string()))
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu}, {threads} hardware thread(s), single-threaded inference")
}

/// Times `model` at its own resolution.
pub fn time_synthesizer(model: &dyn ViewSynthesizer, warmup: usize, repeats: usize, seed: u64) -> Result<LatencyRow> {
    if warmup < MIN_WARMUP || repeats < MIN_REPEATS {
        return Err(Error::Config(format!(
            "latency runs need at least {MIN_WARMUP} warmup and {MIN_REPEATS} measured passes, got {warmup} and {repeats}"
        )));
    }
    let (h, w) = model.resolution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = Image::from_fn(h, w, |_, _, _| rng.random::<f32>());
    let pose = model.pose_stats().center();
    for _ in 0..warmup {
        model.synthesize(&img, &pose)?;
    }
    let mut total = 0.0;
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(model.synthesize(&img, &pose)?);
        total += t.elapsed().as_secs_f64();
    }
    let mean_s = total / repeats as f64;
    Ok(LatencyRow {
        height: h,
        width: w,
        variant: model.variant_id(),
        mean_s,
        fps: 1.0 / mean_s.max(1e-12),
        warmup,
        measured: repeats,
        note: None,
    })
}

/// One row per requested square resolution. Resolutions other than the
/// checkpoint's own run the same architecture with freshly initialised
/// weights (timing does not depend on weight values); resolutions the
/// architecture cannot take are skipped with a note.
pub fn benchmark_latency(ckpt: &Checkpoint, resolutions: &[usize], warmup: usize, repeats: usize) -> Result<LatencyReport> {
    let mut rows = Vec::new();
    for &r in resolutions {
        let own = (ckpt.model.config.height, ckpt.model.config.width) == (r, r);
        let row = if own {
            time_synthesizer(ckpt, warmup, repeats, r as u64)
        } else {
            let cfg = ckpt.model.config.at_resolution(r, r);
            match cfg.validate() {
                Err(e) => {
                    rows.push(LatencyRow {
                        height: r,
                        width: r,
                        variant: ckpt.model.config.variant_id(),
                        mean_s: f64::NAN,
                        fps: f64::NAN,
                        warmup: 0,
                        measured: 0,
                        note: Some(format!("skipped: {e}")),
                    });
                    continue;
                }
                Ok(()) => {
                    let fresh = Checkpoint::new(Model::new(cfg)?, ckpt.pose_stats);
                    time_synthesizer(&fresh, warmup, repeats, r as u64).map(|mut row| {
                        row.note = Some("same architecture, fresh weights".into());
                        row
                    })
                }
            }
        };
        rows.push(row?);
    }
    Ok(LatencyReport { device: device_description(), rows })
}

impl LatencyReport {
    /// Aligned text table: resolution, model, seconds per frame, fps.
    pub fn render(&self) -> String {
        let mut out = format!("device: {}\n", self.device);
        out.push_str(&format!(
            "{:<11} {:<28} {:>12} {:>9} {:>7} {:>6}\n",
            "Resolution", "Model", "Time (s)", "FPS", "Warmup", "Runs"
        ));
        for r in &self.rows {
            let res = format!("{}x{}", r.width, r.height);
            if r.measured == 0 {
                out.push_str(&format!("{res:<11} {:<28} {}\n", r.variant, r.note.as_deref().unwrap_or("skipped")));
                continue;
            }
            out.push_str(&format!(
                "{res:<11} {:<28} {:>12.4} {:>9.2} {:>7} {:>6}\n",
                r.variant, r.mean_s, r.fps, r.warmup, r.measured
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::IdentitySynthesizer;
    use crate::pose::PoseStats;
    use crate::renderer::ModelConfig;

    #[test]
    fn identity_row_shape() {
        let id = IdentitySynthesizer { height: 8, width: 8, stats: PoseStats::new([0.0; 6], [1.0; 6]).unwrap() };
        let row = time_synthesizer(&id, 5, 30, 0).unwrap();
        assert_eq!((row.warmup, row.measured), (5, 30));
        assert!(row.fps.is_finite() && row.fps > 0.0);
        assert!(time_synthesizer(&id, 5, 29, 0).is_err());
    }

    #[test]
    fn one_row_per_resolution_and_skips() {
        let stats = PoseStats::new([0.0; 6], [1.0; 6]).unwrap();
        let ckpt = Checkpoint::new(Model::new(ModelConfig::lite(32, 32)).unwrap(), stats);
        let rep = benchmark_latency(&ckpt, &[32, 36], 5, 30).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows[0].note.is_none() && rep.rows[0].measured == 30);
        assert!(rep.rows[1].note.as_deref().unwrap().starts_with("skipped"));
        let text = rep.render();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("32x32"));
    }
}
