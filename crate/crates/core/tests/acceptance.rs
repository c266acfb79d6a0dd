//! Acceptance runner: one PASS/FAIL line per criterion, then a summary.
//! `ACCEPTANCE_ONLY=2,5` runs a subset. Exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::reference::{pair, REFERENCE};
use common::{ffl_direct, ffl_focal_gradient, loss_gradient, model_gradient, LossKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewsynth_core::checkpoint::{Checkpoint, IdentitySynthesizer};
use viewsynth_core::data::{dataset_pose_stats, LightFieldSpec, SyntheticSceneSpec};
use viewsynth_core::embedding::encode_position;
use viewsynth_core::latency::{benchmark_latency, time_synthesizer};
use viewsynth_core::losses::focal_frequency_loss;
use viewsynth_core::metrics::{evaluate_table, ms_ssim, psnr, psnr_images, ssim, Protocol};
use viewsynth_core::training::{run_ablation, train, train_stage, AblationAxis, DatasetSpec, Init, StagePlan, TrainConfig};
use viewsynth_core::{EmbeddingConfig, EmbeddingVariant, Encoder1Kind, Model, ModelConfig, PoseStats, Tensor};

type Outcome = Result<(bool, String), String>;

fn embedding_dimensionality() -> Outcome {
    let enc = encode_position(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 32, 16.0).map_err(|e| e.to_string())?;
    let cfg = EmbeddingConfig::new(EmbeddingVariant::Full, 64, 64);
    Ok((enc.len() == 384 && cfg.d1() == 384, format!("encode_position length {}, d1 {}", enc.len(), cfg.d1())))
}

fn gradient_suite() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked = 0;
    let mut take = |c: common::GradCheck| {
        checked += c.checked;
        if c.worst >= worst.0 {
            worst = (c.worst, c.worst_at);
        }
    };
    let e = |e: viewsynth_core::Error| e.to_string();
    for side in [8, 16] {
        take(loss_gradient(LossKind::L1, side, 1).map_err(e)?);
        take(loss_gradient(LossKind::Ffl, side, 3).map_err(e)?);
    }
    for side in [16, 32] {
        take(loss_gradient(LossKind::MsSsim, side, 2).map_err(e)?);
    }
    take(ffl_focal_gradient(8, 5).map_err(e)?);
    let (model, missing) = model_gradient(6, 4).map_err(e)?;
    take(model);
    if !missing.is_empty() {
        return Ok((false, format!("no gradient reaches {missing:?}")));
    }
    Ok((worst.0 < 1e-3, format!("{checked} derivatives, worst relative error {:.2e} at {}", worst.0, worst.1)))
}

fn ffl_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| rng.random());
        let b = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| rng.random());
        let fast = focal_frequency_loss(&a, &b, 1.0).map_err(|e| e.to_string())?;
        worst = worst.max((fast - ffl_direct(&a, &b, 1.0)).abs());
    }
    Ok((worst <= 1e-6, format!("100 pairs, max |FFT - direct DFT| = {worst:.2e}")))
}

fn metric_oracles() -> Outcome {
    let e = |e: viewsynth_core::Error| e.to_string();
    let a: Vec<f64> = (0..4096).map(|i| (i % 200) as f64 / 255.0).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 1.0 / 255.0).collect();
    let p = psnr(&a, &b, 1.0).map_err(e)?;
    let inf = psnr(&a, &a, 1.0).map_err(e)?;
    let mut ok = (p - 48.1308).abs() < 1e-3 && inf == f64::INFINITY;
    let mut worst_ref = 0.0f64;
    let mut worst_id = 0.0f64;
    for (k, &(s_ref, m_ref)) in REFERENCE.iter().enumerate() {
        let (x, y) = pair(k, 176, 176);
        worst_ref = worst_ref.max((ssim(&x, &y).map_err(e)? - s_ref).abs());
        worst_ref = worst_ref.max((ms_ssim(&x, &y).map_err(e)? - m_ref).abs());
        if k < 3 {
            worst_id = worst_id.max((ssim(&x, &x).map_err(e)? - 1.0).abs());
            worst_id = worst_id.max((ms_ssim(&x, &x).map_err(e)? - 1.0).abs());
        }
    }
    ok &= worst_ref < 1e-4 && worst_id <= 1e-6;
    Ok((
        ok,
        format!(
            "PSNR {p:.4} dB at 1/255 error, identity {inf}; |1 - SSIM(x, x)| <= {worst_id:.1e}; max reference gap {worst_ref:.2e}"
        ),
    ))
}

fn overfit() -> Outcome {
    let spec = SyntheticSceneSpec { positions: 1, samples_per_position: 8, scenes: 1, ..Default::default() };
    let cfg = TrainConfig {
        batch_size: 8,
        decay_interval: usize::MAX,
        model: ModelConfig::lite(64, 64),
        dataset: DatasetSpec::Synthetic(spec),
        validation: None,
        ..TrainConfig::desk()
    };
    let data = cfg.dataset.load(64, 64).map_err(|e| e.to_string())?;
    let mut init = Init::Fresh;
    let mut trace = Vec::new();
    let chunk = 250;
    for k in 1..=2000 / chunk {
        let plan = StagePlan { index: 0, epochs: k * chunk, lr: cfg.lr };
        let out = train_stage(&cfg, plan, &data, init).map_err(|e| e.to_string())?;
        let r = evaluate_table(&out.checkpoint, &data, Protocol::Direct).map_err(|e| e.to_string())?;
        trace.push(format!("{}:{:.2}", k * chunk, r.psnr));
        if r.psnr >= 30.0 {
            return Ok((true, format!("train PSNR {:.2} dB after {} steps ({})", r.psnr, k * chunk, trace.join(" "))));
        }
        init = Init::Resume(out.checkpoint);
    }
    Ok((false, format!("train PSNR by step: {}; needs >= 30 dB", trace.join(" "))))
}

fn embedding_ablation() -> Outcome {
    let table = run_ablation(&TrainConfig::desk(), AblationAxis::EmbeddingVariants).map_err(|e| e.to_string())?;
    let get = |label: &str| {
        table.rows.iter().find(|r| r.label == label).and_then(|r| r.report.as_ref()).map(|r| r.psnr).unwrap_or(f64::NAN)
    };
    let full = get(EmbeddingVariant::Full.label());
    let norm = get(EmbeddingVariant::NormOnly.label());
    let mlp = get(EmbeddingVariant::MlpOnly.label());
    let summary: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{} {:.2}", r.label, r.report.as_ref().map(|m| m.psnr).unwrap_or(f64::NAN)))
        .collect();
    Ok((
        full - norm >= 0.5 && full - mlp >= 0.5,
        format!("held-out PSNR: {}; FULL - Norm {:+.2} dB, FULL - MLP {:+.2} dB (need >= 0.5)", summary.join(", "), full - norm, full - mlp),
    ))
}

fn encoder_ablation() -> Outcome {
    let base = TrainConfig::desk();
    let table = run_ablation(&base, AblationAxis::Encoder1).map_err(|e| e.to_string())?;
    let psnr_of = |kind: Encoder1Kind| {
        table.rows.iter().find(|r| r.label == kind.label()).and_then(|r| r.report.as_ref()).map(|r| r.psnr).unwrap_or(f64::NAN)
    };
    let (with, without) = (psnr_of(Encoder1Kind::PretrainedResnet), psnr_of(Encoder1Kind::None));
    let stats = PoseStats::new([-0.1; 6], [0.1; 6]).map_err(|e| e.to_string())?;
    let fps = |kind: Encoder1Kind| -> Result<f64, String> {
        let model = Model::new(base.model.clone().with_encoder1(kind)).map_err(|e| e.to_string())?;
        Ok(time_synthesizer(&Checkpoint::new(model, stats), 5, 30, 0).map_err(|e| e.to_string())?.fps)
    };
    let (fps_with, fps_without) = (fps(Encoder1Kind::PretrainedResnet)?, fps(Encoder1Kind::None)?);
    Ok((
        without < with && fps_without > fps_with,
        format!(
            "held-out PSNR ResNet {with:.2} vs none {without:.2}; fps ResNet {fps_with:.1} vs none {fps_without:.1}"
        ),
    ))
}

fn latency_structure() -> Outcome {
    let stats = PoseStats::new([-0.1; 6], [0.1; 6]).map_err(|e| e.to_string())?;
    let mean = |cfg: ModelConfig| -> Result<Vec<f64>, String> {
        let ckpt = Checkpoint::new(Model::new(cfg).map_err(|e| e.to_string())?, stats);
        let rep = benchmark_latency(&ckpt, &[256, 512], 5, 30).map_err(|e| e.to_string())?;
        Ok(rep.rows.iter().map(|r| r.mean_s).collect())
    };
    let lite = mean(ModelConfig::lite(256, 256))?;
    let full = mean(ModelConfig::full(256, 256))?;
    let (r256, r512, growth) = (lite[0] / full[0], lite[1] / full[1], full[1] / full[0]);
    Ok((
        r256 <= 0.67 && r512 <= 0.67 && growth < 2.5,
        format!(
            "s/frame LITE {:.4}/{:.4}, FULL {:.4}/{:.4} at 256/512; LITE/FULL {r256:.2} and {r512:.2} (need <= 0.67); FULL 512/256 {growth:.2} (need < 2.5)",
            lite[0], lite[1], full[0], full[1]
        ),
    ))
}

fn light_field_case() -> Outcome {
    let spec = LightFieldSpec::default();
    let corners = vec![[0, 0], [0, spec.cols - 1], [spec.rows - 1, 0], [spec.rows - 1, spec.cols - 1]];
    let lf = |only_excluded| DatasetSpec::LightField { spec: spec.clone(), baseline_scale: 1.0, exclude: corners.clone(), only_excluded };
    let cfg = TrainConfig {
        epochs: 150,
        decay_interval: 100,
        model: ModelConfig::lite(64, 64).with_embedding(EmbeddingVariant::NormOnly),
        dataset: lf(false),
        validation: Some(lf(true)),
        ..TrainConfig::desk()
    };
    let held_out = lf(true).load(64, 64).map_err(|e| e.to_string())?;
    let input_baseline = held_out.iter().map(|s| psnr_images(&s.source, &s.target).unwrap_or(f64::NAN)).sum::<f64>() / 4.0;
    let out = train(&cfg, Init::Fresh).map_err(|e| e.to_string())?;
    let r = evaluate_table(&out.checkpoint, &held_out, Protocol::Direct).map_err(|e| e.to_string())?;
    Ok((
        r.psnr >= 27.0,
        format!("held-out corner PSNR {:.2} dB (input view alone {input_baseline:.2} dB), need >= 27", r.psnr),
    ))
}

fn determinism_round_trip() -> Outcome {
    let e = |e: viewsynth_core::Error| e.to_string();
    let spec = SyntheticSceneSpec { positions: 2, samples_per_position: 3, height: 32, width: 32, ..Default::default() };
    let cfg = TrainConfig {
        batch_size: 2,
        epochs: 2,
        model: ModelConfig::lite(32, 32),
        dataset: DatasetSpec::Synthetic(spec),
        validation: None,
        ..TrainConfig::desk()
    };
    let a = train(&cfg, Init::Fresh).map_err(e)?;
    let b = train(&cfg, Init::Fresh).map_err(e)?;
    let reproducible = a.checkpoint.same_as(&b.checkpoint) && a.records.iter().zip(&b.records).all(|(x, y)| x.loss == y.loss);
    let bytes = a.checkpoint.to_bytes().map_err(e)?;
    let back = Checkpoint::from_bytes(&bytes).map_err(e)?;
    let round_trip = back.same_as(&a.checkpoint) && back.to_bytes().map_err(e)? == bytes;
    let data = cfg.dataset.load(32, 32).map_err(e)?;
    let id = IdentitySynthesizer { height: 32, width: 32, stats: dataset_pose_stats(&data).map_err(e)? };
    let report = evaluate_table(&id, &data, Protocol::RoundTrip).map_err(e)?;
    let sentinel = report.psnr == f64::INFINITY && report.per_sample.iter().all(|s| s.psnr == f64::INFINITY);
    Ok((
        reproducible && round_trip && sentinel,
        format!(
            "repeat training identical: {reproducible}; save/load bitwise: {round_trip}; identity ROUND_TRIP PSNR {} over {} samples",
            report.psnr,
            report.per_sample.len()
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("embedding dimensionality", embedding_dimensionality),
        ("gradient suite", gradient_suite),
        ("FFL oracle", ffl_oracle),
        ("metric oracles", metric_oracles),
        ("overfit check", overfit),
        ("embedding ablation direction", embedding_ablation),
        ("encoder I ablation direction", encoder_ablation),
        ("latency structure", latency_structure),
        ("light-field case study", light_field_case),
        ("determinism and round trip", determinism_round_trip),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let (mut passed, mut run) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        run += 1;
        let t = Instant::now();
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        passed += ok as usize;
        println!("{} {n:>2} {name}: {detail} [{:.1}s]", if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {passed}/{run} criteria passed");
    if passed == run {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
