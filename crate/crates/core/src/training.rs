//! Adam training with step-decayed learning rate, the three-stage
//! curriculum and the ablation driver.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{AdamState, Checkpoint, Progress};
use crate::data::{
    dataset_hash, dataset_pose_stats, generate_light_field, generate_synthetic, lf_to_samples, load_light_field,
    load_manifest, InputView, LightFieldSpec, Sample, SyntheticSceneSpec,
};
use crate::embedding::{self, EmbeddingVariant};
use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph};
use crate::image::Image;
use crate::losses::{total_loss_graph, LossConfig, LossReport, Perceptual};
use crate::metrics::{evaluate_table, MetricsReport, Protocol};
use crate::params::ParamStore;
use crate::pose::PoseStats;
use crate::renderer::{Encoder1Kind, Model, ModelConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Where a stage's samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSceneSpec),
    /// Generated light field; `baseline_scale` widens the camera grid.
    LightField {
        #[serde(default)]
        spec: LightFieldSpec,
        #[serde(default = "one")]
        baseline_scale: f64,
        /// Grid cells left out, as `[row, col]`.
        #[serde(default)]
        exclude: Vec<[usize; 2]>,
        /// Keep only the excluded cells instead.
        #[serde(default)]
        only_excluded: bool,
    },
    /// `view_{row}_{col}` images on disk.
    LightFieldDir {
        path: PathBuf,
        rows: usize,
        cols: usize,
        #[serde(default = "one")]
        baseline: f64,
    },
    /// Directory written by [`crate::data::write_manifest`].
    Manifest { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl DatasetSpec {
    /// Materialises the samples at `height x width`, resizing loaded images
    /// when needed.
    pub fn load(&self, height: usize, width: usize) -> Result<Vec<Sample>> {
        let samples = match self {
            Self::Synthetic(spec) => generate_synthetic(&SyntheticSceneSpec { height, width, ..spec.clone() })?,
            Self::LightField { spec, baseline_scale, exclude, only_excluded } => {
                let spec = LightFieldSpec { height, width, baseline: spec.baseline * baseline_scale, ..spec.clone() };
                let lf = generate_light_field(&spec)?;
                let all = lf_to_samples(&lf, InputView::Center)?;
                all.into_iter()
                    .enumerate()
                    .filter(|(i, _)| exclude.contains(&[i / spec.cols, i % spec.cols]) == *only_excluded)
                    .map(|(_, s)| s)
                    .collect()
            }
            Self::LightFieldDir { path, rows, cols, baseline } => {
                lf_to_samples(&load_light_field(path, *rows, *cols, *baseline)?, InputView::Center)?
            }
            Self::Manifest { path } => load_manifest(path)?,
        };
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let fit = |im: Image| if (im.height(), im.width()) == (height, width) { im } else { im.resize(height, width) };
        Ok(samples
            .into_iter()
            .map(|s| Sample { source: fit(s.source), target: fit(s.target), ..s })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub dataset: DatasetSpec,
    pub epochs: usize,
    /// Replaces the base learning rate for this stage.
    #[serde(default)]
    pub lr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_interval: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    /// Training data for single-stage runs and ablations.
    pub dataset: DatasetSpec,
    /// Held-out data for evaluation.
    pub validation: Option<DatasetSpec>,
    /// Curriculum stages, in order.
    pub stages: Vec<StageSpec>,
    /// Append-only JSON-lines training log.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Desk-scale defaults: LITE at 64x64, batch 8, synthetic data.
    pub fn desk() -> Self {
        let lf = |scale: f64| DatasetSpec::LightField {
            spec: LightFieldSpec::default(),
            baseline_scale: scale,
            exclude: Vec::new(),
            only_excluded: false,
        };
        let synthetic = SyntheticSceneSpec { positions: 24, samples_per_position: 8, ..Default::default() };
        Self {
            batch_size: 8,
            lr: 0.003,
            lr_decay: 0.2,
            decay_interval: 30,
            epochs: 30,
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            model: ModelConfig::lite(64, 64),
            dataset: DatasetSpec::Synthetic(synthetic.clone()),
            validation: Some(DatasetSpec::Synthetic(SyntheticSceneSpec { seed: 1007, positions: 8, ..synthetic.clone() })),
            stages: vec![
                StageSpec { name: "narrow-baseline light field".into(), dataset: lf(1.0), epochs: 10, lr: None },
                StageSpec { name: "doubled-baseline light field".into(), dataset: lf(2.0), epochs: 10, lr: Some(0.0005) },
                StageSpec { name: "random camera volume".into(), dataset: DatasetSpec::Synthetic(synthetic), epochs: 30, lr: None },
            ],
            log_path: None,
        }
    }

    /// Full-scale schedule: FULL at 256x256, batch 24, 150 epochs split
    /// over Lytro, SLFDB and rendered-volume stages (data not bundled).
    pub fn large() -> Self {
        let lf_dir = |p: &str| DatasetSpec::LightFieldDir { path: p.into(), rows: 7, cols: 7, baseline: 1.0 };
        Self {
            batch_size: 24,
            lr: 0.003,
            lr_decay: 0.2,
            decay_interval: 30,
            epochs: 150,
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            model: ModelConfig::full(256, 256),
            dataset: DatasetSpec::Manifest { path: "data/blender".into() },
            validation: Some(DatasetSpec::Manifest { path: "data/blender-val".into() }),
            stages: vec![
                StageSpec { name: "Lytro light fields".into(), dataset: lf_dir("data/lytro"), epochs: 30, lr: None },
                StageSpec { name: "SLFDB light fields".into(), dataset: lf_dir("data/slfdb"), epochs: 30, lr: Some(0.0005) },
                StageSpec {
                    name: "Blender random volume".into(),
                    dataset: DatasetSpec::Manifest { path: "data/blender".into() },
                    epochs: 90,
                    lr: None,
                },
            ],
            log_path: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "large" => Ok(Self::large()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (desk, large)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lr_decay > 0.0) || self.decay_interval == 0 {
            return Err(Error::Config("batch size, learning rate, decay and interval must be positive".into()));
        }
        if self.epochs == 0 || self.stages.iter().any(|s| s.epochs == 0) {
            return Err(Error::Config("every run and stage needs at least one epoch".into()));
        }
        if self.stages.iter().any(|s| s.lr.is_some_and(|lr| !(lr > 0.0))) {
            return Err(Error::Config("stage learning rates must be positive".into()));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Step decay: `base * decay^floor(epoch / interval)`.
pub fn schedule(base: f64, decay: f64, interval: usize, epoch: usize) -> f64 {
    base * decay.powi((epoch / interval.max(1)) as i32)
}

pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    schedule(cfg.lr, cfg.lr_decay, cfg.decay_interval, epoch)
}

/// One Adam update of every trainable parameter that received a gradient.
pub fn adam_step(params: &mut ParamStore<f32>, grads: &Gradients<f32>, state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = (1.0 - cfg.beta1.powi(t)) as f32;
    let c2 = (1.0 - cfg.beta2.powi(t)) as f32;
    let (b1, b2, eps, lr) = (cfg.beta1 as f32, cfg.beta2 as f32, cfg.eps as f32, lr as f32);
    for i in 0..params.len() {
        let Some(g) = grads.param(i) else { continue };
        if !params.is_trainable(i) {
            continue;
        }
        let name = params.name(i).to_string();
        let shape = g.shape().to_vec();
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape.clone()));
        let v = state.v.entry(name).or_insert_with(|| Tensor::zeros(shape));
        let p = params.value_mut(i);
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub stage: usize,
    pub epoch: usize,
    /// Optimizer step within the stage.
    pub step: u64,
    pub lr: f64,
    pub wall_time_s: f64,
    pub loss: LossReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// How a stage starts.
#[derive(Debug)]
pub enum Init {
    /// New parameters from the model config and run seed.
    Fresh,
    /// Parameters of a previous stage; optimizer state is reset.
    Warm(Checkpoint),
    /// Continue an interrupted run of this stage, optimizer included.
    Resume(Checkpoint),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StagePlan {
    pub index: usize,
    pub epochs: usize,
    pub lr: f64,
}

pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<TrainLogRecord>,
}

fn image_key(img: &Image) -> u64 {
    let mut h = DefaultHasher::new();
    (img.height(), img.width()).hash(&mut h);
    for v in img.data() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Shuffle seed for `(seed, stage, epoch)`.
fn epoch_rng(seed: u64, stage: usize, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((stage as u64) << 40) ^ epoch as u64)
}

struct Logger {
    file: Option<std::fs::File>,
    records: Vec<TrainLogRecord>,
}

impl Logger {
    fn new(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                }
                Some(std::fs::OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?)
            }
            None => None,
        };
        Ok(Self { file, records: Vec::new() })
    }

    fn push(&mut self, r: TrainLogRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&r)?;
            writeln!(f, "{line}").map_err(|e| Error::Io { path: "training log".into(), source: e })?;
        }
        self.records.push(r);
        Ok(())
    }
}

/// Frozen backbone outputs per distinct source image.
struct FeatureCache {
    map: HashMap<u64, Tensor<f32>>,
}

impl FeatureCache {
    fn batch(&mut self, model: &Model<f32>, images: &[&Image]) -> Result<Tensor<f32>> {
        for im in images {
            let key = image_key(im);
            if !self.map.contains_key(&key) {
                let g = Graph::inference();
                let f = model.backbone_graph(&g, g.constant(im.to_tensor()))?.expect("encoder I present");
                self.map.insert(key, (*f.value()).clone());
            }
        }
        let parts: Vec<&Tensor<f32>> = images.iter().map(|im| &self.map[&image_key(im)]).collect();
        Tensor::concat_batch(&parts)
    }
}

/// Loss and gradients of one batch.
fn batch_step(
    model: &Model<f32>,
    batch: &[&Sample],
    stats: &PoseStats,
    loss: &LossConfig,
    perceptual: Option<&Perceptual<f32>>,
    cache: Option<&mut FeatureCache>,
    want_grad: bool,
) -> Result<(LossReport, Option<Gradients<f32>>)> {
    let sources: Vec<&Image> = batch.iter().map(|s| &s.source).collect();
    let targets: Vec<&Image> = batch.iter().map(|s| &s.target).collect();
    let feats = batch
        .iter()
        .map(|s| embedding::pose_features(&s.relative_pose(), stats, &model.config.embedding).map(|(f, _)| f))
        .collect::<Result<Vec<_>>>()?;
    let g = if want_grad { Graph::new() } else { Graph::inference() };
    let x = g.constant(Image::batch::<f32>(&sources)?);
    let f1 = match cache {
        Some(c) => Some(g.constant(c.batch(model, &sources)?)),
        None => None,
    };
    let pred = model.forward(&g, x, &feats, f1)?;
    let (total, report) = total_loss_graph(&g, pred, g.constant(Image::batch::<f32>(&targets)?), loss, perceptual)?;
    let grads = if want_grad && report.total.is_finite() { Some(g.backward(total)?) } else { None };
    Ok((report, grads))
}

/// Mean total loss of `ckpt` over `data` (no parameter updates).
pub fn mean_loss(ckpt: &Checkpoint, data: &[Sample], loss: &LossConfig, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let perceptual = Perceptual::<f32>::from_config(loss)?;
    let mut cache = uses_cache(&ckpt.model.config).then(|| FeatureCache { map: HashMap::new() });
    let mut sum = 0.0;
    for chunk in data.chunks(batch_size.max(1)) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        let (r, _) = batch_step(&ckpt.model, &batch, &ckpt.pose_stats, loss, perceptual.as_ref(), cache.as_mut(), false)?;
        sum += r.total * chunk.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

fn uses_cache(cfg: &ModelConfig) -> bool {
    cfg.encoder1 == Encoder1Kind::PretrainedResnet && cfg.freeze_encoder1
}

/// Runs `plan.epochs` epochs of Adam over `data` in shuffled batches of
/// `cfg.batch_size` (the last batch may be short).
pub fn train_stage(cfg: &TrainConfig, plan: StagePlan, data: &[Sample], init: Init) -> Result<StageOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (h, w) = (cfg.model.height, cfg.model.width);
    if let Some(s) = data.iter().find(|s| (s.source.height(), s.source.width()) != (h, w)) {
        return Err(Error::Resolution { expected_h: h, expected_w: w, got_h: s.source.height(), got_w: s.source.width() });
    }
    let (mut model, stats, mut opt, start_epoch, mut step) = match init {
        Init::Fresh => {
            let model = Model::<f32>::new(ModelConfig { seed: cfg.seed, ..cfg.model.clone() })?;
            (model, dataset_pose_stats(data)?, AdamState::default(), 0, 0)
        }
        Init::Warm(c) => {
            check_compatible(&c.model.config, &cfg.model)?;
            (c.model, dataset_pose_stats(data)?, AdamState::default(), 0, 0)
        }
        Init::Resume(c) => {
            check_compatible(&c.model.config, &cfg.model)?;
            let p = c.progress.ok_or_else(|| Error::Checkpoint("checkpoint has no training progress".into()))?;
            if p.stage != plan.index {
                return Err(Error::Checkpoint(format!("checkpoint stopped in stage {}, not {}", p.stage, plan.index)));
            }
            (c.model, c.pose_stats, c.optimizer.unwrap_or_default(), p.epochs_done, p.steps)
        }
    };
    let perceptual = Perceptual::<f32>::from_config(&cfg.loss)?;
    let mut cache = uses_cache(&model.config).then(|| FeatureCache { map: HashMap::new() });
    let mut log = Logger::new(cfg.log_path.as_deref())?;
    let clock = Instant::now();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in start_epoch..plan.epochs {
        let lr = schedule(plan.lr, cfg.lr_decay, cfg.decay_interval, epoch);
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, plan.index, epoch));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (report, grads) =
                batch_step(&model, &batch, &stats, &cfg.loss, perceptual.as_ref(), cache.as_mut(), true)?;
            let mut record =
                TrainLogRecord { stage: plan.index, epoch, step, lr, wall_time_s: clock.elapsed().as_secs_f64(), loss: report, error: None };
            let finite = [report.l1, report.ms_ssim, report.ffl, report.perceptual, report.total].iter().all(|v| v.is_finite());
            if !finite {
                let detail = format!("{report:?}");
                record.error = Some(format!("non-finite loss: {detail}"));
                log.push(record)?;
                return Err(Error::NonFiniteLoss { stage: plan.index, epoch, step: step as usize, detail });
            }
            adam_step(&mut model.params, grads.as_ref().expect("gradients for finite loss"), &mut opt, lr, &cfg.adam);
            step += 1;
            epoch_loss += report.total * batch.len() as f64;
            log.push(record)?;
        }
        log::info!("stage {} epoch {epoch}: loss {:.5} lr {lr:.2e}", plan.index, epoch_loss / data.len() as f64);
    }
    let mut checkpoint = Checkpoint::new(model, stats);
    checkpoint.optimizer = Some(opt);
    checkpoint.progress = Some(Progress { stage: plan.index, epochs_done: plan.epochs.max(start_epoch), steps: step });
    Ok(StageOutcome { checkpoint, records: log.records })
}

fn check_compatible(found: &ModelConfig, wanted: &ModelConfig) -> Result<()> {
    let same = found.variant == wanted.variant
        && found.encoder1 == wanted.encoder1
        && found.embedding.variant == wanted.embedding.variant
        && (found.height, found.width) == (wanted.height, wanted.width)
        && found.encoder2_widths == wanted.encoder2_widths
        && found.decoder_widths == wanted.decoder_widths;
    if !same {
        return Err(Error::Config(format!(
            "checkpoint model {} does not match the configured {}",
            found.variant_id(),
            wanted.variant_id()
        )));
    }
    Ok(())
}

/// Single-stage training on `cfg.dataset` for `cfg.epochs`.
pub fn train(cfg: &TrainConfig, init: Init) -> Result<StageOutcome> {
    let data = cfg.dataset.load(cfg.model.height, cfg.model.width)?;
    train_stage(cfg, StagePlan { index: 0, epochs: cfg.epochs, lr: cfg.lr }, &data, init)
}

pub struct CurriculumOutcome {
    pub stages: Vec<Checkpoint>,
    pub final_checkpoint: Checkpoint,
    pub records: Vec<TrainLogRecord>,
}

/// Chains the configured stages, each warm-started from the previous one.
/// With `out_dir` each stage checkpoint is written as it completes, plus
/// `final.safetensors`.
pub fn run_curriculum(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<CurriculumOutcome> {
    cfg.validate()?;
    if cfg.stages.is_empty() {
        return Err(Error::Config("curriculum needs at least one stage".into()));
    }
    let mut stages = Vec::new();
    let mut records = Vec::new();
    let mut init = Init::Fresh;
    for (index, stage) in cfg.stages.iter().enumerate() {
        let data = stage.dataset.load(cfg.model.height, cfg.model.width)?;
        log::info!("stage {index} ({}): {} samples, {} epochs", stage.name, data.len(), stage.epochs);
        let plan = StagePlan { index, epochs: stage.epochs, lr: stage.lr.unwrap_or(cfg.lr) };
        let out = train_stage(cfg, plan, &data, init)?;
        if let Some(dir) = out_dir {
            out.checkpoint.save(&dir.join(format!("stage{}.safetensors", index + 1)))?;
        }
        records.extend(out.records);
        init = Init::Warm(out.checkpoint.clone());
        stages.push(out.checkpoint);
    }
    let final_checkpoint = stages.last().cloned().expect("at least one stage");
    if let Some(dir) = out_dir {
        final_checkpoint.save(&dir.join("final.safetensors"))?;
    }
    Ok(CurriculumOutcome { stages, final_checkpoint, records })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AblationAxis {
    EmbeddingVariants,
    Encoder1,
}

impl AblationAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "embedding" | "embedding_variants" => Ok(Self::EmbeddingVariants),
            "encoder1" | "encoder" | "encoder_i" => Ok(Self::Encoder1),
            _ => Err(Error::Parse(format!("unknown ablation axis `{s}` (embedding, encoder1)"))),
        }
    }

    /// Labelled model configs for every row.
    pub fn variants(self, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
        match self {
            Self::EmbeddingVariants => EmbeddingVariant::ALL
                .iter()
                .map(|&v| (v.label().to_string(), base.clone().with_embedding(v)))
                .collect(),
            Self::Encoder1 => [Encoder1Kind::PretrainedResnet, Encoder1Kind::None]
                .iter()
                .map(|&e| (e.label().to_string(), base.clone().with_encoder1(e)))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub model: String,
    pub seed: u64,
    pub epochs: usize,
    pub dataset_hash: String,
    pub eval_dataset_hash: String,
    pub final_train_loss: Option<f64>,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let rows: Vec<(String, &MetricsReport)> =
            self.rows.iter().filter_map(|r| r.report.as_ref().map(|m| (r.label.clone(), m))).collect();
        let mut out = crate::metrics::render_table(&rows);
        for r in self.rows.iter().filter(|r| r.error.is_some()) {
            out.push_str(&format!("{}: failed: {}\n", r.label, r.error.as_deref().unwrap_or("")));
        }
        out
    }
}

/// Trains every variant along `axis` from the same seed, data and epoch
/// budget, then evaluates each on the validation set (the training set when
/// none is configured). A failing variant is recorded and the rest continue.
pub fn run_ablation(base: &TrainConfig, axis: AblationAxis) -> Result<AblationTable> {
    base.validate()?;
    let (h, w) = (base.model.height, base.model.width);
    let data = base.dataset.load(h, w)?;
    let eval = match &base.validation {
        Some(v) => v.load(h, w)?,
        None => data.clone(),
    };
    let (train_hash, eval_hash) = (dataset_hash(&data), dataset_hash(&eval));
    let mut rows = Vec::new();
    for (label, model) in axis.variants(&base.model) {
        let cfg = TrainConfig { model: model.clone(), ..base.clone() };
        log::info!("ablation row {label}: {}", model.variant_id());
        let result = train_stage(&cfg, StagePlan { index: 0, epochs: cfg.epochs, lr: cfg.lr }, &data, Init::Fresh)
            .and_then(|out| {
                let last = out.records.last().map(|r| r.loss.total);
                Ok((last, evaluate_table(&out.checkpoint, &eval, Protocol::Direct)?))
            });
        let (final_train_loss, report, error) = match result {
            Ok((l, r)) => (l, Some(r), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        rows.push(AblationRow {
            label,
            model: model.variant_id(),
            seed: cfg.seed,
            epochs: cfg.epochs,
            dataset_hash: train_hash.clone(),
            eval_dataset_hash: eval_hash.clone(),
            final_train_loss,
            report,
            error,
        });
    }
    Ok(AblationTable { axis, rows })
}
