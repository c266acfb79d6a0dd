//! Single-file checkpoints (safetensors) holding the model config, pose
//! statistics, every parameter array and optional optimizer state, plus the
//! inference interface shared by real and stub models.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::pose::{normalize_pose, Pose6D, PoseStats};
use crate::renderer::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// First and second moment estimates keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

/// Where a training run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub stage: usize,
    pub epochs_done: usize,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub pose_stats: PoseStats,
    pub optimizer: Option<AdamState>,
    pub progress: Option<Progress>,
}

fn bytes_of(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn new(model: Model<f32>, pose_stats: PoseStats) -> Self {
        Self { model, pose_stats, optimizer: None, progress: None }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (name, t) in self.model.params.iter() {
            owned.push((name.to_string(), t.shape().to_vec(), bytes_of(t)));
        }
        let mut meta = HashMap::new();
        meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
        meta.insert("config".to_string(), serde_json::to_string(&self.model.config)?);
        meta.insert("pose_stats".to_string(), self.pose_stats.to_json());
        if let Some(opt) = &self.optimizer {
            meta.insert("adam_step".to_string(), opt.step.to_string());
            for (prefix, map) in [(ADAM_M, &opt.m), (ADAM_V, &opt.v)] {
                for (name, t) in map {
                    owned.push((format!("{prefix}{name}"), t.shape().to_vec(), bytes_of(t)));
                }
            }
        }
        if let Some(p) = &self.progress {
            meta.insert("progress".to_string(), serde_json::to_string(p)?);
        }
        let views = owned
            .iter()
            .map(|(n, shape, data)| Ok((n.as_str(), TensorView::new(Dtype::F32, shape.clone(), data).map_err(ckpt_err)?)))
            .collect::<Result<Vec<_>>>()?;
        canonical_header(safetensors::serialize(views, Some(meta)).map_err(ckpt_err)?)
    }

    /// Parses a checkpoint, validating every array against the layout its
    /// config implies.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(ckpt_err)?;
        let meta = header.metadata().clone().unwrap_or_default();
        let field = |k: &str| meta.get(k).ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")));
        let found: u32 = field("format_version")?.parse().map_err(ckpt_err)?;
        if found != FORMAT_VERSION {
            return Err(Error::Version { found, expected: FORMAT_VERSION });
        }
        let config: ModelConfig = serde_json::from_str(field("config")?)?;
        let pose_stats = PoseStats::from_json(field("pose_stats")?)?;
        let progress = meta.get("progress").map(|p| serde_json::from_str(p)).transpose()?;
        let st = SafeTensors::deserialize(bytes).map_err(ckpt_err)?;
        let read = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
            let v = st.tensor(name).map_err(|_| Error::CheckpointParam { name: name.into(), detail: "missing".into() })?;
            if v.dtype() != Dtype::F32 || v.shape() != shape {
                return Err(Error::CheckpointParam {
                    name: name.into(),
                    detail: format!("stored as {:?} {:?}, config expects F32 {shape:?}", v.dtype(), v.shape()),
                });
            }
            let data = v.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            Tensor::new(shape.to_vec(), data)
        };
        let mut model = Model::<f32>::skeleton(config)?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        for (i, (name, shape)) in expected.iter().enumerate() {
            *model.params.value_mut(i) = read(name, shape)?;
        }
        let optimizer = match meta.get("adam_step") {
            None => None,
            Some(step) => {
                let mut opt = AdamState { step: step.parse().map_err(ckpt_err)?, ..Default::default() };
                for (name, shape) in &expected {
                    if st.tensor(&format!("{ADAM_M}{name}")).is_ok() {
                        opt.m.insert(name.clone(), read(&format!("{ADAM_M}{name}"), shape)?);
                        opt.v.insert(name.clone(), read(&format!("{ADAM_V}{name}"), shape)?);
                    }
                }
                Some(opt)
            }
        };
        for name in st.names() {
            let known = model.params.index_of(name).is_some()
                || name.strip_prefix(ADAM_M).or_else(|| name.strip_prefix(ADAM_V)).is_some_and(|n| {
                    optimizer.as_ref().is_some_and(|o| o.m.contains_key(n))
                });
            if !known {
                return Err(Error::CheckpointParam { name: name.to_string(), detail: "not part of the model".into() });
            }
        }
        Ok(Self { model, pose_stats, optimizer, progress })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Bitwise equality of config, statistics and parameters.
    pub fn same_as(&self, other: &Self) -> bool {
        self.model.config == other.model.config
            && self.pose_stats == other.pose_stats
            && self.model.params.same_as(&other.model.params)
    }
}

/// One synthesized frame plus the pose components that fell outside the
/// training range.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub image: Image,
    pub out_of_range: Vec<usize>,
}

/// Anything that can render a novel view of an input image. Implementations
/// must be safe to call concurrently.
pub trait ViewSynthesizer: Send + Sync {
    fn resolution(&self) -> (usize, usize);
    fn pose_stats(&self) -> &PoseStats;
    fn variant_id(&self) -> String;
    /// `pose` is the target camera relative to the input camera.
    fn synthesize(&self, img: &Image, pose: &Pose6D) -> Result<Synthesis>;

    fn check_resolution(&self, img: &Image) -> Result<()> {
        let (h, w) = self.resolution();
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::Resolution { expected_h: h, expected_w: w, got_h: img.height(), got_w: img.width() });
        }
        Ok(())
    }
}

impl ViewSynthesizer for Checkpoint {
    fn resolution(&self) -> (usize, usize) {
        (self.model.config.height, self.model.config.width)
    }

    fn pose_stats(&self) -> &PoseStats {
        &self.pose_stats
    }

    fn variant_id(&self) -> String {
        self.model.config.variant_id()
    }

    fn synthesize(&self, img: &Image, pose: &Pose6D) -> Result<Synthesis> {
        self.check_resolution(img)?;
        let out_of_range = normalize_pose(pose, &self.pose_stats)?.out_of_range;
        let image = self.model.synthesize(img, pose, &self.pose_stats)?;
        Ok(Synthesis { image, out_of_range })
    }
}

/// Returns its input unchanged; a reference point for evaluation and a
/// stand-in model for service tests.
#[derive(Clone, Debug)]
pub struct IdentitySynthesizer {
    pub height: usize,
    pub width: usize,
    pub stats: PoseStats,
}

impl ViewSynthesizer for IdentitySynthesizer {
    fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn pose_stats(&self) -> &PoseStats {
        &self.stats
    }

    fn variant_id(&self) -> String {
        format!("IDENTITY@{}x{}", self.height, self.width)
    }

    fn synthesize(&self, img: &Image, pose: &Pose6D) -> Result<Synthesis> {
        self.check_resolution(img)?;
        let out_of_range = normalize_pose(pose, &self.stats)?.out_of_range;
        Ok(Synthesis { image: img.clone(), out_of_range })
    }
}

/// safetensors writes its metadata map in hash order; rewriting the header
/// with sorted keys makes equal checkpoints byte-identical.
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len])?;
    let mut text = serde_json::to_vec(&header)?;
    text.resize(text.len().next_multiple_of(8), b' ');
    let mut out = Vec::with_capacity(bytes.len());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[8 + len..]);
    Ok(out)
}
