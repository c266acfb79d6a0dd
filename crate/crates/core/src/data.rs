//! Training triplets, light-field grids, and a procedural ray-cast scene
//! generator with exact geometric ground truth.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::pose::{compute_pose_stats, Pose6D, PoseStats};

/// Source view, its pose, and a target view with its pose (world frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub source: Image,
    pub source_pose: Pose6D,
    pub target_pose: Pose6D,
    pub target: Image,
}

impl Sample {
    /// Target pose in the source camera's frame, as the network consumes it.
    pub fn relative_pose(&self) -> Pose6D {
        self.target_pose.relative_to(&self.source_pose)
    }
}

/// Statistics of the (source-relative) target poses.
pub fn dataset_pose_stats(samples: &[Sample]) -> Result<PoseStats> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rel: Vec<Pose6D> = samples.iter().map(Sample::relative_pose).collect();
    compute_pose_stats(&rel)
}

/// Content hash over poses and pixels, for reporting which data a run used.
pub fn dataset_hash(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        for im in [&s.source, &s.target] {
            h.update((im.height() as u64).to_le_bytes());
            h.update((im.width() as u64).to_le_bytes());
            for v in im.data() {
                h.update(v.to_le_bytes());
            }
        }
        for v in s.source_pose.to_array().iter().chain(&s.target_pose.to_array()) {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `rows x cols` sub-aperture views in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField {
    pub rows: usize,
    pub cols: usize,
    /// Camera spacing between neighbouring views, in scene units.
    pub baseline: f64,
    views: Vec<Image>,
}

impl LightField {
    pub fn new(rows: usize, cols: usize, baseline: f64, views: Vec<Image>) -> Result<Self> {
        if rows == 0 || cols == 0 || views.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} light field with {} views", views.len())));
        }
        let (h, w) = (views[0].height(), views[0].width());
        if views.iter().any(|v| (v.height(), v.width()) != (h, w)) {
            return Err(Error::Shape("light-field views differ in resolution".into()));
        }
        Ok(Self { rows, cols, baseline, views })
    }

    pub fn view(&self, row: usize, col: usize) -> &Image {
        &self.views[row * self.cols + col]
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.views[0].height(), self.views[0].width())
    }

    /// Pose of view `(row, col)` relative to the grid centre: columns along
    /// x, rows along y, no depth offset or rotation.
    pub fn view_pose(&self, row: usize, col: usize) -> Pose6D {
        let dc = col as f64 - (self.cols / 2) as f64;
        let dr = row as f64 - (self.rows / 2) as f64;
        Pose6D::translation(dc * self.baseline, dr * self.baseline, 0.0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                self.view(r, c).save(&dir.join(view_file(r, c)))?;
            }
        }
        Ok(())
    }
}

fn view_file(row: usize, col: usize) -> String {
    format!("view_{row}_{col}.png")
}

/// Reads `view_{row}_{col}.png` for every cell of a `rows x cols` grid.
pub fn load_light_field(dir: &Path, rows: usize, cols: usize, baseline: f64) -> Result<LightField> {
    let mut views = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = dir.join(view_file(r, c));
            if !p.is_file() {
                return Err(Error::MissingView { row: r, col: c });
            }
            views.push(Image::load(&p)?);
        }
    }
    LightField::new(rows, cols, baseline, views)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InputView {
    Center,
}

/// One sample per grid cell, all sharing the centre view as input.
pub fn lf_to_samples(lf: &LightField, input: InputView) -> Result<Vec<Sample>> {
    let InputView::Center = input;
    if lf.rows % 2 == 0 || lf.cols % 2 == 0 {
        return Err(Error::Config(format!("centre input needs an odd grid, got {}x{}", lf.rows, lf.cols)));
    }
    let source = lf.view(lf.rows / 2, lf.cols / 2).clone();
    let mut out = Vec::with_capacity(lf.rows * lf.cols);
    for r in 0..lf.rows {
        for c in 0..lf.cols {
            out.push(Sample {
                source: source.clone(),
                source_pose: Pose6D::IDENTITY,
                target_pose: lf.view_pose(r, c),
                target: lf.view(r, c).clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
struct Material {
    base: [f32; 3],
    alt: [f32; 3],
    freq: f64,
    stripe_freq: f64,
    stripe_angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Cuboid { min: [f64; 3], max: [f64; 3] },
    /// Plane `p[axis] = offset`.
    Plane { axis: usize, offset: f64 },
}

#[derive(Clone, Debug, PartialEq)]
struct Object {
    shape: Shape,
    material: Material,
}

/// Textured boxes in front of a back wall above a floor. Cameras sit near
/// the origin looking along +z.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    objects: Vec<Object>,
}

/// Horizontal field of view of the pinhole camera.
pub const HFOV_DEG: f64 = 60.0;

pub fn focal_length(width: usize) -> f64 {
    width as f64 / 2.0 / (HFOV_DEG.to_radians() / 2.0).tan()
}

impl Scene {
    pub fn random(rng: &mut ChaCha8Rng, objects: usize, texture_frequency: f64) -> Self {
        let material = |rng: &mut ChaCha8Rng| {
            let base: [f32; 3] = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            let alt = base.map(|v| (v + rng.random_range(-0.45f32..0.45)).clamp(0.05, 0.95));
            Material {
                base,
                alt,
                freq: texture_frequency * rng.random_range(0.6..1.6),
                stripe_freq: texture_frequency * rng.random_range(1.0..3.0),
                stripe_angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        };
        let mut objs = vec![
            Object { shape: Shape::Plane { axis: 2, offset: 5.0 }, material: material(rng) },
            Object { shape: Shape::Plane { axis: 1, offset: 1.2 }, material: material(rng) },
        ];
        for _ in 0..objects {
            let c = [rng.random_range(-1.3..1.3), rng.random_range(-0.7..0.9), rng.random_range(1.2..4.2)];
            let half = [rng.random_range(0.1..0.45), rng.random_range(0.1..0.45), rng.random_range(0.1..0.4)];
            objs.push(Object {
                shape: Shape::Cuboid {
                    min: [c[0] - half[0], c[1] - half[1], c[2] - half[2]],
                    max: [c[0] + half[0], c[1] + half[1], c[2] + half[2]],
                },
                material: material(rng),
            });
        }
        Self { objects: objs }
    }

    /// Nearest hit: `(distance, object index, normal axis, point)`.
    fn trace(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, usize, usize, [f64; 3])> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            let hit = match &obj.shape {
                Shape::Plane { axis, offset } => {
                    let t = (offset - o[*axis]) / d[*axis];
                    (d[*axis].abs() > 1e-12 && t > 1e-6).then_some((t, *axis))
                }
                Shape::Cuboid { min, max } => {
                    let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
                    let mut ok = true;
                    for a in 0..3 {
                        if d[a].abs() < 1e-12 {
                            if o[a] < min[a] || o[a] > max[a] {
                                ok = false;
                            }
                            continue;
                        }
                        let (mut ta, mut tb) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
                        if ta > tb {
                            std::mem::swap(&mut ta, &mut tb);
                        }
                        if ta > t0 {
                            t0 = ta;
                            axis = a;
                        }
                        t1 = t1.min(tb);
                    }
                    (ok && t0 <= t1 && t0 > 1e-6).then_some((t0, axis))
                }
            };
            if let Some((t, axis)) = hit {
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, i, axis));
                }
            }
        }
        best.map(|(t, i, axis)| (t, i, axis, [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]))
    }

    fn shade(&self, obj: usize, axis: usize, p: [f64; 3]) -> [f32; 3] {
        let m = &self.objects[obj].material;
        let (u, v) = match axis {
            0 => (p[2], p[1]),
            1 => (p[0], p[2]),
            _ => (p[0], p[1]),
        };
        let checker = ((u * m.freq).floor() + (v * m.freq).floor()).rem_euclid(2.0) as f32;
        let s = (std::f64::consts::TAU * m.stripe_freq * (u * m.stripe_angle.cos() + v * m.stripe_angle.sin())).sin() as f32;
        let light = [0.8f32, 0.65, 1.0][axis];
        std::array::from_fn(|c| {
            let base = m.base[c] * (1.0 - checker) + m.alt[c] * checker;
            ((base + 0.12 * s) * light).clamp(0.0, 1.0)
        })
    }

    /// Renders the view from `pose` (camera-to-world) with 2x2 supersampling.
    /// Also returns, per pixel, the index + 1 of the object hit at the pixel
    /// centre.
    pub fn render(&self, pose: &Pose6D, h: usize, w: usize) -> (Image, Vec<u16>) {
        let r = pose.rotation();
        let f = focal_length(w);
        let o = [pose.x, pose.y, pose.z];
        let ray = |px: f64, py: f64| {
            let dc = [(px - w as f64 / 2.0) / f, (py - h as f64 / 2.0) / f, 1.0];
            std::array::from_fn(|i| (0..3).map(|k| r[i][k] * dc[k]).sum::<f64>())
        };
        let mut data = vec![0.0f32; 3 * h * w];
        let mut ids = vec![0u16; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                    if let Some((_, obj, axis, p)) = self.trace(o, ray(x as f64 + sx, y as f64 + sy)) {
                        let c = self.shade(obj, axis, p);
                        for k in 0..3 {
                            acc[k] += 0.25 * c[k];
                        }
                    }
                }
                for k in 0..3 {
                    data[(k * h + y) * w + x] = acc[k];
                }
                if let Some((_, obj, _, _)) = self.trace(o, ray(x as f64 + 0.5, y as f64 + 0.5)) {
                    ids[y * w + x] = obj as u16 + 1;
                }
            }
        }
        (Image::new(h, w, data).expect("render size"), ids)
    }

    /// Pixel coordinates of world point `p` seen from `pose`, or `None`
    /// behind the camera.
    pub fn project(p: [f64; 3], pose: &Pose6D, h: usize, w: usize) -> Option<(f64, f64)> {
        let r = pose.rotation();
        let d = [p[0] - pose.x, p[1] - pose.y, p[2] - pose.z];
        let c: [f64; 3] = std::array::from_fn(|i| (0..3).map(|k| r[k][i] * d[k]).sum());
        if c[2] <= 1e-9 {
            return None;
        }
        let f = focal_length(w);
        Some((f * c[0] / c[2] + w as f64 / 2.0, f * c[1] / c[2] + h as f64 / 2.0))
    }

    /// Centre of the front (`-z`) face of box `k` (0-based among boxes).
    pub fn box_front_center(&self, k: usize) -> Option<[f64; 3]> {
        let boxes: Vec<_> = self.objects.iter().filter_map(|o| match &o.shape {
            Shape::Cuboid { min, max } => Some((*min, *max)),
            _ => None,
        }).collect();
        boxes.get(k).map(|(mn, mx)| [(mn[0] + mx[0]) / 2.0, (mn[1] + mx[1]) / 2.0, mn[2]])
    }

    /// Object id (as in [`Scene::render`]) of box `k`.
    pub fn box_id(&self, k: usize) -> u16 {
        (2 + k) as u16 + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    /// Edge of the cube of target offsets around each source camera.
    pub volume: f64,
    /// Source camera placements.
    pub positions: usize,
    pub samples_per_position: usize,
    pub height: usize,
    pub width: usize,
    pub objects: usize,
    pub texture_frequency: f64,
    /// Yaw, pitch and roll offsets are drawn from `[-max_angle, max_angle]`.
    pub max_angle: f64,
    /// Distinct scenes; source positions cycle through them. `0` gives every
    /// position its own scene.
    pub scenes: usize,
    /// Half-extent of the region source cameras are placed in.
    pub source_spread: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            volume: 0.2,
            positions: 10,
            samples_per_position: 10,
            height: 64,
            width: 64,
            objects: 6,
            texture_frequency: 2.0,
            max_angle: 0.05,
            scenes: 0,
            source_spread: 0.25,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.volume > 0.0) || !self.volume.is_finite() {
            return Err(Error::Config(format!("camera volume must be positive, got {}", self.volume)));
        }
        if self.positions == 0 || self.samples_per_position == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("synthetic spec needs positive counts and resolution".into()));
        }
        if !(self.max_angle >= 0.0) || !(self.source_spread >= 0.0) {
            return Err(Error::Config("angles and spreads must be non-negative".into()));
        }
        Ok(())
    }

    pub fn scene(&self, index: usize) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9).wrapping_add(index as u64 + 1));
        Scene::random(&mut rng, self.objects, self.texture_frequency)
    }
}

/// Deterministic samples: for every source position a scene and a source
/// camera, then `samples_per_position` targets offset uniformly within the
/// cube (and angular range) around it.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let n_scenes = if spec.scenes == 0 { spec.positions } else { spec.scenes };
    let scenes: Vec<Scene> = (0..n_scenes).map(|i| spec.scene(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.volume / 2.0;
    let mut out = Vec::with_capacity(spec.positions * spec.samples_per_position);
    for p in 0..spec.positions {
        let scene = &scenes[p % n_scenes];
        let sp = spec.source_spread;
        let source_pose = Pose6D::new(
            rng.random_range(-sp..=sp),
            rng.random_range(-sp..=sp) * 0.5,
            rng.random_range(-sp..=sp) * 0.5,
            rng.random_range(-0.1..=0.1),
            0.0,
            0.0,
        );
        let (source, _) = scene.render(&source_pose, spec.height, spec.width);
        for _ in 0..spec.samples_per_position {
            let a = spec.max_angle;
            let offset = Pose6D::new(
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
                rng.random_range(-a..=a),
                rng.random_range(-a..=a),
                rng.random_range(-a..=a),
            );
            let target_pose = source_pose.compose(&offset);
            let (target, _) = scene.render(&target_pose, spec.height, spec.width);
            out.push(Sample { source: source.clone(), source_pose, target_pose, target });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightFieldSpec {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub baseline: f64,
    pub height: usize,
    pub width: usize,
    pub objects: usize,
    pub texture_frequency: f64,
}

impl Default for LightFieldSpec {
    fn default() -> Self {
        Self { seed: 11, rows: 7, cols: 7, baseline: 0.01, height: 64, width: 64, objects: 6, texture_frequency: 2.0 }
    }
}

/// Planar camera grid looking along +z, centred on the origin.
pub fn generate_light_field(spec: &LightFieldSpec) -> Result<LightField> {
    if spec.rows == 0 || spec.cols == 0 || !(spec.baseline > 0.0) {
        return Err(Error::Config("light field needs a non-empty grid and positive baseline".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = Scene::random(&mut rng, spec.objects, spec.texture_frequency);
    let mut views = Vec::with_capacity(spec.rows * spec.cols);
    let probe = LightField { rows: spec.rows, cols: spec.cols, baseline: spec.baseline, views: Vec::new() };
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            views.push(scene.render(&probe.view_pose(r, c), spec.height, spec.width).0);
        }
    }
    LightField::new(spec.rows, spec.cols, spec.baseline, views)
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    source: String,
    target: String,
    source_pose: Pose6D,
    target_pose: Pose6D,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes samples as PNG files plus `manifest.json`. Identical source images
/// are stored once.
pub fn write_manifest(samples: &[Sample], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sources: HashMap<Vec<u32>, String> = HashMap::new();
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let key: Vec<u32> = s.source.data().iter().map(|v| v.to_bits()).collect();
        let next = sources.len();
        let name = sources.entry(key).or_insert_with(|| format!("source_{next:04}.png")).clone();
        if next < sources.len() {
            s.source.save(&dir.join(&name))?;
        }
        let target = format!("target_{i:04}.png");
        s.target.save(&dir.join(&target))?;
        entries.push(ManifestEntry { source: name, target, source_pose: s.source_pose, target_pose: s.target_pose });
    }
    let doc = serde_json::to_string_pretty(&Manifest { format: 1, samples: entries })?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, doc).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<Vec<Sample>> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let mut cache: HashMap<String, Image> = HashMap::new();
    let mut out = Vec::with_capacity(m.samples.len());
    for e in m.samples {
        e.source_pose.validate()?;
        e.target_pose.validate()?;
        let source = match cache.get(&e.source) {
            Some(im) => im.clone(),
            None => {
                let im = Image::load(&dir.join(&e.source))?;
                cache.insert(e.source.clone(), im.clone());
                im
            }
        };
        out.push(Sample { source, source_pose: e.source_pose, target_pose: e.target_pose, target: Image::load(&dir.join(&e.target))? });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSceneSpec {
        SyntheticSceneSpec { positions: 3, samples_per_position: 4, height: 32, width: 32, ..Default::default() }
    }

    #[test]
    fn synthetic_is_deterministic_and_counted() {
        let spec = SyntheticSceneSpec { positions: 10, samples_per_position: 10, height: 16, width: 16, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert_eq!(dataset_hash(&a), dataset_hash(&b));
        for s in &a {
            assert!(s.source.is_valid() && s.target.is_valid());
        }
    }

    #[test]
    fn targets_lie_in_cube_and_stats() {
        let spec = small_spec();
        let samples = generate_synthetic(&spec).unwrap();
        let stats = dataset_pose_stats(&samples).unwrap();
        for s in &samples {
            let r = s.relative_pose();
            assert!(stats.contains(&r));
            for v in &r.to_array()[..3] {
                assert!(v.abs() <= spec.volume / 2.0 + 1e-12);
            }
            for v in &r.to_array()[3..] {
                assert!(v.abs() <= spec.max_angle + 1e-12);
            }
        }
        assert!(matches!(dataset_pose_stats(&[]), Err(Error::EmptyDataset)));
        let bad = SyntheticSceneSpec { volume: 0.0, ..small_spec() };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn identity_camera_reproduces_source() {
        let spec = small_spec();
        let scene = spec.scene(0);
        let p = Pose6D::new(0.1, 0.0, 0.05, 0.02, 0.0, 0.0);
        let (a, _) = scene.render(&p, 32, 32);
        let (b, _) = scene.render(&p.compose(&Pose6D::IDENTITY), 32, 32);
        assert_eq!(a, b);
    }

    #[test]
    fn parallax_follows_pinhole_projection() {
        // two boxes at different depths, translate the camera along x
        let near = Object {
            shape: Shape::Cuboid { min: [-0.6, -0.2, 1.5], max: [-0.2, 0.2, 1.8] },
            material: Material { base: [0.9, 0.1, 0.1], alt: [0.8, 0.2, 0.2], freq: 1.0, stripe_freq: 1.0, stripe_angle: 0.0 },
        };
        let far = Object {
            shape: Shape::Cuboid { min: [0.4, -0.4, 4.0], max: [1.2, 0.4, 4.4] },
            material: Material { base: [0.1, 0.9, 0.1], alt: [0.2, 0.8, 0.2], freq: 1.0, stripe_freq: 1.0, stripe_angle: 0.0 },
        };
        let wall = Object {
            shape: Shape::Plane { axis: 2, offset: 5.0 },
            material: Material { base: [0.5; 3], alt: [0.5; 3], freq: 1.0, stripe_freq: 1.0, stripe_angle: 0.0 },
        };
        let scene = Scene { objects: vec![wall.clone(), wall, near, far] };
        let (h, w) = (96, 96);
        let src = Pose6D::IDENTITY;
        let dst = Pose6D::translation(0.1, 0.0, 0.0);
        let centroid = |ids: &[u16], id: u16| {
            let (mut sx, mut n) = (0.0, 0.0);
            for (i, &v) in ids.iter().enumerate() {
                if v == id {
                    sx += (i % w) as f64 + 0.5;
                    n += 1.0;
                }
            }
            sx / n
        };
        let (_, ids0) = scene.render(&src, h, w);
        let (_, ids1) = scene.render(&dst, h, w);
        let shift_near = centroid(&ids0, scene.box_id(0)) - centroid(&ids1, scene.box_id(0));
        let shift_far = centroid(&ids0, scene.box_id(1)) - centroid(&ids1, scene.box_id(1));
        assert!(shift_near > shift_far && shift_far > 0.0, "{shift_near} {shift_far}");
        // pinhole oracle: shift of the front-face centre is f * tx / z
        let f = focal_length(w);
        for k in 0..2 {
            let c = scene.box_front_center(k).unwrap();
            let (u0, _) = Scene::project(c, &src, h, w).unwrap();
            let (u1, _) = Scene::project(c, &dst, h, w).unwrap();
            assert!(((u0 - u1) - f * 0.1 / c[2]).abs() < 1e-9);
        }
        let expect_near = f * 0.1 / 1.5;
        assert!((shift_near - expect_near).abs() < 1.0, "{shift_near} vs {expect_near}");
    }

    #[test]
    fn light_field_round_trip_and_samples() {
        let spec = LightFieldSpec { height: 16, width: 16, ..Default::default() };
        let lf = generate_light_field(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        lf.save(dir.path()).unwrap();
        let a = load_light_field(dir.path(), 7, 7, spec.baseline).unwrap();
        let b = load_light_field(dir.path(), 7, 7, spec.baseline).unwrap();
        assert_eq!((a.rows, a.cols), (7, 7));
        assert_eq!(a, b);
        std::fs::remove_file(dir.path().join("view_3_4.png")).unwrap();
        let err = load_light_field(dir.path(), 7, 7, 1.0).unwrap_err();
        assert_eq!(err.to_string(), "missing sub-aperture 3_4");

        let samples = lf_to_samples(&lf, InputView::Center).unwrap();
        assert_eq!(samples.len(), 49);
        assert_eq!(samples[24].target_pose, Pose6D::IDENTITY);
        assert_eq!(samples[24].target, samples[24].source);
        let b = spec.baseline;
        assert_eq!(samples[0].target_pose, Pose6D::translation(-3.0 * b, -3.0 * b, 0.0));
        let mut seen: Vec<[u64; 2]> =
            samples.iter().map(|s| [s.target_pose.x.to_bits(), s.target_pose.y.to_bits()]).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 49);
        let even = LightField::new(2, 2, 1.0, vec![lf.view(0, 0).clone(); 4]).unwrap();
        assert!(lf_to_samples(&even, InputView::Center).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let samples = generate_synthetic(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_manifest(&samples, dir.path()).unwrap();
        let back = load_manifest(dir.path()).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            assert_eq!(a.source_pose, b.source_pose);
            assert_eq!(a.target_pose, b.target_pose);
            assert_eq!(a.target, b.target.quantized());
        }
        let sources = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("source_"))
            .count();
        assert_eq!(sources, 3);
    }
}
