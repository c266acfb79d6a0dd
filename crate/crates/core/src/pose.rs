//! 6-DoF camera poses and their normalisation into the unit hypercube.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COMPONENTS: [&str; 6] = ["x", "y", "z", "yaw", "pitch", "roll"];

/// Translation in scene units plus yaw/pitch/roll in radians.
///
/// Rotations are kept exactly as given; nothing wraps angles. The camera
/// looks along +z with x to the right and y down; the camera-to-world
/// rotation is `Ry(yaw) * Rx(pitch) * Rz(roll)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose6D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

type Mat3 = [[f64; 3]; 3];

impl Pose6D {
    pub const IDENTITY: Pose6D = Pose6D { x: 0.0, y: 0.0, z: 0.0, yaw: 0.0, pitch: 0.0, roll: 0.0 };

    pub fn new(x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { x, y, z, yaw, pitch, roll }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z, ..Self::IDENTITY }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.yaw, self.pitch, self.roll]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in self.to_array().iter().zip(COMPONENTS) {
            if !v.is_finite() {
                return Err(Error::NonFinitePose(name));
            }
        }
        Ok(())
    }

    pub(crate) fn rotation(&self) -> Mat3 {
        let (sa, ca) = self.yaw.sin_cos();
        let (sb, cb) = self.pitch.sin_cos();
        let (sc, cc) = self.roll.sin_cos();
        [
            [ca * cc + sa * sb * sc, -ca * sc + sa * sb * cc, sa * cb],
            [cb * sc, cb * cc, -sb],
            [-sa * cc + ca * sb * sc, sa * sc + ca * sb * cc, ca * cb],
        ]
    }

    fn from_parts(r: &Mat3, t: [f64; 3]) -> Self {
        let pitch = (-r[1][2]).clamp(-1.0, 1.0).asin();
        let yaw = r[0][2].atan2(r[2][2]);
        let roll = r[1][0].atan2(r[1][1]);
        Self { x: t[0], y: t[1], z: t[2], yaw, pitch, roll }
    }

    /// Pose of `self` expressed in the camera frame of `reference`.
    pub fn relative_to(&self, reference: &Pose6D) -> Pose6D {
        let rr = reference.rotation();
        let rs = self.rotation();
        let d = [self.x - reference.x, self.y - reference.y, self.z - reference.z];
        let mut t = [0.0; 3];
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            t[i] = (0..3).map(|k| rr[k][i] * d[k]).sum();
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| rr[k][i] * rs[k][j]).sum();
            }
        }
        Self::from_parts(&r, t)
    }

    /// `local` (expressed in this camera's frame) mapped to world coordinates.
    pub fn compose(&self, local: &Pose6D) -> Pose6D {
        let rs = self.rotation();
        let rl = local.rotation();
        let tl = [local.x, local.y, local.z];
        let mut t = [self.x, self.y, self.z];
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            t[i] += (0..3).map(|k| rs[i][k] * tl[k]).sum::<f64>();
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| rs[i][k] * rl[k][j]).sum();
            }
        }
        Self::from_parts(&r, t)
    }

    /// Pose of the origin camera as seen from `self`.
    pub fn inverse(&self) -> Pose6D {
        Pose6D::IDENTITY.relative_to(self)
    }
}

/// Per-component extrema over a training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseStats {
    pub p_min: [f64; 6],
    pub p_max: [f64; 6],
}

impl PoseStats {
    pub fn new(p_min: [f64; 6], p_max: [f64; 6]) -> Result<Self> {
        let s = Self { p_min, p_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..6 {
            let (lo, hi) = (self.p_min[i], self.p_max[i]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidStats(format!("component {} is not finite", COMPONENTS[i])));
            }
            if lo > hi {
                return Err(Error::InvalidStats(format!("component {}: min {lo} > max {hi}", COMPONENTS[i])));
            }
        }
        Ok(())
    }

    /// Whether every component of `p` lies inside the bounds.
    pub fn contains(&self, p: &Pose6D) -> bool {
        p.to_array().iter().enumerate().all(|(i, v)| *v >= self.p_min[i] && *v <= self.p_max[i])
    }

    /// Centre of the bounds, which normalises to 0.5 everywhere.
    pub fn center(&self) -> Pose6D {
        let mut a = [0.0; 6];
        for (i, v) in a.iter_mut().enumerate() {
            *v = 0.5 * (self.p_min[i] + self.p_max[i]);
        }
        Pose6D::from_array(a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pose stats serialise")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: Self = serde_json::from_str(s)?;
        stats.validate()?;
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Pose mapped componentwise by the training-set range. Values leave
/// `[0, 1]` for poses outside that range; those components are listed in
/// `out_of_range`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedPose {
    pub values: [f64; 6],
    pub out_of_range: Vec<usize>,
}

impl NormalizedPose {
    pub fn warning(&self) -> Option<String> {
        if self.out_of_range.is_empty() {
            return None;
        }
        let names: Vec<_> = self.out_of_range.iter().map(|&i| COMPONENTS[i]).collect();
        Some(format!("pose outside training range in {}", names.join(", ")))
    }
}

pub fn compute_pose_stats<'a>(poses: impl IntoIterator<Item = &'a Pose6D>) -> Result<PoseStats> {
    let mut it = poses.into_iter();
    let first = it.next().ok_or(Error::NoPoses)?;
    first.validate()?;
    let mut p_min = first.to_array();
    let mut p_max = p_min;
    for p in it {
        p.validate()?;
        for (i, v) in p.to_array().into_iter().enumerate() {
            p_min[i] = p_min[i].min(v);
            p_max[i] = p_max[i].max(v);
        }
    }
    Ok(PoseStats { p_min, p_max })
}

/// `(p - p_min) / (p_max - p_min)` per component; degenerate components
/// (`p_max == p_min`) map to 0.5.
pub fn normalize_pose(p: &Pose6D, stats: &PoseStats) -> Result<NormalizedPose> {
    stats.validate()?;
    p.validate()?;
    let mut values = [0.0; 6];
    let mut out_of_range = Vec::new();
    for (i, v) in p.to_array().into_iter().enumerate() {
        let (lo, hi) = (stats.p_min[i], stats.p_max[i]);
        values[i] = if hi == lo { 0.5 } else { (v - lo) / (hi - lo) };
        if v < lo || v > hi {
            out_of_range.push(i);
        }
    }
    Ok(NormalizedPose { values, out_of_range })
}
