//! Image pairs and SSIM / MS-SSIM values frozen from pytorch_msssim
//! (cross-checked with skimage); regenerate with `tests/oracles/ssim_reference.py`.

use viewsynth_core::Image;

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 40) as f64 / (1u64 << 24) as f64
    }
}

fn q(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() / 255.0) as f32
}

pub fn pair(k: usize, h: usize, w: usize) -> (Image, Image) {
    let mut g = Lcg(k as u64 + 1);
    let t = 0.1 + 0.04 * k as f64;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = 0.35 + 0.3 * ((x + y + 7 * c) % 32) as f64 / 31.0 + 0.3 * (g.next() - 0.5);
                let u = g.next();
                a.push(q(v));
                b.push(q(v * (1.0 - t) + t * u));
            }
        }
    }
    (Image::new(h, w, a).unwrap(), Image::new(h, w, b).unwrap())
}

/// (ssim, ms_ssim) per pair at 176x176.
pub const REFERENCE: [(f64, f64); 20] = [
    (0.948877221834, 0.985656269159),
    (0.899992838022, 0.970332456995),
    (0.840022836494, 0.950048274686),
    (0.771199023333, 0.925493496229),
    (0.698986513279, 0.898189380777),
    (0.619695342924, 0.863043332953),
    (0.548390157348, 0.823348725081),
    (0.478904420078, 0.789762320651),
    (0.417410471492, 0.738352152069),
    (0.362788001597, 0.705249121557),
    (0.305186556178, 0.650329650116),
    (0.265966851184, 0.602359890069),
    (0.222468127183, 0.560150580599),
    (0.187778790316, 0.495883876010),
    (0.156109530734, 0.449482678072),
    (0.130667263867, 0.405778424851),
    (0.109148809967, 0.368893447046),
    (0.084485850530, 0.313163213526),
    (0.067459051693, 0.268718685051),
    (0.045645289873, 0.211639192490),
];
