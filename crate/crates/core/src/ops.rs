//! Forward/backward kernels for the spatial operators used by the networks.
//! All images are NCHW.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Mat, Scalar, Tensor};

/// Column-buffer budget per im2col tile, in elements.
const TILE_ELEMS: usize = 1 << 22;

/// Geometry of a 2-D convolution seen from its input side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dil: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        dil: usize,
    ) -> Result<Self> {
        let span_h = dil * (kh - 1) + 1;
        let span_w = dil * (kw - 1) + 1;
        if h + 2 * pad < span_h || w + 2 * pad < span_w || stride == 0 {
            return Err(Error::Shape(format!(
                "conv kernel {kh}x{kw} (dilation {dil}) does not fit {h}x{w} with padding {pad}"
            )));
        }
        let oh = (h + 2 * pad - span_h) / stride + 1;
        let ow = (w + 2 * pad - span_w) / stride + 1;
        Ok(Self { c, h, w, kh, kw, stride, pad, dil, oh, ow })
    }

    fn ck(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows_per_tile(&self) -> usize {
        (TILE_ELEMS / (self.ck() * self.ow).max(1)).clamp(1, self.oh)
    }

    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.rows_per_tile();
        let oh = self.oh;
        (0..oh).step_by(step).map(move |r0| (r0, (r0 + step).min(oh)))
    }
}

/// Gathers receptive fields of output rows `[r0, r1)` into `col`
/// (`ck x (r1-r0)*ow`).
fn im2col<F: Scalar>(x: &[F], g: &ConvGeom, r0: usize, r1: usize, col: &mut [F]) {
    let t = (r1 - r0) * g.ow;
    let (h, w) = (g.h as isize, g.w as isize);
    let mut row = 0;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let dst = &mut col[row * t..(row + 1) * t];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + i * g.dil) as isize - g.pad as isize;
                    let seg = &mut dst[(oy - r0) * g.ow..(oy - r0 + 1) * g.ow];
                    if iy < 0 || iy >= h {
                        seg.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let off = (j * g.dil) as isize - g.pad as isize;
                    if g.stride == 1 {
                        // contiguous run with zero borders
                        let lo = (-off).clamp(0, g.ow as isize) as usize;
                        let hi = (w - off).clamp(0, g.ow as isize) as usize;
                        seg[..lo].fill(F::zero());
                        if hi > lo {
                            let s0 = (lo as isize + off) as usize;
                            seg[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                        seg[hi.max(lo)..].fill(F::zero());
                    } else {
                        for (ox, v) in seg.iter_mut().enumerate() {
                            let ix = (ox * g.stride) as isize + off;
                            *v = if ix >= 0 && ix < w { src[ix as usize] } else { F::zero() };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back onto `x`, accumulating.
fn col2im<F: Scalar>(col: &[F], g: &ConvGeom, r0: usize, r1: usize, x: &mut [F]) {
    let t = (r1 - r0) * g.ow;
    let (h, w) = (g.h as isize, g.w as isize);
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let src = &col[row * t..(row + 1) * t];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + i * g.dil) as isize - g.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let seg = &src[(oy - r0) * g.ow..(oy - r0 + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let off = (j * g.dil) as isize - g.pad as isize;
                    for (ox, &v) in seg.iter().enumerate() {
                        let ix = (ox * g.stride) as isize + off;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn add_channel_bias<F: Scalar>(out: &mut [F], bias: &[F], n: usize, plane: usize) {
    let c = bias.len();
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            let start = (b * c + ch) * plane;
            for v in &mut out[start..start + plane] {
                *v += bv;
            }
        }
    }
}

fn channel_sums<F: Scalar>(dout: &[F], n: usize, c: usize, plane: usize) -> Vec<F> {
    let mut db = vec![F::zero(); c];
    for b in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            *acc += dout[start..start + plane].iter().copied().sum::<F>();
        }
    }
    db
}

/// `weight`: `(out, in, kh, kw)`. Returns output and geometry.
pub fn conv2d_forward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Result<(Tensor<F>, ConvGeom)> {
    let (n, c, h, w) = x.dims4()?;
    let (o, ci, kh, kw) = weight.dims4()?;
    if ci != c {
        return Err(Error::Shape(format!("conv2d: input has {c} channels, weight expects {ci}")));
    }
    let g = ConvGeom::new(c, h, w, kh, kw, stride, pad, dil)?;
    let plane = g.oh * g.ow;
    let mut out = vec![F::zero(); n * o * plane];
    let mut col = Vec::new();
    for b in 0..n {
        let xb = x.outer(b);
        let ob = &mut out[b * o * plane..(b + 1) * o * plane];
        if g.pointwise() {
            gemm(Mat::new(weight.data(), o, c), Mat::new(xb, c, plane), F::zero(), ob, plane);
            continue;
        }
        for (r0, r1) in g.tiles() {
            let t = (r1 - r0) * g.ow;
            col.resize(g.ck() * t, F::zero());
            im2col(xb, &g, r0, r1, &mut col);
            gemm(
                Mat::new(weight.data(), o, g.ck()),
                Mat::new(&col, g.ck(), t),
                F::zero(),
                &mut ob[r0 * g.ow..],
                plane,
            );
        }
    }
    if let Some(bias) = bias {
        add_channel_bias(&mut out, bias.data(), n, plane);
    }
    Ok((Tensor::new([n, o, g.oh, g.ow], out)?, g))
}

pub struct ConvGrads<F> {
    pub dx: Option<Tensor<F>>,
    pub dw: Option<Tensor<F>>,
    pub db: Option<Tensor<F>>,
}

pub fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    g: &ConvGeom,
    dout: &Tensor<F>,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<F> {
    let n = x.shape()[0];
    let o = weight.shape()[0];
    let plane = g.oh * g.ow;
    let ck = g.ck();
    let mut dx = need_dx.then(|| vec![F::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![F::zero(); weight.numel()]);
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for b in 0..n {
        let xb = x.outer(b);
        let db_ = dout.outer(b);
        if g.pointwise() {
            if let Some(dw) = dw.as_mut() {
                gemm(Mat::new(db_, o, plane), Mat::t(xb, plane, g.c), F::one(), dw, g.c);
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * g.c * plane..(b + 1) * g.c * plane];
                gemm(Mat::t(weight.data(), g.c, o), Mat::new(db_, o, plane), F::zero(), dxb, plane);
            }
            continue;
        }
        for (r0, r1) in g.tiles() {
            let t = (r1 - r0) * g.ow;
            let dtile = Mat::new(&db_[r0 * g.ow..], o, t).with_ld(plane);
            if let Some(dw) = dw.as_mut() {
                col.resize(ck * t, F::zero());
                im2col(xb, g, r0, r1, &mut col);
                gemm(dtile, Mat::t(&col, t, ck), F::one(), dw, ck);
            }
            if let Some(dx) = dx.as_mut() {
                dcol.resize(ck * t, F::zero());
                gemm(Mat::t(weight.data(), ck, o), dtile, F::zero(), &mut dcol, t);
                let dxb = &mut dx[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
                col2im(&dcol, g, r0, r1, dxb);
            }
        }
    }
    ConvGrads {
        dx: dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("dx shape")),
        dw: dw.map(|d| Tensor::new(weight.shape().to_vec(), d).expect("dw shape")),
        db: need_db.then(|| Tensor::new([o], channel_sums(dout.data(), n, o, plane)).expect("db")),
    }
}

/// Transposed convolution. `weight`: `(in, out, kh, kw)`. The returned
/// geometry describes the adjoint convolution from output to input space.
pub fn conv_transpose2d_forward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<F>, ConvGeom)> {
    let (n, ci, h, w) = x.dims4()?;
    let (wi, co, kh, kw) = weight.dims4()?;
    if wi != ci {
        return Err(Error::Shape(format!(
            "conv_transpose2d: input has {ci} channels, weight expects {wi}"
        )));
    }
    let out_h = ((h - 1) * stride + kh)
        .checked_sub(2 * pad)
        .ok_or_else(|| Error::Shape("conv_transpose2d: padding too large".into()))?;
    let out_w = ((w - 1) * stride + kw)
        .checked_sub(2 * pad)
        .ok_or_else(|| Error::Shape("conv_transpose2d: padding too large".into()))?;
    let g = ConvGeom::new(co, out_h, out_w, kh, kw, stride, pad, 1)?;
    debug_assert_eq!((g.oh, g.ow), (h, w));
    let in_plane = h * w;
    let out_plane = out_h * out_w;
    let ck = g.ck();
    let mut out = vec![F::zero(); n * co * out_plane];
    let mut col = Vec::new();
    for b in 0..n {
        let xb = x.outer(b);
        let ob = &mut out[b * co * out_plane..(b + 1) * co * out_plane];
        for (r0, r1) in g.tiles() {
            let t = (r1 - r0) * g.ow;
            col.resize(ck * t, F::zero());
            gemm(
                Mat::t(weight.data(), ck, ci),
                Mat::new(&xb[r0 * g.ow..], ci, t).with_ld(in_plane),
                F::zero(),
                &mut col,
                t,
            );
            col2im(&col, &g, r0, r1, ob);
        }
    }
    if let Some(bias) = bias {
        add_channel_bias(&mut out, bias.data(), n, out_plane);
    }
    Ok((Tensor::new([n, co, out_h, out_w], out)?, g))
}

pub fn conv_transpose2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    g: &ConvGeom,
    dout: &Tensor<F>,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<F> {
    let n = x.shape()[0];
    let ci = weight.shape()[0];
    let in_plane = g.oh * g.ow;
    let ck = g.ck();
    let mut dx = need_dx.then(|| vec![F::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![F::zero(); weight.numel()]);
    let mut col = Vec::new();
    if need_dx || need_dw {
        for b in 0..n {
            let xb = x.outer(b);
            let db_ = dout.outer(b);
            for (r0, r1) in g.tiles() {
                let t = (r1 - r0) * g.ow;
                col.resize(ck * t, F::zero());
                im2col(db_, g, r0, r1, &mut col);
                if let Some(dx) = dx.as_mut() {
                    let dxb = &mut dx[b * ci * in_plane..(b + 1) * ci * in_plane];
                    gemm(
                        Mat::new(weight.data(), ci, ck),
                        Mat::new(&col, ck, t),
                        F::zero(),
                        &mut dxb[r0 * g.ow..],
                        in_plane,
                    );
                }
                if let Some(dw) = dw.as_mut() {
                    gemm(
                        Mat::new(&xb[r0 * g.ow..], ci, t).with_ld(in_plane),
                        Mat::t(&col, t, ck),
                        F::one(),
                        dw,
                        ck,
                    );
                }
            }
        }
    }
    ConvGrads {
        dx: dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("dx shape")),
        dw: dw.map(|d| Tensor::new(weight.shape().to_vec(), d).expect("dw shape")),
        db: need_db
            .then(|| Tensor::new([g.c], channel_sums(dout.data(), n, g.c, g.h * g.w)).expect("db")),
    }
}

/// Non-overlapping `k x k` max pooling; returns the flat argmax per output.
pub fn max_pool_forward<F: Scalar>(x: &Tensor<F>, k: usize) -> Result<(Tensor<F>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    if k == 0 || h < k || w < k {
        return Err(Error::Shape(format!("max pool {k} on {h}x{w}")));
    }
    let (oh, ow) = (h / k, w / k);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let xd = x.data();
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * k * w + ox * k;
                for i in 0..k {
                    for j in 0..k {
                        let idx = base + (oy * k + i) * w + ox * k + j;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new([n, c, oh, ow], out)?, arg))
}

/// 2x2 average pooling with floor semantics on odd sizes.
pub fn avg_pool2_forward<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("avg pool on {h}x{w}")));
    }
    let q = F::of(0.25);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i = base + 2 * oy * w + 2 * ox;
                out.push((xd[i] + xd[i + 1] + xd[i + w] + xd[i + w + 1]) * q);
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

pub fn avg_pool2_backward<F: Scalar>(shape: &[usize], dout: &Tensor<F>) -> Tensor<F> {
    let (h, w) = (shape[2], shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let planes = shape[0] * shape[1];
    let q = F::of(0.25);
    let mut dx = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout.data()[(p * oh + oy) * ow + ox] * q;
                let i = p * h * w + 2 * oy * w + 2 * ox;
                dx[i] += g;
                dx[i + 1] += g;
                dx[i + w] += g;
                dx[i + w + 1] += g;
            }
        }
    }
    Tensor::new(shape.to_vec(), dx).expect("avg pool grad")
}

/// Nearest-neighbour replication of each pixel into a `factor x factor` block.
pub fn upsample_nearest_kernel<F: Scalar>(
    src: &[F],
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<F> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
            for ox in 0..ow {
                out.push(row[ox / factor]);
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<F: Scalar>(shape: &[usize], dout: &Tensor<F>, factor: usize) -> Tensor<F> {
    let (h, w) = (shape[2], shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let planes = shape[0] * shape[1];
    let mut dx = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[p * h * w + (oy / factor) * w + ox / factor] += dout.data()[(p * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::new(shape.to_vec(), dx).expect("upsample grad")
}

/// Interpolation taps `(i0, i1, frac)` for half-pixel-centred bilinear
/// upsampling by an integer factor.
fn bilinear_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear_forward<F: Scalar>(x: &Tensor<F>, factor: usize) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let fy = F::of(fy);
            for &(x0, x1, fx) in &tx {
                let fx = F::of(fx);
                let top = plane[y0 * w + x0] * (F::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (F::one() - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (F::one() - fy) + bot * fy);
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

pub fn upsample_bilinear_backward<F: Scalar>(shape: &[usize], dout: &Tensor<F>, factor: usize) -> Tensor<F> {
    let (h, w) = (shape[2], shape[3]);
    let planes = shape[0] * shape[1];
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let mut dx = vec![F::zero(); planes * h * w];
    let mut it = dout.data().iter();
    for p in 0..planes {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let fy = F::of(fy);
            for &(x0, x1, fx) in &tx {
                let fx = F::of(fx);
                let g = *it.next().expect("dout size");
                let gt = g * (F::one() - fy);
                let gb = g * fy;
                plane[y0 * w + x0] += gt * (F::one() - fx);
                plane[y0 * w + x1] += gt * fx;
                plane[y1 * w + x0] += gb * (F::one() - fx);
                plane[y1 * w + x1] += gb * fx;
            }
        }
    }
    Tensor::new(shape.to_vec(), dx).expect("bilinear grad")
}

/// Separable "valid" filtering of every plane with a 1-D kernel along both
/// spatial axes.
pub fn blur_valid_forward<F: Scalar>(x: &Tensor<F>, k: &[F]) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let kl = k.len();
    if h < kl || w < kl {
        return Err(Error::ImageTooSmall(format!("{h}x{w} smaller than window {kl}")));
    }
    let (oh, ow) = (h - kl + 1, w - kl + 1);
    let mut tmp = vec![F::zero(); h * ow];
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for xo in 0..ow {
                tmp[y * ow + xo] = k.iter().zip(&row[xo..xo + kl]).map(|(&a, &b)| a * b).sum();
            }
        }
        for yo in 0..oh {
            for xo in 0..ow {
                out.push((0..kl).map(|i| k[i] * tmp[(yo + i) * ow + xo]).sum());
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

pub fn blur_valid_backward<F: Scalar>(shape: &[usize], dout: &Tensor<F>, k: &[F]) -> Tensor<F> {
    let (h, w) = (shape[2], shape[3]);
    let planes = shape[0] * shape[1];
    let kl = k.len();
    let (oh, ow) = (h - kl + 1, w - kl + 1);
    let mut dx = vec![F::zero(); planes * h * w];
    let mut dtmp = vec![F::zero(); h * ow];
    for p in 0..planes {
        dtmp.fill(F::zero());
        let dplane = &dout.data()[p * oh * ow..(p + 1) * oh * ow];
        for yo in 0..oh {
            for xo in 0..ow {
                let g = dplane[yo * ow + xo];
                for i in 0..kl {
                    dtmp[(yo + i) * ow + xo] += k[i] * g;
                }
            }
        }
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xo in 0..ow {
                let g = dtmp[y * ow + xo];
                for j in 0..kl {
                    plane[y * w + xo + j] += k[j] * g;
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), dx).expect("blur grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, wt: &Tensor<f64>, s: usize, p: usize, d: usize) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4().unwrap();
        let (o, _, kh, kw) = wt.dims4().unwrap();
        let g = ConvGeom::new(c, h, w, kh, kw, s, p, d).unwrap();
        let mut out = Tensor::zeros([n, o, g.oh, g.ow]);
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * s + i * d) as isize - p as isize;
                                    let ix = (ox * s + j * d) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x.data()[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                            * wt.data()[((oc * c + ic) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((b * o + oc) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: [usize; 4], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 * 0.37 + seed).sin() * 1.3).tanh())
    }

    #[test]
    fn conv_matches_naive_over_geometries() {
        for &(s, p, d, k) in &[(1, 1, 1, 3), (2, 3, 1, 7), (1, 2, 2, 3), (2, 0, 1, 1), (1, 0, 1, 1)] {
            let x = ramp([2, 3, 9, 8], 0.1);
            let w = ramp([4, 3, k, k], 0.7);
            let (y, _) = conv2d_forward(&x, &w, None, s, p, d).unwrap();
            let want = naive_conv(&x, &w, s, p, d);
            assert_eq!(y.shape(), want.shape());
            assert!(y.max_abs_diff(&want) < 1e-12, "s={s} p={p} d={d} k={k}");
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <convT(x), y> == <x, conv(y)> with shared weights
        let x = ramp([1, 4, 5, 5], 0.3);
        let w = ramp([4, 3, 4, 4], 0.9); // (in=4, out=3) for convT; conv weight (4 out, 3 in)
        let (up, _) = conv_transpose2d_forward(&x, &w, None, 2, 1).unwrap();
        assert_eq!(up.shape(), &[1, 3, 10, 10]);
        let y = ramp([1, 3, 10, 10], 1.7);
        let (down, _) = conv2d_forward(&y, &w, None, 2, 1, 1).unwrap();
        let lhs: f64 = up.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(down.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn bilinear_of_constant_is_constant() {
        let x = Tensor::<f64>::full([1, 1, 3, 5], 0.25);
        let y = upsample_bilinear_forward(&x, 4).unwrap();
        assert_eq!(y.shape(), &[1, 1, 12, 20]);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn max_pool_picks_block_maximum() {
        let x = Tensor::<f64>::new([1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 9., 1.]).unwrap();
        let (y, arg) = max_pool_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[5., 9.]);
        assert_eq!(arg, vec![1, 6]);
    }
}
