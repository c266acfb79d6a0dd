//! RGB images in planar `[0, 1]` floating point, with lossless PNG I/O.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Planar RGB image, shape `(3, h, w)`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * h * w {
            return Err(Error::Shape(format!("image {h}x{w} needs {} values, got {}", 3 * h * w, data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * h * w);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, h * w));
        }
        Self { h, w, data }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// `(1, 3, h, w)` tensor in the requested precision.
    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        Tensor::new([1, 3, self.h, self.w], self.data.iter().map(|&v| F::of(v as f64)).collect())
            .expect("image shape")
    }

    /// Batch image `b` of a `(n, 3, h, w)` tensor, clamped to `[0, 1]`.
    pub fn from_tensor<F: Scalar>(t: &Tensor<F>, b: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if c != 3 || b >= n {
            return Err(Error::Shape(format!("no RGB image {b} in tensor {:?}", t.shape())));
        }
        let data = t.outer(b).iter().map(|v| (v.f64() as f32).clamp(0.0, 1.0)).collect();
        Ok(Self { h, w, data })
    }

    pub fn batch<F: Scalar>(images: &[&Image]) -> Result<Tensor<F>> {
        let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (h, w) = (first.h, first.w);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for im in images {
            if (im.h, im.w) != (h, w) {
                return Err(Error::Shape(format!("batch mixes {}x{} and {h}x{w}", im.h, im.w)));
            }
            data.extend(im.data.iter().map(|&v| F::of(v as f64)));
        }
        Tensor::new([images.len(), 3, h, w], data)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.as_raw();
        Ok(Self::from_fn(h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut raw = vec![0u8; 3 * self.h * self.w];
        for c in 0..3 {
            for i in 0..self.h * self.w {
                raw[i * 3 + c] = (self.data[c * self.h * self.w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        let buf = image::RgbImage::from_raw(self.w as u32, self.h as u32, raw).expect("buffer size");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }

    /// Values rounded to the 8-bit grid, as a PNG round trip would leave them.
    pub fn quantized(&self) -> Self {
        Self { h: self.h, w: self.w, data: self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect() }
    }

    /// Bilinear resize (half-pixel centres).
    pub fn resize(&self, h: usize, w: usize) -> Self {
        let sy = self.h as f32 / h as f32;
        let sx = self.w as f32 / w as f32;
        Self::from_fn(h, w, |c, y, x| {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f32);
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f32);
            let (y0, x0) = (fy as usize, fx as usize);
            let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
            let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
            let p = |yy, xx| self.get(c, yy, xx);
            let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
            let bot = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
            top * (1.0 - ty) + bot * ty
        })
    }
}
