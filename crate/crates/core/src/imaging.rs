//! Single-channel float images: bilinear resampling and separable blurs.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-major `h × w` grid of 64-bit samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(h * w, data.len(), "plane {h}x{w}");
        Self { h, w, data }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::new(h, w, vec![0.0; h * w])
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self { h, w, data }
    }

    /// Accepts `(H, W)` tensors, or any tensor whose extra axes are all 1.
    pub fn from_tensor<F: Scalar>(t: &Tensor<F>) -> Result<Self> {
        let dims: Vec<usize> = t.shape().iter().copied().filter(|&e| e != 1).collect();
        let (h, w) = match (t.rank(), dims.as_slice()) {
            (2, _) => (t.shape()[0], t.shape()[1]),
            (_, [h, w]) => (*h, *w),
            _ => {
                return Err(Error::InvalidShape {
                    shape: t.shape().to_vec(),
                    reason: "expected a single-channel (H, W) image".into(),
                })
            }
        };
        Ok(Self::new(h, w, t.data().iter().map(|v| v.f64()).collect()))
    }

    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        Tensor::new(&[self.h, self.w], self.data.iter().map(|&v| F::of(v)).collect()).expect("plane extents")
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    /// Replicate-border access.
    #[inline]
    pub fn clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// Bilinear sample at fractional `(y, x)`, replicate border.
    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let a = self.clamped(y0, x0);
        let b = self.clamped(y0, x0 + 1);
        let c = self.clamped(y0 + 1, x0);
        let d = self.clamped(y0 + 1, x0 + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Round every value to the nearest `f32`, matching a trip through
    /// tensor storage.
    pub fn round_to_f32(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self
    }
}

/// Resize with half-pixel-centred bilinear interpolation; source coordinate
/// `(d + 0.5) · src / dst - 0.5`, clamped at the borders.
pub fn resize_bilinear(src: &Plane, h: usize, w: usize) -> Plane {
    if src.h == h && src.w == w {
        return src.clone();
    }
    let sy = src.h as f64 / h as f64;
    let sx = src.w as f64 / w as f64;
    Plane::from_fn(h, w, |y, x| src.sample((y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5))
}

/// Normalized Gaussian taps over `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable correlation with odd-length horizontal and vertical taps,
/// replicate border.
pub fn convolve_separable(src: &Plane, kx: &[f64], ky: &[f64]) -> Plane {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = Plane::zeros(src.h, src.w);
    for y in 0..src.h {
        for x in 0..src.w {
            let mut s = 0.0;
            for (i, &k) in kx.iter().enumerate() {
                s += k * src.clamped(y as isize, x as isize + i as isize - rx);
            }
            tmp.data[y * src.w + x] = s;
        }
    }
    let mut out = Plane::zeros(src.h, src.w);
    for y in 0..src.h {
        for x in 0..src.w {
            let mut s = 0.0;
            for (i, &k) in ky.iter().enumerate() {
                s += k * tmp.clamped(y as isize + i as isize - ry, x as isize);
            }
            out.data[y * src.w + x] = s;
        }
    }
    out
}

/// Gaussian blur with radius `ceil(3σ)`.
pub fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    let k = gaussian_kernel(sigma, (3.0 * sigma).ceil() as usize);
    convolve_separable(src, &k, &k)
}

pub fn box_blur(src: &Plane, size: usize) -> Plane {
    let k = vec![1.0 / size as f64; size];
    convolve_separable(src, &k, &k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_upsample_matches_hand_bilinear() {
        let src = Plane::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let out = resize_bilinear(&src, 4, 4);
        // Source coordinates per destination index: -0.25→0, 0.25, 0.75, 1.25→1.
        let coords = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let (fy, fx) = (coords[y], coords[x]);
                let want = (1.0 - fy) * fx + fy * (1.0 - fx);
                assert!((out.at(y, x) - want).abs() < 1e-12, "({y},{x})");
            }
        }
        assert_eq!(out.at(0, 1), 0.25);
        assert_eq!(out.at(1, 1), 0.375);
    }

    #[test]
    fn blurs_preserve_constants() {
        let p = Plane::new(5, 7, vec![0.4; 35]);
        for q in [gaussian_blur(&p, 1.3), box_blur(&p, 5)] {
            assert!(q.data.iter().all(|v| (v - 0.4).abs() < 1e-12));
        }
    }
}
