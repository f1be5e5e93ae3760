//! Farneback dense motion flow and the single-channel motion encoding used
//! as the second model input.

mod cache;
mod farneback;
mod poly;
mod pyramid;

pub use cache::{read_flow_file, write_flow_file, FLOW_MAGIC, FLOW_VERSION};
pub use farneback::{farneback_flow, farneback_planes};
pub use poly::{polynomial_expansion, Quadratic};
pub use pyramid::gaussian_pyramid;

use crate::error::{Error, Result};
use crate::imaging::Plane;
use crate::tensor::Tensor;

/// Per-pixel displacement in pixels: `u` horizontal, `v` vertical.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Tensor<f32>,
    pub v: Tensor<f32>,
}

impl FlowField {
    pub fn from_planes(u: &Plane, v: &Plane) -> Self {
        Self {
            u: u.to_tensor(),
            v: v.to_tensor(),
        }
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.u.shape()[0], self.u.shape()[1])
    }

    pub fn magnitude_at(&self, y: usize, x: usize) -> f64 {
        let (u, v) = (self.u.at(&[y, x]) as f64, self.v.at(&[y, x]) as f64);
        (u * u + v * v).sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u
            .data()
            .iter()
            .zip(self.v.data())
            .map(|(&u, &v)| ((u * u + v * v) as f64).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Parameters of the Farneback estimator. `poly_n` is the full width of the
/// polynomial-expansion neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FarnebackConfig {
    pub pyr_scale: f64,
    pub levels: usize,
    pub winsize: usize,
    pub iterations: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
    pub gaussian_window: bool,
}

impl Default for FarnebackConfig {
    fn default() -> Self {
        Self::low()
    }
}

impl FarnebackConfig {
    /// Smoothing-heavy preset that suppresses flow on stationary bodies.
    pub fn low() -> Self {
        Self {
            pyr_scale: 0.3,
            levels: 2,
            winsize: 31,
            iterations: 2,
            poly_n: 7,
            poly_sigma: 1.5,
            gaussian_window: true,
        }
    }

    pub fn low_medium() -> Self {
        Self {
            pyr_scale: 0.4,
            levels: 3,
            winsize: 25,
            iterations: 3,
            poly_n: 7,
            poly_sigma: 1.3,
            gaussian_window: true,
        }
    }

    pub fn balanced() -> Self {
        Self {
            pyr_scale: 0.5,
            levels: 3,
            winsize: 21,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.2,
            gaussian_window: true,
        }
    }

    pub fn medium_high() -> Self {
        Self {
            pyr_scale: 0.7,
            levels: 4,
            winsize: 19,
            iterations: 4,
            poly_n: 7,
            poly_sigma: 1.2,
            gaussian_window: false,
        }
    }

    pub fn high() -> Self {
        Self {
            pyr_scale: 0.8,
            levels: 5,
            winsize: 15,
            iterations: 5,
            poly_n: 5,
            poly_sigma: 1.1,
            gaussian_window: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "low" => Ok(Self::low()),
            "low-medium" => Ok(Self::low_medium()),
            "balanced" => Ok(Self::balanced()),
            "medium-high" => Ok(Self::medium_high()),
            "high" => Ok(Self::high()),
            other => Err(Error::InvalidArgument(format!(
                "unknown flow preset {other:?} (low, low-medium, balanced, medium-high, high)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("farneback config: {m}")));
        if !(self.pyr_scale > 0.0 && self.pyr_scale < 1.0) {
            return bad("pyr_scale must lie in (0, 1)");
        }
        if self.levels == 0 || self.iterations == 0 {
            return bad("levels and iterations must be at least 1");
        }
        if self.winsize.is_multiple_of(2) {
            return bad("winsize must be odd");
        }
        if self.poly_n.is_multiple_of(2) || self.poly_n < 3 {
            return bad("poly_n must be odd and at least 3");
        }
        if self.poly_sigma <= 0.0 {
            return bad("poly_sigma must be positive");
        }
        Ok(())
    }
}

/// Motion channel: per-pixel flow magnitude clipped at `max_px`, scaled to
/// `[0, 1]`.
pub fn flow_to_channel(flow: &FlowField, max_px: f64) -> Tensor<f32> {
    let (h, w) = flow.extents();
    let data = flow
        .u
        .data()
        .iter()
        .zip(flow.v.data())
        .map(|(&u, &v)| {
            let m = ((u as f64).powi(2) + (v as f64).powi(2)).sqrt();
            (m.min(max_px) / max_px) as f32
        })
        .collect();
    Tensor::new(&[h, w], data).expect("flow extents")
}

/// Default clip for [`flow_to_channel`], in pixels.
pub const DEFAULT_MAX_FLOW_PX: f64 = 10.0;
