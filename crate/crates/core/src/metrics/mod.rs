//! No-reference fusion quality indices.
//!
//! Every index has a plain evaluator over single-channel `[0, 1]` images
//! (`1 × 1 × H × W` tensors) and a differentiable counterpart in [`expr`]
//! built from graph operations.
//!
//! Ratio denominators are floored at `epsilon` rather than offset by it, so
//! well-conditioned windows get the exact index while degenerate (constant)
//! windows still evaluate to a finite value.

mod edge;
pub mod expr;
mod quality;

pub use edge::sobel_edge_map;
pub use quality::{mse, q0, qe, qw, qw_per_channel, PatchStats};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Sliding-window parameters for Qw/Qe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowConfig {
    pub window_size: usize,
    pub stride: usize,
    pub epsilon: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_size: 8,
            stride: 1,
            epsilon: 1e-8,
        }
    }
}

impl WindowConfig {
    pub fn with_stride(self, stride: usize) -> Self {
        WindowConfig { stride, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::config(format!(
                "window size must be at least 2, got {}",
                self.window_size
            )));
        }
        if self.stride < 1 {
            return Err(Error::config("window stride must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Number of window positions along an axis of length `len`.
    pub fn positions(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.stride + 1
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EdgeOperator {
    /// `sqrt(Gx² + Gy²)` of the 3×3 Sobel responses, divided by its maximum.
    #[default]
    SobelMagnitude,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeConfig {
    pub operator: EdgeOperator,
}

impl EdgeConfig {
    pub fn edge_map(&self, img: &Tensor) -> Result<Tensor> {
        match self.operator {
            EdgeOperator::SobelMagnitude => sobel_edge_map(img),
        }
    }
}

/// `0.299·R + 0.587·G + 0.114·B` for every image in the batch.
pub fn luminance(img: &Tensor) -> Result<Tensor> {
    let s = img.shape();
    if s.c() != 3 {
        return Err(Error::shape(format!(
            "luminance needs 3 channels, got {s}"
        )));
    }
    let out_shape = Shape::new(s.n(), 1, s.h(), s.w());
    Ok(Tensor::from_fn(out_shape, |n, _, h, w| {
        LUMA_WEIGHTS
            .iter()
            .enumerate()
            .map(|(c, k)| k * img.at(n, c, h, w))
            .sum()
    }))
}

/// Single-channel view used by the plain evaluators.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Plane<'a> {
    pub data: &'a [f64],
    pub height: usize,
    pub width: usize,
}

impl<'a> Plane<'a> {
    pub fn of(t: &'a Tensor, what: &str) -> Result<Self> {
        let s = t.shape();
        if s.n() != 1 || s.c() != 1 {
            return Err(Error::shape(format!(
                "{what} must be a single 1-channel image, got {s}"
            )));
        }
        Ok(Plane {
            data: t.data(),
            height: s.h(),
            width: s.w(),
        })
    }
}

pub(crate) fn same_size(planes: &[Plane<'_>]) -> Result<()> {
    let (h, w) = (planes[0].height, planes[0].width);
    if planes.iter().any(|p| p.height != h || p.width != w) {
        let dims: Vec<String> = planes
            .iter()
            .map(|p| format!("{}×{}", p.height, p.width))
            .collect();
        return Err(Error::shape(format!(
            "images must share one size, got {}",
            dims.join(", ")
        )));
    }
    Ok(())
}
