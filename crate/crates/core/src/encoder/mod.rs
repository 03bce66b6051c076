//! Backbone features, sparse self-similarity context descriptors and their fusion.
//!
//! The context descriptor of a cell is the cosine self-similarity between its
//! feature vector and the neighbors lying on the horizontal, vertical and both
//! diagonal lines through it. Sampling only these rays keeps the descriptor
//! length linear in the kernel size instead of quadratic.

mod backbone;
mod bench;
mod fusion;
mod offsets;
mod similarity;

pub use backbone::{Backbone, BackboneCache, BackboneGrads, ConvLayer, FeatureExtractor};
pub use bench::{bench_sce, BenchRow};
pub use fusion::{fuse_context, fuse_context_backward, FusionGrads, FusionWeights};
pub use offsets::{dense_offsets, sparse_offsets};
pub use similarity::{
    self_similarity_backward, self_similarity_dense, self_similarity_sparse,
    self_similarity_with_offsets,
};

use crate::error::{invalid_input, Result};

/// Dense grid of feature vectors, stored channel-major `[channels × height × width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Input-image pixels per cell.
    pub stride: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        stride: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid_input(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(invalid_input(format!(
                "feature map holds {} values, expected {}",
                values.len(),
                channels * height * width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            stride,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, stride: usize) -> Self {
        Self {
            channels,
            height,
            width,
            stride,
            values: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.values[(c * self.height + i) * self.width + j]
    }

    /// Feature vector of cell `(i, j)`.
    pub fn vector(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.at(c, i, j)).collect()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(invalid_input("feature map contains non-finite values"))
        }
    }

    /// Pixel-major copy `[cells × channels]`, handy for per-cell dot products.
    pub(crate) fn to_pixel_major(&self) -> Vec<f64> {
        let n = self.cells();
        let mut out = vec![0.0; self.values.len()];
        for c in 0..self.channels {
            let plane = &self.values[c * n..(c + 1) * n];
            for (p, v) in plane.iter().enumerate() {
                out[p * self.channels + c] = *v;
            }
        }
        out
    }
}

/// Self-similarity descriptors `[len × height × width]` for kernel size `kernel_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextDescriptorMap {
    pub len: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_size: usize,
    pub values: Vec<f64>,
}

impl ContextDescriptorMap {
    #[inline]
    pub fn at(&self, d: usize, i: usize, j: usize) -> f64 {
        self.values[(d * self.height + i) * self.width + j]
    }
}

/// Context-aware semantic features `[d_g × height × width]`, nonnegative after the ReLU.
pub type ContextFeatureMap = FeatureMap;
