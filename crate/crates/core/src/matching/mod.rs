//! Correlation volume, mutual nearest neighbor filtering, correlation upsampling and
//! kernel soft-argmax flow readout.
//!
//! Volumes are indexed `[source row, source col, target row, target col]` and stored
//! row-major, so every source cell owns a contiguous block of target scores.

mod correlation;
mod mnn;
mod soft_argmax;
mod transfer;
mod upsample;

pub use correlation::{correlation_4d, correlation_4d_backward};
pub use mnn::{mutual_nn_backward, mutual_nn_filter, MNN_EPS};
pub use soft_argmax::{kernel_soft_argmax, kernel_soft_argmax_backward, SoftArgmaxParams};
pub use transfer::transfer_keypoints;
pub use upsample::{upsample_correlation, upsample_correlation_backward};

/// 4D similarity scores between every source cell and every target cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationVolume {
    pub src_h: usize,
    pub src_w: usize,
    pub tgt_h: usize,
    pub tgt_w: usize,
    /// Input-image pixels per cell, shared by both sides.
    pub stride: f64,
    pub values: Vec<f64>,
}

impl CorrelationVolume {
    #[inline]
    pub fn sources(&self) -> usize {
        self.src_h * self.src_w
    }

    #[inline]
    pub fn targets(&self) -> usize {
        self.tgt_h * self.tgt_w
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.values[((i * self.src_w + j) * self.tgt_h + k) * self.tgt_w + l]
    }

    pub(crate) fn dims(&self) -> [usize; 4] {
        [self.src_h, self.src_w, self.tgt_h, self.tgt_w]
    }
}

/// Dense target→source flow `[2 × height × width]`, channel 0 = x, channel 1 = y.
///
/// Each entry is the absolute source-image pixel coordinate predicted for the target cell whose
/// center lies at `((col + 0.5)·stride, (row + 0.5)·stride)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub stride: f64,
    pub values: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize, stride: f64) -> Self {
        Self {
            height,
            width,
            stride,
            values: vec![0.0; 2 * height * width],
        }
    }

    /// Flow mapping every cell onto its own pixel center.
    pub fn identity(height: usize, width: usize, stride: f64) -> Self {
        let mut f = Self::zeros(height, width, stride);
        for r in 0..height {
            for c in 0..width {
                f.set(r, c, ((c as f64 + 0.5) * stride, (r as f64 + 0.5) * stride));
            }
        }
        f
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> (f64, f64) {
        let p = r * self.width + c;
        (self.values[p], self.values[self.cells() + p])
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, (x, y): (f64, f64)) {
        let p = r * self.width + c;
        let n = self.cells();
        self.values[p] = x;
        self.values[n + p] = y;
    }
}
