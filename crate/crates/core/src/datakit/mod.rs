//! Pair samples, manifest loading, synthetic warp pairs, photometric augmentation and
//! image normalization.
//!
//! Coordinates are in pixels with x to the right, y downward and the origin at the top-left
//! corner of the top-left pixel; pixel centers therefore sit at half-integers.

mod augment;
mod manifest;
mod ops;
mod synth;

pub use augment::{augment_pair, JitterConfig};
pub use manifest::{load_manifest, write_manifest, ManifestKeypoints, ManifestRecord};
pub use ops::{normalize, resize_bilinear, resize_normalize, IMAGENET_MEAN, IMAGENET_STD};
pub use synth::{dense_flow, render_pair, synth_warp_pairs, SynthConfig, Warp};

use serde::{Deserialize, Serialize};

use crate::img::Image;
use crate::matching::FlowField;
use crate::supervision::KeypointPair;

/// Axis-aligned box `[x_min, y_min, x_max, y_max]` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox(pub [f64; 4]);

impl BBox {
    pub fn height(&self) -> f64 {
        self.0[3] - self.0[1]
    }

    pub fn width(&self) -> f64 {
        self.0[2] - self.0[0]
    }

    fn scaled(&self, sx: f64, sy: f64) -> Self {
        BBox([
            self.0[0] * sx,
            self.0[1] * sy,
            self.0[2] * sx,
            self.0[3] * sy,
        ])
    }
}

/// Two images with annotated correspondences.
///
/// Images hold raw intensities in `[0, 1]`; normalization happens right before the network
/// so that photometric augmentation operates on displayable values.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub source: Image,
    pub target: Image,
    pub keypoints: Vec<KeypointPair>,
    pub category: String,
    /// Per-target-pixel source coordinate (stride 1), synthetic data only.
    pub flow: Option<FlowField>,
    pub bbox_source: Option<BBox>,
    pub bbox_target: Option<BBox>,
}
