//! Sparse-annotation semantic correspondence.
//!
//! The pipeline runs a small convolutional backbone, augments its features with sparse
//! self-similarity context, correlates source and target features in 4D, filters and
//! upsamples the correlation and reads out a dense target→source flow with a kernel
//! soft-argmax. Training supports a sparse-keypoint baseline and two teacher-student
//! variants that densify supervision with dilated-mask, small-loss selected pseudo-labels.

pub mod datakit;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod img;
pub(crate) mod linalg;
pub mod matching;
pub mod model;
pub mod optim;
pub mod selftest;
pub mod supervision;
pub mod training;

pub use error::{Error, Result};
pub use img::Image;
