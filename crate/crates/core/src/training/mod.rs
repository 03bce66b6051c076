//! Baseline, single offline teacher and mutual online teacher training, with
//! validation-based checkpoint selection.
//!
//! Every run is deterministic given its config: initialization, shuffling and augmentation
//! each draw from their own stream derived from the config seed.

mod checkpoint;
mod config;
mod trainer;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::{DataConfig, SyntheticData, TrainConfig, Variant};
pub use trainer::{
    train_baseline, train_mutual_online_teachers, train_single_offline_teacher, validate,
    write_log, EpochRecord, MutualOutcome, TrainOutcome,
};
