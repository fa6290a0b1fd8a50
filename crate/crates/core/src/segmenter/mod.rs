//! Desk-scale patch-based 3D segmenter.
//!
//! A small encoder-decoder ([`ToyUNet`]) trained with plain SGD on the
//! Dice + focal objective and applied by sliding-window inference.

mod checkpoint;
mod inference;
mod net;
pub mod ops;
mod patches;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_from, save_checkpoint, write_to, CheckpointInfo, ConfigEcho, MAGIC, VERSION};
pub use inference::{
    binarize, predict_sliding_window, predict_with_coverage, tile_starts, PatchModel, SlidingWindowOutput, DEFAULT_OVERLAP,
    DEFAULT_THRESHOLD,
};
pub use net::{layout_for, ForwardCache, TensorSpec, ToyUNet, IN_CHANNELS};
pub use patches::{extract, required_foreground, sample_patches, PatchBatch};
pub use train::{build_pool, patch_loss, patch_loss_and_grad, train, train_from, TrainReport, TrainingCase};

use crate::error::{Error, Result};
use crate::loss::LossParams;

/// Patch edge used by the original full-scale network.
pub const REFERENCE_PATCH: usize = 160;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub patch_size: [usize; 3],
    /// Channels per resolution level, finest first.
    pub widths: Vec<usize>,
    pub levels: usize,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            patch_size: [32; 3],
            widths: vec![8, 16],
            levels: 2,
            seed: 0,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.widths.len() != self.levels {
            return Err(Error::InvalidParameter(format!(
                "segmenter: {} widths for {} levels",
                self.widths.len(),
                self.levels
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidParameter("segmenter: widths must be positive".into()));
        }
        let m = 1usize << self.levels;
        if self.patch_size.iter().any(|&p| p == 0 || p % m != 0) {
            return Err(Error::InvalidParameter(format!(
                "segmenter: patch size {:?} must be a positive multiple of {m}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub foreground_fraction: f64,
    pub patches_per_case: usize,
    pub seed: u64,
    pub loss: LossParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            learning_rate: 0.01,
            foreground_fraction: 0.5,
            patches_per_case: 2,
            seed: 0,
            loss: LossParams::default(),
        }
    }
}

impl TrainConfig {
    /// Settings of the original full-scale run.
    pub fn reference() -> Self {
        Self {
            epochs: 1000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patches_per_case == 0 {
            return Err(Error::InvalidParameter("train: epochs, batch size and patches per case must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("train: learning rate must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(Error::InvalidParameter("train: foreground fraction must lie in [0, 1]".into()));
        }
        self.loss.validate()
    }
}
