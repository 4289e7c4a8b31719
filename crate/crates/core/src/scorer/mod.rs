//! Multi-aspect scorer: GOP projection plus phone and position embeddings,
//! a 3-layer pre-norm transformer encoder of width 24 with one attention head,
//! and linear heads that see the representation concatenated with (cer, mer).
//!
//! Phone and word heads read each position; utterance heads read the mean of
//! the unmasked encoder outputs.

mod model;
mod optim;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::Scalar;

pub use model::{backward, forward, total_loss, LossBreakdown, Predictions};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{
    Checkpoint, EncoderLayer, ModelParams, TensorRecord, D_FF, D_MODEL, HEAD_IN, N_LAYERS,
};
pub use train::{prepare_records, train, train_with_init, EpochStats, TrainConfig};

/// Which error-rate features reach the heads; disabled ones are fed as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErMode {
    #[default]
    None,
    Cer,
    Mer,
    Both,
}

impl ErMode {
    pub const ALL: [ErMode; 4] = [ErMode::None, ErMode::Cer, ErMode::Mer, ErMode::Both];

    pub fn uses_cer(self) -> bool {
        matches!(self, ErMode::Cer | ErMode::Both)
    }

    pub fn uses_mer(self) -> bool {
        matches!(self, ErMode::Mer | ErMode::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            ErMode::None => "none",
            ErMode::Cer => "cer",
            ErMode::Mer => "mer",
            ErMode::Both => "both",
        }
    }

    /// Zeroes the disabled error-rate columns of a batch.
    pub fn apply<T: Scalar>(self, batch: &mut Batch<T>) {
        if !self.uses_cer() {
            batch.er.column_mut(0).fill(T::zero());
        }
        if !self.uses_mer() {
            batch.er.column_mut(1).fill(T::zero());
        }
    }
}

/// Deterministic initialization from a seed.
pub fn init_model<T: Scalar>(seed: u64) -> ModelParams<T> {
    ModelParams::init(seed)
}
