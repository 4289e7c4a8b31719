use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::data::UtteranceRecord;
use crate::error_rate::attach_er;
use crate::mixup::{augment_batch, MixupConfig};
use crate::{Error, Result, Scalar};

use super::model::backward;
use super::optim::{adam_step, AdamConfig, AdamState};
use super::params::ModelParams;
use super::ErMode;

/// Offset between the init seed and the shuffling/mixup stream seed.
const DATA_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mixup: Option<MixupConfig>,
    pub er: ErMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 25,
            epochs: 100,
            seed: 0,
            mixup: None,
            er: ErMode::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "learning rate and batch size must be positive".into(),
            ));
        }
        if let Some(m) = &self.mixup {
            m.validate()?;
        }
        Ok(())
    }
}

/// Mean losses over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub phone: f64,
    pub word: f64,
    pub utt: f64,
}

/// Clones the records and fills in missing error-rate features.
pub fn prepare_records<T: Scalar>(
    records: &[UtteranceRecord<T>],
) -> Result<Vec<UtteranceRecord<T>>> {
    let mut out = records.to_vec();
    attach_er(&mut out)?;
    Ok(out)
}

/// Trains from `ModelParams::init(cfg.seed)`.
pub fn train<T: Scalar>(
    dataset: &[UtteranceRecord<T>],
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, Vec<EpochStats>)> {
    train_with_init(dataset, cfg, ModelParams::init(cfg.seed))
}

/// Adam over shuffled mini-batches; with mixup configured every batch is
/// replaced by its augmented form (originals plus accepted mixed samples).
pub fn train_with_init<T: Scalar>(
    dataset: &[UtteranceRecord<T>],
    cfg: &TrainConfig,
    mut params: ModelParams<T>,
) -> Result<(ModelParams<T>, Vec<EpochStats>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let records = prepare_records(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DATA_STREAM);
    let mut state = AdamState::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let picked: Vec<UtteranceRecord<T>> =
                chunk.iter().map(|&i| records[i].clone()).collect();
            let mut batch = Batch::pad(&picked)?;
            if let Some(mix) = &cfg.mixup {
                batch = augment_batch(&batch, mix, &mut rng)?;
            }
            cfg.er.apply(&mut batch);
            let (loss, grads) = backward(&params, &batch)?;
            adam_step(&mut params, &grads, &mut state, &cfg.adam);
            for (s, v) in sums
                .iter_mut()
                .zip([loss.total, loss.phone, loss.word, loss.utt])
            {
                *s += v.to_f64_lossy();
            }
            batches += 1;
        }
        let n = batches as f64;
        history.push(EpochStats {
            epoch: epoch + 1,
            total: sums[0] / n,
            phone: sums[1] / n,
            word: sums[2] / n,
            utt: sums[3] / n,
        });
    }
    Ok((params, history))
}
