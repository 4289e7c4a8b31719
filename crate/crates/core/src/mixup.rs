//! Acoustic feature mixup anchored on the in-batch mean.
//!
//! For a sample `(x, y, er)` and the batch means `(a_x, a_y, a_er)`:
//!
//! - static: `x' = x - λ a_x`
//! - dynamic: `x' = λ1 x - λ2 a_x + λ1 λ2 (x - a_x)`
//! - reversed dynamic: `x' = λ1 x + λ2 a_x + λ1 λ2 (x - a_x)`
//!
//! The same per-sample coefficients are applied to GOP features, every label
//! tensor (phone, broadcast word, utterance) and the error-rate pair. Means are
//! taken over zero-padded tensors; mixed samples keep their own mask and have
//! their padding re-zeroed. Candidates with any label outside the valid range
//! are dropped, never clamped.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::data::SCORE_MAX;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    Static,
    Dynamic,
    ReversedDynamic,
}

impl MixMode {
    pub const ALL: [MixMode; 3] = [MixMode::Static, MixMode::Dynamic, MixMode::ReversedDynamic];

    pub fn name(self) -> &'static str {
        match self {
            MixMode::Static => "static",
            MixMode::Dynamic => "dynamic",
            MixMode::ReversedDynamic => "reversed-dynamic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    /// Draw from `Beta(alpha, alpha)`.
    Beta {
        alpha: f64,
    },
    Fixed {
        lambda: f64,
    },
}

impl Default for LambdaSource {
    fn default() -> Self {
        LambdaSource::Beta { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupConfig {
    pub mode: MixMode,
    pub lambda: LambdaSource,
    /// Inclusive valid label range.
    pub label_range: (f64, f64),
}

impl MixupConfig {
    pub const DEFAULT_FIXED_LAMBDA: f64 = 0.3;

    pub fn new(mode: MixMode, lambda: LambdaSource) -> Self {
        MixupConfig {
            mode,
            lambda,
            label_range: (0.0, SCORE_MAX),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.lambda {
            LambdaSource::Beta { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::Config(format!("beta alpha must be positive, got {alpha}")),
            ),
            LambdaSource::Fixed { lambda } if !(0.0..=1.0).contains(&lambda) => Err(Error::Config(
                format!("fixed lambda must lie in [0, 1], got {lambda}"),
            )),
            _ if !(self.label_range.0 <= self.label_range.1) => {
                Err(Error::Config("empty label range".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A compiled λ source; construct once per config to avoid rebuilding the distribution.
#[derive(Debug, Clone, Copy)]
pub enum LambdaSampler {
    Beta(Beta<f64>),
    Fixed(f64),
}

impl LambdaSampler {
    pub fn new(source: LambdaSource) -> Result<Self> {
        match source {
            LambdaSource::Beta { alpha } => Beta::new(alpha, alpha)
                .map(LambdaSampler::Beta)
                .map_err(|e| Error::Config(format!("beta({alpha}): {e}"))),
            LambdaSource::Fixed { lambda } if (0.0..=1.0).contains(&lambda) => {
                Ok(LambdaSampler::Fixed(lambda))
            }
            LambdaSource::Fixed { lambda } => Err(Error::Config(format!(
                "fixed lambda must lie in [0, 1], got {lambda}"
            ))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LambdaSampler::Beta(d) => d.sample(rng),
            LambdaSampler::Fixed(l) => *l,
        }
    }
}

/// One λ draw from the configured source.
pub fn sample_lambda<R: Rng + ?Sized>(cfg: &MixupConfig, rng: &mut R) -> Result<f64> {
    Ok(LambdaSampler::new(cfg.lambda)?.sample(rng))
}

/// Means over the batch axis of every padded tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMean<T> {
    /// 50×84
    pub gop: Array2<T>,
    /// 50
    pub phone: Array1<T>,
    /// 50×3
    pub word: Array2<T>,
    /// 5
    pub utt: Array1<T>,
    /// (cer, mer)
    pub er: Array1<T>,
}

pub fn batch_mean<T: Scalar>(batch: &Batch<T>) -> Result<BatchMean<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mean = |a: ndarray::ArrayViewD<'_, T>| a.mean_axis(Axis(0)).expect("non-empty batch axis");
    Ok(BatchMean {
        gop: mean(batch.gop.view().into_dyn())
            .into_dimensionality()
            .expect("2-d"),
        phone: mean(batch.phone_labels.view().into_dyn())
            .into_dimensionality()
            .expect("1-d"),
        word: mean(batch.word_labels.view().into_dyn())
            .into_dimensionality()
            .expect("2-d"),
        utt: mean(batch.utt_labels.view().into_dyn())
            .into_dimensionality()
            .expect("1-d"),
        er: mean(batch.er.view().into_dyn())
            .into_dimensionality()
            .expect("1-d"),
    })
}

/// Per-sample mixing rule `(x, a) -> x'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixRule<T> {
    Static { lambda: T },
    Dynamic { l1: T, l2: T },
    Reversed { l1: T, l2: T },
}

impl<T: Scalar> MixRule<T> {
    #[inline]
    pub fn apply(&self, x: T, a: T) -> T {
        match *self {
            MixRule::Static { lambda } => x - lambda * a,
            MixRule::Dynamic { l1, l2 } => l1 * x - l2 * a + l1 * l2 * (x - a),
            MixRule::Reversed { l1, l2 } => l1 * x + l2 * a + l1 * l2 * (x - a),
        }
    }
}

fn mix_rows<T: Scalar>(batch: &Batch<T>, mean: &BatchMean<T>, rules: &[MixRule<T>]) -> Batch<T> {
    assert_eq!(rules.len(), batch.size(), "one rule per sample");
    let mut out = batch.clone();
    for (i, rule) in rules.iter().enumerate() {
        let f = |x: &mut T, &a: &T| *x = rule.apply(*x, a);
        Zip::from(out.gop.index_axis_mut(Axis(0), i))
            .and(&mean.gop)
            .for_each(f);
        Zip::from(out.phone_labels.row_mut(i))
            .and(&mean.phone)
            .for_each(f);
        Zip::from(out.word_labels.index_axis_mut(Axis(0), i))
            .and(&mean.word)
            .for_each(f);
        Zip::from(out.utt_labels.row_mut(i))
            .and(&mean.utt)
            .for_each(f);
        Zip::from(out.er.row_mut(i)).and(&mean.er).for_each(f);
        out.ids[i].push_str("+mix");
    }
    out.rezero_padding();
    out
}

/// Static mixup with one λ per sample.
pub fn static_mix<T: Scalar>(batch: &Batch<T>, mean: &BatchMean<T>, lambdas: &[T]) -> Batch<T> {
    let rules: Vec<_> = lambdas
        .iter()
        .map(|&lambda| MixRule::Static { lambda })
        .collect();
    mix_rows(batch, mean, &rules)
}

/// Dynamic mixup with independent `(λ1, λ2)` per sample.
pub fn dynamic_mix<T: Scalar>(
    batch: &Batch<T>,
    mean: &BatchMean<T>,
    l1: &[T],
    l2: &[T],
    reversed: bool,
) -> Batch<T> {
    assert_eq!(l1.len(), l2.len());
    let rules: Vec<_> = l1
        .iter()
        .zip(l2)
        .map(|(&l1, &l2)| {
            if reversed {
                MixRule::Reversed { l1, l2 }
            } else {
                MixRule::Dynamic { l1, l2 }
            }
        })
        .collect();
    mix_rows(batch, mean, &rules)
}

/// Whether each sample's unmasked labels all lie within `range`.
pub fn accept_mask<T: Scalar>(candidates: &Batch<T>, range: (f64, f64)) -> Vec<bool> {
    let (lo, hi) = (T::of(range.0), T::of(range.1));
    let ok = |v: &T| *v >= lo && *v <= hi;
    (0..candidates.size())
        .map(|i| {
            let len = candidates.lengths[i];
            let phone = candidates.phone_labels.row(i);
            let word = candidates.word_labels.index_axis(Axis(0), i);
            phone.iter().take(len).all(ok)
                && word.outer_iter().take(len).all(|w| w.iter().all(ok))
                && candidates.utt_labels.row(i).iter().all(ok)
        })
        .collect()
}

/// Keeps the candidates whose labels are all in range.
pub fn filter_valid<T: Scalar>(candidates: &Batch<T>, range: (f64, f64)) -> Batch<T> {
    let keep: Vec<usize> = accept_mask(candidates, range)
        .iter()
        .enumerate()
        .filter_map(|(i, &ok)| ok.then_some(i))
        .collect();
    candidates.select(&keep)
}

/// Draws per-sample coefficients in batch order and builds the candidate batch.
pub fn mix_candidates<T: Scalar, R: Rng + ?Sized>(
    batch: &Batch<T>,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<Batch<T>> {
    cfg.validate()?;
    let sampler = LambdaSampler::new(cfg.lambda)?;
    let mean = batch_mean(batch)?;
    let b = batch.size();
    Ok(match cfg.mode {
        MixMode::Static => {
            let lambdas: Vec<T> = (0..b).map(|_| T::of(sampler.sample(rng))).collect();
            static_mix(batch, &mean, &lambdas)
        }
        MixMode::Dynamic | MixMode::ReversedDynamic => {
            let mut l1 = Vec::with_capacity(b);
            let mut l2 = Vec::with_capacity(b);
            for _ in 0..b {
                l1.push(T::of(sampler.sample(rng)));
                l2.push(T::of(sampler.sample(rng)));
            }
            dynamic_mix(batch, &mean, &l1, &l2, cfg.mode == MixMode::ReversedDynamic)
        }
    })
}

/// Originals followed by their accepted mixed counterparts; size in `[b, 2b]`.
pub fn augment_batch<T: Scalar, R: Rng + ?Sized>(
    batch: &Batch<T>,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<Batch<T>> {
    let candidates = mix_candidates(batch, cfg, rng)?;
    Ok(batch.concat(&filter_valid(&candidates, cfg.label_range)))
}
