//! Acoustic feature mixup for multi-aspect pronunciation scoring.
//!
//! The crate is organised around the data flow of a scoring experiment:
//!
//! - [`data`] and [`batch`]: utterance records, the JSON-lines dataset format,
//!   score normalization and fixed-length padded batches.
//! - [`synth`]: a seeded generator of score-imbalanced synthetic datasets whose
//!   labels are a documented function of their GOP features.
//! - [`gop`]: log phone posterior (LPP) and log posterior ratio (LPR) features
//!   from posteriorgrams and phone alignments.
//! - [`error_rate`]: edit-distance alignment, CER and MER.
//! - [`mixup`]: static and dynamic mixup anchored on the in-batch mean.
//! - [`scorer`]: a small transformer scorer with hand-written gradients and Adam.
//! - [`metrics`]: PCC/MSE evaluation and multi-run aggregation.
//! - [`report`]: label histograms rendered as CSV and SVG.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod batch;
pub mod data;
pub mod error;
pub mod error_rate;
pub mod gop;
pub mod metrics;
pub mod mixup;
pub mod report;
pub mod scalar;
pub mod scorer;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Utterance record with `f64` features and labels.
pub type Record = data::UtteranceRecord<f64>;
/// Padded batch with `f64` tensors.
pub type Batch64 = batch::Batch<f64>;
/// Scorer parameters in `f64`.
pub type Model = scorer::ModelParams<f64>;
/// Evaluation report in `f64`.
pub type Report = metrics::EvalReport<f64>;
/// Single-precision record, for memory-bound pipelines.
pub type Record32 = data::UtteranceRecord<f32>;
/// Single-precision scorer parameters.
pub type Model32 = scorer::ModelParams<f32>;
