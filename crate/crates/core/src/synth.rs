//! Seeded generator of score-imbalanced synthetic datasets.
//!
//! Each utterance draws a target utterance-total score `t` from the configured
//! histogram profile (8 bins of width 0.25 on [0, 2]). Per-phone qualities are
//! `t` plus zero-mean offsets, rescaled so they stay in [0, 2] and average to
//! exactly `t`. A phone of quality `q` gets a GOP row whose LPR block has mean
//! `-KAPPA * q`, with the LPP block shaped around a near-certain canonical phone.
//!
//! Labels are then computed from the features alone, via
//! [`phone_quality`] `p(row) = clamp(-mean(row[42..84]) / KAPPA, 0, 2)`:
//!
//! | level | aspect | function of member phone qualities `p_j` |
//! |-------|--------|------------------------------------------|
//! | phone | accuracy | `p_j` |
//! | word | accuracy | `a = mean(p_j)` over the word |
//! | word | stress | `2 * sigmoid(6 * (a - 0.5))` |
//! | word | total | `(2a + stress) / 3` |
//! | utt | accuracy | `m = mean(p_j)` over the utterance |
//! | utt | completeness | `2 * mean(sigmoid(8 * (p_j - 0.4)))` |
//! | utt | fluency | `0.25 + 0.875 m` |
//! | utt | prosody | `0.2 + 0.9 m` |
//! | utt | total | `m` |
//!
//! With `noise > 0` every label gets independent `N(0, noise)` noise and is
//! clamped to [0, 2]. Hypothesis phones are corrupted with probability
//! `0.6 * (1 - p_j / 2)` per phone, which ties the error-rate features to
//! pronunciation quality without entering the label functions.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    ScoreLabel, UtteranceRecord, GOP_DIM, MAX_LEN, NUM_PHONES, SCORE_MAX, UTT_ASPECTS, WORD_ASPECTS,
};
use crate::error_rate::er_features;
use crate::gop::{compute_lpr, POSTERIOR_FLOOR};
use crate::{Error, Result, Scalar};

/// Number of histogram bins of the score profile.
pub const PROFILE_BINS: usize = 8;
/// Width of one profile bin.
pub const BIN_WIDTH: f64 = SCORE_MAX / PROFILE_BINS as f64;
/// Scale between phone quality and the mean LPR of its GOP row.
pub const KAPPA: f64 = 5.0;
/// Phones drawn for canonical sequences (the 39 speech phones).
const SPEECH_PHONES: u8 = 39;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Target utterance-total histogram over 8 bins of width 0.25 on [0, 2].
    pub profile: Vec<f64>,
    /// Standard deviation of label noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utterances: 500,
            min_len: 4,
            max_len: 12,
            profile: Self::skewed_high_profile(),
            noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// 92% of mass in the top bin, the rest spread over the upper half.
    pub fn skewed_high_profile() -> Vec<f64> {
        vec![0.0, 0.0, 0.0, 0.0, 0.01, 0.02, 0.05, 0.92]
    }

    pub fn balanced_profile() -> Vec<f64> {
        vec![1.0 / PROFILE_BINS as f64; PROFILE_BINS]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.profile.len() != PROFILE_BINS {
            return bad(format!(
                "profile has {} bins, expected {PROFILE_BINS}",
                self.profile.len()
            ));
        }
        if self.profile.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("profile weights must be non-negative".into());
        }
        let total: f64 = self.profile.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("profile weights sum to {total}, expected 1"));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.max_len > MAX_LEN {
            return bad(format!(
                "length range {}..={} must lie within 1..={MAX_LEN}",
                self.min_len, self.max_len
            ));
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Phone quality encoded by a GOP row: `clamp(-mean(LPR block) / KAPPA, 0, 2)`.
pub fn phone_quality<T: Scalar>(row: ArrayView1<'_, T>) -> f64 {
    let lpr = row.slice(s![NUM_PHONES..]);
    let mean = lpr.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / NUM_PHONES as f64;
    (-mean / KAPPA).clamp(0.0, SCORE_MAX)
}

/// Labels implied by a GOP matrix and word grouping, before noise.
pub fn labels_from_features<T: Scalar>(gop: &Array2<T>, word_index: &[usize]) -> ScoreLabel<T> {
    let q: Vec<f64> = gop.rows().into_iter().map(phone_quality).collect();
    let words = word_index.last().map_or(0, |w| w + 1);
    let mut sums = vec![(0.0, 0usize); words];
    for (&w, &p) in word_index.iter().zip(&q) {
        sums[w].0 += p;
        sums[w].1 += 1;
    }
    let word = sums
        .iter()
        .map(|&(sum, n)| {
            let acc = sum / n as f64;
            let stress = 2.0 * sigmoid(6.0 * (acc - 0.5));
            [acc, stress, (2.0 * acc + stress) / 3.0].map(T::of)
        })
        .collect();
    let m = q.iter().sum::<f64>() / q.len() as f64;
    let completeness =
        2.0 * q.iter().map(|p| sigmoid(8.0 * (p - 0.4))).sum::<f64>() / q.len() as f64;
    ScoreLabel {
        phone: q.iter().map(|&p| T::of(p)).collect(),
        word,
        utt: [m, completeness, 0.25 + 0.875 * m, 0.2 + 0.9 * m, m].map(T::of),
    }
}

/// GOP row for a phone of quality `q` (in [0, 2]) with the given canonical id.
fn gop_row<R: Rng>(rng: &mut R, canonical: u8, q: f64) -> Array1<f64> {
    let c = canonical as usize;
    let target = KAPPA * q;
    let weights: Vec<f64> = (0..NUM_PHONES)
        .map(|k| {
            if k == c {
                0.0
            } else {
                rng.random_range(0.8..1.2)
            }
        })
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let anchor = -rng.random_range(0.0..0.5);
    // LPR entries sum to -NUM_PHONES * target, so the block mean is -target.
    let mut lpp = Array1::from_shape_fn(NUM_PHONES, |k| {
        anchor - target * NUM_PHONES as f64 * weights[k] / weight_sum
    });
    lpp[c] = anchor;
    lpp.mapv_inplace(|v| v.max(POSTERIOR_FLOOR.ln()));
    let lpr = compute_lpr(lpp.view(), canonical);
    ndarray::concatenate![ndarray::Axis(0), lpp, lpr]
}

/// Qualities averaging exactly `t`, spread around it and kept within [0, 2].
fn phone_qualities<R: Rng>(rng: &mut R, t: f64, len: usize) -> Vec<f64> {
    let spread = Normal::new(0.0, 0.3).expect("valid normal");
    let mut offsets: Vec<f64> = (0..len).map(|_| spread.sample(rng)).collect();
    let mean = offsets.iter().sum::<f64>() / len as f64;
    offsets.iter_mut().for_each(|o| *o -= mean);
    let mut scale: f64 = 1.0;
    for &o in &offsets {
        if o > 0.0 {
            scale = scale.min((SCORE_MAX - t) / o);
        } else if o < 0.0 {
            scale = scale.min(t / -o);
        }
    }
    offsets
        .iter()
        .map(|o| (t + scale * o).clamp(0.0, SCORE_MAX))
        .collect()
}

fn word_grouping<R: Rng>(rng: &mut R, len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut word = 0;
    while out.len() < len {
        let size = rng.random_range(1..=4).min(len - out.len());
        out.extend(std::iter::repeat_n(word, size));
        word += 1;
    }
    out
}

fn hypothesis<R: Rng>(rng: &mut R, canonical: &[u8], quality: &[f64]) -> Vec<u8> {
    let mut hyp = Vec::with_capacity(canonical.len() + 2);
    for (&phone, &p) in canonical.iter().zip(quality) {
        let err = 0.6 * (1.0 - p / SCORE_MAX);
        if rng.random_bool(err.clamp(0.0, 1.0)) {
            if rng.random_bool(0.7) {
                let other = (phone + rng.random_range(1..SPEECH_PHONES)) % SPEECH_PHONES;
                hyp.push(other);
            }
        } else {
            hyp.push(phone);
        }
        if rng.random_bool((0.1 * err).clamp(0.0, 1.0)) {
            hyp.push(rng.random_range(0..SPEECH_PHONES));
        }
    }
    hyp
}

/// Generates `cfg.n_utterances` records; a pure function of `cfg`.
pub fn gen_synthetic<T: Scalar>(cfg: &SynthConfig) -> Result<Vec<UtteranceRecord<T>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.n_utterances == 0 {
        return Ok(Vec::new());
    }
    let bins = WeightedIndex::new(&cfg.profile).map_err(|e| Error::Config(e.to_string()))?;
    let noise = (cfg.noise > 0.0).then(|| Normal::new(0.0, cfg.noise).expect("valid normal"));
    let mut out = Vec::with_capacity(cfg.n_utterances);
    for n in 0..cfg.n_utterances {
        let bin = bins.sample(&mut rng);
        let lo = bin as f64 * BIN_WIDTH;
        let t = rng.random_range(lo..lo + BIN_WIDTH);
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let word_index = word_grouping(&mut rng, len);
        let canonical: Vec<u8> = (0..len)
            .map(|_| rng.random_range(0..SPEECH_PHONES))
            .collect();
        let qualities = phone_qualities(&mut rng, t, len);

        let mut gop = Array2::<T>::zeros((len, GOP_DIM));
        for (j, (&c, &q)) in canonical.iter().zip(&qualities).enumerate() {
            let row = gop_row(&mut rng, c, q);
            gop.row_mut(j).assign(&row.mapv(T::of));
        }
        let mut scores = labels_from_features(&gop, &word_index);
        let hyp_phones = hypothesis(&mut rng, &canonical, &qualities);
        if let Some(noise) = &noise {
            let mut jitter = |v: &mut T| {
                *v = T::of((v.to_f64_lossy() + noise.sample(&mut rng)).clamp(0.0, SCORE_MAX));
            };
            scores.phone.iter_mut().for_each(&mut jitter);
            scores.word.iter_mut().flatten().for_each(&mut jitter);
            scores.utt.iter_mut().for_each(&mut jitter);
        }

        let mut record = UtteranceRecord {
            id: format!("syn{:05}-{n:05}", cfg.seed % 100_000),
            canonical_phones: canonical,
            word_index,
            gop,
            hyp_phones,
            scores,
            er: None,
        };
        record.er = Some(er_features(&record)?);
        debug_assert_eq!(
            record.scores.word.first().map(|w| w.len()),
            Some(WORD_ASPECTS)
        );
        debug_assert_eq!(record.scores.utt.len(), UTT_ASPECTS);
        out.push(record);
    }
    Ok(out)
}

/// Histogram of utterance totals over the profile bins, normalized to sum 1.
pub fn utt_total_histogram<T: Scalar>(records: &[UtteranceRecord<T>]) -> Vec<f64> {
    let mut counts = vec![0.0; PROFILE_BINS];
    for r in records {
        let v = r.scores.utt[UTT_ASPECTS - 1].to_f64_lossy();
        let bin = ((v / BIN_WIDTH) as usize).min(PROFILE_BINS - 1);
        counts[bin] += 1.0;
    }
    let n = records.len().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}
