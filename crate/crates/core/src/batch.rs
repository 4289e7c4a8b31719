//! Fixed-length padded batches.
//!
//! Every utterance occupies [`MAX_LEN`] positions. Positions `j >= L` are
//! masked out, hold the [`PAD_PHONE`] id and are exactly zero in every
//! feature and label tensor. Word labels are broadcast to each member phone
//! position.

use ndarray::{s, Array2, Array3, Axis};

use crate::data::{
    ErFeatures, ScoreLabel, UtteranceRecord, GOP_DIM, MAX_LEN, PAD_PHONE, UTT_ASPECTS, WORD_ASPECTS,
};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub ids: Vec<String>,
    pub lengths: Vec<usize>,
    pub word_index: Vec<Vec<usize>>,
    pub hyp_phones: Vec<Vec<u8>>,
    /// Whether the source record carried error-rate features.
    pub has_er: Vec<bool>,
    /// b×50×84
    pub gop: Array3<T>,
    /// b×50, padded with [`PAD_PHONE`]
    pub phone_ids: Array2<u8>,
    /// b×50
    pub mask: Array2<bool>,
    /// b×50
    pub phone_labels: Array2<T>,
    /// b×50×3, word scores copied to member positions
    pub word_labels: Array3<T>,
    /// b×5
    pub utt_labels: Array2<T>,
    /// b×2 as (cer, mer)
    pub er: Array2<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of unmasked positions across the batch.
    pub fn valid_positions(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Builds a batch from records; fails on any record longer than [`MAX_LEN`].
    pub fn pad(records: &[UtteranceRecord<T>]) -> Result<Self> {
        let b = records.len();
        let mut batch = Batch {
            ids: Vec::with_capacity(b),
            lengths: Vec::with_capacity(b),
            word_index: Vec::with_capacity(b),
            hyp_phones: Vec::with_capacity(b),
            has_er: Vec::with_capacity(b),
            gop: Array3::zeros((b, MAX_LEN, GOP_DIM)),
            phone_ids: Array2::from_elem((b, MAX_LEN), PAD_PHONE),
            mask: Array2::from_elem((b, MAX_LEN), false),
            phone_labels: Array2::zeros((b, MAX_LEN)),
            word_labels: Array3::zeros((b, MAX_LEN, WORD_ASPECTS)),
            utt_labels: Array2::zeros((b, UTT_ASPECTS)),
            er: Array2::zeros((b, 2)),
        };
        for (i, r) in records.iter().enumerate() {
            let len = r.len();
            if len > MAX_LEN {
                return Err(Error::Length { len, max: MAX_LEN });
            }
            if r.gop.dim() != (len, GOP_DIM) {
                return Err(Error::Shape(format!(
                    "record {}: gop {:?} for {len} phones",
                    r.id,
                    r.gop.dim()
                )));
            }
            batch.gop.slice_mut(s![i, ..len, ..]).assign(&r.gop);
            for j in 0..len {
                batch.phone_ids[[i, j]] = r.canonical_phones[j];
                batch.mask[[i, j]] = true;
                batch.phone_labels[[i, j]] = r.scores.phone[j];
                let word = r.scores.word[r.word_index[j]];
                for (k, v) in word.iter().enumerate() {
                    batch.word_labels[[i, j, k]] = *v;
                }
            }
            for (k, v) in r.scores.utt.iter().enumerate() {
                batch.utt_labels[[i, k]] = *v;
            }
            if let Some(er) = r.er {
                batch.er[[i, 0]] = er.cer;
                batch.er[[i, 1]] = er.mer;
            }
            batch.ids.push(r.id.clone());
            batch.lengths.push(len);
            batch.word_index.push(r.word_index.clone());
            batch.hyp_phones.push(r.hyp_phones.clone());
            batch.has_er.push(r.er.is_some());
        }
        Ok(batch)
    }

    /// Recovers the records the batch was padded from.
    pub fn unpad(&self) -> Vec<UtteranceRecord<T>> {
        (0..self.size()).map(|i| self.record(i)).collect()
    }

    pub fn record(&self, i: usize) -> UtteranceRecord<T> {
        let len = self.lengths[i];
        let word_index = self.word_index[i].clone();
        let words = word_index.last().map_or(0, |w| w + 1);
        let mut word = vec![[T::zero(); WORD_ASPECTS]; words];
        // Walk backwards so each word keeps the label at its first member.
        for j in (0..len).rev() {
            for (k, slot) in word[word_index[j]].iter_mut().enumerate() {
                *slot = self.word_labels[[i, j, k]];
            }
        }
        let mut utt = [T::zero(); UTT_ASPECTS];
        for (k, slot) in utt.iter_mut().enumerate() {
            *slot = self.utt_labels[[i, k]];
        }
        UtteranceRecord {
            id: self.ids[i].clone(),
            canonical_phones: self.phone_ids.slice(s![i, ..len]).to_vec(),
            word_index,
            gop: self.gop.slice(s![i, ..len, ..]).to_owned(),
            hyp_phones: self.hyp_phones[i].clone(),
            scores: ScoreLabel {
                phone: self.phone_labels.slice(s![i, ..len]).to_vec(),
                word,
                utt,
            },
            er: self.has_er[i].then(|| ErFeatures {
                cer: self.er[[i, 0]],
                mer: self.er[[i, 1]],
            }),
        }
    }

    /// Sub-batch holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Batch {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            lengths: rows.iter().map(|&i| self.lengths[i]).collect(),
            word_index: rows.iter().map(|&i| self.word_index[i].clone()).collect(),
            hyp_phones: rows.iter().map(|&i| self.hyp_phones[i].clone()).collect(),
            has_er: rows.iter().map(|&i| self.has_er[i]).collect(),
            gop: self.gop.select(Axis(0), rows),
            phone_ids: self.phone_ids.select(Axis(0), rows),
            mask: self.mask.select(Axis(0), rows),
            phone_labels: self.phone_labels.select(Axis(0), rows),
            word_labels: self.word_labels.select(Axis(0), rows),
            utt_labels: self.utt_labels.select(Axis(0), rows),
            er: self.er.select(Axis(0), rows),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Self) -> Self {
        let cat3 = |a: &Array3<T>, b: &Array3<T>| {
            ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching trailing dims")
        };
        let cat2 = |a: &Array2<T>, b: &Array2<T>| {
            ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching trailing dims")
        };
        Batch {
            ids: join(&self.ids, &other.ids),
            lengths: join(&self.lengths, &other.lengths),
            word_index: join(&self.word_index, &other.word_index),
            hyp_phones: join(&self.hyp_phones, &other.hyp_phones),
            has_er: join(&self.has_er, &other.has_er),
            gop: cat3(&self.gop, &other.gop),
            phone_ids: ndarray::concatenate(
                Axis(0),
                &[self.phone_ids.view(), other.phone_ids.view()],
            )
            .expect("matching trailing dims"),
            mask: ndarray::concatenate(Axis(0), &[self.mask.view(), other.mask.view()])
                .expect("matching trailing dims"),
            phone_labels: cat2(&self.phone_labels, &other.phone_labels),
            word_labels: cat3(&self.word_labels, &other.word_labels),
            utt_labels: cat2(&self.utt_labels, &other.utt_labels),
            er: cat2(&self.er, &other.er),
        }
    }

    /// Zeroes features and labels at every masked-out position.
    pub fn rezero_padding(&mut self) {
        for (i, &len) in self.lengths.iter().enumerate() {
            self.gop.slice_mut(s![i, len.., ..]).fill(T::zero());
            self.phone_labels.slice_mut(s![i, len..]).fill(T::zero());
            self.word_labels.slice_mut(s![i, len.., ..]).fill(T::zero());
        }
    }
}

fn join<V: Clone>(a: &[V], b: &[V]) -> Vec<V> {
    a.iter().chain(b).cloned().collect()
}

/// Free-function form of [`Batch::pad`].
pub fn pad_batch<T: Scalar>(records: &[UtteranceRecord<T>]) -> Result<Batch<T>> {
    Batch::pad(records)
}
