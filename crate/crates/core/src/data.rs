//! Utterance records and the JSON-lines dataset format.
//!
//! Word and utterance scores arrive on a 0–10 scale and phone scores on 0–2.
//! Everything is stored on the common [0, 2] scale: word and utterance scores
//! are divided by [`RAW_SCALE`] at load time and multiplied back on write.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Number of source phones of the acoustic model.
pub const NUM_PHONES: usize = 42;
/// Phone id used for padded positions.
pub const PAD_PHONE: u8 = 42;
/// GOP feature width: LPP block followed by LPR block.
pub const GOP_DIM: usize = 2 * NUM_PHONES;
/// Maximum utterance length in phones.
pub const MAX_LEN: usize = 50;
pub const WORD_ASPECTS: usize = 3;
pub const UTT_ASPECTS: usize = 5;
/// Upper end of the stored score scale.
pub const SCORE_MAX: f64 = 2.0;
/// Divisor mapping raw 0–10 word/utterance scores onto [0, 2].
pub const RAW_SCALE: f64 = 5.0;

pub const WORD_ASPECT_NAMES: [&str; WORD_ASPECTS] = ["accuracy", "stress", "total"];
pub const UTT_ASPECT_NAMES: [&str; UTT_ASPECTS] =
    ["accuracy", "completeness", "fluency", "prosody", "total"];

/// Spellings of the 42 phones, indexed by phone id.
pub const PHONE_NAMES: [&str; NUM_PHONES] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH", "SIL", "SPN", "NSN",
];

pub fn phone_name(id: u8) -> &'static str {
    PHONE_NAMES.get(id as usize).copied().unwrap_or("<pad>")
}

/// Multi-granular score labels on the [0, 2] scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLabel<T> {
    /// One accuracy score per phone.
    pub phone: Vec<T>,
    /// (accuracy, stress, total) per word.
    pub word: Vec<[T; WORD_ASPECTS]>,
    /// (accuracy, completeness, fluency, prosody, total).
    pub utt: [T; UTT_ASPECTS],
}

/// Error-rate features between hypothesis and canonical phones.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErFeatures<T> {
    pub cer: T,
    pub mer: T,
}

/// One learner utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord<T> {
    pub id: String,
    pub canonical_phones: Vec<u8>,
    /// Word membership of each phone; non-decreasing from 0 in steps of at most 1.
    pub word_index: Vec<usize>,
    /// L×84 GOP features.
    pub gop: Array2<T>,
    pub hyp_phones: Vec<u8>,
    pub scores: ScoreLabel<T>,
    pub er: Option<ErFeatures<T>>,
}

impl<T: Scalar> UtteranceRecord<T> {
    pub fn len(&self) -> usize {
        self.canonical_phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical_phones.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.word_index.last().map_or(0, |w| w + 1)
    }

    /// Checks every record invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, message: String| Error::Validation {
            id: self.id.clone(),
            field,
            message,
        };
        let len = self.canonical_phones.len();
        if len == 0 || len > MAX_LEN {
            return Err(bad("phones", format!("length {len} outside 1..={MAX_LEN}")));
        }
        if let Some(p) = self
            .canonical_phones
            .iter()
            .find(|&&p| p as usize >= NUM_PHONES)
        {
            return Err(bad("phones", format!("phone id {p} out of range")));
        }
        if let Some(p) = self.hyp_phones.iter().find(|&&p| p as usize >= NUM_PHONES) {
            return Err(bad("hyp_phones", format!("phone id {p} out of range")));
        }
        if self.gop.nrows() != len {
            return Err(bad(
                "gop",
                format!("{} rows for {len} canonical phones", self.gop.nrows()),
            ));
        }
        if self.gop.ncols() != GOP_DIM {
            return Err(bad(
                "gop",
                format!("width {} != {GOP_DIM}", self.gop.ncols()),
            ));
        }
        if self.gop.iter().any(|v| !v.is_finite()) {
            return Err(bad("gop", "non-finite feature".into()));
        }
        if self.word_index.len() != len {
            return Err(bad(
                "word_index",
                format!("{} entries for {len} phones", self.word_index.len()),
            ));
        }
        if self.word_index[0] != 0 {
            return Err(bad("word_index", "must start at 0".into()));
        }
        if self
            .word_index
            .windows(2)
            .any(|w| w[1] < w[0] || w[1] > w[0] + 1)
        {
            return Err(bad(
                "word_index",
                "must be non-decreasing in steps of 0 or 1".into(),
            ));
        }
        let in_range = |v: &T| *v >= T::zero() && *v <= T::of(SCORE_MAX);
        if self.scores.phone.len() != len {
            return Err(bad(
                "scores.phone",
                format!("{} scores for {len} phones", self.scores.phone.len()),
            ));
        }
        if !self.scores.phone.iter().all(in_range) {
            return Err(bad("scores.phone", "score outside [0, 2]".into()));
        }
        if self.scores.word.len() != self.num_words() {
            return Err(bad(
                "scores.word",
                format!(
                    "{} word triples for {} words",
                    self.scores.word.len(),
                    self.num_words()
                ),
            ));
        }
        if !self.scores.word.iter().flatten().all(in_range) {
            return Err(bad("scores.word", "score outside [0, 10] raw".into()));
        }
        if !self.scores.utt.iter().all(in_range) {
            return Err(bad("scores.utt", "score outside [0, 10] raw".into()));
        }
        Ok(())
    }
}

/// Raw word/utterance score (0–10) onto the stored scale.
pub fn normalize_score<T: Scalar>(raw: T) -> T {
    raw / T::of(RAW_SCALE)
}

/// Stored word/utterance score back onto the raw 0–10 scale.
pub fn denormalize_score<T: Scalar>(stored: T) -> T {
    stored * T::of(RAW_SCALE)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct WireScores<T> {
    phone: Vec<T>,
    word: Vec<[T; WORD_ASPECTS]>,
    utt: [T; UTT_ASPECTS],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct WireRecord<T> {
    id: String,
    phones: Vec<u8>,
    word_index: Vec<usize>,
    gop: Vec<Vec<T>>,
    hyp_phones: Vec<u8>,
    scores: WireScores<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    er: Option<[T; 2]>,
}

impl<T: Scalar> WireRecord<T> {
    fn into_record(self) -> Result<UtteranceRecord<T>> {
        let rows = self.gop.len();
        if let Some(r) = self.gop.iter().position(|r| r.len() != GOP_DIM) {
            return Err(Error::Validation {
                id: self.id,
                field: "gop",
                message: format!("row {r} has width {} != {GOP_DIM}", self.gop[r].len()),
            });
        }
        let flat: Vec<T> = self.gop.into_iter().flatten().collect();
        let gop = Array2::from_shape_vec((rows, GOP_DIM), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let record = UtteranceRecord {
            id: self.id,
            canonical_phones: self.phones,
            word_index: self.word_index,
            gop,
            hyp_phones: self.hyp_phones,
            scores: ScoreLabel {
                phone: self.scores.phone,
                word: self
                    .scores
                    .word
                    .into_iter()
                    .map(|w| w.map(normalize_score))
                    .collect(),
                utt: self.scores.utt.map(normalize_score),
            },
            er: self.er.map(|[cer, mer]| ErFeatures { cer, mer }),
        };
        record.validate()?;
        Ok(record)
    }

    fn from_record(r: &UtteranceRecord<T>) -> Self {
        WireRecord {
            id: r.id.clone(),
            phones: r.canonical_phones.clone(),
            word_index: r.word_index.clone(),
            gop: r.gop.rows().into_iter().map(|row| row.to_vec()).collect(),
            hyp_phones: r.hyp_phones.clone(),
            scores: WireScores {
                phone: r.scores.phone.clone(),
                word: r
                    .scores
                    .word
                    .iter()
                    .map(|w| w.map(denormalize_score))
                    .collect(),
                utt: r.scores.utt.map(denormalize_score),
            },
            er: r.er.map(|e| [e.cer, e.mer]),
        }
    }
}

/// Parses one JSONL line into a validated record.
pub fn parse_record<T: Scalar>(line: &str, line_no: usize) -> Result<UtteranceRecord<T>> {
    let wire: WireRecord<T> = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    wire.into_record()
}

pub fn read_dataset<T: Scalar, R: BufRead>(reader: R) -> Result<Vec<UtteranceRecord<T>>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1)?);
    }
    Ok(out)
}

/// Loads a JSONL dataset; line numbers in errors are 1-based.
pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord<T>>> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset<T: Scalar, W: Write>(
    mut writer: W,
    records: &[UtteranceRecord<T>],
) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, &WireRecord::from_record(r))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    records: &[UtteranceRecord<T>],
) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), records)
}
