//! PCC/MSE evaluation per aspect and granularity level.
//!
//! Phone metrics pool every unmasked position of every utterance. A word's
//! prediction is the mean of its member positions' word-head outputs. PCCs
//! with a zero-variance side are `None` ("undefined") rather than 0.

use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::data::{UtteranceRecord, UTT_ASPECTS, WORD_ASPECTS};
use crate::error_rate::attach_er;
use crate::scorer::{forward, ErMode, ModelParams, Predictions};
use crate::{Error, Result, Scalar};

/// Sample Pearson correlation; `None` when either side has zero variance.
pub fn pearson<T: Scalar>(pred: &[T], target: &[T]) -> Result<Option<T>> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "pearson over {} and {} values",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Shape("pearson needs at least 2 values".into()));
    }
    let constant = |v: &[T]| v.iter().all(|&x| x == v[0]);
    if constant(pred) || constant(target) {
        return Ok(None);
    }
    let n = T::of(pred.len() as f64);
    let mx = pred.iter().copied().sum::<T>() / n;
    let my = target.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in pred.iter().zip(target) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Ok(None);
    }
    Ok(Some(
        (sxy / (sxx * syy).sqrt()).max(-T::one()).min(T::one()),
    ))
}

pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let sum: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    sum / T::of(pred.len().max(1) as f64)
}

/// Population standard deviation of the defined values.
pub fn population_std<T: Scalar>(values: &[Option<T>]) -> Option<T> {
    let defined: Vec<T> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return None;
    }
    let n = T::of(defined.len() as f64);
    let mean = defined.iter().copied().sum::<T>() / n;
    Some((defined.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n).sqrt())
}

/// Spread of aspect PCCs within each level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LevelStd<T> {
    pub phone: Option<T>,
    pub word: Option<T>,
    pub utt: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalReport<T> {
    pub phone_mse: T,
    pub phone_pcc: Option<T>,
    /// accuracy, stress, total
    pub word_pcc: [Option<T>; WORD_ASPECTS],
    /// accuracy, completeness, fluency, prosody, total
    pub utt_pcc: [Option<T>; UTT_ASPECTS],
    pub level_std: LevelStd<T>,
}

impl<T: Scalar> EvalReport<T> {
    /// Cells in table order: phone MSE, phone PCC, 3 word PCCs, 5 utterance PCCs.
    pub fn cells(&self) -> [Option<T>; 10] {
        let mut out = [None; 10];
        out[0] = Some(self.phone_mse);
        out[1] = self.phone_pcc;
        out[2..5].copy_from_slice(&self.word_pcc);
        out[5..].copy_from_slice(&self.utt_pcc);
        out
    }

    fn from_cells(cells: [Option<T>; 10]) -> Self {
        let mut word_pcc = [None; WORD_ASPECTS];
        word_pcc.copy_from_slice(&cells[2..5]);
        let mut utt_pcc = [None; UTT_ASPECTS];
        utt_pcc.copy_from_slice(&cells[5..]);
        EvalReport {
            phone_mse: cells[0].unwrap_or_else(T::nan),
            phone_pcc: cells[1],
            word_pcc,
            utt_pcc,
            level_std: level_std(cells[1], &word_pcc, &utt_pcc),
        }
    }

    pub fn utt_total_pcc(&self) -> Option<T> {
        self.utt_pcc[UTT_ASPECTS - 1]
    }
}

fn level_std<T: Scalar>(phone: Option<T>, word: &[Option<T>], utt: &[Option<T>]) -> LevelStd<T> {
    LevelStd {
        phone: population_std(&[phone]),
        word: population_std(word),
        utt: population_std(utt),
    }
}

/// Evaluates arbitrary predictions over `records`, batched in order.
pub fn evaluate_with<T, F>(
    records: &[UtteranceRecord<T>],
    batch_size: usize,
    mut predict: F,
) -> Result<EvalReport<T>>
where
    T: Scalar,
    F: FnMut(&Batch<T>) -> Result<Predictions<T>>,
{
    if records.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let mut phone = (Vec::new(), Vec::new());
    let mut word: Vec<(Vec<T>, Vec<T>)> = vec![(Vec::new(), Vec::new()); WORD_ASPECTS];
    let mut utt: Vec<(Vec<T>, Vec<T>)> = vec![(Vec::new(), Vec::new()); UTT_ASPECTS];
    for chunk in records.chunks(batch_size.max(1)) {
        let batch = Batch::pad(chunk)?;
        let pred = predict(&batch)?;
        for (i, rec) in chunk.iter().enumerate() {
            let len = rec.len();
            for j in 0..len {
                phone.0.push(pred.phone[[i, j]]);
                phone.1.push(rec.scores.phone[j]);
            }
            let words = rec.num_words();
            let mut sums = vec![[T::zero(); WORD_ASPECTS]; words];
            let mut counts = vec![0usize; words];
            for (j, &w) in rec.word_index.iter().enumerate() {
                counts[w] += 1;
                for k in 0..WORD_ASPECTS {
                    sums[w][k] += pred.word[[i, j, k]];
                }
            }
            for w in 0..words {
                for (k, (p, t)) in word.iter_mut().enumerate() {
                    p.push(sums[w][k] / T::of(counts[w] as f64));
                    t.push(rec.scores.word[w][k]);
                }
            }
            for (k, (p, t)) in utt.iter_mut().enumerate() {
                p.push(pred.utt[[i, k]]);
                t.push(rec.scores.utt[k]);
            }
        }
    }
    // A single sample cannot be correlated; report it as undefined.
    let pcc = |p: &[T], t: &[T]| -> Result<Option<T>> {
        if p.len() < 2 {
            Ok(None)
        } else {
            pearson(p, t)
        }
    };
    let phone_pcc = pcc(&phone.0, &phone.1)?;
    let mut word_pcc = [None; WORD_ASPECTS];
    for (slot, (p, t)) in word_pcc.iter_mut().zip(&word) {
        *slot = pcc(p, t)?;
    }
    let mut utt_pcc = [None; UTT_ASPECTS];
    for (slot, (p, t)) in utt_pcc.iter_mut().zip(&utt) {
        *slot = pcc(p, t)?;
    }
    Ok(EvalReport {
        phone_mse: mse(&phone.0, &phone.1),
        phone_pcc,
        word_pcc,
        utt_pcc,
        level_std: level_std(phone_pcc, &word_pcc, &utt_pcc),
    })
}

/// Evaluates a trained scorer; missing error-rate features are computed first.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &[UtteranceRecord<T>],
    er: ErMode,
) -> Result<EvalReport<T>> {
    let mut records = dataset.to_vec();
    attach_er(&mut records)?;
    evaluate_with(&records, 25, |batch| {
        let mut batch = batch.clone();
        er.apply(&mut batch);
        forward(params, &batch)
    })
}

/// Mean and sample standard deviation of each cell across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AggregateReport<T> {
    pub runs: usize,
    pub mean: EvalReport<T>,
    pub std: EvalReport<T>,
}

pub fn aggregate_runs<T: Scalar>(reports: &[EvalReport<T>]) -> Result<AggregateReport<T>> {
    if reports.is_empty() {
        return Err(Error::Config("no runs to aggregate".into()));
    }
    let mut mean = [None; 10];
    let mut std = [None; 10];
    for c in 0..10 {
        let values: Vec<T> = reports.iter().filter_map(|r| r.cells()[c]).collect();
        if values.is_empty() {
            continue;
        }
        let n = T::of(values.len() as f64);
        let same = values.iter().all(|&v| v == values[0]);
        let m = if same {
            values[0]
        } else {
            values.iter().copied().sum::<T>() / n
        };
        let s = if values.len() < 2 || same {
            T::zero()
        } else {
            (values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / (n - T::one())).sqrt()
        };
        mean[c] = Some(m);
        std[c] = Some(s);
    }
    Ok(AggregateReport {
        runs: reports.len(),
        mean: EvalReport::from_cells(mean),
        std: EvalReport::from_cells(std),
    })
}

const COLUMNS: [&str; 10] = [
    "Ph-MSE", "Ph-PCC", "W-Acc", "W-Str", "W-Tot", "U-Acc", "U-Comp", "U-Flu", "U-Pros", "U-Tot",
];

fn cell<T: Scalar>(v: Option<T>) -> String {
    v.map_or_else(
        || "undef".to_string(),
        |v| format!("{:.3}", v.to_f64_lossy()),
    )
}

/// Text table with one row per named report.
pub fn render_table<T: Scalar>(rows: &[(String, EvalReport<T>)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}", "model");
    for c in COLUMNS {
        out.push_str(&format!(" {c:>7}"));
    }
    out.push('\n');
    for (name, report) in rows {
        out.push_str(&format!("{name:<width$}"));
        for v in report.cells() {
            out.push_str(&format!(" {:>7}", cell(v)));
        }
        out.push('\n');
    }
    out
}

/// Two-line row per configuration: means, then `±` standard deviations.
pub fn render_aggregate_table<T: Scalar>(rows: &[(String, AggregateReport<T>)]) -> String {
    let mut out = render_table(
        &rows
            .iter()
            .map(|(n, a)| (n.clone(), a.mean.clone()))
            .collect::<Vec<_>>(),
    );
    let lines: Vec<String> = out.lines().map(str::to_string).collect();
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    out.clear();
    out.push_str(&lines[0]);
    out.push('\n');
    for ((_, agg), line) in rows.iter().zip(&lines[1..]) {
        out.push_str(line);
        out.push('\n');
        out.push_str(&format!("{:<width$}", ""));
        for v in agg.std.cells() {
            let s = v.map_or_else(|| "".to_string(), |v| format!("±{:.3}", v.to_f64_lossy()));
            out.push_str(&format!(" {s:>7}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_reversed() {
        let x = [0.1f64, 0.5, 0.2, 1.7];
        assert!((pearson(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            pearson(&[-1.0, 0.0, 1.0], &[1.0, 0.0, -1.0]).unwrap(),
            Some(-1.0)
        );
    }

    #[test]
    fn zero_variance_is_undefined() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap(), None);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn aggregate_two_runs() {
        let mut a = EvalReport {
            phone_mse: 0.1f64,
            phone_pcc: Some(0.6),
            word_pcc: [Some(0.5); 3],
            utt_pcc: [Some(0.7); 5],
            level_std: LevelStd {
                phone: Some(0.0),
                word: Some(0.0),
                utt: Some(0.0),
            },
        };
        a.utt_pcc[4] = Some(0.74);
        let mut b = a.clone();
        b.utt_pcc[4] = Some(0.76);
        let agg = aggregate_runs(&[a.clone(), b.clone()]).unwrap();
        assert!((agg.mean.utt_pcc[4].unwrap() - 0.75).abs() < 1e-12);
        assert!((agg.std.utt_pcc[4].unwrap() - 0.014_142_135_623_730_94).abs() < 1e-12);
        let swapped = aggregate_runs(&[b, a.clone()]).unwrap();
        assert_eq!(agg, swapped);
        let single = aggregate_runs(&[a]).unwrap();
        assert!(single.std.cells().iter().all(|c| *c == Some(0.0)));
    }

    #[test]
    fn population_std_of_listed_values() {
        let v = [Some(0.2), Some(0.4), None, Some(0.9)];
        let mean = 0.5;
        let expected =
            (((0.2f64 - mean).powi(2) + (0.4f64 - mean).powi(2) + (0.9f64 - mean).powi(2)) / 3.0)
                .sqrt();
        assert!((population_std(&v).unwrap() - expected).abs() < 1e-15);
        assert_eq!(population_std::<f64>(&[None]), None);
    }

    #[test]
    fn table_has_header_and_rows() {
        let r = EvalReport {
            phone_mse: 0.085,
            phone_pcc: Some(0.61),
            word_pcc: [Some(0.53), None, Some(0.55)],
            utt_pcc: [Some(0.71); 5],
            level_std: LevelStd {
                phone: Some(0.0),
                word: Some(0.01),
                utt: Some(0.0),
            },
        };
        let t = render_table(&[("gopt".to_string(), r)]);
        assert_eq!(t.lines().count(), 2);
        assert!(t.contains("undef"));
        assert!(t.contains("0.085"));
    }
}
