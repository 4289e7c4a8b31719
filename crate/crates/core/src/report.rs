//! Label histograms for distribution-shift previews, rendered as CSV and SVG.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::data::{UtteranceRecord, SCORE_MAX, UTT_ASPECTS};
use crate::mixup::{accept_mask, mix_candidates, MixupConfig};
use crate::{Error, Result, Scalar};

pub const DEFAULT_BINS: usize = 8;

/// Original vs mixed label counts over uniform bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub original: Vec<u64>,
    pub mixed: Vec<u64>,
    /// Labels outside `[lo, hi]`, as (original, mixed).
    pub outside: (u64, u64),
}

impl Default for Histogram {
    fn default() -> Self {
        Self::new(0.0, SCORE_MAX, DEFAULT_BINS)
    }
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram {
            lo,
            hi,
            original: vec![0; bins],
            mixed: vec![0; bins],
            outside: (0, 0),
        }
    }

    pub fn bins(&self) -> usize {
        self.original.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins())
            .map(|i| self.lo + i as f64 * self.width())
            .collect()
    }

    /// Bin of `v`; the top edge belongs to the last bin.
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        Some((((v - self.lo) / self.width()) as usize).min(self.bins() - 1))
    }

    pub fn add_original(&mut self, v: f64) {
        match self.bin_of(v) {
            Some(b) => self.original[b] += 1,
            None => self.outside.0 += 1,
        }
    }

    pub fn add_mixed(&mut self, v: f64) {
        match self.bin_of(v) {
            Some(b) => self.mixed[b] += 1,
            None => self.outside.1 += 1,
        }
    }

    pub fn total_original(&self) -> u64 {
        self.original.iter().sum::<u64>() + self.outside.0
    }

    pub fn total_mixed(&self) -> u64 {
        self.mixed.iter().sum::<u64>() + self.outside.1
    }

    fn mode(counts: &[u64]) -> Option<usize> {
        let max = *counts.iter().max()?;
        (max > 0).then(|| counts.iter().position(|&c| c == max).expect("max present"))
    }

    pub fn original_mode(&self) -> Option<usize> {
        Self::mode(&self.original)
    }

    pub fn mixed_mode(&self) -> Option<usize> {
        Self::mode(&self.mixed)
    }

    /// Number of bins holding at least one mixed label.
    pub fn mixed_bins_occupied(&self) -> usize {
        self.mixed.iter().filter(|&&c| c > 0).count()
    }

    /// Fraction of mixed labels strictly below `threshold` (a bin edge).
    pub fn mixed_mass_below(&self, threshold: f64) -> f64 {
        let total = self.total_mixed();
        if total == 0 {
            return 0.0;
        }
        let below: u64 = self
            .edges()
            .windows(2)
            .zip(&self.mixed)
            .filter(|(e, _)| e[1] <= threshold + 1e-12)
            .map(|(_, &c)| c)
            .sum();
        below as f64 / total as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,original,mixed\n");
        for (e, (o, m)) in self
            .edges()
            .windows(2)
            .zip(self.original.iter().zip(&self.mixed))
        {
            writeln!(out, "{},{},{o},{m}", e[0], e[1]).expect("write to string");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            let row: (f64, f64, u64, u64) = rec?;
            rows.push(row);
        }
        let (first, last) = match (rows.first(), rows.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty histogram".into(),
                })
            }
        };
        Ok(Histogram {
            lo: first.0,
            hi: last.1,
            original: rows.iter().map(|r| r.2).collect(),
            mixed: rows.iter().map(|r| r.3).collect(),
            outside: (0, 0),
        })
    }

    /// Grouped bar chart; each bar carries its count as `data-count`.
    pub fn to_svg(&self, title: &str) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const PAD: f64 = 48.0;
        let max = self
            .original
            .iter()
            .chain(&self.mixed)
            .copied()
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let plot_w = W - 2.0 * PAD;
        let plot_h = H - 2.0 * PAD;
        let group = plot_w / self.bins() as f64;
        let bar = group * 0.4;
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        )
        .unwrap();
        writeln!(
            s,
            r#"<line x1="{PAD}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
            y = H - PAD,
            x2 = W - PAD
        )
        .unwrap();
        let edges = self.edges();
        for (i, (&o, &m)) in self.original.iter().zip(&self.mixed).enumerate() {
            let x0 = PAD + i as f64 * group + group * 0.1;
            for (series, count, x, color) in [
                ("original", o, x0, "#4a7fd4"),
                ("mixed", m, x0 + bar, "#e68bb5"),
            ] {
                let h = plot_h * count as f64 / max;
                writeln!(
                    s,
                    r#"<rect class="{series}" data-bin="{i}" data-count="{count}" x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}" fill="{color}"/>"#,
                    H - PAD - h
                )
                .unwrap();
            }
            writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{:.2}</text>"#,
                x0 + bar,
                H - PAD + 14.0,
                edges[i]
            )
            .unwrap();
        }
        writeln!(
            s,
            r##"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="#4a7fd4">original</text>"##,
            W - PAD - 120.0,
            PAD
        )
        .unwrap();
        writeln!(
            s,
            r##"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="#e68bb5">mixed</text>"##,
            W - PAD - 60.0,
            PAD
        )
        .unwrap();
        s.push_str("</svg>\n");
        s
    }

    /// Reads the per-bin counts back out of [`Histogram::to_svg`] output.
    pub fn counts_from_svg(svg: &str) -> (Vec<u64>, Vec<u64>) {
        let mut original = Vec::new();
        let mut mixed = Vec::new();
        for line in svg.lines().filter(|l| l.contains("data-count=")) {
            let count = line
                .split("data-count=\"")
                .nth(1)
                .and_then(|r| r.split('"').next())
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            if line.contains(r#"class="original""#) {
                original.push(count);
            } else {
                mixed.push(count);
            }
        }
        (original, mixed)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Outcome of mixing a whole dataset once, batch by batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPreview {
    pub config: MixupConfig,
    pub candidates: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub original_mean: f64,
    /// Mean accepted mixed utterance total; `None` when nothing was accepted.
    pub mixed_mean: Option<f64>,
    pub histogram: Histogram,
    #[serde(skip)]
    pub mixed_totals: Vec<f64>,
}

/// Shuffles with `seed`, mixes every batch once and histograms utterance totals.
pub fn mix_preview<T: Scalar>(
    records: &[UtteranceRecord<T>],
    cfg: &MixupConfig,
    batch_size: usize,
    seed: u64,
) -> Result<MixPreview> {
    cfg.validate()?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);
    let total = UTT_ASPECTS - 1;
    let mut hist = Histogram::default();
    for r in records {
        hist.add_original(r.scores.utt[total].to_f64_lossy());
    }
    let mut mixed_totals = Vec::new();
    let mut candidates = 0;
    for chunk in order.chunks(batch_size) {
        let picked: Vec<UtteranceRecord<T>> = chunk.iter().map(|&i| records[i].clone()).collect();
        let batch = Batch::pad(&picked)?;
        let mixed = mix_candidates(&batch, cfg, &mut rng)?;
        candidates += mixed.size();
        for (i, ok) in accept_mask(&mixed, cfg.label_range).into_iter().enumerate() {
            if ok {
                let v = mixed.utt_labels[[i, total]].to_f64_lossy();
                hist.add_mixed(v);
                mixed_totals.push(v);
            }
        }
    }
    let original_mean = records
        .iter()
        .map(|r| r.scores.utt[total].to_f64_lossy())
        .sum::<f64>()
        / records.len().max(1) as f64;
    let accepted = mixed_totals.len();
    Ok(MixPreview {
        config: *cfg,
        candidates,
        accepted,
        rejected: candidates - accepted,
        original_mean,
        mixed_mean: (accepted > 0).then(|| mixed_totals.iter().sum::<f64>() / accepted as f64),
        histogram: hist,
        mixed_totals,
    })
}
