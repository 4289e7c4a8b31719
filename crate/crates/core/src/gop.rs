//! Goodness-of-pronunciation features from phone posteriorgrams.
//!
//! For an aligned segment `[t_s, t_e]` the log phone posterior of phone `p`
//! is the frame average of `log max(p(p | o_t), 1e-10)`. The log posterior
//! ratio against the canonical phone `c` is `LPP(p) - LPP(c)`, i.e. the
//! segment-level posterior is taken as `exp(LPP)`. A GOP row is the 42 LPP
//! values followed by the 42 LPR values.

use std::io::{BufRead, Read};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::data::{GOP_DIM, NUM_PHONES};
use crate::{Error, Result, Scalar};

/// Posterior floor applied before taking logs.
pub const POSTERIOR_FLOOR: f64 = 1e-10;
/// Tolerance on per-frame posterior sums.
pub const ROW_SUM_TOL: f64 = 1e-6;
/// First line of the binary posteriorgram header.
pub const BINARY_MAGIC: &str = "AMPG1";

/// Per-frame posteriors over the 42 source phones, T×42.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram<T> {
    probs: Array2<T>,
}

impl<T: Scalar> Posteriorgram<T> {
    pub fn new(probs: Array2<T>) -> Result<Self> {
        if probs.ncols() != NUM_PHONES {
            return Err(Error::Posteriorgram(format!(
                "{} columns, expected {NUM_PHONES}",
                probs.ncols()
            )));
        }
        for (t, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
                return Err(Error::Posteriorgram(format!(
                    "frame {t}: entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().map(|p| p.to_f64_lossy()).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Posteriorgram(format!(
                    "frame {t}: row sums to {sum}"
                )));
            }
        }
        Ok(Posteriorgram { probs })
    }

    pub fn frames(&self) -> usize {
        self.probs.nrows()
    }

    pub fn probs(&self) -> &Array2<T> {
        &self.probs
    }

    /// Reads CSV text: one frame per line, 42 comma-separated posteriors.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut flat = Vec::new();
        let mut frames = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != NUM_PHONES {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{} columns, expected {NUM_PHONES}", rec.len()),
                });
            }
            for field in rec.iter() {
                let v: f64 = field.parse().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("{field:?}: {e}"),
                })?;
                flat.push(T::of(v));
            }
            frames += 1;
        }
        let probs = Array2::from_shape_vec((frames, NUM_PHONES), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(probs)
    }

    /// Reads the binary layout: text lines `AMPG1`, `T`, `42`, then T×42
    /// little-endian `f32` values in row-major order.
    pub fn read_binary<R: BufRead>(mut reader: R) -> Result<Self> {
        let mut header = [String::new(), String::new(), String::new()];
        for (i, line) in header.iter_mut().enumerate() {
            if reader.read_line(line)? == 0 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "truncated header".into(),
                });
            }
        }
        if header[0].trim() != BINARY_MAGIC {
            return Err(Error::Parse {
                line: 1,
                message: format!("bad magic {:?}", header[0].trim()),
            });
        }
        let frames: usize = header[1].trim().parse().map_err(|e| Error::Parse {
            line: 2,
            message: format!("frame count: {e}"),
        })?;
        let dim: usize = header[2].trim().parse().map_err(|e| Error::Parse {
            line: 3,
            message: format!("phone count: {e}"),
        })?;
        if dim != NUM_PHONES {
            return Err(Error::Posteriorgram(format!(
                "{dim} phones, expected {NUM_PHONES}"
            )));
        }
        let mut bytes = vec![0u8; frames * dim * 4];
        reader.read_exact(&mut bytes)?;
        let flat: Vec<T> = bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let probs =
            Array2::from_shape_vec((frames, dim), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(probs)
    }

    pub fn write_binary(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "{BINARY_MAGIC}\n{}\n{NUM_PHONES}", self.frames())?;
        for p in self.probs.iter() {
            out.write_all(&(p.to_f64_lossy() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Loads either format, choosing binary when the file starts with the magic line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC.as_bytes()) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_csv(bytes.as_slice())
        }
    }
}

/// One force-aligned canonical phone spanning frames `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentSegment {
    pub phone: u8,
    pub start: usize,
    pub end: usize,
}

impl AlignmentSegment {
    pub fn new(phone: u8, start: usize, end: usize) -> Self {
        AlignmentSegment { phone, start, end }
    }

    fn check(&self, frames: usize, index: usize) -> Result<()> {
        let fail = |message: String| Err(Error::Segment { index, message });
        if self.phone as usize >= NUM_PHONES {
            return fail(format!("phone id {} out of range", self.phone));
        }
        if self.start > self.end {
            return fail(format!("inverted segment {}..={}", self.start, self.end));
        }
        if self.end >= frames {
            return fail(format!("end frame {} beyond {frames} frames", self.end));
        }
        Ok(())
    }
}

/// Reads `phone_id,t_s,t_e` rows; a non-numeric first row is taken as a header.
pub fn read_alignment<R: Read>(reader: R) -> Result<Vec<AlignmentSegment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut segs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<usize>, _> = rec.iter().map(str::parse).collect();
        match parsed {
            Ok(v) if v.len() == 3 => {
                let phone = u8::try_from(v[0]).map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("phone id {} out of range", v[0]),
                })?;
                segs.push(AlignmentSegment::new(phone, v[1], v[2]));
            }
            Err(_) if i == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected phone_id,t_s,t_e".into(),
                })
            }
        }
    }
    Ok(segs)
}

pub fn load_alignment(path: impl AsRef<Path>) -> Result<Vec<AlignmentSegment>> {
    read_alignment(std::fs::File::open(path)?)
}

fn lpp_unchecked<T: Scalar>(pg: &Posteriorgram<T>, seg: &AlignmentSegment) -> Array1<T> {
    let floor = T::of(POSTERIOR_FLOOR);
    let frames = pg.probs.slice(s![seg.start..=seg.end, ..]);
    let count = T::of((seg.end - seg.start + 1) as f64);
    let mut out = Array1::zeros(NUM_PHONES);
    for row in frames.rows() {
        for (acc, &p) in out.iter_mut().zip(row.iter()) {
            *acc += p.max(floor).ln();
        }
    }
    out.mapv_inplace(|v| v / count);
    out
}

/// Segment-averaged log phone posteriors, 42 entries in `[log 1e-10, 0]`.
pub fn compute_lpp<T: Scalar>(pg: &Posteriorgram<T>, seg: &AlignmentSegment) -> Result<Array1<T>> {
    seg.check(pg.frames(), 0)?;
    Ok(lpp_unchecked(pg, seg))
}

/// Log posterior ratios against the canonical phone.
///
/// # Panics
/// If `canonical` is not a valid phone id.
pub fn compute_lpr<T: Scalar>(lpp: ArrayView1<'_, T>, canonical: u8) -> Array1<T> {
    assert!(
        (canonical as usize) < lpp.len(),
        "canonical phone {canonical} out of range"
    );
    let anchor = lpp[canonical as usize];
    let mut out = lpp.mapv(|v| v - anchor);
    out[canonical as usize] = T::zero();
    out
}

/// L×84 GOP matrix, one row per segment.
pub fn assemble_gop<T: Scalar>(
    pg: &Posteriorgram<T>,
    segs: &[AlignmentSegment],
) -> Result<Array2<T>> {
    let mut out = Array2::zeros((segs.len(), GOP_DIM));
    for (i, seg) in segs.iter().enumerate() {
        seg.check(pg.frames(), i)?;
        let lpp = lpp_unchecked(pg, seg);
        let lpr = compute_lpr(lpp.view(), seg.phone);
        out.slice_mut(s![i, ..NUM_PHONES]).assign(&lpp);
        out.slice_mut(s![i, NUM_PHONES..]).assign(&lpr);
    }
    Ok(out)
}
