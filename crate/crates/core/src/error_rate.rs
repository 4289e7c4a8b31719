//! Edit-distance alignment and the CER / MER error-rate features.
//!
//! Alignment uses unit costs. When several alignments reach the minimum, the
//! backtrace prefers substitution (or hit), then deletion, then insertion, so
//! the hit/substitution/deletion/insertion split is reproducible.

use crate::data::{phone_name, ErFeatures, UtteranceRecord};
use crate::{Error, Result, Scalar};

/// Hits, substitutions, deletions and insertions of one alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AlignCounts {
    pub hits: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl AlignCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Aligns `hyp` against `reference` with unit edit costs.
pub fn align<Tok: PartialEq>(reference: &[Tok], hyp: &[Tok]) -> AlignCounts {
    let (n, m) = (reference.len(), hyp.len());
    let width = m + 1;
    let mut dist = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        dist[i * width] = i;
    }
    for j in 0..=m {
        dist[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = dist[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = dist[(i - 1) * width + j] + 1;
            let ins = dist[i * width + j - 1] + 1;
            dist[i * width + j] = diag.min(del).min(ins);
        }
    }

    let mut counts = AlignCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[i * width + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if dist[(i - 1) * width + j - 1] + usize::from(!same) == here {
                if same {
                    counts.hits += 1;
                } else {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[(i - 1) * width + j] + 1 == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Character error rate: `(S + D + I) / len(reference)` over characters.
/// May exceed 1 when the hypothesis has many insertions.
pub fn cer(reference: &str, hyp: &str) -> Result<f64> {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return Err(Error::UndefinedRate("CER of an empty reference"));
    }
    let h: Vec<char> = hyp.chars().collect();
    Ok(align(&r, &h).errors() as f64 / r.len() as f64)
}

/// Match error rate: `(S + D + I) / (H + S + D + I)`, always in [0, 1].
pub fn mer<Tok: PartialEq>(reference: &[Tok], hyp: &[Tok]) -> Result<f64> {
    if reference.is_empty() && hyp.is_empty() {
        return Err(Error::UndefinedRate("MER of two empty sequences"));
    }
    let c = align(reference, hyp);
    Ok(c.errors() as f64 / (c.hits + c.errors()) as f64)
}

/// Renders phone ids as their spellings joined by single spaces.
pub fn render_phones(phones: &[u8]) -> String {
    phones
        .iter()
        .map(|&p| phone_name(p))
        .collect::<Vec<_>>()
        .join(" ")
}

/// CER over the rendered phone strings and MER over phone tokens.
pub fn er_features<T: Scalar>(record: &UtteranceRecord<T>) -> Result<ErFeatures<T>> {
    er_from_phones(&record.canonical_phones, &record.hyp_phones)
}

pub fn er_from_phones<T: Scalar>(canonical: &[u8], hyp: &[u8]) -> Result<ErFeatures<T>> {
    let c = cer(&render_phones(canonical), &render_phones(hyp))?;
    let m = mer(canonical, hyp)?;
    Ok(ErFeatures {
        cer: T::of(c),
        mer: T::of(m),
    })
}

/// Fills in missing error-rate features from each record's hypothesis.
pub fn attach_er<T: Scalar>(records: &mut [UtteranceRecord<T>]) -> Result<()> {
    for r in records.iter_mut().filter(|r| r.er.is_none()) {
        r.er = Some(er_features(r)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(h: usize, s: usize, d: usize, i: usize) -> AlignCounts {
        AlignCounts {
            hits: h,
            substitutions: s,
            deletions: d,
            insertions: i,
        }
    }

    #[test]
    fn identity_alignment() {
        assert_eq!(
            align(&['a', 'b', 'c'], &['a', 'b', 'c']),
            counts(3, 0, 0, 0)
        );
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        assert_eq!(align(&['a', 'b', 'c'], &[]), counts(0, 0, 3, 0));
        assert_eq!(align::<char>(&[], &['x']), counts(0, 0, 0, 1));
    }

    #[test]
    fn single_substitution() {
        assert_eq!(
            align(&['a', 'b', 'c'], &['a', 'b', 'd']),
            counts(2, 1, 0, 0)
        );
    }

    #[test]
    fn tie_prefers_substitution() {
        // "ab" -> "ba": two substitutions or a deletion + insertion pair.
        assert_eq!(align(&['a', 'b'], &['b', 'a']), counts(0, 2, 0, 0));
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("kat", "kat").unwrap(), 0.0);
        assert_eq!(cer("kat", "kit").unwrap(), 1.0 / 3.0);
        assert_eq!(cer("ab", "abcd").unwrap(), 1.0);
        assert!(matches!(cer("", "a"), Err(Error::UndefinedRate(_))));
    }

    #[test]
    fn mer_examples() {
        assert_eq!(mer(&["K", "AE", "T"], &["K", "AE", "T"]).unwrap(), 0.0);
        assert_eq!(mer(&["K", "AE", "T"], &["K", "AE"]).unwrap(), 1.0 / 3.0);
        assert_eq!(mer(&[1, 2, 3], &[4, 5, 6]).unwrap(), 1.0);
        assert!(mer::<u8>(&[], &[]).is_err());
    }

    #[test]
    fn er_features_of_phone_sequences() {
        // K AE T S -> K AH T S: one substitution, both spellings two chars.
        let canonical = [19u8, 1, 30, 28];
        let same: ErFeatures<f64> = er_from_phones(&canonical, &canonical).unwrap();
        assert_eq!((same.cer, same.mer), (0.0, 0.0));
        let sub: ErFeatures<f64> = er_from_phones(&canonical, &[19, 2, 30, 28]).unwrap();
        assert_eq!(sub.mer, 0.25);
        // "K AE T S" has 8 characters and differs from "K AH T S" in one.
        assert_eq!(sub.cer, 1.0 / 8.0);
    }

    #[test]
    fn rendering_uses_single_spaces() {
        assert_eq!(render_phones(&[19, 1, 30]), "K AE T");
    }
}
