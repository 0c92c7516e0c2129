use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, SequenceDataset};
use crate::error::{Error, Result};

/// Unigram or bigram counts of a corpus. Bigrams are taken within each
/// sequence only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramDistribution {
    pub n: usize,
    /// Gram key: the item id for unigrams, `(a << 32) | b` for bigrams.
    pub counts: BTreeMap<u64, u64>,
    pub total: u64,
}

impl NGramDistribution {
    pub fn from_corpus(corpus: &SequenceDataset, n: usize) -> Result<Self> {
        if !(n == 1 || n == 2) {
            return Err(Error::invalid(format!("n-gram order must be 1 or 2, got {n}")));
        }
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for seq in corpus.sequences() {
            for w in seq.windows(n) {
                *counts.entry(Self::key(w)).or_insert(0) += 1;
                total += 1;
            }
        }
        Ok(NGramDistribution { n, counts, total })
    }

    pub fn key(gram: &[ItemId]) -> u64 {
        gram.iter().fold(0u64, |acc, &i| (acc << 32) | u64::from(i))
    }
}

/// Smoothed KL divergence `Σ_g P_ε(g) ln(P_ε(g)/Q_ε(g))` between the
/// n-gram distributions of two corpora. The support is the union of grams
/// seen in either corpus and `P_ε(g) = (c_P(g)+ε)/(total_P+ε·|support|)`.
pub fn ngram_div(p: &SequenceDataset, q: &SequenceDataset, n: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid("smoothing epsilon must be positive"));
    }
    let p = NGramDistribution::from_corpus(p, n)?;
    let q = NGramDistribution::from_corpus(q, n)?;
    if p.total == 0 || q.total == 0 {
        return Err(Error::Empty("n-gram corpus"));
    }
    let mut support: Vec<u64> = p.counts.keys().chain(q.counts.keys()).copied().collect();
    support.sort_unstable();
    support.dedup();
    let size = support.len() as f64;
    let zp = p.total as f64 + eps * size;
    let zq = q.total as f64 + eps * size;
    let mut kl = 0.0;
    for g in support {
        let pe = (p.counts.get(&g).copied().unwrap_or(0) as f64 + eps) / zp;
        let qe = (q.counts.get(&g).copied().unwrap_or(0) as f64 + eps) / zq;
        kl += pe * (pe / qe).ln();
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(seqs: Vec<Vec<ItemId>>) -> SequenceDataset {
        SequenceDataset::new(10, seqs).unwrap()
    }

    #[test]
    fn hand_example() {
        let p = corpus(vec![vec![0, 0]]);
        let q = corpus(vec![vec![1, 1]]);
        let v = ngram_div(&p, &q, 1, 1.0).unwrap();
        let want = 0.75 * 3f64.ln() - 0.25 * 3f64.ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.5493).abs() < 1e-4);
    }

    #[test]
    fn identical_is_zero() {
        let p = corpus(vec![vec![1, 2, 3], vec![3, 2]]);
        assert_eq!(ngram_div(&p, &p, 1, 1e-3).unwrap(), 0.0);
        assert_eq!(ngram_div(&p, &p, 2, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn bigrams_stay_within_sequences() {
        let d = NGramDistribution::from_corpus(&corpus(vec![vec![1, 2], vec![3]]), 2).unwrap();
        assert_eq!(d.total, 1);
        assert_eq!(d.counts.get(&NGramDistribution::key(&[1, 2])), Some(&1));
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = corpus(vec![vec![1]]);
        assert!(ngram_div(&p, &p, 3, 1e-3).is_err());
        assert!(ngram_div(&p, &p, 1, 0.0).is_err());
        assert!(ngram_div(&p, &p, 2, 1e-3).is_err());
    }
}
