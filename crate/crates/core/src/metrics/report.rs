use serde::{Deserialize, Serialize};

use super::{mean_agreement, ngram_div, rec_quality};
use crate::corpus::{SequenceDataset, SplitDataset};
use crate::error::Result;
use crate::par::Parallelism;
use crate::recsys::{DefenseConfig, Recommender, ServedRanking};

/// Smoothing used for the reported n-gram divergences.
pub const NGRAM_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideQuality {
    pub recall_at_10: f64,
    pub ndcg_at_10: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionMetrics {
    pub agreement_at_1: f64,
    pub agreement_at_10: f64,
    pub surrogate: SideQuality,
    /// Accuracy of the target as served, i.e. including any defense.
    pub target: SideQuality,
    /// Unigram divergence of the surrogate corpus from the secret corpus.
    pub ngram_div_1: f64,
    pub ngram_div_2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub secret_users: usize,
    pub excluded_users: usize,
    pub surrogate_pairs: usize,
    pub agent_pairs: usize,
    pub random_pairs: usize,
    pub secret_pairs: usize,
    pub failed_users: usize,
    pub fallbacks: usize,
    pub distinct_items: usize,
}

/// Everything an attack run reports. Serialises deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: ExtractionMetrics,
    pub counts: CorpusCounts,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// Compares a surrogate with its target on the secret test prefixes and
/// the generated corpus with the secret training corpus.
pub fn evaluate_extraction(
    target: &dyn Recommender,
    surrogate: &dyn Recommender,
    split: &SplitDataset,
    surrogate_corpus: &SequenceDataset,
    served: (usize, DefenseConfig),
    seed: u64,
    parallelism: Parallelism,
) -> Result<ExtractionMetrics> {
    let prefixes: Vec<_> = (0..split.len()).map(|u| split.test_prefix(u)).collect();
    let quality = |m: &dyn Recommender| -> Result<SideQuality> {
        let q = rec_quality(m, split, 10, 100, seed, parallelism)?;
        Ok(SideQuality {
            recall_at_10: q.recall,
            ndcg_at_10: q.ndcg,
        })
    };
    let (k, defense) = served;
    let target_quality = if defense.replaced_positions(k) > 0 {
        quality(&ServedRanking {
            model: target,
            k,
            defense,
        })?
    } else {
        quality(target)?
    };
    Ok(ExtractionMetrics {
        agreement_at_1: mean_agreement(target, surrogate, &prefixes, 1, parallelism)?,
        agreement_at_10: mean_agreement(target, surrogate, &prefixes, 10, parallelism)?,
        surrogate: quality(surrogate)?,
        target: target_quality,
        ngram_div_1: ngram_div(&split.train, surrogate_corpus, 1, NGRAM_EPS)?,
        ngram_div_2: ngram_div(&split.train, surrogate_corpus, 2, NGRAM_EPS)?,
    })
}
