//! Fidelity, accuracy and bias diagnostics.

mod ngram;
mod report;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::corpus::{ItemId, SequenceDataset, SplitDataset};
use crate::error::{Error, Result};
use crate::genpipe::QueryLog;
use crate::par::{self, Parallelism};
use crate::recsys::{query_topk, DefenseConfig, Recommender, TopKList};
use crate::seed;

pub use ngram::{ngram_div, NGramDistribution};
pub use report::{evaluate_extraction, CorpusCounts, EvalReport, ExtractionMetrics, SideQuality};

/// Share of the first `k` items that two lists have in common.
pub fn agreement_at_k(a: &TopKList, b: &TopKList, k: usize) -> Result<f64> {
    if k == 0 || a.k() < k || b.k() < k {
        return Err(Error::invalid(format!(
            "agreement@{k} needs lists of length >= {k} (got {} and {})",
            a.k(),
            b.k()
        )));
    }
    let head = &b.items()[..k];
    let shared = a.items()[..k].iter().filter(|i| head.contains(i)).count();
    Ok(shared as f64 / k as f64)
}

/// Mean Agreement@K between two recommenders over a set of histories.
pub fn mean_agreement(
    a: &dyn Recommender,
    b: &dyn Recommender,
    histories: &[Vec<ItemId>],
    k: usize,
    parallelism: Parallelism,
) -> Result<f64> {
    if histories.is_empty() {
        return Err(Error::Empty("histories"));
    }
    let vals = par::map_indexed(histories.len(), parallelism, |u| {
        let la = query_topk(a, &histories[u], k, &DefenseConfig::OFF)?;
        let lb = query_topk(b, &histories[u], k, &DefenseConfig::OFF)?;
        agreement_at_k(&la, &lb, k)
    });
    let mut total = 0.0;
    for v in vals {
        total += v?;
    }
    Ok(total / histories.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecQuality {
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// Next-item accuracy on the held-out test items. Each user's positive is
/// ranked against `num_negatives` items drawn uniformly from those the
/// user never interacted with; ties go to the smaller id.
pub fn rec_quality(
    model: &dyn Recommender,
    split: &SplitDataset,
    k: usize,
    num_negatives: usize,
    seed: u64,
    parallelism: Parallelism,
) -> Result<RecQuality> {
    let n = model.item_count();
    if n <= num_negatives + 1 {
        return Err(Error::Precondition(format!(
            "catalog of {n} items is too small for {num_negatives} negatives"
        )));
    }
    if split.is_empty() {
        return Err(Error::Empty("evaluation users"));
    }
    let ranks = par::map_indexed(split.len(), parallelism, |u| -> Result<usize> {
        let history = split.test_prefix(u);
        let positive = split.test[u];
        let mut excluded = vec![false; n];
        for &i in history.iter().chain(std::iter::once(&positive)) {
            excluded[i as usize] = true;
        }
        let pool: Vec<ItemId> = (0..n as ItemId).filter(|&i| !excluded[i as usize]).collect();
        let mut rng = seed::stream(seed, u as u64);
        let negatives: Vec<ItemId> = sample(&mut rng, pool.len(), num_negatives.min(pool.len()))
            .into_iter()
            .map(|j| pool[j])
            .collect();
        let scores = model.score_all(&history)?;
        let sp = scores[positive as usize];
        let above = negatives
            .iter()
            .filter(|&&j| {
                let s = scores[j as usize];
                s > sp || (s == sp && j < positive)
            })
            .count();
        Ok(above + 1)
    });
    let mut hits = 0.0;
    let mut gain = 0.0;
    for r in ranks {
        let r = r?;
        if r <= k {
            hits += 1.0;
            gain += 1.0 / ((r + 1) as f64).log2();
        }
    }
    let users = split.len();
    Ok(RecQuality {
        recall: hits / users as f64,
        ndcg: gain / users as f64,
        users,
    })
}

/// Never-yet-recommended item counts: entry `r` is the count after all
/// queries of rounds `< r` (across all users), starting at `|I|`.
pub fn unseen_item_curve(log: &QueryLog, item_count: usize) -> Vec<(usize, usize)> {
    if log.is_empty() {
        return Vec::new();
    }
    let mut seen = vec![false; item_count];
    let mut unseen = item_count;
    let mut curve = vec![(0, unseen)];
    let records = log.by_round();
    let mut i = 0;
    while i < records.len() {
        let round = records[i].round;
        while i < records.len() && records[i].round == round {
            for &item in records[i].list.items() {
                if !std::mem::replace(&mut seen[item as usize], true) {
                    unseen -= 1;
                }
            }
            i += 1;
        }
        curve.push((round + 1, unseen));
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionView {
    /// Where the chosen item was shown.
    Display,
    /// Where the target ranked the chosen item.
    OriginalRank,
}

/// Counts of chosen positions; index 0 is position 1.
pub fn position_histogram(log: &QueryLog, by: PositionView) -> Result<Vec<u64>> {
    let k = log.records.iter().map(|r| r.list.k()).max().ok_or(Error::Empty("query log"))?;
    let mut hist = vec![0u64; k];
    for r in &log.records {
        let positions = match by {
            PositionView::Display => &r.selection.chosen_display_positions,
            PositionView::OriginalRank => &r.selection.chosen_original_ranks,
        };
        for &p in positions {
            hist[p - 1] += 1;
        }
    }
    if hist.iter().all(|&c| c == 0) {
        return Err(Error::Empty("selections"));
    }
    Ok(hist)
}

/// Pearson chi-square test of `counts` against the uniform distribution.
/// Returns `(statistic, p-value)`.
pub fn chi_square_uniform(counts: &[u64]) -> Result<(f64, f64)> {
    let total: u64 = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return Err(Error::invalid("chi-square needs at least two cells and one observation"));
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((stat, dist.sf(stat)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuffleOverlap {
    /// Mean `|topk(x) ∩ topk(shuffle(x))| / k` over sequences of length >= 2.
    pub mean: f64,
    pub evaluated: usize,
    /// Single-item sequences, for which shuffling is the identity.
    pub skipped: usize,
}

/// How much a model's top-`k` list changes when the input order is
/// shuffled.
pub fn shuffle_overlap(
    model: &dyn Recommender,
    sequences: &SequenceDataset,
    k: usize,
    seed: u64,
    parallelism: Parallelism,
) -> Result<ShuffleOverlap> {
    let seqs = sequences.sequences();
    let vals = par::map_indexed(seqs.len(), parallelism, |u| -> Result<Option<f64>> {
        let x = &seqs[u];
        if x.len() < 2 {
            return Ok(None);
        }
        let mut shuffled = x.clone();
        shuffled.shuffle(&mut seed::stream(seed, u as u64));
        let a = query_topk(model, x, k, &DefenseConfig::OFF)?;
        let b = query_topk(model, &shuffled, k, &DefenseConfig::OFF)?;
        Ok(Some(agreement_at_k(&a, &b, k)?))
    });
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for v in vals {
        match v? {
            Some(x) => {
                total += x;
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::Empty("sequences of length >= 2"));
    }
    Ok(ShuffleOverlap {
        mean: total / evaluated as f64,
        evaluated,
        skipped,
    })
}

/// `round<TAB>unseen` rows.
pub fn curve_tsv(curve: &[(usize, usize)]) -> String {
    let mut out = String::from("round\tunseen\n");
    for (r, c) in curve {
        out.push_str(&format!("{r}\t{c}\n"));
    }
    out
}

/// `position<TAB>count` rows.
pub fn histogram_tsv(hist: &[u64]) -> String {
    let mut out = String::from("position\tcount\n");
    for (p, c) in hist.iter().enumerate() {
        out.push_str(&format!("{}\t{c}\n", p + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Selection, SelectionRecord};
    use crate::corpus::split_leave_two;
    use crate::genpipe::QueryRecord;

    fn list(v: Vec<ItemId>) -> TopKList {
        TopKList::new(v).unwrap()
    }

    #[test]
    fn agreement_examples() {
        let a = list((0..10).collect());
        assert_eq!(agreement_at_k(&a, &a, 10).unwrap(), 1.0);
        assert_eq!(agreement_at_k(&a, &list((10..20).collect()), 10).unwrap(), 0.0);
        let b = list(vec![0, 1, 2, 30, 31, 32, 33, 34, 35, 36]);
        assert!((agreement_at_k(&a, &b, 10).unwrap() - 0.3).abs() < 1e-15);
        assert!(agreement_at_k(&a, &list(vec![1]), 2).is_err());
    }

    /// Scores item `i` by a fixed table, ignoring the history.
    struct Table(Vec<f64>);
    impl Recommender for Table {
        fn item_count(&self) -> usize {
            self.0.len()
        }
        fn score_all(&self, _: &[ItemId]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn split_with_test(n_users: usize, test: ItemId) -> SplitDataset {
        let data = SequenceDataset::new(300, (0..n_users).map(|u| vec![u as ItemId + 10, 5, test]).collect()).unwrap();
        split_leave_two(&data)
    }

    #[test]
    fn rec_quality_extremes() {
        let split = split_with_test(20, 7);
        let mut top = vec![0.0; 300];
        top[7] = 1.0;
        let q = rec_quality(&Table(top), &split, 10, 100, 1, Parallelism::SEQUENTIAL).unwrap();
        assert_eq!((q.recall, q.ndcg), (1.0, 1.0));
        let mut bottom = vec![1.0; 300];
        bottom[7] = 0.0;
        let q = rec_quality(&Table(bottom), &split, 10, 100, 1, Parallelism::SEQUENTIAL).unwrap();
        assert_eq!((q.recall, q.ndcg), (0.0, 0.0));
        assert!(rec_quality(&Table(vec![0.0; 101]), &split_with_test(1, 7), 10, 100, 1, Parallelism::SEQUENTIAL).is_err());
    }

    #[test]
    fn rec_quality_rank_two() {
        // Item 0 beats the positive (item 7) and is never in a history; it
        // is sampled for every user only if all items are negatives, so use
        // a catalog of exactly 103 items: 100 negatives are all that remain.
        let data = SequenceDataset::new(103, (0..5).map(|_| vec![1, 2, 7]).collect()).unwrap();
        let split = split_leave_two(&data);
        let mut s = vec![0.0; 103];
        s[0] = 2.0;
        s[7] = 1.0;
        let q = rec_quality(&Table(s), &split, 10, 100, 3, Parallelism::SEQUENTIAL).unwrap();
        assert_eq!(q.recall, 1.0);
        assert!((q.ndcg - 1.0 / 3f64.log2()).abs() < 1e-12);
    }

    fn record(user: usize, round: usize, items: Vec<ItemId>, pick: ItemId) -> QueryRecord {
        let l = list(items);
        let sel = SelectionRecord::new(round, &l, l.clone(), Selection { chosen: vec![pick], fallback: false }).unwrap();
        QueryRecord {
            user,
            round,
            prefix_len: 1,
            list: l,
            selection: sel,
        }
    }

    #[test]
    fn unseen_curve_counts_down() {
        assert!(unseen_item_curve(&QueryLog::default(), 10).is_empty());
        let log = QueryLog {
            records: vec![record(0, 0, vec![1, 2, 3], 2), record(0, 1, vec![2, 4, 5], 5), record(1, 0, vec![3, 6, 7], 3)],
        };
        let curve = unseen_item_curve(&log, 10);
        assert_eq!(curve, vec![(0, 10), (1, 5), (2, 3)]);
        let one = QueryLog { records: vec![record(0, 0, vec![1, 2, 3], 1)] };
        assert_eq!(unseen_item_curve(&one, 10)[1].1, 7);
    }

    #[test]
    fn histograms() {
        let log = QueryLog {
            records: vec![record(0, 0, vec![1, 2, 3], 2), record(0, 1, vec![2, 4, 5], 2)],
        };
        assert_eq!(position_histogram(&log, PositionView::Display).unwrap(), vec![1, 1, 0]);
        assert!(position_histogram(&QueryLog::default(), PositionView::Display).is_err());
        let (_, p) = chi_square_uniform(&[100, 100, 100]).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi_square_uniform(&[300, 0, 0]).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn order_insensitive_model_has_full_overlap() {
        let m = crate::recsys::init_score_model(30, 4, 1.0, 3).unwrap();
        let seqs = SequenceDataset::new(30, vec![vec![1, 2, 3, 4], vec![5], vec![9, 8, 7]]).unwrap();
        let o = shuffle_overlap(&m, &seqs, 10, 1, Parallelism::SEQUENTIAL).unwrap();
        assert_eq!(o.mean, 1.0);
        assert_eq!((o.evaluated, o.skipped), (2, 1));
    }
}
