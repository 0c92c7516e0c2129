//! Recommenders behind a black-box top-k interface, plus the
//! random-replacement defense.

mod checkpoint;
mod markov;
mod pretrain;
mod score_model;

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::seed;

pub use checkpoint::{load_checkpoint, save_checkpoint, Model};
pub use markov::{train_markov_target, MarkovModel};
pub use pretrain::{bpr_loss_and_grad, pretrain_target, TargetTrainConfig, TrainTrace};
pub use score_model::{init_score_model, ScoreModel, SparseGrad};

/// Anything that scores every catalog item given a history.
pub trait Recommender: Send + Sync {
    fn item_count(&self) -> usize;

    /// Next-item scores over the whole catalog.
    fn score_all(&self, history: &[ItemId]) -> Result<Vec<f64>>;
}

pub(crate) fn check_history(history: &[ItemId], item_count: usize) -> Result<()> {
    if history.is_empty() {
        return Err(Error::Empty("history"));
    }
    if let Some(&bad) = history.iter().find(|&&i| i as usize >= item_count) {
        return Err(Error::invalid(format!(
            "item {bad} out of range for {item_count} items"
        )));
    }
    Ok(())
}

/// A ranked list of `k` distinct items, best first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopKList(Vec<ItemId>);

impl TopKList {
    pub fn new(items: Vec<ItemId>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("top-k list"));
        }
        let mut seen = HashSet::with_capacity(items.len());
        if let Some(dup) = items.iter().find(|&&i| !seen.insert(i)) {
            return Err(Error::invalid(format!("duplicate item {dup} in top-k list")));
        }
        Ok(TopKList(items))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn items(&self) -> &[ItemId] {
        &self.0
    }

    pub fn into_items(self) -> Vec<ItemId> {
        self.0
    }

    /// 1-based rank of `item`, if present.
    pub fn rank_of(&self, item: ItemId) -> Option<usize> {
        self.0.iter().position(|&i| i == item).map(|p| p + 1)
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.0.contains(&item)
    }
}

/// Random-replacement output perturbation applied to every served list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    pub enabled: bool,
    /// Fraction of the `k` positions replaced per response, in `[0, 1)`.
    pub replace_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DefenseConfig {
    pub const OFF: DefenseConfig = DefenseConfig {
        enabled: false,
        replace_fraction: 0.0,
        seed: 0,
    };

    pub fn with_fraction(replace_fraction: f64, seed: u64) -> Self {
        DefenseConfig {
            enabled: true,
            replace_fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.replace_fraction) {
            return Err(Error::invalid(format!(
                "replace_fraction must be in [0,1), got {}",
                self.replace_fraction
            )));
        }
        Ok(())
    }

    /// `⌊p·k⌋`, or 0 when disabled.
    pub fn replaced_positions(&self, k: usize) -> usize {
        if !self.enabled {
            return 0;
        }
        // Nudge so that e.g. 0.1 * 10 is not floored to 0 by rounding.
        (self.replace_fraction * k as f64 + 1e-9).floor() as usize
    }
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig::OFF
    }
}

/// Indices of the `k` highest scores, by descending score then ascending id.
pub fn rank_top_k(scores: &[f64], k: usize) -> Vec<ItemId> {
    let cmp = |a: &ItemId, b: &ItemId| {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then(a.cmp(b))
    };
    let mut idx: Vec<ItemId> = (0..scores.len() as ItemId).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Queries a recommender as a black box and returns its top-`k` list.
///
/// History items are not filtered out. With the defense enabled,
/// `⌊p·k⌋` uniformly chosen positions are overwritten with items drawn
/// uniformly from outside the list; the draw is keyed by
/// `(defense.seed, k, history)` so a given query always gets the same
/// response.
pub fn query_topk(
    model: &dyn Recommender,
    history: &[ItemId],
    k: usize,
    defense: &DefenseConfig,
) -> Result<TopKList> {
    let n = model.item_count();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k={k} outside 1..={n}")));
    }
    let scores = model.score_all(history)?;
    let mut items = rank_top_k(&scores, k);
    let replace = defense.replaced_positions(k).min(n - k);
    if replace > 0 {
        let mut rng = seed::rng(seed::hash_items(defense.seed ^ seed::mix(k as u64), history));
        let mut in_list = vec![false; n];
        for &i in &items {
            in_list[i as usize] = true;
        }
        let outside = n - k;
        for pos in sample(&mut rng, k, replace).into_vec() {
            // Draw uniformly from items never in the list so far.
            let taken = in_list.iter().filter(|&&b| b).count() - k;
            let mut r = rng.random_range(0..outside - taken);
            let fresh = in_list
                .iter()
                .enumerate()
                .filter(|(_, &b)| !b)
                .find_map(|(i, _)| {
                    if r == 0 {
                        Some(i)
                    } else {
                        r -= 1;
                        None
                    }
                })
                .expect("enough items outside the list");
            in_list[fresh] = true;
            items[pos] = fresh as ItemId;
        }
    }
    TopKList::new(items)
}

/// The order a defended service actually exposes: the served top-`k` list
/// first (in served order), then every other item by raw score.
///
/// Lets the ordinary metrics measure what users of a defended recommender
/// see.
pub struct ServedRanking<'a> {
    pub model: &'a dyn Recommender,
    pub k: usize,
    pub defense: DefenseConfig,
}

impl Recommender for ServedRanking<'_> {
    fn item_count(&self) -> usize {
        self.model.item_count()
    }

    fn score_all(&self, history: &[ItemId]) -> Result<Vec<f64>> {
        let mut scores = self.model.score_all(history)?;
        let served = query_topk(self.model, history, self.k, &self.defense)?;
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (pos, &item) in served.items().iter().enumerate() {
            scores[item as usize] = top + 1.0 + (self.k - pos) as f64;
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>);

    impl Recommender for Fixed {
        fn item_count(&self) -> usize {
            self.0.len()
        }
        fn score_all(&self, history: &[ItemId]) -> Result<Vec<f64>> {
            check_history(history, self.0.len())?;
            Ok(self.0.clone())
        }
    }

    #[test]
    fn argsort_and_ties() {
        let m = Fixed(vec![1.0, 2.0, 3.0]);
        assert_eq!(query_topk(&m, &[0], 2, &DefenseConfig::OFF).unwrap().items(), &[2, 1]);
        let m = Fixed(vec![5.0, 5.0, 5.0]);
        assert_eq!(query_topk(&m, &[0], 3, &DefenseConfig::OFF).unwrap().items(), &[0, 1, 2]);
    }

    #[test]
    fn k_out_of_range() {
        let m = Fixed(vec![1.0, 2.0, 3.0]);
        assert!(query_topk(&m, &[0], 0, &DefenseConfig::OFF).is_err());
        assert!(query_topk(&m, &[0], 4, &DefenseConfig::OFF).is_err());
        assert!(query_topk(&m, &[], 1, &DefenseConfig::OFF).is_err());
    }

    #[test]
    fn defense_replaces_floor_pk_positions() {
        let scores: Vec<f64> = (0..50).map(|i| -(i as f64)).collect();
        let m = Fixed(scores);
        let clean = query_topk(&m, &[3], 10, &DefenseConfig::OFF).unwrap();
        let def = DefenseConfig::with_fraction(0.1, 9);
        for h in 0..20u32 {
            let out = query_topk(&m, &[h], 10, &def).unwrap();
            assert_eq!(out.k(), 10);
            let changed = out.items().iter().zip(clean.items()).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 1);
            assert!(out.items().iter().all(|&i| i < 50));
            // Same query, same answer.
            assert_eq!(out, query_topk(&m, &[h], 10, &def).unwrap());
        }
        assert_eq!(DefenseConfig::with_fraction(0.1, 0).replaced_positions(100), 10);
        assert_eq!(DefenseConfig::with_fraction(0.0, 0).replaced_positions(100), 0);
        assert_eq!(DefenseConfig::OFF.replaced_positions(100), 0);
    }

    #[test]
    fn defense_cannot_replace_with_full_catalog() {
        let m = Fixed(vec![1.0, 2.0, 3.0]);
        let def = DefenseConfig::with_fraction(0.5, 1);
        assert_eq!(query_topk(&m, &[0], 3, &def).unwrap().items(), &[2, 1, 0]);
    }

    #[test]
    fn served_ranking_puts_served_list_first() {
        let scores: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let m = Fixed(scores);
        let def = DefenseConfig::with_fraction(0.2, 4);
        let served = query_topk(&m, &[1], 10, &def).unwrap();
        let wrapped = ServedRanking { model: &m, k: 10, defense: def };
        let order = query_topk(&wrapped, &[1], 20, &DefenseConfig::OFF).unwrap();
        assert_eq!(&order.items()[..10], served.items());
    }

    #[test]
    fn topk_list_rejects_duplicates() {
        assert!(TopKList::new(vec![1, 2, 1]).is_err());
        assert_eq!(TopKList::new(vec![4, 2]).unwrap().rank_of(2), Some(2));
    }
}
