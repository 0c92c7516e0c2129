use std::collections::BTreeMap;

use super::{check_history, Recommender};
use crate::corpus::{ItemId, SequenceDataset};
use crate::error::{Error, Result};

/// First-order transition counts blended with popularity.
///
/// `score(i | x) = count(last(x) → i) + α·pop(i)`. When the last item has
/// never been seen as a source the score falls back to `pop(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    pub(crate) alpha: f64,
    pub(crate) popularity: Vec<u64>,
    pub(crate) transitions: Vec<BTreeMap<ItemId, u64>>,
}

impl MarkovModel {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn transition_count(&self, from: ItemId, to: ItemId) -> u64 {
        self.transitions[from as usize]
            .get(&to)
            .copied()
            .unwrap_or(0)
    }

    pub fn popularity(&self, item: ItemId) -> u64 {
        self.popularity[item as usize]
    }
}

pub fn train_markov_target(data: &SequenceDataset, alpha: f64) -> Result<MarkovModel> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha must be non-negative"));
    }
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let n = data.item_count();
    let mut popularity = vec![0u64; n];
    let mut transitions = vec![BTreeMap::new(); n];
    for seq in data.sequences() {
        for &i in seq {
            popularity[i as usize] += 1;
        }
        for pair in seq.windows(2) {
            *transitions[pair[0] as usize].entry(pair[1]).or_insert(0) += 1;
        }
    }
    Ok(MarkovModel {
        alpha,
        popularity,
        transitions,
    })
}

impl Recommender for MarkovModel {
    fn item_count(&self) -> usize {
        self.popularity.len()
    }

    fn score_all(&self, history: &[ItemId]) -> Result<Vec<f64>> {
        check_history(history, self.item_count())?;
        let last = *history.last().expect("non-empty") as usize;
        let row = &self.transitions[last];
        let weight = if row.is_empty() { 1.0 } else { self.alpha };
        let mut scores: Vec<f64> = self.popularity.iter().map(|&p| weight * p as f64).collect();
        for (&to, &c) in row {
            scores[to as usize] += c as f64;
        }
        Ok(scores)
    }
}
