//! Ranking distillation of a surrogate [`ScoreModel`] from
//! `(sequence, top-k list)` pairs.

mod loss;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genpipe::SurrogateDataset;
use crate::optim::{Adam, AdamConfig};
use crate::par::{self, Parallelism};
use crate::recsys::{rank_top_k, Recommender, ScoreModel, TopKList};
use crate::seed;

pub use loss::{distill_grad, distill_loss, distill_score_grad, sample_negatives, validation_ndcg, ScoreGrad};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Margin between consecutive list items.
    pub lambda1: f64,
    /// Margin between list items and negatives.
    pub lambda2: f64,
    /// Negatives per pair; `None` uses the list length.
    pub negatives_per_pair: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Share of pairs held out for model selection.
    pub validation_fraction: f64,
    /// Return the parameters of the epoch with the best validation NDCG
    /// instead of the last epoch.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda1: 0.5,
            lambda2: 0.5,
            negatives_per_pair: None,
            epochs: 300,
            batch_size: 128,
            optimizer: AdamConfig::default(),
            validation_fraction: 0.05,
            keep_best: true,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::invalid("margins must be non-negative"));
        }
        if self.negatives_per_pair == Some(0) {
            return Err(Error::invalid("negatives_per_pair must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must be in [0,1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillTrace {
    /// Mean training loss per epoch.
    pub loss: Vec<f64>,
    /// Mean validation NDCG per epoch.
    pub val_ndcg: Vec<f64>,
    /// Epoch (0-based) whose parameters were returned, if any ran.
    pub selected_epoch: Option<usize>,
}

impl DistillTrace {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\tval_ndcg\n");
        for (e, (l, v)) in self.loss.iter().zip(&self.val_ndcg).enumerate() {
            let _ = writeln!(out, "{}\t{l}\t{v}", e + 1);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSurrogate {
    pub model: ScoreModel,
    pub trace: DistillTrace,
}

/// Mean validation NDCG of `model` over the given pairs.
fn mean_ndcg(model: &ScoreModel, data: &SurrogateDataset, idx: &[usize], par: Parallelism) -> Result<f64> {
    let vals = par::map_indexed(idx.len(), par, |j| {
        let pair = &data.pairs[idx[j]];
        let scores = model.score_all(&pair.sequence)?;
        let ours = TopKList::new(rank_top_k(&scores, pair.list.k()))?;
        validation_ndcg(&ours, &pair.list)
    });
    let mut total = 0.0;
    for v in vals {
        total += v?;
    }
    Ok(total / idx.len() as f64)
}

/// Fits `init` to the pairs of `data` by minimising the ranking loss.
///
/// A `validation_fraction` share of pairs (at least one when there are
/// two or more pairs) is held out; with a single pair the metric is taken
/// on the training pair. Per-example gradients may be computed in
/// parallel but are summed in a fixed order, so the result depends only
/// on the seed.
pub fn train_surrogate(
    data: &SurrogateDataset,
    init: ScoreModel,
    cfg: &DistillConfig,
    parallelism: Parallelism,
) -> Result<TrainedSurrogate> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("surrogate dataset"));
    }
    let n_items = Recommender::item_count(&init);
    if data.item_count != n_items {
        return Err(Error::invalid("surrogate data and model disagree on item count"));
    }
    if data.k < 2 || data.k > n_items {
        return Err(Error::invalid(format!(
            "distillation needs 2 <= k <= |I|, got k={}, |I|={n_items}",
            data.k
        )));
    }
    let n_neg = cfg.negatives_per_pair.unwrap_or(data.k);

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(cfg.seed, "distill-split")));
    let n_val = if data.len() >= 2 {
        ((cfg.validation_fraction * data.len() as f64).round() as usize).clamp(1, data.len() - 1)
    } else {
        0
    };
    let val_idx: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    let metric_idx = if val_idx.is_empty() { train_idx.clone() } else { val_idx };

    let mut model = init;
    let mut trace = DistillTrace::default();
    if cfg.epochs == 0 {
        return Ok(TrainedSurrogate { model, trace });
    }
    let mut best: Option<(f64, ScoreModel)> = None;
    let mut opt = Adam::new(cfg.optimizer, model.embeddings().len());
    let mut order_rng = seed::rng(seed::derive(cfg.seed, "distill-order"));
    let neg_seed = seed::derive(cfg.seed, "distill-negatives");
    let mut dense = vec![0.0; model.embeddings().len()];
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let batch_seed = seed::mix(neg_seed ^ step);
            let current = &model;
            let results = par::map_indexed(batch.len(), parallelism, |b| {
                let pair = &data.pairs[batch[b]];
                let mut rng = seed::stream(batch_seed, b as u64);
                let negatives = if pair.list.k() < n_items {
                    sample_negatives(n_items, &pair.list, n_neg, &mut rng)?
                } else {
                    Vec::new()
                };
                distill_grad(current, &pair.sequence, &pair.list, &negatives, cfg.lambda1, cfg.lambda2)
            });
            dense.iter_mut().for_each(|x| *x = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, grad) = r?;
                epoch_loss += loss;
                grad.accumulate(&mut dense, scale);
            }
            opt.step(model.embeddings_mut(), &dense);
            step += 1;
        }
        trace.loss.push(epoch_loss / train_idx.len() as f64);
        let ndcg = mean_ndcg(&model, data, &metric_idx, parallelism)?;
        trace.val_ndcg.push(ndcg);
        if cfg.keep_best {
            if best.as_ref().is_none_or(|(b, _)| ndcg > *b) {
                best = Some((ndcg, model.clone()));
                trace.selected_epoch = Some(epoch);
            }
        } else {
            trace.selected_epoch = Some(epoch);
        }
        log::debug!("distill epoch {} loss {:.5} val_ndcg {:.4}", epoch + 1, trace.loss[epoch], ndcg);
    }
    if let Some((_, m)) = best {
        model = m;
    }
    Ok(TrainedSurrogate { model, trace })
}
