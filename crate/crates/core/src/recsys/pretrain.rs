use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Recommender, ScoreModel, SparseGrad};
use crate::corpus::{ItemId, SequenceDataset};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::par::{self, Parallelism};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub neg_per_pos: usize,
    pub batch_size: usize,
    /// Only the most recent `max_history` items of a prefix are encoded.
    pub max_history: usize,
    pub seed: u64,
}

impl Default for TargetTrainConfig {
    fn default() -> Self {
        TargetTrainConfig {
            epochs: 30,
            learning_rate: 0.01,
            neg_per_pos: 4,
            batch_size: 128,
            max_history: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Mean loss per epoch.
    pub loss: Vec<f64>,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean of `softplus(s_neg − s_pos)` over the negatives and its gradient
/// with respect to the embeddings.
pub fn bpr_loss_and_grad(
    model: &ScoreModel,
    history: &[ItemId],
    positive: ItemId,
    negatives: &[ItemId],
) -> (f64, SparseGrad) {
    let h = model.encode(history);
    let s_pos = model.score_item(&h, positive);
    let n = negatives.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(negatives.len() + 1);
    let mut g_pos = 0.0;
    for &neg in negatives {
        let z = model.score_item(&h, neg) - s_pos;
        loss += softplus(z) / n;
        let g = sigmoid(z) / n;
        grads.push((neg, g));
        g_pos -= g;
    }
    grads.push((positive, g_pos));
    let mut out = SparseGrad::new(model.dim());
    model.backprop(history, &h, &grads, &mut out);
    (loss, out)
}

/// Pairwise (BPR-style) training of a target model on next-item prediction:
/// every prefix of every sequence predicts the item that follows it,
/// against `neg_per_pos` uniformly sampled negatives.
pub fn pretrain_target(
    mut model: ScoreModel,
    data: &SequenceDataset,
    cfg: &TargetTrainConfig,
    parallelism: Parallelism,
) -> Result<(ScoreModel, TrainTrace)> {
    if data.is_empty() {
        return Err(Error::Empty("target training data"));
    }
    if data.item_count() != Recommender::item_count(&model) {
        return Err(Error::invalid("dataset and model disagree on item count"));
    }
    if cfg.neg_per_pos == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("neg_per_pos and batch_size must be positive"));
    }
    let n_items = data.item_count();
    let mut examples: Vec<(usize, usize)> = Vec::new();
    for (u, seq) in data.sequences().iter().enumerate() {
        for t in 1..seq.len() {
            examples.push((u, t));
        }
    }
    let mut trace = TrainTrace::default();
    if examples.is_empty() || cfg.epochs == 0 {
        return Ok((model, trace));
    }
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: 0.0,
        warmup_steps: 0,
        ..AdamConfig::default()
    };
    let mut opt = Adam::new(adam_cfg, model.embeddings().len());
    let mut order_rng = seed::rng(seed::derive(cfg.seed, "pretrain-order"));
    let neg_seed = seed::derive(cfg.seed, "pretrain-negatives");
    let mut dense = vec![0.0; model.embeddings().len()];
    let mut step: u64 = 0;
    for _epoch in 0..cfg.epochs {
        examples.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in examples.chunks(cfg.batch_size) {
            let batch_seed = seed::mix(neg_seed ^ step);
            let results = par::map_indexed(batch.len(), parallelism, |b| {
                let (u, t) = batch[b];
                let seq = &data.sequences()[u];
                let start = t.saturating_sub(cfg.max_history);
                let positive = seq[t];
                let mut rng = seed::stream(batch_seed, b as u64);
                let negatives: Vec<ItemId> = (0..cfg.neg_per_pos)
                    .map(|_| loop {
                        let j = rng.random_range(0..n_items) as ItemId;
                        if j != positive {
                            break j;
                        }
                    })
                    .collect();
                bpr_loss_and_grad(&model, &seq[start..t], positive, &negatives)
            });
            dense.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for (loss, grad) in &results {
                epoch_loss += loss;
                grad.accumulate(&mut dense, scale);
            }
            opt.step(model.embeddings_mut(), &dense);
            step += 1;
        }
        trace.loss.push(epoch_loss / examples.len() as f64);
    }
    Ok((model, trace))
}
