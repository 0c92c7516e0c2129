use rand::seq::index::sample;

use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::recsys::{ScoreModel, SparseGrad, TopKList};
use crate::seed::Rng;

/// Loss value and its partial derivatives with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub loss: f64,
    pub d_top: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// Two-term hinge ranking loss on the scores of a top-`k` list (in list
/// order) and of sampled negatives:
///
/// `1/(k-1) Σ_i max(0, s[i+1] - s[i] + λ1) + 1/k Σ_i max(0, neg[i] - s[i] + λ2)`
///
/// Negatives are paired with list positions cyclically. Without negatives
/// (possible only when the list covers the whole catalog) the second term
/// is zero.
pub fn distill_loss(s_top: &[f64], s_neg: &[f64], lambda1: f64, lambda2: f64) -> Result<f64> {
    Ok(distill_score_grad(s_top, s_neg, lambda1, lambda2)?.loss)
}

/// [`distill_loss`] together with its subgradient. A hinge whose argument
/// is exactly zero contributes nothing.
pub fn distill_score_grad(s_top: &[f64], s_neg: &[f64], lambda1: f64, lambda2: f64) -> Result<ScoreGrad> {
    let k = s_top.len();
    if k < 2 {
        return Err(Error::invalid(format!("ranking loss needs k >= 2, got {k}")));
    }
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::invalid("margins must be non-negative"));
    }
    let mut d_top = vec![0.0; k];
    let mut d_neg = vec![0.0; s_neg.len()];
    let w1 = 1.0 / (k - 1) as f64;
    let w2 = 1.0 / k as f64;
    let mut order = 0.0;
    for i in 0..k - 1 {
        let z = s_top[i + 1] - s_top[i] + lambda1;
        if z > 0.0 {
            order += z;
            d_top[i + 1] += w1;
            d_top[i] -= w1;
        }
    }
    let mut neg = 0.0;
    if !s_neg.is_empty() {
        for i in 0..k {
            let j = i % s_neg.len();
            let z = s_neg[j] - s_top[i] + lambda2;
            if z > 0.0 {
                neg += z;
                d_neg[j] += w2;
                d_top[i] -= w2;
            }
        }
    }
    Ok(ScoreGrad {
        loss: w1 * order + w2 * neg,
        d_top,
        d_neg,
    })
}

/// Loss and embedding gradient of the ranking loss for one pair.
pub fn distill_grad(
    model: &ScoreModel,
    sequence: &[ItemId],
    list: &TopKList,
    negatives: &[ItemId],
    lambda1: f64,
    lambda2: f64,
) -> Result<(f64, SparseGrad)> {
    let h = model.encode(sequence);
    let s_top: Vec<f64> = list.items().iter().map(|&i| model.score_item(&h, i)).collect();
    let s_neg: Vec<f64> = negatives.iter().map(|&i| model.score_item(&h, i)).collect();
    let g = distill_score_grad(&s_top, &s_neg, lambda1, lambda2)?;
    let score_grads: Vec<(ItemId, f64)> = list
        .items()
        .iter()
        .copied()
        .zip(g.d_top)
        .chain(negatives.iter().copied().zip(g.d_neg))
        .collect();
    let mut out = SparseGrad::new(model.dim());
    model.backprop(sequence, &h, &score_grads, &mut out);
    Ok((g.loss, out))
}

/// `n_neg` items drawn uniformly without replacement from outside the
/// list (all of them when fewer remain).
pub fn sample_negatives(item_count: usize, list: &TopKList, n_neg: usize, rng: &mut Rng) -> Result<Vec<ItemId>> {
    if item_count <= list.k() {
        return Err(Error::Precondition(format!(
            "no negatives left: |I|={item_count}, k={}",
            list.k()
        )));
    }
    let mut in_list = vec![false; item_count];
    for &i in list.items() {
        in_list[i as usize] = true;
    }
    let outside: Vec<ItemId> = (0..item_count as ItemId).filter(|&i| !in_list[i as usize]).collect();
    let n = n_neg.min(outside.len());
    Ok(sample(rng, outside.len(), n).into_iter().map(|j| outside[j]).collect())
}

/// Ranking agreement used for model selection: DCG of the surrogate list
/// with gain 1 for items in the target list, divided by the DCG of the
/// target list itself.
pub fn validation_ndcg(surrogate: &TopKList, target: &TopKList) -> Result<f64> {
    if surrogate.k() != target.k() {
        return Err(Error::invalid(format!(
            "list lengths differ: {} vs {}",
            surrogate.k(),
            target.k()
        )));
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = surrogate
        .items()
        .iter()
        .enumerate()
        .filter(|(_, &i)| target.contains(i))
        .map(|(r, _)| discount(r + 1))
        .sum();
    let ideal: f64 = (1..=target.k()).map(discount).sum();
    Ok(dcg / ideal)
}
