use rand::Rng as _;

use super::{check_history, Recommender};
use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::seed;

/// Embedding model scoring `score(x, i) = ⟨h(x), E_i⟩`, where `h(x)` is the
/// exponentially decayed average of the history's embeddings: position `j`
/// of a length-`T` history gets weight `γ^(T-1-j)`, normalised to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    item_count: usize,
    dim: usize,
    gamma: f64,
    embeddings: Vec<f64>,
}

/// Gradient rows for a subset of items. Rows may repeat; they add up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    dim: usize,
    rows: Vec<ItemId>,
    values: Vec<f64>,
}

impl SparseGrad {
    pub fn new(dim: usize) -> Self {
        SparseGrad {
            dim,
            ..Default::default()
        }
    }

    pub fn add_row(&mut self, item: ItemId, scale: f64, v: &[f64]) {
        self.rows.push(item);
        self.values.extend(v.iter().map(|x| scale * x));
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds `scale ×` this gradient into a dense `|I|×d` buffer.
    pub fn accumulate(&self, dense: &mut [f64], scale: f64) {
        for (r, &item) in self.rows.iter().enumerate() {
            let src = &self.values[r * self.dim..(r + 1) * self.dim];
            let dst = &mut dense[item as usize * self.dim..(item as usize + 1) * self.dim];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn to_dense(&self, item_count: usize) -> Vec<f64> {
        let mut dense = vec![0.0; item_count * self.dim];
        self.accumulate(&mut dense, 1.0);
        dense
    }
}

pub fn init_score_model(item_count: usize, dim: usize, gamma: f64, seed: u64) -> Result<ScoreModel> {
    if dim < 1 {
        return Err(Error::invalid("embedding dim must be at least 1"));
    }
    let bound = 0.1 / (dim as f64).sqrt();
    let mut rng = seed::rng(seed);
    let embeddings = (0..item_count * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    ScoreModel::from_parts(item_count, dim, gamma, embeddings)
}

impl ScoreModel {
    pub fn from_parts(item_count: usize, dim: usize, gamma: f64, embeddings: Vec<f64>) -> Result<Self> {
        if item_count < 2 {
            return Err(Error::invalid("need at least 2 items"));
        }
        if dim < 1 {
            return Err(Error::invalid("embedding dim must be at least 1"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must be in (0,1], got {gamma}")));
        }
        if embeddings.len() != item_count * dim {
            return Err(Error::invalid("embedding matrix has wrong size"));
        }
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite embedding"));
        }
        Ok(ScoreModel {
            item_count,
            dim,
            gamma,
            embeddings,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut [f64] {
        &mut self.embeddings
    }

    pub fn embedding(&self, item: ItemId) -> &[f64] {
        let i = item as usize;
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// Normalised position weights for a history of length `len`.
    pub fn position_weights(&self, len: usize) -> Vec<f64> {
        let mut w: Vec<f64> = (0..len)
            .map(|j| self.gamma.powi((len - 1 - j) as i32))
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        w
    }

    /// History representation `h(x)`.
    pub fn encode(&self, history: &[ItemId]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for (&item, w) in history.iter().zip(self.position_weights(history.len())) {
            for (a, e) in h.iter_mut().zip(self.embedding(item)) {
                *a += w * e;
            }
        }
        h
    }

    pub fn score_item(&self, h: &[f64], item: ItemId) -> f64 {
        h.iter().zip(self.embedding(item)).map(|(a, b)| a * b).sum()
    }

    /// Back-propagates `∂L/∂s_i` for the listed items through the scoring
    /// formula. `h` must be `self.encode(history)`.
    pub fn backprop(&self, history: &[ItemId], h: &[f64], score_grads: &[(ItemId, f64)], out: &mut SparseGrad) {
        let mut dh = vec![0.0; self.dim];
        for &(item, g) in score_grads {
            if g == 0.0 {
                continue;
            }
            out.add_row(item, g, h);
            for (a, e) in dh.iter_mut().zip(self.embedding(item)) {
                *a += g * e;
            }
        }
        if dh.iter().all(|&x| x == 0.0) {
            return;
        }
        for (&item, w) in history.iter().zip(self.position_weights(history.len())) {
            out.add_row(item, w, &dh);
        }
    }
}

impl Recommender for ScoreModel {
    fn item_count(&self) -> usize {
        self.item_count
    }

    fn score_all(&self, history: &[ItemId]) -> Result<Vec<f64>> {
        check_history(history, self.item_count)?;
        let h = self.encode(history);
        Ok(self
            .embeddings
            .chunks_exact(self.dim)
            .map(|e| e.iter().zip(&h).map(|(a, b)| a * b).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recsys::{query_topk, DefenseConfig};

    #[test]
    fn hand_computed_scores() {
        let m = ScoreModel::from_parts(3, 1, 1.0, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.score_all(&[0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let zero = ScoreModel::from_parts(3, 2, 0.5, vec![0.0; 6]).unwrap();
        assert_eq!(zero.score_all(&[0, 1]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn decayed_average() {
        let m = ScoreModel::from_parts(2, 1, 0.5, vec![1.0, 4.0]).unwrap();
        // weights 1/3 on item 0, 2/3 on item 1
        let h = m.encode(&[0, 1]);
        assert!((h[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_score_model(20, 4, 0.9, 1).unwrap();
        assert_eq!(a, init_score_model(20, 4, 0.9, 1).unwrap());
        assert_ne!(a, init_score_model(20, 4, 0.9, 2).unwrap());
        let bound = 0.1 / 2.0;
        assert!(a.embeddings().iter().all(|x| x.abs() <= bound));
        assert!(init_score_model(20, 0, 0.9, 1).is_err());
        assert!(init_score_model(20, 2, 0.0, 1).is_err());
    }

    #[test]
    fn ranking_invariant_under_positive_scaling() {
        let a = init_score_model(30, 4, 0.8, 3).unwrap();
        let scaled: Vec<f64> = a.embeddings().iter().map(|x| 3.0 * x).collect();
        let b = ScoreModel::from_parts(30, 4, 0.8, scaled).unwrap();
        for h in [vec![1], vec![4, 7, 2]] {
            assert_eq!(
                query_topk(&a, &h, 10, &DefenseConfig::OFF).unwrap(),
                query_topk(&b, &h, 10, &DefenseConfig::OFF).unwrap()
            );
        }
    }
}
