use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_count, AgentParams, AgentState, Sampler, SamplerFactory, Selection};
use crate::corpus::{Catalog, ItemId};
use crate::error::{Error, Result};
use crate::recsys::TopKList;
use crate::seed::Rng;

/// Offline stand-in for an LLM user: category tastes plus a power-law
/// preference for items shown near the top of the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub category_weights: BTreeMap<String, f64>,
    /// Weight of categories not listed (and of items without a category).
    pub default_weight: f64,
    /// Position-bias exponent β ≥ 0.
    pub position_bias: f64,
}

impl Persona {
    pub fn uniform(position_bias: f64) -> Self {
        Persona {
            category_weights: BTreeMap::new(),
            default_weight: 1.0,
            position_bias,
        }
    }

    fn category_weight(&self, catalog: &Catalog, item: ItemId) -> f64 {
        catalog
            .category(item)
            .and_then(|c| self.category_weights.get(c))
            .copied()
            .unwrap_or(self.default_weight)
    }
}

/// Draws `count` items without replacement; the item at display position
/// `p` (1-based) has weight `category_weight · p^(-β)`. When every
/// remaining weight is zero the pick is uniform over what is left.
pub fn scripted_agent_select(
    persona: &Persona,
    catalog: &Catalog,
    presented: &TopKList,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<ItemId>> {
    check_count(presented, count)?;
    if !(persona.position_bias >= 0.0) {
        return Err(Error::invalid("position bias must be non-negative"));
    }
    let mut weights: Vec<f64> = presented
        .items()
        .iter()
        .enumerate()
        .map(|(p, &item)| {
            persona.category_weight(catalog, item).max(0.0) * ((p + 1) as f64).powf(-persona.position_bias)
        })
        .collect();
    let mut taken = vec![false; weights.len()];
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..taken.len()).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        taken[idx] = true;
        weights[idx] = 0.0;
        chosen.push(presented.items()[idx]);
    }
    Ok(chosen)
}

pub struct ScriptedAgent {
    pub persona: Persona,
    catalog: Arc<Catalog>,
}

impl ScriptedAgent {
    pub fn new(persona: Persona, catalog: Arc<Catalog>) -> Self {
        ScriptedAgent { persona, catalog }
    }
}

impl Sampler for ScriptedAgent {
    fn select(&mut self, _state: &mut AgentState, presented: &TopKList, count: usize, rng: &mut Rng) -> Result<Selection> {
        Ok(Selection {
            chosen: scripted_agent_select(&self.persona, &self.catalog, presented, count, rng)?,
            fallback: false,
        })
    }
}

/// Gives each generated user a persona that favours the category of the
/// user's seed item by `favourite_boost`.
#[derive(Debug, Clone)]
pub struct ScriptedFactory {
    pub catalog: Arc<Catalog>,
    pub position_bias: f64,
    pub favourite_boost: f64,
    pub params: AgentParams,
}

impl ScriptedFactory {
    pub fn persona_for(&self, seed_item: ItemId) -> Persona {
        let mut persona = Persona::uniform(self.position_bias);
        if let Some(cat) = self.catalog.category(seed_item) {
            persona
                .category_weights
                .insert(cat.to_string(), self.favourite_boost);
        }
        persona
    }
}

impl SamplerFactory for ScriptedFactory {
    fn name(&self) -> &str {
        "scripted"
    }

    fn params(&self) -> AgentParams {
        self.params
    }

    fn sampler(&self, _user: usize, seed_item: ItemId, _rng: &mut Rng) -> Box<dyn Sampler> {
        Box::new(ScriptedAgent::new(self.persona_for(seed_item), Arc::clone(&self.catalog)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ItemMeta;
    use crate::seed;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn two_category_catalog(n: usize) -> Catalog {
        Catalog::from_items(
            (0..n)
                .map(|i| ItemMeta {
                    title: None,
                    category: Some(if i % 2 == 0 { "even" } else { "odd" }.into()),
                })
                .collect(),
        )
        .unwrap()
    }

    fn chi_square_uniform_p(counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        let expected = total as f64 / counts.len() as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn single_candidate_is_chosen() {
        let catalog = Catalog::anonymous(4).unwrap();
        let list = TopKList::new(vec![3]).unwrap();
        let mut rng = seed::rng(0);
        let out = scripted_agent_select(&Persona::uniform(2.0), &catalog, &list, 1, &mut rng).unwrap();
        assert_eq!(out, vec![3]);
    }

    #[test]
    fn no_position_bias_is_uniform_over_positions() {
        let catalog = Catalog::anonymous(20).unwrap();
        let list = TopKList::new((0..10).collect()).unwrap();
        let mut rng = seed::rng(11);
        let mut counts = vec![0u64; 10];
        for _ in 0..10_000 {
            let out = scripted_agent_select(&Persona::uniform(0.0), &catalog, &list, 1, &mut rng).unwrap();
            counts[list.rank_of(out[0]).unwrap() - 1] += 1;
        }
        assert!(chi_square_uniform_p(&counts) > 0.01, "{counts:?}");
    }

    #[test]
    fn strong_position_bias_picks_the_top() {
        let catalog = Catalog::anonymous(20).unwrap();
        let list = TopKList::new((0..10).collect()).unwrap();
        let mut rng = seed::rng(12);
        let top = (0..1000)
            .filter(|_| {
                scripted_agent_select(&Persona::uniform(5.0), &catalog, &list, 1, &mut rng).unwrap()[0] == 0
            })
            .count();
        assert!(top > 950, "{top}");
    }

    #[test]
    fn category_preference_is_respected_when_available() {
        let catalog = two_category_catalog(20);
        let mut persona = Persona::uniform(1.0);
        persona.default_weight = 0.0;
        persona.category_weights.insert("odd".into(), 1.0);
        let list = TopKList::new((0..12).collect()).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..200 {
            let out = scripted_agent_select(&persona, &catalog, &list, 5, &mut rng).unwrap();
            assert!(out.iter().all(|&i| i % 2 == 1), "{out:?}");
        }
        // Only three odd items shown: the rest come from the other category.
        let list = TopKList::new(vec![0, 1, 2, 3, 4, 5, 6]).unwrap();
        let out = scripted_agent_select(&persona, &catalog, &list, 5, &mut rng).unwrap();
        assert_eq!(out.iter().filter(|&&i| i % 2 == 1).count(), 3);
        assert_eq!(out.len(), 5);
    }
}
