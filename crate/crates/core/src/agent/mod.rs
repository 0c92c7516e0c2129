//! Simulated users that pick items from a presented recommendation list.
//!
//! A [`Sampler`] is the decision rule used inside autoregressive
//! generation. Three are provided: uniform random choice, a scripted
//! persona with tunable position bias, and an LLM-driven agent that talks
//! to a chat-completions endpoint.

pub mod chat;
mod llm;
mod memory;
pub mod prompt;
mod scripted;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::recsys::TopKList;
use crate::seed::Rng;

pub use llm::{select_items, stabilize_preference, LlmAgent, LlmAgentFactory};
pub use memory::compress_memory;
pub use scripted::{scripted_agent_select, Persona, ScriptedAgent, ScriptedFactory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentParams {
    /// Memory capacity; longer histories are compressed to both ends.
    pub mc_size: usize,
    /// History length at which the preference summary is created.
    pub ps_threshold: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            mc_size: 10,
            ps_threshold: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    pub summary: String,
    pub created_at_length: usize,
}

/// Per-user state of a simulated user during generation.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub history: Vec<ItemId>,
    preference: Option<PreferenceProfile>,
    pub params: AgentParams,
}

impl AgentState {
    pub fn new(seed_item: ItemId, params: AgentParams) -> Self {
        AgentState {
            history: vec![seed_item],
            preference: None,
            params,
        }
    }

    pub fn with_history(history: Vec<ItemId>, params: AgentParams) -> Self {
        AgentState {
            history,
            preference: None,
            params,
        }
    }

    pub fn preference(&self) -> Option<&PreferenceProfile> {
        self.preference.as_ref()
    }

    /// Installs the preference summary. It can be set once.
    pub fn set_preference(&mut self, profile: PreferenceProfile) -> Result<()> {
        if self.preference.is_some() {
            return Err(Error::Precondition("preference already established".into()));
        }
        if profile.summary.trim().is_empty() {
            return Err(Error::Precondition("empty preference summary".into()));
        }
        self.preference = Some(profile);
        Ok(())
    }

    pub fn wants_preference(&self) -> bool {
        self.preference.is_none() && self.history.len() >= self.params.ps_threshold
    }
}

/// Items chosen in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub chosen: Vec<ItemId>,
    /// The sampler could not produce a valid answer and picked uniformly.
    pub fallback: bool,
}

/// One round of selection as it appears in the query log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub round: usize,
    /// The list as shown to the user (after any shuffling).
    pub presented: TopKList,
    pub chosen: Vec<ItemId>,
    /// 1-based positions of the chosen items in `presented`.
    pub chosen_display_positions: Vec<usize>,
    /// 1-based ranks of the chosen items in the unshuffled list.
    pub chosen_original_ranks: Vec<usize>,
    #[serde(default)]
    pub fallback: bool,
}

impl SelectionRecord {
    pub fn new(round: usize, original: &TopKList, presented: TopKList, selection: Selection) -> Result<Self> {
        let locate = |list: &TopKList, item: ItemId| {
            list.rank_of(item)
                .ok_or_else(|| Error::Precondition(format!("chosen item {item} was not presented")))
        };
        let chosen_display_positions = selection
            .chosen
            .iter()
            .map(|&i| locate(&presented, i))
            .collect::<Result<Vec<_>>>()?;
        let chosen_original_ranks = selection
            .chosen
            .iter()
            .map(|&i| locate(original, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(SelectionRecord {
            round,
            presented,
            chosen: selection.chosen,
            chosen_display_positions,
            chosen_original_ranks,
            fallback: selection.fallback,
        })
    }
}

/// Decision rule of a simulated user.
pub trait Sampler: Send {
    fn select(&mut self, state: &mut AgentState, presented: &TopKList, count: usize, rng: &mut Rng) -> Result<Selection>;
}

/// Builds one sampler per generated user.
pub trait SamplerFactory: Sync {
    fn name(&self) -> &str;

    fn params(&self) -> AgentParams {
        AgentParams::default()
    }

    fn sampler(&self, user: usize, seed_item: ItemId, rng: &mut Rng) -> Box<dyn Sampler>;
}

pub(crate) fn check_count(presented: &TopKList, count: usize) -> Result<()> {
    if count == 0 || count > presented.k() {
        return Err(Error::Precondition(format!(
            "cannot select {count} items from a list of {}",
            presented.k()
        )));
    }
    Ok(())
}

pub(crate) fn uniform_pick(presented: &TopKList, count: usize, rng: &mut Rng) -> Vec<ItemId> {
    sample(rng, presented.k(), count)
        .into_iter()
        .map(|i| presented.items()[i])
        .collect()
}

/// Uniform choice from the presented list (the random-sampler baseline).
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomChoice;

impl Sampler for RandomChoice {
    fn select(&mut self, _state: &mut AgentState, presented: &TopKList, count: usize, rng: &mut Rng) -> Result<Selection> {
        check_count(presented, count)?;
        Ok(Selection {
            chosen: uniform_pick(presented, count, rng),
            fallback: false,
        })
    }
}

impl SamplerFactory for RandomChoice {
    fn name(&self) -> &str {
        "random-choice"
    }

    fn sampler(&self, _user: usize, _seed_item: ItemId, _rng: &mut Rng) -> Box<dyn Sampler> {
        Box::new(RandomChoice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn preference_is_set_once() {
        let mut state = AgentState::new(0, AgentParams::default());
        let p = PreferenceProfile {
            summary: "likes puzzles".into(),
            created_at_length: 5,
        };
        state.set_preference(p.clone()).unwrap();
        assert!(state.set_preference(p).is_err());
        assert_eq!(state.preference().unwrap().summary, "likes puzzles");
    }

    #[test]
    fn random_choice_stays_in_list() {
        let list = TopKList::new(vec![5, 9, 2, 7]).unwrap();
        let mut rng = seed::rng(1);
        let mut state = AgentState::new(5, AgentParams::default());
        for _ in 0..100 {
            let sel = RandomChoice.select(&mut state, &list, 3, &mut rng).unwrap();
            assert_eq!(sel.chosen.len(), 3);
            assert!(sel.chosen.iter().all(|i| list.contains(*i)));
        }
        assert!(RandomChoice.select(&mut state, &list, 5, &mut rng).is_err());
    }

    #[test]
    fn record_positions() {
        let original = TopKList::new(vec![10, 11, 12]).unwrap();
        let shown = TopKList::new(vec![12, 10, 11]).unwrap();
        let sel = Selection {
            chosen: vec![11],
            fallback: false,
        };
        let rec = SelectionRecord::new(0, &original, shown, sel).unwrap();
        assert_eq!(rec.chosen_display_positions, vec![3]);
        assert_eq!(rec.chosen_original_ranks, vec![2]);
    }
}
