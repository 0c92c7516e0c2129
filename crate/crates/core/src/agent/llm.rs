use std::sync::Arc;

use super::chat::{ChatClient, ChatMessage};
use super::prompt::{parse_selection, preference_messages, selection_messages};
use super::{check_count, compress_memory, uniform_pick, AgentParams, AgentState, PreferenceProfile, Sampler, SamplerFactory, Selection};
use crate::corpus::{Catalog, ItemId};
use crate::error::{Error, Result};
use crate::recsys::TopKList;
use crate::seed::Rng;

/// Creates the user's preference summary with one chat call, or returns
/// the cached one. Fails if the history is still shorter than the
/// activation threshold.
pub fn stabilize_preference<'a>(
    client: &dyn ChatClient,
    state: &'a mut AgentState,
    catalog: &Catalog,
    platform: &str,
) -> Result<&'a PreferenceProfile> {
    if state.preference().is_none() {
        if state.history.len() < state.params.ps_threshold {
            return Err(Error::Precondition(format!(
                "history of length {} is shorter than the preference threshold {}",
                state.history.len(),
                state.params.ps_threshold
            )));
        }
        let messages = preference_messages(catalog, platform, &state.history);
        let summary = client.complete(&messages)?.trim().to_string();
        if summary.is_empty() {
            return Err(Error::Precondition("backend returned an empty preference summary".into()));
        }
        state.set_preference(PreferenceProfile {
            summary,
            created_at_length: state.history.len(),
        })?;
    }
    Ok(state.preference().expect("just set"))
}

/// An LLM-driven simulated user.
pub struct LlmAgent {
    client: Arc<dyn ChatClient>,
    catalog: Arc<Catalog>,
    platform: String,
}

impl LlmAgent {
    pub fn new(client: Arc<dyn ChatClient>, catalog: Arc<Catalog>, platform: impl Into<String>) -> Self {
        LlmAgent {
            client,
            catalog,
            platform: platform.into(),
        }
    }

    fn ask(&self, messages: &[ChatMessage], len: usize, count: usize) -> Result<Option<Vec<usize>>> {
        let reply = self.client.complete(messages)?;
        Ok(parse_selection(&reply, len, count))
    }
}

impl Sampler for LlmAgent {
    fn select(&mut self, state: &mut AgentState, presented: &TopKList, count: usize, rng: &mut Rng) -> Result<Selection> {
        check_count(presented, count)?;
        if state.wants_preference() {
            stabilize_preference(self.client.as_ref(), state, &self.catalog, &self.platform)?;
        }
        let memory = compress_memory(&state.history, state.params.mc_size);
        let preference = state.preference().map(|p| p.summary.as_str());
        for strict in [false, true] {
            let messages = selection_messages(
                &self.catalog,
                &self.platform,
                &memory,
                preference,
                presented.items(),
                count,
                strict,
            );
            if let Some(idx) = self.ask(&messages, presented.k(), count)? {
                return Ok(Selection {
                    chosen: idx.into_iter().map(|i| presented.items()[i]).collect(),
                    fallback: false,
                });
            }
        }
        log::warn!("agent reply unusable after reprompt; falling back to uniform choice");
        Ok(Selection {
            chosen: uniform_pick(presented, count, rng),
            fallback: true,
        })
    }
}

/// Runs one agent selection round and appends the chosen items to the
/// agent's history.
pub fn select_items(
    agent: &mut LlmAgent,
    state: &mut AgentState,
    presented: &TopKList,
    count: usize,
    rng: &mut Rng,
) -> Result<Selection> {
    let selection = agent.select(state, presented, count, rng)?;
    state.history.extend_from_slice(&selection.chosen);
    Ok(selection)
}

pub struct LlmAgentFactory {
    pub client: Arc<dyn ChatClient>,
    pub catalog: Arc<Catalog>,
    pub platform: String,
    pub params: AgentParams,
}

impl SamplerFactory for LlmAgentFactory {
    fn name(&self) -> &str {
        "llm"
    }

    fn params(&self) -> AgentParams {
        self.params
    }

    fn sampler(&self, _user: usize, _seed_item: ItemId, _rng: &mut Rng) -> Box<dyn Sampler> {
        Box::new(LlmAgent::new(
            Arc::clone(&self.client),
            Arc::clone(&self.catalog),
            self.platform.clone(),
        ))
    }
}
