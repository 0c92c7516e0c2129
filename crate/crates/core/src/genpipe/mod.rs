//! Surrogate-data generation.
//!
//! Sequences come from three places: uniform random sampling, an
//! autoregressive loop where a simulated user repeatedly picks from the
//! target's recommendations, and (in the data-limited setting) short
//! prefixes of secret sequences. [`build_surrogate_dataset`] queries the
//! target once per sequence to form the distillation pairs.

mod coupon;
mod surrogate;

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentState, SamplerFactory, SelectionRecord};
use crate::corpus::{Catalog, ItemId, SequenceDataset};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::recsys::{query_topk, DefenseConfig, Recommender, TopKList};
use crate::seed::{self, Rng};

pub use coupon::{expected_queries, plan_exposure_mix, simulate_collection, ExposurePlan};
pub use surrogate::{
    build_surrogate_dataset, load_surrogate_dataset, save_surrogate_dataset, secret_prefixes, Provenance,
    SurrogateDataset, SurrogatePair,
};

const QUERY_LOG_HEADER: &str = "meabench-querylog 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    /// Number of generated users `B`.
    pub num_sequences: usize,
    #[serde(default = "GenerationConfig::default_target_length")]
    pub target_length: usize,
    #[serde(default = "GenerationConfig::default_k")]
    pub k: usize,
    #[serde(default = "GenerationConfig::default_items_per_query")]
    pub items_per_query: usize,
    /// Shuffle every list before showing it to the sampler.
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default)]
    pub seed: u64,
}

impl GenerationConfig {
    fn default_target_length() -> usize {
        50
    }
    fn default_k() -> usize {
        100
    }
    fn default_items_per_query() -> usize {
        5
    }

    pub fn new(num_sequences: usize, seed: u64) -> Self {
        GenerationConfig {
            num_sequences,
            target_length: 50,
            k: 100,
            items_per_query: 5,
            shuffle: false,
            seed,
        }
    }

    pub fn validate(&self, item_count: usize) -> Result<()> {
        if self.num_sequences == 0 {
            return Err(Error::invalid("num_sequences must be at least 1"));
        }
        if self.target_length < 2 {
            return Err(Error::invalid("target_length must be at least 2"));
        }
        if !(1 <= self.items_per_query && self.items_per_query <= self.k && self.k <= item_count) {
            return Err(Error::invalid(format!(
                "need 1 <= items_per_query ({}) <= k ({}) <= |I| ({item_count})",
                self.items_per_query, self.k
            )));
        }
        Ok(())
    }
}

/// Sequences whose items are i.i.d. uniform over the catalog.
pub fn generate_random_sequences(catalog: &Catalog, count: usize, length: usize, rng: &mut Rng) -> Result<SequenceDataset> {
    if length == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    let n = catalog.len();
    let sequences = (0..count)
        .map(|_| (0..length).map(|_| rng.random_range(0..n) as ItemId).collect())
        .collect();
    SequenceDataset::new(n, sequences)
}

/// One target query issued during generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub user: usize,
    pub round: usize,
    pub prefix_len: usize,
    /// The target's response before presentation shuffling.
    pub list: TopKList,
    pub selection: SelectionRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLog {
    pub records: Vec<QueryRecord>,
}

impl QueryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records ordered by (round, user): the order used for coverage curves.
    pub fn by_round(&self) -> Vec<&QueryRecord> {
        let mut out: Vec<&QueryRecord> = self.records.iter().collect();
        out.sort_by_key(|r| (r.round, r.user));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::from(QUERY_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("query records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(QUERY_LOG_HEADER) => {}
            other => {
                return Err(Error::Format(format!(
                    "expected header `{QUERY_LOG_HEADER}`, found {other:?}"
                )))
            }
        }
        let records = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 2,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(QueryLog { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Result of autoregressive generation. Sequences are in user order;
/// failed users are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: SequenceDataset,
    pub log: QueryLog,
    /// Users whose sampler failed; their partial sequences were discarded.
    pub failed_users: Vec<usize>,
    /// Selection rounds where the sampler fell back to uniform choice.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GenerationOptions {
    pub parallelism: Parallelism,
    /// Completed users are appended here and skipped on a rerun.
    pub resume_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UserResult {
    user: usize,
    sequence: Vec<ItemId>,
    records: Vec<QueryRecord>,
}

/// Runs the query-select-append loop for `cfg.num_sequences` users.
///
/// Every user starts from a uniformly drawn seed item and owns a random
/// stream derived from `(cfg.seed, user)`, so the output does not depend
/// on the degree of parallelism. Target errors abort the run; sampler
/// errors abort only the affected user.
pub fn generate_autoregressive(
    target: &dyn Recommender,
    factory: &dyn SamplerFactory,
    cfg: &GenerationConfig,
    defense: &DefenseConfig,
    opts: &GenerationOptions,
) -> Result<Generated> {
    let n = target.item_count();
    cfg.validate(n)?;
    defense.validate()?;
    let mut done = match &opts.resume_file {
        Some(path) => load_resume(path)?,
        None => Vec::new(),
    };
    done.retain(|r| r.user < cfg.num_sequences);
    let finished: BTreeSet<usize> = done.iter().map(|r| r.user).collect();
    let sink = match &opts.resume_file {
        Some(path) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        )),
        None => None,
    };
    let todo: Vec<usize> = (0..cfg.num_sequences).filter(|u| !finished.contains(u)).collect();
    let stream_seed = seed::derive(cfg.seed, "generate");
    let results = par::map_indexed(todo.len(), opts.parallelism, |j| -> Result<Option<(UserResult, usize)>> {
        let user = todo[j];
        let out = generate_user(target, factory, cfg, defense, stream_seed, user)?;
        if let (Some((res, _)), Some(sink)) = (&out, &sink) {
            let line = serde_json::to_string(res).expect("user results serialize");
            let mut f = sink.lock().expect("resume file lock");
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| {
                Error::io(opts.resume_file.as_deref().unwrap_or(Path::new("")), e)
            })?;
        }
        Ok(out)
    });
    let mut all: Vec<Option<UserResult>> = (0..cfg.num_sequences).map(|_| None).collect();
    let mut fallbacks = 0;
    for r in done {
        fallbacks += r.records.iter().filter(|q| q.selection.fallback).count();
        let u = r.user;
        all[u] = Some(r);
    }
    for (j, res) in results.into_iter().enumerate() {
        if let Some((r, fb)) = res? {
            fallbacks += fb;
            all[todo[j]] = Some(r);
        }
    }
    let mut sequences = Vec::new();
    let mut records = Vec::new();
    let mut failed_users = Vec::new();
    for (u, r) in all.into_iter().enumerate() {
        match r {
            Some(r) => {
                sequences.push(r.sequence);
                records.extend(r.records);
            }
            None => failed_users.push(u),
        }
    }
    if !failed_users.is_empty() {
        log::warn!("{} generated users failed and were discarded", failed_users.len());
    }
    Ok(Generated {
        dataset: SequenceDataset::new(n, sequences)?,
        log: QueryLog { records },
        failed_users,
        fallbacks,
    })
}

fn generate_user(
    target: &dyn Recommender,
    factory: &dyn SamplerFactory,
    cfg: &GenerationConfig,
    defense: &DefenseConfig,
    stream_seed: u64,
    user: usize,
) -> Result<Option<(UserResult, usize)>> {
    let mut rng = seed::stream(stream_seed, user as u64);
    let seed_item = rng.random_range(0..target.item_count()) as ItemId;
    let mut sampler = factory.sampler(user, seed_item, &mut rng);
    let mut state = AgentState::new(seed_item, factory.params());
    let mut records = Vec::new();
    let mut fallbacks = 0;
    let mut round = 0;
    while state.history.len() < cfg.target_length {
        let list = query_topk(target, &state.history, cfg.k, defense)?;
        let mut shown = list.items().to_vec();
        if cfg.shuffle {
            shown.shuffle(&mut rng);
        }
        let presented = TopKList::new(shown)?;
        let count = cfg.items_per_query.min(cfg.target_length - state.history.len());
        let selection = match sampler.select(&mut state, &presented, count, &mut rng) {
            Ok(s) => s,
            Err(err) => {
                log::warn!("user {user} aborted in round {round}: {err}");
                return Ok(None);
            }
        };
        fallbacks += usize::from(selection.fallback);
        let prefix_len = state.history.len();
        let record = SelectionRecord::new(round, &list, presented, selection)?;
        state.history.extend_from_slice(&record.chosen);
        records.push(QueryRecord {
            user,
            round,
            prefix_len,
            list,
            selection: record,
        });
        round += 1;
    }
    Ok(Some((
        UserResult {
            user,
            sequence: state.history,
            records,
        },
        fallbacks,
    )))
}

fn load_resume(path: &Path) -> Result<Vec<UserResult>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out: Vec<UserResult> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        // A torn final line from an interrupted run is ignored.
        if let Ok(r) = serde_json::from_str::<UserResult>(&line) {
            if !out.iter().any(|o| o.user == r.user) {
                out.push(r);
            }
        }
    }
    Ok(out)
}
