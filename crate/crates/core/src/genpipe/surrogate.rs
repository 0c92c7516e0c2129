//! Distillation pairs `(x, L̂^k(x))` and their on-disk form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, SequenceDataset};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::recsys::{query_topk, DefenseConfig, Recommender, TopKList};

const FORMAT: &str = "meabench-surrogate";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Agent,
    Random,
    Secret,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogatePair {
    pub sequence: Vec<ItemId>,
    pub list: TopKList,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDataset {
    pub item_count: usize,
    pub k: usize,
    /// Defense settings in force when the lists were collected.
    pub defense: DefenseConfig,
    pub pairs: Vec<SurrogatePair>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    item_count: usize,
    k: usize,
    defense: DefenseConfig,
}

impl SurrogateDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.pairs.iter().filter(|p| p.provenance == provenance).count()
    }

    /// The input sequences, for corpus-level statistics.
    pub fn sequences(&self) -> Result<SequenceDataset> {
        SequenceDataset::new(self.item_count, self.pairs.iter().map(|p| p.sequence.clone()).collect())
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            item_count: self.item_count,
            k: self.k,
            defense: self.defense,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(p).expect("pairs serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Header = lines
            .next()
            .and_then(|l| serde_json::from_str(l).ok())
            .ok_or_else(|| Error::Format("missing surrogate dataset header".into()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported surrogate dataset {} v{}",
                header.format, header.version
            )));
        }
        let mut pairs = Vec::new();
        for (i, l) in lines.enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            let p: SurrogatePair = serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            if p.list.k() != header.k || p.sequence.iter().chain(p.list.items()).any(|&i| i as usize >= header.item_count) {
                return Err(Error::Parse {
                    line: i + 2,
                    message: "pair does not match the header".into(),
                });
            }
            pairs.push(p);
        }
        Ok(SurrogateDataset {
            item_count: header.item_count,
            k: header.k,
            defense: header.defense,
            pairs,
        })
    }
}

pub fn save_surrogate_dataset(data: &SurrogateDataset, path: &Path) -> Result<()> {
    fs::write(path, data.to_jsonl()).map_err(|e| Error::io(path, e))
}

pub fn load_surrogate_dataset(path: &Path) -> Result<SurrogateDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SurrogateDataset::from_jsonl(&text)
}

/// Queries the target once per sequence. Pairs keep the order of
/// `sources`, and within a source the order of its sequences.
pub fn build_surrogate_dataset(
    target: &dyn Recommender,
    sources: &[(Provenance, &SequenceDataset)],
    k: usize,
    defense: &DefenseConfig,
    parallelism: Parallelism,
) -> Result<SurrogateDataset> {
    defense.validate()?;
    let inputs: Vec<(Provenance, &Vec<ItemId>)> = sources
        .iter()
        .flat_map(|(p, d)| d.sequences().iter().map(move |s| (*p, s)))
        .collect();
    let lists = par::map_indexed(inputs.len(), parallelism, |i| query_topk(target, inputs[i].1, k, defense));
    let pairs = inputs
        .iter()
        .zip(lists)
        .map(|((provenance, seq), list)| {
            Ok(SurrogatePair {
                sequence: (*seq).clone(),
                list: list?,
                provenance: *provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurrogateDataset {
        item_count: target.item_count(),
        k,
        defense: *defense,
        pairs,
    })
}

/// Short secret prefixes for the data-limited setting: the first `cap`
/// items of each of the first `users` sequences.
pub fn secret_prefixes(secret: &SequenceDataset, users: usize, cap: usize) -> Result<SequenceDataset> {
    if cap == 0 {
        return Err(Error::invalid("prefix cap must be positive"));
    }
    SequenceDataset::new(
        secret.item_count(),
        secret
            .sequences()
            .iter()
            .take(users)
            .map(|s| s[..s.len().min(cap)].to_vec())
            .collect(),
    )
}
