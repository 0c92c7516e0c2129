//! Versioned text checkpoints. Floats are written with Rust's shortest
//! round-trip formatting, so save → load is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MarkovModel, Recommender, ScoreModel};
use crate::corpus::ItemId;
use crate::error::{Error, Result};

const MAGIC: &str = "meabench-checkpoint 1";

/// A trained recommender of either supported kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Markov(MarkovModel),
    Score(ScoreModel),
}

impl Model {
    pub fn as_score_model(&self) -> Option<&ScoreModel> {
        match self {
            Model::Score(m) => Some(m),
            Model::Markov(_) => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Markov(_) => "markov",
            Model::Score(_) => "score",
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nkind {}\nitems {}\n", self.kind(), self.item_count());
        match self {
            Model::Score(m) => {
                let _ = writeln!(out, "dim {}\ngamma {:?}", m.dim(), m.gamma());
                for row in m.embeddings().chunks_exact(m.dim()) {
                    let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
                    out.push_str(&cells.join(" "));
                    out.push('\n');
                }
            }
            Model::Markov(m) => {
                let _ = writeln!(out, "alpha {:?}", m.alpha);
                let pops: Vec<String> = m.popularity.iter().map(u64::to_string).collect();
                let _ = writeln!(out, "pop {}", pops.join(" "));
                for (from, row) in m.transitions.iter().enumerate() {
                    if row.is_empty() {
                        continue;
                    }
                    let _ = write!(out, "t {from}");
                    for (to, c) in row {
                        let _ = write!(out, " {to}:{c}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("checkpoint truncated before {what}")))
        };
        let (_, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("unsupported checkpoint header `{magic}`")));
        }
        let kind = header_value(next("kind")?, "kind")?.to_string();
        let items: usize = parse(header_value(next("items")?, "items")?, "items")?;
        match kind.as_str() {
            "score" => {
                let dim: usize = parse(header_value(next("dim")?, "dim")?, "dim")?;
                let gamma: f64 = parse(header_value(next("gamma")?, "gamma")?, "gamma")?;
                let mut emb = Vec::with_capacity(items * dim);
                for _ in 0..items {
                    let (line_no, row) = next("embedding row")?;
                    let before = emb.len();
                    for tok in row.split_whitespace() {
                        emb.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                            line: line_no,
                            message: format!("bad float `{tok}`"),
                        })?);
                    }
                    if emb.len() - before != dim {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("expected {dim} values"),
                        });
                    }
                }
                Ok(Model::Score(ScoreModel::from_parts(items, dim, gamma, emb)?))
            }
            "markov" => {
                let alpha: f64 = parse(header_value(next("alpha")?, "alpha")?, "alpha")?;
                let pop_line = header_value(next("pop")?, "pop")?;
                let popularity = pop_line
                    .split_whitespace()
                    .map(|t| parse::<u64>(t, "pop"))
                    .collect::<Result<Vec<_>>>()?;
                if popularity.len() != items {
                    return Err(Error::Format("popularity length mismatch".into()));
                }
                let mut transitions = vec![BTreeMap::new(); items];
                for (line_no, line) in lines {
                    if line.is_empty() {
                        continue;
                    }
                    let mut toks = line.split_whitespace();
                    let bad = |m: &str| Error::Parse {
                        line: line_no,
                        message: m.to_string(),
                    };
                    if toks.next() != Some("t") {
                        return Err(bad("expected transition row"));
                    }
                    let from: usize = toks
                        .next()
                        .and_then(|t| t.parse().ok())
                        .filter(|&f| f < items)
                        .ok_or_else(|| bad("bad source item"))?;
                    for cell in toks {
                        let (to, c) = cell.split_once(':').ok_or_else(|| bad("bad cell"))?;
                        let to: ItemId = to.parse().map_err(|_| bad("bad target item"))?;
                        let c: u64 = c.parse().map_err(|_| bad("bad count"))?;
                        if to as usize >= items {
                            return Err(bad("target item out of range"));
                        }
                        transitions[from].insert(to, c);
                    }
                }
                Ok(Model::Markov(MarkovModel {
                    alpha,
                    popularity,
                    transitions,
                }))
            }
            other => Err(Error::Format(format!("unknown model kind `{other}`"))),
        }
    }
}

fn header_value<'a>((line, text): (usize, &'a str), key: &str) -> Result<&'a str> {
    text.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `{key} <value>`"),
        })
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad {what} value `{s}`")))
}

impl Recommender for Model {
    fn item_count(&self) -> usize {
        match self {
            Model::Markov(m) => m.item_count(),
            Model::Score(m) => m.item_count(),
        }
    }

    fn score_all(&self, history: &[ItemId]) -> Result<Vec<f64>> {
        match self {
            Model::Markov(m) => m.score_all(history),
            Model::Score(m) => m.score_all(history),
        }
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, model.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Model::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SequenceDataset;
    use crate::recsys::{init_score_model, train_markov_target};

    #[test]
    fn score_model_round_trips_bit_exact() {
        let m = Model::Score(init_score_model(17, 5, 0.7, 11).unwrap());
        let back = Model::from_text(&m.to_text()).unwrap();
        let (Model::Score(a), Model::Score(b)) = (&m, &back) else {
            panic!("kind changed")
        };
        let bits = |m: &ScoreModel| m.embeddings().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
        assert_eq!(a.gamma().to_bits(), b.gamma().to_bits());
    }

    #[test]
    fn markov_round_trips() {
        let ds = SequenceDataset::new(6, vec![vec![0, 1, 2], vec![2, 5, 1]]).unwrap();
        let m = Model::Markov(train_markov_target(&ds, 0.25).unwrap());
        assert_eq!(Model::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Model::from_text("nope").is_err());
        assert!(Model::from_text(&format!("{MAGIC}\nkind score\nitems 2\ndim 1\ngamma 1\n0.5\n")).is_err());
    }
}
