use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::agent::chat::ChatBackendConfig;
use crate::agent::AgentParams;
use crate::corpus::SyntheticParams;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::recsys::{DefenseConfig, TargetTrainConfig};

/// Full description of one experiment. Every component seed is mixed
/// with the global `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub threat: ThreatSpec,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub agent: AgentSpec,
    #[serde(default)]
    pub surrogate: SurrogateSpec,
    #[serde(default)]
    pub defense: DefenseConfig,
}

/// Either a synthetic corpus or files on disk (exactly one).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
    /// One user per line, whitespace-separated item ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequences: Option<PathBuf>,
    /// `id<TAB>title<TAB>category` with a header row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    /// Catalog size when no catalog file is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetArch {
    Score,
    Markov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSpec {
    pub arch: TargetArch,
    pub dim: usize,
    pub gamma: f64,
    /// Popularity smoothing of the Markov target.
    pub alpha: f64,
    pub train: TargetTrainConfig,
    /// Load this checkpoint instead of training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec {
            arch: TargetArch::Score,
            dim: 32,
            gamma: 0.7,
            alpha: 0.1,
            train: TargetTrainConfig::default(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThreatMode {
    /// No secret data.
    Free,
    /// A few short secret prefixes join the surrogate data.
    Limited,
    /// Reference setting: the surrogate is distilled on secret sequences.
    Available,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThreatSpec {
    pub mode: ThreatMode,
    /// Secret users whose prefixes are available in limited mode.
    pub secret_users: usize,
    /// Prefix length cap; defaults to 10% of the generated length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix_cap: Option<usize>,
}

impl Default for ThreatSpec {
    fn default() -> Self {
        ThreatSpec {
            mode: ThreatMode::Free,
            secret_users: 50,
            prefix_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Uniform random sequences.
    Random,
    /// Autoregressive loop with uniform choice from each list.
    AutoregressiveRandom,
    /// Autoregressive loop driven by the configured agent.
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub num_sequences: usize,
    pub target_length: usize,
    pub k: usize,
    pub items_per_query: usize,
    /// Mix in uniform-random sequences sized by the coupon-collector
    /// expectation.
    pub exposure_mix: bool,
    pub coverage_fraction: f64,
    /// Shuffle lists before presenting them to the sampler.
    pub shuffle: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            kind: GeneratorKind::Agent,
            num_sequences: 5000,
            target_length: 50,
            k: 100,
            items_per_query: 5,
            exposure_mix: true,
            coverage_fraction: 0.9,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentBackend {
    Scripted,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSpec {
    pub backend: AgentBackend,
    /// Scripted persona: exponent of the display-position bias.
    pub position_bias: f64,
    /// Scripted persona: weight of the seed item's category.
    pub favourite_boost: f64,
    pub mc_size: usize,
    pub ps_threshold: usize,
    /// Platform description used in prompts.
    pub platform: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chat: Option<ChatBackendConfig>,
    /// Serve chat replies from this transcript instead of the network.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay: Option<PathBuf>,
}

impl Default for AgentSpec {
    fn default() -> Self {
        let p = AgentParams::default();
        AgentSpec {
            backend: AgentBackend::Scripted,
            position_bias: 1.0,
            favourite_boost: 3.0,
            mc_size: p.mc_size,
            ps_threshold: p.ps_threshold,
            platform: "an online store that recommends products to its users".into(),
            chat: None,
            replay: None,
        }
    }
}

impl AgentSpec {
    pub fn params(&self) -> AgentParams {
        AgentParams {
            mc_size: self.mc_size,
            ps_threshold: self.ps_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSpec {
    pub dim: usize,
    pub gamma: f64,
    pub distill: DistillConfig,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            dim: 32,
            gamma: 0.7,
            distill: DistillConfig::default(),
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Appends the missing field to the path, so `missing field` errors name
/// the field itself rather than its parent.
fn deserialize_error(path: &serde_path_to_error::Path, message: String) -> Error {
    let mut path = path.to_string();
    if let Some(field) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
        path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
    }
    config_error(&path, message)
}

impl ExperimentConfig {
    /// Parses a TOML document, reporting the offending field path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_error("(document)", e.to_string()))?;
        Self::from_table(value)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| deserialize_error(e.path(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| deserialize_error(e.path(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configs serialize")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize to TOML")
    }

    /// Length cap of secret prefixes in limited mode.
    pub fn prefix_cap(&self) -> usize {
        self.threat
            .prefix_cap
            .unwrap_or_else(|| (self.generator.target_length as f64 * 0.1).ceil().max(1.0) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match (&d.synthetic, &d.sequences) {
            (Some(_), Some(_)) => {
                return Err(config_error("dataset", "give either `synthetic` or `sequences`, not both"))
            }
            (None, None) => {
                return Err(config_error("dataset.sequences", "missing: give a sequence file or `synthetic` parameters"))
            }
            (None, Some(_)) if d.catalog.is_none() && d.item_count.is_none() => {
                return Err(config_error("dataset.item_count", "needed when no catalog file is given"))
            }
            _ => {}
        }
        let g = &self.generator;
        if g.num_sequences == 0 {
            return Err(config_error("generator.num_sequences", "must be at least 1"));
        }
        if g.target_length < 2 {
            return Err(config_error("generator.target_length", "must be at least 2"));
        }
        if g.k < 2 {
            return Err(config_error("generator.k", "must be at least 2"));
        }
        if g.items_per_query == 0 || g.items_per_query > g.k {
            return Err(config_error("generator.items_per_query", "must be in 1..=k"));
        }
        if !(g.coverage_fraction > 0.0 && g.coverage_fraction <= 1.0) {
            return Err(config_error("generator.coverage_fraction", "must be in (0,1]"));
        }
        if !(self.agent.position_bias >= 0.0) {
            return Err(config_error("agent.position_bias", "must be non-negative"));
        }
        if !(self.agent.favourite_boost >= 0.0) {
            return Err(config_error("agent.favourite_boost", "must be non-negative"));
        }
        if self.agent.mc_size < 2 {
            return Err(config_error("agent.mc_size", "must be at least 2"));
        }
        if self.agent.backend == AgentBackend::Chat
            && self.generator.kind == GeneratorKind::Agent
            && self.agent.chat.is_none()
        {
            return Err(config_error("agent.chat", "chat backend selected but not configured"));
        }
        if self.target.dim == 0 {
            return Err(config_error("target.dim", "must be at least 1"));
        }
        if !(self.target.gamma > 0.0 && self.target.gamma <= 1.0) {
            return Err(config_error("target.gamma", "must be in (0,1]"));
        }
        if !(self.target.alpha >= 0.0) {
            return Err(config_error("target.alpha", "must be non-negative"));
        }
        if self.surrogate.dim == 0 {
            return Err(config_error("surrogate.dim", "must be at least 1"));
        }
        if !(self.surrogate.gamma > 0.0 && self.surrogate.gamma <= 1.0) {
            return Err(config_error("surrogate.gamma", "must be in (0,1]"));
        }
        self.surrogate
            .distill
            .validate()
            .map_err(|e| config_error("surrogate.distill", e.to_string()))?;
        self.defense
            .validate()
            .map_err(|e| config_error("defense.replace_fraction", e.to_string()))?;
        if self.threat.mode == ThreatMode::Limited && self.threat.secret_users == 0 {
            return Err(config_error("threat.secret_users", "limited mode needs at least one secret user"));
        }
        if self.threat.prefix_cap == Some(0) {
            return Err(config_error("threat.prefix_cap", "must be positive"));
        }
        Ok(())
    }
}

/// Applies `a.b.c=value` overrides to a TOML table. The value is parsed as
/// a TOML literal when possible and taken as a string otherwise.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| config_error(ov, "override must look like `path.to.field=value`"))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(config_error(key, "empty path segment"));
        }
        let mut node = &mut *table;
        for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| config_error(&parts[..=i].join("."), "is not a table"))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[dataset.synthetic]
item_count = 50
user_count = 20
mean_length = 8.0
latent_dim = 4
seed = 1
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.generator.num_sequences, 5000);
        assert_eq!(cfg.generator.k, 100);
        assert_eq!(cfg.surrogate.distill.epochs, 300);
        assert_eq!(cfg.prefix_cap(), 5);
    }

    #[test]
    fn echo_round_trips() {
        let mut table: toml::Table = MINIMAL.parse().unwrap();
        apply_overrides(
            &mut table,
            &["generator.kind=random".into(), "defense.enabled=true".into(), "defense.replace_fraction=0.1".into()],
        )
        .unwrap();
        let cfg = ExperimentConfig::from_table(table).unwrap();
        assert_eq!(cfg.generator.kind, GeneratorKind::Random);
        assert_eq!(ExperimentConfig::from_json(cfg.to_json()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("item_count = 50", "item_count = \"many\"");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "dataset.synthetic.item_count"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_toml("seed = 1\n[dataset]\n") {
            Err(Error::Config { path, .. }) => assert_eq!(path, "dataset.sequences"),
            other => panic!("{other:?}"),
        }
        let unknown = format!("{MINIMAL}\n[generator]\nbogus = 1\n");
        match ExperimentConfig::from_toml(&unknown) {
            Err(Error::Config { path, .. }) => assert!(path.starts_with("generator"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn override_syntax() {
        let mut t = toml::Table::new();
        apply_overrides(&mut t, &["a.b=3".into(), "a.c=hello".into(), "d=[1, 2]".into()]).unwrap();
        assert_eq!(t["a"]["b"].as_integer(), Some(3));
        assert_eq!(t["a"]["c"].as_str(), Some("hello"));
        assert_eq!(t["d"].as_array().unwrap().len(), 2);
        assert!(apply_overrides(&mut t, &["nope".into()]).is_err());
        assert!(apply_overrides(&mut t, &["a.b.c=1".into()]).is_err());
    }
}
