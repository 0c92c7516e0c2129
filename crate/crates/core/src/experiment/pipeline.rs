use std::path::PathBuf;
use std::sync::Arc;

use super::config::{AgentBackend, ExperimentConfig, GeneratorKind, TargetArch, ThreatMode};
use crate::agent::chat::{ChatClient, HttpChatClient, ReplayChatClient};
use crate::agent::{LlmAgentFactory, RandomChoice, SamplerFactory, ScriptedFactory};
use crate::corpus::{
    load_sequences, split_leave_two, synthesize_secret_data, Catalog, SequenceDataset, SplitDataset,
};
use crate::distill::{train_surrogate, DistillConfig, TrainedSurrogate};
use crate::error::{Error, Result};
use crate::genpipe::{
    build_surrogate_dataset, generate_autoregressive, generate_random_sequences, plan_exposure_mix, secret_prefixes,
    ExposurePlan, GenerationConfig, GenerationOptions, Provenance, QueryLog, SurrogateDataset,
};
use crate::metrics::{evaluate_extraction, CorpusCounts, EvalReport};
use crate::par::Parallelism;
use crate::recsys::{
    init_score_model, load_checkpoint, pretrain_target, train_markov_target, Model, Recommender, TargetTrainConfig,
    TrainTrace,
};
use crate::seed;

/// Runtime knobs that do not change results.
#[derive(Clone, Default)]
pub struct RunOptions {
    pub parallelism: Parallelism,
    /// Overrides the chat client built from the config (tests, replays).
    pub chat_client: Option<Arc<dyn ChatClient>>,
    /// Per-user progress file for resumable generation.
    pub resume_file: Option<PathBuf>,
}

/// Secret corpus and its split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub catalog: Arc<Catalog>,
    pub data: SequenceDataset,
    pub split: SplitDataset,
}

fn sub_seed(cfg: &ExperimentConfig, local: u64, label: &str) -> u64 {
    seed::derive(cfg.seed ^ seed::mix(local), label)
}

/// Seed of the negative samples used for accuracy metrics.
pub(crate) fn evaluation_seed(cfg: &ExperimentConfig) -> u64 {
    sub_seed(cfg, 0, "evaluate")
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let d = &cfg.dataset;
    let (catalog, data) = match (&d.synthetic, &d.sequences) {
        (Some(params), _) => synthesize_secret_data(params)?,
        (None, Some(path)) => {
            let catalog = match (&d.catalog, d.item_count) {
                (Some(c), _) => Catalog::load(c)?,
                (None, Some(n)) => Catalog::anonymous(n)?,
                (None, None) => {
                    return Err(Error::Config {
                        path: "dataset.item_count".into(),
                        message: "needed when no catalog file is given".into(),
                    })
                }
            };
            if !path.exists() {
                return Err(Error::Config {
                    path: "dataset.sequences".into(),
                    message: format!("file {} does not exist", path.display()),
                });
            }
            let data = load_sequences(path, &catalog)?;
            (catalog, data)
        }
        (None, None) => {
            return Err(Error::Config {
                path: "dataset.sequences".into(),
                message: "missing".into(),
            })
        }
    };
    let split = split_leave_two(&data);
    if split.is_empty() {
        return Err(Error::Empty("users with at least three interactions"));
    }
    Ok(Prepared {
        catalog: Arc::new(catalog),
        data,
        split,
    })
}

/// Loads the configured checkpoint or trains a target on the secret
/// training split.
pub fn obtain_target(cfg: &ExperimentConfig, prepared: &Prepared, par: Parallelism) -> Result<(Model, Option<TrainTrace>)> {
    let n = prepared.catalog.len();
    if let Some(path) = &cfg.target.checkpoint {
        let model = load_checkpoint(path)?;
        if model.item_count() != n {
            return Err(Error::Config {
                path: "target.checkpoint".into(),
                message: format!("checkpoint has {} items, catalog has {n}", model.item_count()),
            });
        }
        return Ok((model, None));
    }
    match cfg.target.arch {
        TargetArch::Markov => Ok((Model::Markov(train_markov_target(&prepared.split.train, cfg.target.alpha)?), None)),
        TargetArch::Score => {
            let init = init_score_model(n, cfg.target.dim, cfg.target.gamma, sub_seed(cfg, 0, "target-init"))?;
            let train = TargetTrainConfig {
                seed: sub_seed(cfg, cfg.target.train.seed, "target-train"),
                ..cfg.target.train.clone()
            };
            let (model, trace) = pretrain_target(init, &prepared.split.train, &train, par)?;
            Ok((Model::Score(model), Some(trace)))
        }
    }
}

/// Sequences the attacker will query, before querying.
#[derive(Debug, Clone, Default)]
pub struct AttackCorpus {
    pub sources: Vec<(Provenance, SequenceDataset)>,
    pub log: Option<QueryLog>,
    pub plan: Option<ExposurePlan>,
    pub failed_users: usize,
    pub fallbacks: usize,
}

impl AttackCorpus {
    pub fn all_sequences(&self, item_count: usize) -> Result<SequenceDataset> {
        SequenceDataset::new(
            item_count,
            self.sources
                .iter()
                .flat_map(|(_, d)| d.sequences().iter().cloned())
                .collect(),
        )
    }
}

fn sampler_factory(cfg: &ExperimentConfig, prepared: &Prepared, opts: &RunOptions) -> Result<Box<dyn SamplerFactory>> {
    Ok(match cfg.generator.kind {
        GeneratorKind::AutoregressiveRandom | GeneratorKind::Random => Box::new(RandomChoice),
        GeneratorKind::Agent => match cfg.agent.backend {
            AgentBackend::Scripted => Box::new(ScriptedFactory {
                catalog: Arc::clone(&prepared.catalog),
                position_bias: cfg.agent.position_bias,
                favourite_boost: cfg.agent.favourite_boost,
                params: cfg.agent.params(),
            }),
            AgentBackend::Chat => {
                let client: Arc<dyn ChatClient> = match (&opts.chat_client, &cfg.agent.replay, &cfg.agent.chat) {
                    (Some(c), _, _) => Arc::clone(c),
                    (None, Some(path), Some(chat)) => Arc::new(ReplayChatClient::load(path, chat.clone())?),
                    (None, None, Some(chat)) => Arc::new(HttpChatClient::new(chat.clone())?),
                    (None, _, None) => {
                        return Err(Error::Config {
                            path: "agent.chat".into(),
                            message: "chat backend selected but not configured".into(),
                        })
                    }
                };
                Box::new(LlmAgentFactory {
                    client,
                    catalog: Arc::clone(&prepared.catalog),
                    platform: cfg.agent.platform.clone(),
                    params: cfg.agent.params(),
                })
            }
        },
    })
}

/// Produces the attacker's query sequences according to the threat model
/// and generator settings.
pub fn build_attack_corpus(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    target: &dyn Recommender,
    opts: &RunOptions,
) -> Result<AttackCorpus> {
    let n = prepared.catalog.len();
    let g = &cfg.generator;
    let mut out = AttackCorpus::default();
    if cfg.threat.mode == ThreatMode::Available {
        let capped: Vec<_> = prepared
            .split
            .train
            .sequences()
            .iter()
            .take(g.num_sequences)
            .map(|s| s[..s.len().min(g.target_length)].to_vec())
            .collect();
        out.sources.push((Provenance::Secret, SequenceDataset::new(n, capped)?));
        return Ok(out);
    }
    match g.kind {
        GeneratorKind::Random => {
            let mut rng = seed::rng(sub_seed(cfg, 0, "random-sequences"));
            let d = generate_random_sequences(&prepared.catalog, g.num_sequences, g.target_length, &mut rng)?;
            out.sources.push((Provenance::Random, d));
        }
        GeneratorKind::AutoregressiveRandom | GeneratorKind::Agent => {
            let factory = sampler_factory(cfg, prepared, opts)?;
            let gen_cfg = GenerationConfig {
                num_sequences: g.num_sequences,
                target_length: g.target_length,
                k: g.k,
                items_per_query: g.items_per_query,
                shuffle: g.shuffle,
                seed: sub_seed(cfg, 0, "generation"),
            };
            let gen_opts = GenerationOptions {
                parallelism: opts.parallelism,
                resume_file: opts.resume_file.clone(),
            };
            let generated = generate_autoregressive(target, factory.as_ref(), &gen_cfg, &cfg.defense, &gen_opts)?;
            if !generated.failed_users.is_empty() {
                return Err(Error::Incomplete {
                    failed: generated.failed_users.len(),
                });
            }
            out.failed_users = generated.failed_users.len();
            out.fallbacks = generated.fallbacks;
            out.log = Some(generated.log);
            out.sources.push((Provenance::Agent, generated.dataset));
            if g.exposure_mix {
                let plan = plan_exposure_mix(n, g.coverage_fraction, 0, g.target_length)?;
                let mut rng = seed::rng(sub_seed(cfg, 0, "exposure-mix"));
                let d = generate_random_sequences(&prepared.catalog, plan.random_sequences, g.target_length, &mut rng)?;
                if !d.is_empty() {
                    out.sources.push((Provenance::Random, d));
                }
                out.plan = Some(plan);
            }
        }
    }
    if cfg.threat.mode == ThreatMode::Limited {
        let d = secret_prefixes(&prepared.split.train, cfg.threat.secret_users, cfg.prefix_cap())?;
        out.sources.push((Provenance::Secret, d));
    }
    Ok(out)
}

/// Fails if the surrogate data violates the threat model.
pub fn check_threat_gate(mode: ThreatMode, data: &SurrogateDataset) -> Result<()> {
    if mode == ThreatMode::Free && data.count(Provenance::Secret) > 0 {
        return Err(Error::Precondition("data-free attack received secret sequences".into()));
    }
    Ok(())
}

pub struct AttackOutcome {
    pub corpus: AttackCorpus,
    pub data: SurrogateDataset,
    pub surrogate: TrainedSurrogate,
    pub report: EvalReport,
}

/// Generation, querying, distillation and evaluation for one config.
pub fn run_attack(cfg: &ExperimentConfig, prepared: &Prepared, target: &Model, opts: &RunOptions) -> Result<AttackOutcome> {
    let n = prepared.catalog.len();
    let k = cfg.generator.k;
    if k > n {
        return Err(Error::Config {
            path: "generator.k".into(),
            message: format!("k={k} exceeds the catalog size {n}"),
        });
    }
    let corpus = build_attack_corpus(cfg, prepared, target, opts)?;
    let sources: Vec<(Provenance, &SequenceDataset)> = corpus.sources.iter().map(|(p, d)| (*p, d)).collect();
    let data = build_surrogate_dataset(target, &sources, k, &cfg.defense, opts.parallelism)?;
    check_threat_gate(cfg.threat.mode, &data)?;

    let init = init_score_model(n, cfg.surrogate.dim, cfg.surrogate.gamma, sub_seed(cfg, 0, "surrogate-init"))?;
    let distill = DistillConfig {
        seed: sub_seed(cfg, cfg.surrogate.distill.seed, "distill"),
        ..cfg.surrogate.distill.clone()
    };
    let surrogate = train_surrogate(&data, init, &distill, opts.parallelism)?;

    let all = corpus.all_sequences(n)?;
    let metrics = evaluate_extraction(
        target,
        &surrogate.model,
        &prepared.split,
        &all,
        (k, cfg.defense),
        evaluation_seed(cfg),
        opts.parallelism,
    )?;
    let counts = CorpusCounts {
        secret_users: prepared.split.len(),
        excluded_users: prepared.split.excluded,
        surrogate_pairs: data.len(),
        agent_pairs: data.count(Provenance::Agent),
        random_pairs: data.count(Provenance::Random),
        secret_pairs: data.count(Provenance::Secret),
        failed_users: corpus.failed_users,
        fallbacks: corpus.fallbacks,
        distinct_items: all.distinct_items(),
    };
    let report = EvalReport {
        metrics,
        counts,
        config: cfg.to_json(),
    };
    Ok(AttackOutcome {
        corpus,
        data,
        surrogate,
        report,
    })
}
