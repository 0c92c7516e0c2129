use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AgentBackend, ExperimentConfig, GeneratorKind, ThreatMode};
use super::manifest::{OutputDir, RunManifest};
use super::pipeline::{evaluation_seed, obtain_target, prepare, run_attack, AttackOutcome, Prepared, RunOptions};
use crate::corpus::SequenceDataset;
use crate::error::{Error, Result};
use crate::genpipe::{save_surrogate_dataset, QueryLog};
use crate::metrics::{
    chi_square_uniform, curve_tsv, histogram_tsv, mean_agreement, position_histogram, rec_quality, shuffle_overlap,
    unseen_item_curve, EvalReport, PositionView, ShuffleOverlap,
};
use crate::recsys::{load_checkpoint, save_checkpoint, DefenseConfig, Model, Recommender};
use crate::seed;

fn write_prepared(out: &mut OutputDir, prepared: &Prepared) -> Result<()> {
    let catalog = out.path("catalog.tsv");
    prepared.catalog.save(&catalog)?;
    out.record("catalog", "catalog.tsv")?;
    out.write("sequences", "sequences.txt", prepared.data.to_text())?;
    out.write("train", "train.txt", prepared.split.train.to_text())?;
    out.write("heldout", "heldout.tsv", prepared.split.heldout_tsv())?;
    Ok(())
}

/// Loads or synthesizes the secret data and writes it with its split.
pub fn cmd_prepare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let mut out = OutputDir::create(out_dir, "prepare", Some(cfg))?;
    let prepared = prepare(cfg)?;
    write_prepared(&mut out, &prepared)?;
    out.write("config", "config.toml", cfg.to_toml())?;
    out.finish()
}

fn train_trace_tsv(loss: &[f64]) -> String {
    let mut s = String::from("epoch\tloss\n");
    for (e, l) in loss.iter().enumerate() {
        let _ = writeln!(s, "{}\t{l}", e + 1);
    }
    s
}

fn target_for_run(cfg: &ExperimentConfig, prepared: &Prepared, out: &mut OutputDir, opts: &RunOptions) -> Result<Model> {
    let (target, trace) = obtain_target(cfg, prepared, opts.parallelism)?;
    if cfg.target.checkpoint.is_none() {
        save_checkpoint(&target, &out.path("target.ckpt"))?;
        out.record("target", "target.ckpt")?;
    }
    if let Some(t) = trace {
        out.write("target-trace", "target_trace.tsv", train_trace_tsv(&t.loss))?;
    }
    Ok(target)
}

/// Trains the target recommender on the secret training split.
pub fn cmd_train_target(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest> {
    let mut out = OutputDir::create(out_dir, "train-target", Some(cfg))?;
    let prepared = prepare(cfg)?;
    let (target, trace) = obtain_target(cfg, &prepared, opts.parallelism)?;
    save_checkpoint(&target, &out.path("target.ckpt"))?;
    out.record("target", "target.ckpt")?;
    if let Some(t) = trace {
        out.write("target-trace", "target_trace.tsv", train_trace_tsv(&t.loss))?;
    }
    let q = rec_quality(&target, &prepared.split, 10, 100, seed::derive(cfg.seed, "target-quality"), opts.parallelism)?;
    out.write("target-quality", "target_quality.tsv", format!("recall_at_10\tndcg_at_10\tusers\n{}\t{}\t{}\n", q.recall, q.ndcg, q.users))?;
    out.finish()
}

fn resume_options(cfg: &ExperimentConfig, out: &OutputDir, opts: &RunOptions, name: &str) -> RunOptions {
    let mut opts = opts.clone();
    let uses_chat = cfg.generator.kind == GeneratorKind::Agent && cfg.agent.backend == AgentBackend::Chat;
    if opts.resume_file.is_none() && uses_chat && cfg.threat.mode != ThreatMode::Available {
        opts.resume_file = Some(out.path(name));
    }
    opts
}

fn write_outcome(out: &mut OutputDir, outcome: &AttackOutcome, suffix: &str) -> Result<()> {
    let data = format!("surrogate_data{suffix}.jsonl");
    save_surrogate_dataset(&outcome.data, &out.path(&data))?;
    out.record("surrogate-data", &data)?;
    if let Some(log) = &outcome.corpus.log {
        let name = format!("query_log{suffix}.jsonl");
        log.save(&out.path(&name))?;
        out.record("query-log", &name)?;
    }
    let ckpt = format!("surrogate{suffix}.ckpt");
    save_checkpoint(&Model::Score(outcome.surrogate.model.clone()), &out.path(&ckpt))?;
    out.record("surrogate", &ckpt)?;
    out.write("distill-trace", &format!("distill_trace{suffix}.tsv"), outcome.surrogate.trace.to_tsv())?;
    out.write("report", &format!("report{suffix}.json"), outcome.report.to_json())?;
    Ok(())
}

/// Runs one extraction attack. A target is trained first when the config
/// names no checkpoint.
pub fn cmd_attack(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<(RunManifest, EvalReport)> {
    let mut out = OutputDir::create(out_dir, "attack", Some(cfg))?;
    let prepared = prepare(cfg)?;
    let target = target_for_run(cfg, &prepared, &mut out, opts)?;
    let opts = resume_options(cfg, &out, opts, "generation_progress.jsonl");
    let outcome = run_attack(cfg, &prepared, &target, &opts)?;
    write_outcome(&mut out, &outcome, "")?;
    Ok((out.finish()?, outcome.report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub agreement_at_1: f64,
    pub agreement_at_10: f64,
    pub ndcg_at_10: f64,
    pub recall_at_10: f64,
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut s = String::from("k\tagr_at_1\tagr_at_10\tn_at_10\tr_at_10\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.k, r.agreement_at_1, r.agreement_at_10, r.ndcg_at_10, r.recall_at_10
        );
    }
    s
}

/// One attack per list length with all other settings and seeds shared.
pub fn cmd_sweep_k(
    cfg: &ExperimentConfig,
    k_values: &[usize],
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<(RunManifest, Vec<SweepRow>)> {
    if k_values.is_empty() {
        return Err(Error::Config {
            path: "k".into(),
            message: "no list lengths given".into(),
        });
    }
    if k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config {
            path: "k".into(),
            message: "list lengths must be strictly increasing".into(),
        });
    }
    let mut out = OutputDir::create(out_dir, "sweep-k", Some(cfg))?;
    let prepared = prepare(cfg)?;
    let target = target_for_run(cfg, &prepared, &mut out, opts)?;
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let mut run_cfg = cfg.clone();
        run_cfg.generator.k = k;
        run_cfg.generator.items_per_query = run_cfg.generator.items_per_query.min(k);
        run_cfg.validate()?;
        let run_opts = resume_options(&run_cfg, &out, opts, &format!("generation_progress_k{k}.jsonl"));
        let outcome = run_attack(&run_cfg, &prepared, &target, &run_opts)?;
        out.write("report", &format!("report_k{k}.json"), outcome.report.to_json())?;
        let m = &outcome.report.metrics;
        log::info!("k={k}: agreement@10 {:.4}", m.agreement_at_10);
        rows.push(SweepRow {
            k,
            agreement_at_1: m.agreement_at_1,
            agreement_at_10: m.agreement_at_10,
            ndcg_at_10: m.surrogate.ndcg_at_10,
            recall_at_10: m.surrogate.recall_at_10,
        });
    }
    out.write("table", "k_sweep.tsv", sweep_tsv(&rows))?;
    Ok((out.finish()?, rows))
}

/// Short name of the attack variant a config describes.
pub fn method_label(cfg: &ExperimentConfig) -> String {
    let g = &cfg.generator;
    let base = match (cfg.threat.mode, g.kind) {
        (ThreatMode::Available, _) => return "secret".into(),
        (_, GeneratorKind::Random) => "random",
        (_, GeneratorKind::AutoregressiveRandom) => "ar-random",
        (_, GeneratorKind::Agent) => "agent",
    };
    let mut label = base.to_string();
    if g.kind != GeneratorKind::Random {
        if g.exposure_mix {
            label.push_str("+mix");
        }
        if g.shuffle {
            label.push_str("+shuffle");
        }
    }
    if cfg.threat.mode == ThreatMode::Limited {
        label.push_str("+prefixes");
    }
    label
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub method: String,
    /// `None` for the undefended run.
    pub replace_fraction: Option<f64>,
    pub ndcg_at_10: f64,
    pub recall_at_10: f64,
    pub agreement_at_1: f64,
    pub agreement_at_10: f64,
    pub target_ndcg_at_10: f64,
    pub target_recall_at_10: f64,
}

pub fn defense_tsv(rows: &[DefenseRow]) -> String {
    let mut s = String::from("method\tdefense\tn_at_10\tr_at_10\tagr_at_1\tagr_at_10\ttarget_n_at_10\ttarget_r_at_10\n");
    for r in rows {
        let d = r.replace_fraction.map_or("off".to_string(), |p| format!("p={p}"));
        let _ = writeln!(
            s,
            "{}\t{d}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.method,
            r.ndcg_at_10,
            r.recall_at_10,
            r.agreement_at_1,
            r.agreement_at_10,
            r.target_ndcg_at_10,
            r.target_recall_at_10
        );
    }
    s
}

/// The attack without the output-perturbation defense and with each
/// replacement fraction in `p_values`.
pub fn cmd_defense_compare(
    cfg: &ExperimentConfig,
    p_values: &[f64],
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<(RunManifest, Vec<DefenseRow>)> {
    let mut out = OutputDir::create(out_dir, "defense-compare", Some(cfg))?;
    let prepared = prepare(cfg)?;
    let target = target_for_run(cfg, &prepared, &mut out, opts)?;
    let method = method_label(cfg);
    let defense_seed = seed::derive(cfg.seed, "defense");
    let mut settings = vec![None];
    settings.extend(p_values.iter().map(|&p| Some(p)));
    let mut rows = Vec::new();
    for p in settings {
        let mut run_cfg = cfg.clone();
        run_cfg.defense = match p {
            None => DefenseConfig::OFF,
            Some(p) => DefenseConfig::with_fraction(p, defense_seed),
        };
        run_cfg.defense.validate().map_err(|e| Error::Config {
            path: "p".into(),
            message: e.to_string(),
        })?;
        let suffix = p.map_or("_off".to_string(), |p| format!("_p{p}"));
        let run_opts = resume_options(&run_cfg, &out, opts, &format!("generation_progress{suffix}.jsonl"));
        let outcome = run_attack(&run_cfg, &prepared, &target, &run_opts)?;
        out.write("report", &format!("report{suffix}.json"), outcome.report.to_json())?;
        let m = &outcome.report.metrics;
        rows.push(DefenseRow {
            method: method.clone(),
            replace_fraction: p,
            ndcg_at_10: m.surrogate.ndcg_at_10,
            recall_at_10: m.surrogate.recall_at_10,
            agreement_at_1: m.agreement_at_1,
            agreement_at_10: m.agreement_at_10,
            target_ndcg_at_10: m.target.ndcg_at_10,
            target_recall_at_10: m.target.recall_at_10,
        });
    }
    out.write("table", "defense.tsv", defense_tsv(&rows))?;
    Ok((out.finish()?, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTest {
    pub statistic: f64,
    pub p_value: f64,
    pub selections: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub queries: usize,
    pub final_unseen: usize,
    pub display_position: PositionTest,
    pub original_rank: PositionTest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shuffle_overlap: Option<ShuffleOverlap>,
}

/// Target model and sequences for the order-sensitivity diagnostic.
pub struct OrderProbe<'a> {
    pub model: &'a dyn Recommender,
    pub sequences: &'a SequenceDataset,
    pub k: usize,
    pub seed: u64,
}

/// Exposure and position-bias diagnostics from a query log.
pub fn cmd_analyze(
    log_path: &Path,
    item_count: usize,
    probe: Option<OrderProbe<'_>>,
    out_dir: &Path,
) -> Result<(RunManifest, BiasSummary)> {
    let mut out = OutputDir::create(out_dir, "analyze", None)?;
    let log = QueryLog::load(log_path)?;
    for (line, r) in log.records.iter().enumerate() {
        if let Some(&bad) = r.list.items().iter().find(|&&i| i as usize >= item_count) {
            return Err(Error::ItemOutOfRange {
                line: line + 2,
                item: bad as u64,
                item_count,
            });
        }
    }
    let curve = unseen_item_curve(&log, item_count);
    out.write("unseen-curve", "unseen_curve.tsv", curve_tsv(&curve))?;
    let mut tests = Vec::new();
    for (view, name) in [(PositionView::Display, "display"), (PositionView::OriginalRank, "original_rank")] {
        let hist = position_histogram(&log, view)?;
        out.write("position-histogram", &format!("positions_{name}.tsv"), histogram_tsv(&hist))?;
        let (statistic, p_value) = chi_square_uniform(&hist)?;
        tests.push(PositionTest {
            statistic,
            p_value,
            selections: hist.iter().sum(),
        });
    }
    let shuffle_overlap = probe
        .map(|p| shuffle_overlap(p.model, p.sequences, p.k, p.seed, crate::par::Parallelism::SEQUENTIAL))
        .transpose()?;
    let original_rank = tests.pop().expect("two views");
    let display_position = tests.pop().expect("two views");
    let summary = BiasSummary {
        queries: log.len(),
        final_unseen: curve.last().map_or(item_count, |c| c.1),
        display_position,
        original_rank,
        shuffle_overlap,
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summaries serialize");
    json.push('\n');
    out.write("summary", "bias_summary.json", json)?;
    Ok((out.finish()?, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub agreement_at_1: f64,
    pub agreement_at_10: f64,
    pub first_recall_at_10: f64,
    pub first_ndcg_at_10: f64,
    pub second_recall_at_10: f64,
    pub second_ndcg_at_10: f64,
    pub users: usize,
}

/// Agreement and accuracy of two checkpoints on the config's secret test
/// prefixes.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    first: &Path,
    second: &Path,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<(RunManifest, PairEvaluation)> {
    let mut out = OutputDir::create(out_dir, "evaluate", Some(cfg))?;
    let prepared = prepare(cfg)?;
    let a = load_checkpoint(first)?;
    let b = load_checkpoint(second)?;
    for m in [&a, &b] {
        if m.item_count() != prepared.catalog.len() {
            return Err(Error::Precondition(format!(
                "checkpoint has {} items, catalog has {}",
                m.item_count(),
                prepared.catalog.len()
            )));
        }
    }
    let split = &prepared.split;
    let prefixes: Vec<_> = (0..split.len()).map(|u| split.test_prefix(u)).collect();
    let s = evaluation_seed(cfg);
    let qa = rec_quality(&a, split, 10, 100, s, opts.parallelism)?;
    let qb = rec_quality(&b, split, 10, 100, s, opts.parallelism)?;
    let eval = PairEvaluation {
        agreement_at_1: mean_agreement(&a, &b, &prefixes, 1, opts.parallelism)?,
        agreement_at_10: mean_agreement(&a, &b, &prefixes, 10, opts.parallelism)?,
        first_recall_at_10: qa.recall,
        first_ndcg_at_10: qa.ndcg,
        second_recall_at_10: qb.recall,
        second_ndcg_at_10: qb.ndcg,
        users: split.len(),
    };
    let table = format!(
        "model\tagr_at_1\tagr_at_10\tn_at_10\tr_at_10\nfirst\t\t\t{:.6}\t{:.6}\nsecond\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
        eval.first_ndcg_at_10,
        eval.first_recall_at_10,
        eval.agreement_at_1,
        eval.agreement_at_10,
        eval.second_ndcg_at_10,
        eval.second_recall_at_10
    );
    out.write("table", "evaluate.tsv", table)?;
    Ok((out.finish()?, eval))
}
