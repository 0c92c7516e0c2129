//! End-to-end experiment runs: config, pipeline and the subcommand
//! drivers behind the command-line tool.

mod commands;
mod config;
mod manifest;
mod pipeline;

pub use commands::{
    cmd_analyze, cmd_attack, cmd_defense_compare, cmd_evaluate, cmd_prepare, cmd_sweep_k, cmd_train_target,
    defense_tsv, method_label, sweep_tsv, BiasSummary, DefenseRow, OrderProbe, PairEvaluation, PositionTest,
    SweepRow,
};
pub use config::*;
pub use manifest::{load_config, sha256_hex, Artifact, OutputDir, RunManifest, MANIFEST_FILE};
pub use pipeline::{
    build_attack_corpus, check_threat_gate, obtain_target, prepare, run_attack, AttackCorpus, AttackOutcome, Prepared,
    RunOptions,
};
