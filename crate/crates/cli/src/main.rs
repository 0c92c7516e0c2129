use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meabench::corpus::SequenceDataset;
use meabench::experiment::{
    cmd_analyze, cmd_attack, cmd_defense_compare, cmd_evaluate, cmd_prepare, cmd_sweep_k, cmd_train_target,
    defense_tsv, load_config, sweep_tsv, ExperimentConfig, OrderProbe, RunOptions,
};
use meabench::par::Parallelism;
use meabench::recsys::load_checkpoint;
use meabench::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_BACKEND: u8 = 4;

/// Model-extraction experiments against sequential recommenders.
#[derive(Parser)]
#[command(name = "meabench", version)]
struct Cli {
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set generator.k=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Load or synthesize the secret data and write its split.
    Prepare(ConfigArgs),
    /// Train the target recommender.
    TrainTarget(ConfigArgs),
    /// Run one extraction attack and write its report.
    Attack(ConfigArgs),
    /// Attack once per list length.
    SweepK {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated, increasing.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
    /// Attack without and with output perturbation.
    DefenseCompare {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated replacement fractions.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
    },
    /// Exposure and position-bias diagnostics from a query log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        /// Catalog size.
        #[arg(long)]
        items: usize,
        /// Target checkpoint for the order-sensitivity check.
        #[arg(long, requires = "sequences")]
        model: Option<PathBuf>,
        /// Sequences to shuffle for the order-sensitivity check.
        #[arg(long, requires = "model")]
        sequences: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Agreement and accuracy of two checkpoints.
    Evaluate {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
    },
}

fn config(args: &ConfigArgs) -> meabench::Result<ExperimentConfig> {
    load_config(&args.config, &args.overrides)
}

fn read_sequences(path: &Path, item_count: usize) -> meabench::Result<SequenceDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    SequenceDataset::parse(&text, item_count)
}

fn run(cli: Cli) -> meabench::Result<()> {
    let opts = RunOptions {
        parallelism: Parallelism::threads(cli.threads),
        ..RunOptions::default()
    };
    match cli.command {
        Command::Prepare(a) => {
            let m = cmd_prepare(&config(&a)?, &a.out)?;
            println!("wrote {} artifacts to {}", m.artifacts.len(), a.out.display());
        }
        Command::TrainTarget(a) => {
            let m = cmd_train_target(&config(&a)?, &a.out, &opts)?;
            println!("wrote {} artifacts to {}", m.artifacts.len(), a.out.display());
        }
        Command::Attack(a) => {
            let (_, report) = cmd_attack(&config(&a)?, &a.out, &opts)?;
            print!("{}", serde_json::to_string_pretty(&report.metrics).map(|s| s + "\n").unwrap_or_default());
        }
        Command::SweepK { common, k } => {
            let (_, rows) = cmd_sweep_k(&config(&common)?, &k, &common.out, &opts)?;
            print!("{}", sweep_tsv(&rows));
        }
        Command::DefenseCompare { common, p } => {
            let (_, rows) = cmd_defense_compare(&config(&common)?, &p, &common.out, &opts)?;
            print!("{}", defense_tsv(&rows));
        }
        Command::Analyze {
            log,
            items,
            model,
            sequences,
            k,
            seed,
            out,
        } => {
            let loaded = match (model, sequences) {
                (Some(m), Some(s)) => Some((load_checkpoint(&m)?, read_sequences(&s, items)?)),
                _ => None,
            };
            let probe = loaded.as_ref().map(|(m, s)| OrderProbe {
                model: m,
                sequences: s,
                k,
                seed,
            });
            let (_, summary) = cmd_analyze(&log, items, probe, &out)?;
            println!(
                "queries {}\tunseen {}\tdisplay p {:.3e}\toriginal-rank p {:.3e}",
                summary.queries, summary.final_unseen, summary.display_position.p_value, summary.original_rank.p_value
            );
        }
        Command::Evaluate { common, first, second } => {
            let (_, e) = cmd_evaluate(&config(&common)?, &first, &second, &common.out, &opts)?;
            println!(
                "agr_at_1\tagr_at_10\n{:.6}\t{:.6}",
                e.agreement_at_1, e.agreement_at_10
            );
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Backend(_) | Error::Incomplete { .. } => EXIT_BACKEND,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
