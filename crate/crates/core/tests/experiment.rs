use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use meabench::agent::chat::{ChatClient, ChatError, ChatMessage};
use meabench::experiment::*;
use meabench::genpipe::{load_surrogate_dataset, Provenance, SurrogateDataset, SurrogatePair};
use meabench::par::Parallelism;
use meabench::recsys::{DefenseConfig, TopKList};
use meabench::Error;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(
        "seed = 3\n[dataset.synthetic]\nitem_count = 120\nuser_count = 120\nmean_length = 8.0\nlatent_dim = 4\nseed = 5\n",
    )
    .unwrap();
    cfg.target.dim = 8;
    cfg.target.train.epochs = 3;
    cfg.generator.num_sequences = 30;
    cfg.generator.target_length = 12;
    cfg.generator.k = 10;
    cfg.agent.backend = AgentBackend::Scripted;
    cfg.surrogate.dim = 8;
    cfg.surrogate.distill.epochs = 3;
    cfg.threat.secret_users = 7;
    cfg
}

fn opts() -> RunOptions {
    RunOptions {
        parallelism: Parallelism::threads(2),
        ..RunOptions::default()
    }
}

#[test]
fn prepare_is_reproducible_and_splits_hold_out_two_items() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let a = cmd_prepare(&cfg, &dir.path().join("a")).unwrap();
    let b = cmd_prepare(&cfg, &dir.path().join("b")).unwrap();
    let digests = |m: &RunManifest| m.artifacts.iter().map(|x| (x.path.clone(), x.sha256.clone())).collect::<Vec<_>>();
    assert_eq!(digests(&a), digests(&b));
    assert!(a.artifact("heldout").is_some() && a.artifact("catalog").is_some());

    let prepared = prepare(&cfg).unwrap();
    let split = &prepared.split;
    assert_eq!(split.len() + split.excluded, prepared.data.len());
    for (u, &src) in split.users.iter().enumerate() {
        let full = &prepared.data.sequences()[src];
        assert_eq!(split.train.sequences()[u].as_slice(), &full[..full.len() - 2]);
        assert_eq!(split.validation[u], full[full.len() - 2]);
        assert_eq!(split.test[u], full[full.len() - 1]);
    }
}

#[test]
fn missing_dataset_file_names_the_field() {
    let mut cfg = small();
    cfg.dataset.synthetic = None;
    cfg.dataset.sequences = Some("/definitely/not/here.txt".into());
    cfg.dataset.item_count = Some(120);
    match prepare(&cfg) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "dataset.sequences"),
        other => panic!("{other:?}"),
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    fs::write(&p, "seed = 1\n[dataset]\n").unwrap();
    match load_config(&p, &[]) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "dataset.sequences"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn threat_modes_control_secret_data() {
    let base = small();
    let prepared = prepare(&base).unwrap();
    let (target, _) = obtain_target(&base, &prepared, Parallelism::SEQUENTIAL).unwrap();

    let free = run_attack(&base, &prepared, &target, &opts()).unwrap();
    assert_eq!(free.data.count(Provenance::Secret), 0);
    assert!(free.data.count(Provenance::Agent) > 0);
    assert!(free.data.count(Provenance::Random) > 0);

    let mut limited = base.clone();
    limited.threat.mode = ThreatMode::Limited;
    let out = run_attack(&limited, &prepared, &target, &opts()).unwrap();
    let secret: Vec<_> = out.data.pairs.iter().filter(|p| p.provenance == Provenance::Secret).collect();
    assert_eq!(secret.len(), 7);
    assert!(secret.iter().all(|p| p.sequence.len() <= limited.prefix_cap()));
    assert_eq!(out.report.counts.secret_pairs, 7);

    let mut available = base.clone();
    available.threat.mode = ThreatMode::Available;
    let out = run_attack(&available, &prepared, &target, &opts()).unwrap();
    assert_eq!(out.data.count(Provenance::Secret), out.data.len());
    assert!(out.data.pairs.iter().all(|p| p.sequence.len() <= available.generator.target_length));

    let leaked = SurrogateDataset {
        item_count: 120,
        k: 10,
        defense: DefenseConfig::OFF,
        pairs: vec![SurrogatePair {
            sequence: vec![1],
            list: TopKList::new((0..10).collect()).unwrap(),
            provenance: Provenance::Secret,
        }],
    };
    assert!(check_threat_gate(ThreatMode::Free, &leaked).is_err());
    assert!(check_threat_gate(ThreatMode::Limited, &leaked).is_ok());
}

#[test]
fn generator_routing_and_labels() {
    let base = small();
    let prepared = prepare(&base).unwrap();
    let (target, _) = obtain_target(&base, &prepared, Parallelism::SEQUENTIAL).unwrap();

    let mut random = base.clone();
    random.generator.kind = GeneratorKind::Random;
    let corpus = build_attack_corpus(&random, &prepared, &target, &opts()).unwrap();
    assert!(corpus.log.is_none());
    assert_eq!(corpus.sources.len(), 1);
    assert_eq!(corpus.sources[0].0, Provenance::Random);
    assert_eq!(corpus.sources[0].1.len(), 30);
    assert!(corpus.sources[0].1.sequences().iter().all(|s| s.len() == 12));
    assert_eq!(method_label(&random), "random");

    let mut ablation = base.clone();
    ablation.generator.exposure_mix = false;
    ablation.generator.shuffle = false;
    let corpus = build_attack_corpus(&ablation, &prepared, &target, &opts()).unwrap();
    assert_eq!(corpus.sources.len(), 1);
    assert_eq!(corpus.sources[0].0, Provenance::Agent);
    assert!(corpus.plan.is_none());
    assert_eq!(method_label(&ablation), "agent");
    assert_eq!(method_label(&base), "agent+mix+shuffle");

    let mut ar = base.clone();
    ar.generator.kind = GeneratorKind::AutoregressiveRandom;
    let corpus = build_attack_corpus(&ar, &prepared, &target, &opts()).unwrap();
    let log = corpus.log.unwrap();
    assert_eq!(corpus.sources[0].1.len(), 30);
    assert!(log.records.iter().all(|r| r.list.k() == 10));
}

#[test]
fn zero_replacement_matches_no_defense() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, rows) = cmd_defense_compare(&small(), &[0.0, 0.5], dir.path(), &opts()).unwrap();
    assert_eq!(rows.len(), 3);
    let strip = |r: &DefenseRow| (r.ndcg_at_10, r.recall_at_10, r.agreement_at_1, r.agreement_at_10, r.target_recall_at_10);
    assert_eq!(strip(&rows[0]), strip(&rows[1]));
    assert_eq!(rows[0].replace_fraction, None);
    let table = fs::read_to_string(dir.path().join("defense.tsv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method\tdefense\tn_at_10\tr_at_10\tagr_at_1\tagr_at_10\ttarget_n_at_10\ttarget_r_at_10"
    );
    assert_eq!(lines.count(), 3);
    assert_eq!(manifest.artifacts.iter().filter(|a| a.role == "report").count(), 3);
}

#[test]
fn sweep_emits_one_row_per_k_including_the_full_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let (_, rows) = cmd_sweep_k(&small(), &[5, 120], dir.path(), &opts()).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![5, 120]);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.agreement_at_10)));
    let table = fs::read_to_string(dir.path().join("k_sweep.tsv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(matches!(
        cmd_sweep_k(&small(), &[50, 10], &dir.path().join("bad"), &opts()),
        Err(Error::Config { .. })
    ));
    assert!(matches!(
        cmd_sweep_k(&small(), &[10, 121], &dir.path().join("big"), &opts()),
        Err(Error::Config { .. })
    ));
}

#[test]
fn attack_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let (manifest, report) = cmd_attack(&cfg, dir.path(), &opts()).unwrap();
    for role in ["target", "surrogate", "surrogate-data", "query-log", "report", "distill-trace"] {
        let a = manifest.artifact(role).unwrap_or_else(|| panic!("missing {role}"));
        let bytes = fs::read(dir.path().join(&a.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), a.sha256);
    }
    let data = load_surrogate_dataset(&dir.path().join("surrogate_data.jsonl")).unwrap();
    assert_eq!(data.len(), report.counts.surrogate_pairs);
    assert_eq!(ExperimentConfig::from_json(report.config.clone()).unwrap(), cfg);

    let (_, eval) = cmd_evaluate(
        &cfg,
        &dir.path().join("target.ckpt"),
        &dir.path().join("surrogate.ckpt"),
        &dir.path().join("eval"),
        &opts(),
    )
    .unwrap();
    assert_eq!(eval.agreement_at_10, report.metrics.agreement_at_10);
    assert_eq!(eval.second_recall_at_10, report.metrics.surrogate.recall_at_10);

    let (_, bias) = cmd_analyze(&dir.path().join("query_log.jsonl"), 120, None, &dir.path().join("bias")).unwrap();
    assert_eq!(bias.display_position.selections, bias.original_rank.selections);
    assert!(fs::read_to_string(dir.path().join("bias/unseen_curve.tsv")).unwrap().starts_with("round\tunseen\n0\t120\n"));
    assert!(matches!(
        cmd_analyze(&dir.path().join("query_log.jsonl"), 5, None, &dir.path().join("bias2")),
        Err(Error::ItemOutOfRange { .. })
    ));
}

/// Always picks the first item; fails every call once `budget` runs out.
struct Budgeted {
    budget: AtomicUsize,
    calls: AtomicUsize,
}

impl Budgeted {
    fn new(budget: usize) -> Arc<Self> {
        Arc::new(Budgeted {
            budget: AtomicUsize::new(budget),
            calls: AtomicUsize::new(0),
        })
    }
}

impl ChatClient for Budgeted {
    fn complete(&self, _: &[ChatMessage]) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.budget.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1)) {
            Ok(_) => Ok("1, 2, 3, 4, 5".into()),
            Err(_) => Err(ChatError::Status {
                status: 503,
                body: "unavailable".into(),
            }),
        }
    }
}

#[test]
fn chat_generation_resumes_per_user() {
    let mut cfg = small();
    cfg.generator.num_sequences = 8;
    cfg.agent.backend = AgentBackend::Chat;
    let dir = tempfile::tempdir().unwrap();
    let with = |client: Arc<Budgeted>| RunOptions {
        parallelism: Parallelism::SEQUENTIAL,
        chat_client: Some(client),
        resume_file: None,
    };

    let clean = Budgeted::new(usize::MAX);
    let (_, reference) = cmd_attack(&cfg, &dir.path().join("clean"), &with(Arc::clone(&clean))).unwrap();
    let full_calls = clean.calls.load(Ordering::SeqCst);

    let flaky = Budgeted::new(full_calls / 2);
    let err = cmd_attack(&cfg, &dir.path().join("resumed"), &with(flaky)).unwrap_err();
    assert!(matches!(err, Error::Incomplete { failed } if failed > 0 && failed < 8), "{err:?}");
    assert!(dir.path().join("resumed/generation_progress.jsonl").exists());

    let second = Budgeted::new(usize::MAX);
    let (_, resumed) = cmd_attack(&cfg, &dir.path().join("resumed"), &with(Arc::clone(&second))).unwrap();
    assert!(second.calls.load(Ordering::SeqCst) < full_calls);
    assert_eq!(resumed, reference);
}
