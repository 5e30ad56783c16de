//! End-to-end tests that drive the compiled binary exactly as a user
//! would: real subprocesses, real files, assertions on stdout, stderr,
//! exit codes, and the bytes written to disk.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Run the binary with NO_COLOR pinned so assertions on stdout are stable
/// regardless of the invoking environment.
fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treate"))
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// Run a command that must fail; return the machine-readable error message
/// parsed from the single JSON line on stderr.
fn run_err(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).expect("utf-8 stderr");
    let line = stderr.lines().last().unwrap_or_default();
    let parsed: serde_json::Value =
        serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr not one JSON line: {stderr}"));
    parsed["error"].as_str().expect("error field").to_string()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn line_count(path: &Path) -> usize {
    read(path).lines().count()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

#[test]
fn help_lists_every_subcommand() {
    let stdout = run_ok(&["--help"]);
    for sub in ["gen-synth", "ingest", "train", "estimate", "report"] {
        assert!(stdout.contains(sub), "--help is missing {sub}");
    }
}

#[test]
fn gen_synth_writes_corpus_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let stdout = run_ok(&[
        "--seed", "3",
        "gen-synth",
        "--out", out.to_str().unwrap(),
        "--train-count", "20",
        "--test-count", "10",
    ]);
    assert!(stdout.contains("generated 20 train / 10 test records (seed 3)"));

    assert_eq!(line_count(&out.join("train.jsonl")), 20);
    assert_eq!(line_count(&out.join("test.jsonl")), 10);
    let diseases = json(&out.join("diseases.json"));
    assert_eq!(diseases.as_array().unwrap().len(), 5);
    let effects = json(&out.join("true_effects.json"));
    assert_eq!(effects.as_array().unwrap().len(), 5);
    let scm = json(&out.join("scm.json"));
    assert!(scm["emission"].is_array());

    // Every record is valid canonical JSON with a flag for the treatment
    // concept and a gold distribution over the five diseases.
    for line in read(&out.join("train.jsonl")).lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["concept_flags"]["chest pain"].is_u64());
        assert_eq!(rec["gold"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn gen_synth_is_bytewise_idempotent_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        run_ok(&[
            "--seed", seed,
            "gen-synth",
            "--out", dir.to_str().unwrap(),
            "--train-count", "15",
            "--test-count", "5",
        ]);
    }
    for file in ["train.jsonl", "test.jsonl", "scm.json", "true_effects.json", "diseases.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
    assert_ne!(
        std::fs::read(a.join("train.jsonl")).unwrap(),
        std::fs::read(c.join("train.jsonl")).unwrap(),
        "different seeds produced identical corpora"
    );
}

#[test]
fn ingest_converts_fixture_records_and_prints_split_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("corpus");
    let stdout = run_ok(&[
        "ingest",
        "--train-records", fixture("records.jsonl").to_str().unwrap(),
        "--test-records", fixture("records.jsonl").to_str().unwrap(),
        "--evidence", fixture("evidence.json").to_str().unwrap(),
        "--pathologies", fixture("pathologies.json").to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("train 10 records"), "summary: {stdout}");
    assert!(stdout.contains("test 10 records (50.00%)"), "summary: {stdout}");

    assert_eq!(line_count(&out.join("train.jsonl")), 10);
    assert_eq!(line_count(&out.join("test.jsonl")), 10);
    assert_eq!(
        json(&out.join("diseases.json")),
        serde_json::json!(["Bronchitis", "PSVT", "Anemia", "Cluster headache"])
    );

    let records: Vec<serde_json::Value> = read(&out.join("train.jsonl"))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // r-0 mentions the chest-pain evidence, r-1 does not, r-3 only in its
    // history turn (still a mention).
    assert_eq!(records[0]["concept_flags"]["chest pain"], 1);
    assert_eq!(records[1]["concept_flags"]["chest pain"], 0);
    assert_eq!(records[3]["concept_flags"]["chest pain"], 1);
    // Gold is one-hot over the four pathologies, in list order.
    assert_eq!(records[0]["gold"], serde_json::json!([1.0, 0.0, 0.0, 0.0]));
    assert_eq!(records[2]["gold"], serde_json::json!([0.0, 1.0, 0.0, 0.0]));
    // The rendered text is dialogue.
    let text = records[0]["text"].as_str().unwrap();
    assert!(text.contains("Doctor:") && text.contains("Patient: I have pain in my chest."));
}

#[test]
fn ingest_differential_gold_is_normalized() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("corpus");
    run_ok(&[
        "ingest",
        "--train-records", fixture("records.jsonl").to_str().unwrap(),
        "--evidence", fixture("evidence.json").to_str().unwrap(),
        "--pathologies", fixture("pathologies.json").to_str().unwrap(),
        "--gold-source", "differential",
        "--out", out.to_str().unwrap(),
    ]);
    let first: serde_json::Value =
        serde_json::from_str(read(&out.join("train.jsonl")).lines().next().unwrap()).unwrap();
    let gold: Vec<f64> = first["gold"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (got, want) in gold.iter().zip([0.7, 0.2, 0.1, 0.0]) {
        assert!((got - want).abs() < 1e-6, "gold {gold:?}");
    }
}

#[test]
fn ingest_reports_malformed_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let msg = run_err(&[
        "ingest",
        "--train-records", fixture("malformed.jsonl").to_str().unwrap(),
        "--evidence", fixture("evidence.json").to_str().unwrap(),
        "--pathologies", fixture("pathologies.json").to_str().unwrap(),
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(msg.contains("line 3") && msg.contains("malformed record"), "message: {msg}");
}

#[test]
fn ingest_rejects_unknown_evidence_code() {
    let tmp = tempfile::tempdir().unwrap();
    let msg = run_err(&[
        "ingest",
        "--train-records", fixture("bad_code.jsonl").to_str().unwrap(),
        "--evidence", fixture("evidence.json").to_str().unwrap(),
        "--pathologies", fixture("pathologies.json").to_str().unwrap(),
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(msg.contains("line 1") && msg.contains("unknown evidence code \"E_99\""), "message: {msg}");
}

#[test]
fn ingest_rejects_empty_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let msg = run_err(&[
        "ingest",
        "--train-records", empty.to_str().unwrap(),
        "--evidence", fixture("evidence.json").to_str().unwrap(),
        "--pathologies", fixture("pathologies.json").to_str().unwrap(),
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(msg.contains("is empty"), "message: {msg}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{ "train": { "step": 5 } }"#).unwrap();
    let msg = run_err(&[
        "--config", cfg.to_str().unwrap(),
        "gen-synth",
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(msg.contains("unknown field") && msg.contains("step"), "message: {msg}");
}

#[test]
fn missing_input_paths_fail_upfront() {
    let tmp = tempfile::tempdir().unwrap();
    let msg = run_err(&[
        "estimate",
        "--baseline", tmp.path().join("nope").to_str().unwrap(),
        "--cf", tmp.path().join("nope").to_str().unwrap(),
        "--test", tmp.path().join("nope.jsonl").to_str().unwrap(),
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(
        msg.contains("baseline checkpoint") && msg.contains("not a directory"),
        "message: {msg}"
    );

    let msg = run_err(&[
        "ingest",
        "--train-records", fixture("records.jsonl").to_str().unwrap(),
        "--evidence", tmp.path().join("nope.json").to_str().unwrap(),
        "--pathologies", fixture("pathologies.json").to_str().unwrap(),
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(msg.contains("evidence dictionary") && msg.contains("not a file"), "message: {msg}");
}

/// Drives the whole pipeline on a small synthetic corpus: generate, train
/// all three stages, estimate, re-render; then checks determinism and the
/// cross-checkpoint guard rails.
#[test]
fn full_pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();

    let data = dir("data");
    run_ok(&[
        "gen-synth", "--out", &data, "--train-count", "48", "--test-count", "24", "--seed", "11",
    ]);

    // A deliberately tiny architecture so three training stages stay fast.
    let cfg_path = tmp.path().join("run.json");
    let cfg = serde_json::json!({
        "data": { "train_path": format!("{data}/train.jsonl") },
        "model": { "layers": 1, "hidden": 16, "heads": 2, "ff_dim": 16, "max_len": 48 },
        "train": { "steps": 25, "batch_size": 4, "lr": 0.005, "seed": 11 },
        "eval": { "test_path": format!("{data}/test.jsonl"), "top_k": 3 }
    });
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    // Baseline: corpus from an explicit flag.
    let (o, o2, tc, cf) = (dir("ckpt-o"), dir("ckpt-o2"), dir("ckpt-tc"), dir("ckpt-cf"));
    let stdout = run_ok(&[
        "--config", cfg, "train", "--stage", "baseline",
        "--corpus", &format!("{data}/train.jsonl"), "--out", &o,
    ]);
    assert!(stdout.contains("checkpoint baseline-"), "stdout: {stdout}");
    assert!(tmp.path().join("ckpt-o/trace.csv").exists());

    // Concept-forgetting stage: corpus from the config file; reversal
    // strength from the flag, recorded in the manifest.
    let stdout = run_ok(&["--config", cfg, "train", "--stage", "tc", "--out", &tc, "--lambda", "6"]);
    assert!(stdout.contains("checkpoint tc-"), "stdout: {stdout}");
    let manifest = json(&tmp.path().join("ckpt-tc/manifest.json"));
    assert_eq!(manifest["encoder"]["lambda"], 6.0);
    assert_eq!(manifest["stage"], "tc");

    // Counterfactual classifier on the frozen encoder.
    run_ok(&["--config", cfg, "train", "--stage", "cf", "--tc-checkpoint", &tc, "--out", &cf]);

    // Training the counterfactual head on a non-tc checkpoint is refused.
    let msg = run_err(&["--config", cfg, "train", "--stage", "cf", "--tc-checkpoint", &o, "--out", &dir("x")]);
    assert!(msg.contains("checkpoint stage is \"baseline\", expected \"tc\""), "message: {msg}");

    // Identical rerun of a stage is bytewise identical.
    run_ok(&[
        "--config", cfg, "train", "--stage", "baseline",
        "--corpus", &format!("{data}/train.jsonl"), "--out", &o2,
    ]);
    for file in ["manifest.json", "weights.bin", "vocab.json"] {
        assert_eq!(
            std::fs::read(tmp.path().join("ckpt-o").join(file)).unwrap(),
            std::fs::read(tmp.path().join("ckpt-o2").join(file)).unwrap(),
            "{file} differs between identical training runs"
        );
    }

    // Estimate: test corpus and top-k from the config file; disease names
    // from diseases.json next to the test corpus.
    let rep = dir("report");
    let stdout = run_ok(&["--config", cfg, "estimate", "--baseline", &o, "--cf", &cf, "--out", &rep]);
    assert!(stdout.contains("concept \"chest pain\": 24 test examples"), "stdout: {stdout}");
    assert!(stdout.contains("disease,treate"), "stdout: {stdout}");
    assert!(stdout.contains("disease,conexp"), "stdout: {stdout}");
    assert!(!stdout.contains('\x1b'), "NO_COLOR was ignored");

    let report = json(&tmp.path().join("report/report.json"));
    let effects = report["effects"].as_array().unwrap();
    assert_eq!(effects.len(), 5);
    let sum: f64 = effects.iter().map(|e| e["treate_signed"].as_f64().unwrap()).sum();
    assert!(sum.abs() < 1e-6, "signed effects sum to {sum}");
    let csv = read(&tmp.path().join("report/report.csv"));
    assert!(csv.starts_with("disease,treate_abs,treate_signed,conexp\n"), "csv: {csv}");

    // Estimate twice: bytewise identical report.
    let rep2 = dir("report2");
    run_ok(&["--config", cfg, "estimate", "--baseline", &o, "--cf", &cf, "--out", &rep2]);
    assert_eq!(
        std::fs::read(tmp.path().join("report/report.json")).unwrap(),
        std::fs::read(tmp.path().join("report2/report.json")).unwrap(),
        "report.json differs between identical estimate runs"
    );

    // Re-render the saved report; CSV export matches the original.
    let csv_out = tmp.path().join("again.csv");
    let stdout = run_ok(&[
        "report", "--input", &format!("{rep}/report.json"),
        "--top-k", "2", "--out", csv_out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("disease,treate"), "stdout: {stdout}");
    assert!(stdout.contains("...,..."), "top/bottom 2 of 5 should elide one row: {stdout}");
    assert_eq!(read(&csv_out), csv);

    // Color: the heading is bold exactly when NO_COLOR is absent.
    let colored = Command::new(env!("CARGO_BIN_EXE_treate"))
        .args(["report", "--input", &format!("{rep}/report.json")])
        .env_remove("NO_COLOR")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&colored.stdout).contains("\x1b[1m"));

    // Checkpoints trained on different corpora (different vocabularies)
    // cannot be compared; the error names both vocabulary hashes.
    let ing = dir("ingested");
    run_ok(&[
        "ingest",
        "--train-records", fixture("records.jsonl").to_str().unwrap(),
        "--evidence", fixture("evidence.json").to_str().unwrap(),
        "--pathologies", fixture("pathologies.json").to_str().unwrap(),
        "--out", &ing,
    ]);
    let foreign = dir("ckpt-foreign");
    run_ok(&[
        "--config", cfg, "train", "--stage", "baseline",
        "--corpus", &format!("{ing}/train.jsonl"), "--out", &foreign,
    ]);
    let msg = run_err(&["--config", cfg, "estimate", "--baseline", &o, "--cf", &foreign, "--out", &dir("x")]);
    assert!(msg.contains("different vocabularies"), "message: {msg}");
    let hash_o = json(&tmp.path().join("ckpt-o/manifest.json"))["vocab_hash"]
        .as_str().unwrap().to_string();
    let hash_f = json(&tmp.path().join("ckpt-foreign/manifest.json"))["vocab_hash"]
        .as_str().unwrap().to_string();
    assert!(msg.contains(&hash_o) && msg.contains(&hash_f), "message lacks hashes: {msg}");
}
