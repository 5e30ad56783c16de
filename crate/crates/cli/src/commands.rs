//! The five pipeline commands.
//!
//! Each command validates its input paths before doing any work, writes
//! whole files (so reruns with the same inputs and seed are bytewise
//! identical), and prints a short summary to stdout.

use crate::config::{RunConfig, TrainOverrides};
use crate::io::{
    heading, read_corpus, read_json, require_dir, require_file, write_json, write_jsonl,
};
use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use treate_core::estimate::{effect_report, EffectReport, Metric};
use treate_core::synth::benchmark_scm;
use treate_core::text::{build_vocab, format_test_share, ingest_ddxplus, GoldSource, RawRecord};
use treate_core::train::{
    train_baseline, train_stage1, train_stage2, Checkpoint, LossTrace, Stage,
};
use treate_core::{CanonicalRecord, ConceptSpec};

/// Generate the synthetic benchmark corpus: train/test record files, the
/// generating model itself, its exactly computed per-disease concept
/// effects, and the disease name list.
pub fn gen_synth(
    config: &RunConfig,
    overrides: &TrainOverrides,
    out: &Path,
    train_count: Option<usize>,
    test_count: Option<usize>,
) -> Result<()> {
    let train_cfg = config.resolve_train(overrides)?;
    let seed = train_cfg.seed;
    let n_train = train_count.or(config.data.train_count).unwrap_or(4000);
    let n_test = test_count.or(config.data.test_count).unwrap_or(1000);
    if n_train == 0 || n_test == 0 {
        bail!("corpus sizes must be positive (train {n_train}, test {n_test})");
    }

    let scm = benchmark_scm();
    let effects = scm.true_concept_effect()?;
    let train = scm.generate_corpus(seed, n_train, "train-")?;
    let test = scm.generate_corpus(seed, n_test, "test-")?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_jsonl(&out.join("train.jsonl"), &train, "train corpus")?;
    write_jsonl(&out.join("test.jsonl"), &test, "test corpus")?;
    write_json(&out.join("scm.json"), &scm, "generating model")?;
    write_json(&out.join("true_effects.json"), &effects, "true effects")?;
    write_json(&out.join("diseases.json"), &scm.disease_names, "disease list")?;

    println!("generated {n_train} train / {n_test} test records (seed {seed})");
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_raw_lines(path: &Path) -> Result<Vec<RawRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read raw records {}", path.display()))?;
    if text.trim().is_empty() {
        bail!("raw records {} is empty", path.display());
    }
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).with_context(|| {
                format!("raw records {}: line {}: malformed record", path.display(), i + 1)
            })
        })
        .collect()
}

fn ingest_file(
    path: &Path,
    dictionary: &BTreeMap<String, String>,
    pathologies: &[String],
    gold_source: GoldSource,
    concepts: &[ConceptSpec],
) -> Result<Vec<CanonicalRecord>> {
    parse_raw_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            ingest_ddxplus(raw, dictionary, pathologies, gold_source, concepts).with_context(
                || format!("raw records {}: line {}", path.display(), i + 1),
            )
        })
        .collect()
}

fn flag_or_config(
    flag: Option<&Path>,
    config: &Option<PathBuf>,
    what: &str,
    hint: &str,
) -> Result<PathBuf> {
    flag.map(PathBuf::from)
        .or_else(|| config.clone())
        .ok_or_else(|| anyhow::anyhow!("no {what}: pass {hint} or set it in the config file"))
}

/// Convert raw clinical records (evidence codes plus a pathology or a
/// differential) into the canonical corpus format, and print the split
/// summary.
#[allow(clippy::too_many_arguments)]
pub fn ingest(
    config: &RunConfig,
    train_records: Option<&Path>,
    test_records: Option<&Path>,
    evidence: Option<&Path>,
    pathologies: Option<&Path>,
    gold_source: Option<GoldSource>,
    out: &Path,
) -> Result<()> {
    let train_records =
        flag_or_config(train_records, &config.data.train_records, "raw records", "--train-records")?;
    let test_records =
        test_records.map(PathBuf::from).or_else(|| config.data.test_records.clone());
    let evidence =
        flag_or_config(evidence, &config.data.evidence_path, "evidence dictionary", "--evidence")?;
    let pathologies = flag_or_config(
        pathologies,
        &config.data.pathologies_path,
        "pathology list",
        "--pathologies",
    )?;
    let gold_source =
        gold_source.or(config.data.gold_source).unwrap_or(GoldSource::Pathology);
    let (train_records, test_records, evidence, pathologies) =
        (&train_records, test_records.as_deref(), &evidence, &pathologies);

    require_file(train_records, "raw records")?;
    if let Some(p) = test_records {
        require_file(p, "raw records")?;
    }
    require_file(evidence, "evidence dictionary")?;
    require_file(pathologies, "pathology list")?;

    let dictionary: BTreeMap<String, String> = read_json(evidence, "evidence dictionary")?;
    let disease_names: Vec<String> = read_json(pathologies, "pathology list")?;
    if disease_names.len() < 2 {
        bail!("pathology list {} has fewer than two entries", pathologies.display());
    }
    let mut concepts = vec![config.concept()];
    if let Some(control) = &config.data.control_concept {
        concepts.push(control.clone());
    }

    let train = ingest_file(train_records, &dictionary, &disease_names, gold_source, &concepts)?;
    let test = test_records
        .map(|p| ingest_file(p, &dictionary, &disease_names, gold_source, &concepts))
        .transpose()?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_jsonl(&out.join("train.jsonl"), &train, "canonical corpus")?;
    if let Some(test) = &test {
        write_jsonl(&out.join("test.jsonl"), test, "canonical corpus")?;
    }
    write_json(&out.join("diseases.json"), &disease_names, "disease list")?;

    match &test {
        Some(test) => {
            let share = format_test_share(test.len() as u64, train.len() as u64);
            println!("train {} records", train.len());
            println!("test {} records ({share})", test.len());
        }
        None => println!("train {} records", train.len()),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn save_run(out: &Path, checkpoint: &Checkpoint, trace: &LossTrace) -> Result<()> {
    checkpoint.save(out)?;
    std::fs::write(out.join("trace.csv"), trace.to_csv())
        .with_context(|| format!("cannot write loss trace in {}", out.display()))?;
    Ok(())
}

/// Train one stage and write its checkpoint directory plus loss trace.
pub fn train(
    config: &RunConfig,
    overrides: &TrainOverrides,
    stage: Stage,
    corpus: Option<&Path>,
    tc_checkpoint: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let corpus_path = corpus
        .map(PathBuf::from)
        .or_else(|| config.data.train_path.clone())
        .ok_or_else(|| anyhow::anyhow!("no training corpus: pass --corpus or set data.train_path"))?;
    let records = read_corpus(&corpus_path, "training corpus")?;
    let train_cfg = config.resolve_train(overrides)?;

    if stage == Stage::Cf {
        let tc_dir = tc_checkpoint
            .ok_or_else(|| anyhow::anyhow!("stage cf requires --tc-checkpoint"))?;
        require_dir(tc_dir, "tc checkpoint")?;
        let tc = Checkpoint::load(tc_dir)?;
        let (checkpoint, trace) = train_stage2(&train_cfg, &tc, &records)?;
        save_run(out, &checkpoint, &trace)?;
        println!(
            "stage cf: {} steps, final loss {}",
            train_cfg.steps,
            checkpoint.final_losses["total"]
        );
        println!("checkpoint {} at {}", checkpoint.id(), out.display());
        return Ok(());
    }
    if tc_checkpoint.is_some() {
        bail!("--tc-checkpoint only applies to --stage cf");
    }

    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let vocab = build_vocab(&texts, 1)?;
    let num_classes = records[0].gold.len();
    let encoder = config.resolve_encoder(vocab.len(), num_classes, &train_cfg)?;

    let (checkpoint, trace) = match stage {
        Stage::Baseline => train_baseline(&encoder, &train_cfg, &records, &vocab)?,
        Stage::Tc => {
            let concept = config.concept();
            let control = config.control_concept(encoder.enable_cc)?;
            train_stage1(&encoder, &train_cfg, &records, &vocab, &concept, control.as_ref())?
        }
        Stage::Cf => unreachable!("handled above"),
    };
    save_run(out, &checkpoint, &trace)?;

    let losses: Vec<String> = checkpoint
        .final_losses
        .iter()
        .map(|(k, v)| format!("{k} {v}"))
        .collect();
    println!("stage {stage}: {} steps, final losses: {}", train_cfg.steps, losses.join(", "));
    println!("checkpoint {} at {}", checkpoint.id(), out.display());
    Ok(())
}

fn print_report(report: &EffectReport, top_k: usize) {
    println!(
        "concept \"{}\": {} test examples ({} with, {} without)",
        report.concept, report.test_size, report.present_count, report.absent_count
    );
    println!(
        "baseline {} vs counterfactual {}{}",
        report.baseline_id,
        report.counterfactual_id,
        if report.counterfactual_used_control_head { " (control head)" } else { "" }
    );
    println!();
    println!("{}", heading("causal effect (mean-prediction shift, by magnitude)"));
    print!("{}", report.format_table(Metric::TreateAbs, top_k, top_k));
    println!();
    println!("{}", heading("correlational baseline (conditional-mean difference, signed)"));
    print!("{}", report.format_table(Metric::ConexpSigned, top_k, top_k));
}

/// Estimate concept effects from a baseline and a counterfactual
/// checkpoint over a test corpus; write JSON and CSV reports and print the
/// ranked tables.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    config: &RunConfig,
    baseline: &Path,
    cf: &Path,
    test: Option<&Path>,
    concept: Option<&str>,
    diseases: Option<&Path>,
    out: &Path,
    top_k: Option<usize>,
) -> Result<()> {
    require_dir(baseline, "baseline checkpoint")?;
    require_dir(cf, "counterfactual checkpoint")?;
    let test_path = test
        .map(PathBuf::from)
        .or_else(|| config.eval.test_path.clone())
        .ok_or_else(|| anyhow::anyhow!("no test corpus: pass --test or set eval.test_path"))?;
    require_file(&test_path, "test corpus")?;

    // Disease names: explicit flag, or the diseases.json written next to
    // the test corpus by gen-synth/ingest.
    let diseases_path = match diseases {
        Some(p) => PathBuf::from(p),
        None => {
            let sibling = test_path.parent().unwrap_or(Path::new(".")).join("diseases.json");
            if !sibling.is_file() {
                bail!(
                    "no disease list: pass --diseases or keep diseases.json next to the test corpus"
                );
            }
            sibling
        }
    };
    require_file(&diseases_path, "disease list")?;

    let records = read_corpus(&test_path, "test corpus")?;
    let disease_names: Vec<String> = read_json(&diseases_path, "disease list")?;
    let o = Checkpoint::load(baseline)?;
    let c = Checkpoint::load(cf)?;
    let concept_name = concept.map(str::to_string).unwrap_or_else(|| config.concept().name);

    let report = effect_report(&o, &c, &records, &concept_name, &disease_names)?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_json(&out.join("report.json"), &report, "effect report")?;
    std::fs::write(out.join("report.csv"), report.to_csv())
        .with_context(|| format!("cannot write report.csv in {}", out.display()))?;

    let k = top_k.or(config.eval.top_k).unwrap_or(5);
    print_report(&report, k);
    println!();
    println!("wrote {}", out.join("report.json").display());
    println!("wrote {}", out.join("report.csv").display());
    Ok(())
}

/// Re-render a saved JSON effect report.
pub fn report(input: &Path, top_k: Option<usize>, out: Option<&Path>) -> Result<()> {
    require_file(input, "effect report")?;
    let report: EffectReport = read_json(input, "effect report")?;
    print_report(&report, top_k.unwrap_or(5));
    if let Some(out) = out {
        std::fs::write(out, report.to_csv())
            .with_context(|| format!("cannot write {}", out.display()))?;
        println!();
        println!("wrote {}", out.display());
    }
    Ok(())
}
