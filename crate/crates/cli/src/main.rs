//! Command-line front end for the concept-effect pipeline.
//!
//! Subcommands: `gen-synth` (synthetic benchmark corpus), `ingest` (raw
//! clinical records to canonical corpus), `train` (one of the three
//! stages), `estimate` (effect report from two checkpoints), `report`
//! (re-render a saved report).
//!
//! Errors print one machine-readable JSON line to stderr and exit nonzero.

mod commands;
mod config;
mod io;

use clap::{Parser, Subcommand, ValueEnum};
use config::{RunConfig, TrainOverrides};
use std::path::PathBuf;
use std::process::ExitCode;
use treate_core::model::HeadMode;
use treate_core::text::GoldSource;
use treate_core::train::{Stage, TargetMode};

#[derive(Parser)]
#[command(
    name = "treate",
    about = "Estimate the causal effect of a text concept on a classifier's predictions",
    version
)]
struct Cli {
    /// Run configuration file (JSON); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    /// Encoder and disease classifier trained together on the disease objective.
    Baseline,
    /// Concept-forgetting encoder: language objectives plus a gradient-reversed concept head.
    Tc,
    /// Disease classifier trained on the frozen concept-forgetting encoder.
    Cf,
}

impl From<StageArg> for Stage {
    fn from(v: StageArg) -> Stage {
        match v {
            StageArg::Baseline => Stage::Baseline,
            StageArg::Tc => Stage::Tc,
            StageArg::Cf => Stage::Cf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadModeArg {
    Sparsemax,
    Softmax,
}

impl From<HeadModeArg> for HeadMode {
    fn from(v: HeadModeArg) -> HeadMode {
        match v {
            HeadModeArg::Sparsemax => HeadMode::Sparsemax,
            HeadModeArg::Softmax => HeadMode::Softmax,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetModeArg {
    Onehot,
    Distribution,
}

impl From<TargetModeArg> for TargetMode {
    fn from(v: TargetModeArg) -> TargetMode {
        match v {
            TargetModeArg::Onehot => TargetMode::Onehot,
            TargetModeArg::Distribution => TargetMode::Distribution,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GoldArg {
    /// One-hot gold from the single labeled pathology.
    Pathology,
    /// Normalized gold distribution from the differential diagnosis.
    Differential,
}

impl From<GoldArg> for GoldSource {
    fn from(v: GoldArg) -> GoldSource {
        match v {
            GoldArg::Pathology => GoldSource::Pathology,
            GoldArg::Differential => GoldSource::Differential,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark corpus with known true effects.
    GenSynth {
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Training records to generate (default 4000).
        #[arg(long)]
        train_count: Option<usize>,
        /// Test records to generate (default 1000).
        #[arg(long)]
        test_count: Option<usize>,
    },
    /// Convert raw clinical records to the canonical corpus format.
    Ingest {
        /// Raw training records (JSONL); overrides data.train_records.
        #[arg(long, value_name = "FILE")]
        train_records: Option<PathBuf>,
        /// Raw test records (JSONL), optional.
        #[arg(long, value_name = "FILE")]
        test_records: Option<PathBuf>,
        /// Evidence dictionary: JSON object mapping codes to phrases.
        #[arg(long, value_name = "FILE")]
        evidence: Option<PathBuf>,
        /// Pathology list: JSON array of disease names.
        #[arg(long, value_name = "FILE")]
        pathologies: Option<PathBuf>,
        /// Where the gold distribution comes from (default: pathology).
        #[arg(long, value_enum)]
        gold_source: Option<GoldArg>,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train one pipeline stage and write a checkpoint directory.
    Train {
        /// Which stage to train.
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Canonical training corpus (JSONL); overrides data.train_path.
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Concept-forgetting checkpoint to build on (required for --stage cf).
        #[arg(long, value_name = "DIR")]
        tc_checkpoint: Option<PathBuf>,
        /// Output checkpoint directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Gradient-reversal strength.
        #[arg(long)]
        lambda: Option<f32>,
        /// Classification head: sparse or dense output distribution.
        #[arg(long, value_enum)]
        head_mode: Option<HeadModeArg>,
        /// Disease target: one-hot top label or full gold distribution.
        #[arg(long, value_enum)]
        target_mode: Option<TargetModeArg>,
        /// Optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Examples per step.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Estimate concept effects from a baseline and a counterfactual checkpoint.
    Estimate {
        /// Baseline checkpoint directory.
        #[arg(long, value_name = "DIR")]
        baseline: PathBuf,
        /// Counterfactual (concept-forgetting) checkpoint directory.
        #[arg(long, value_name = "DIR")]
        cf: PathBuf,
        /// Canonical test corpus (JSONL); overrides eval.test_path.
        #[arg(long, value_name = "FILE")]
        test: Option<PathBuf>,
        /// Concept name to condition the correlational baseline on.
        #[arg(long)]
        concept: Option<String>,
        /// Disease name list (JSON array); defaults to diseases.json next to the test corpus.
        #[arg(long, value_name = "FILE")]
        diseases: Option<PathBuf>,
        /// Output directory for report.json and report.csv.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Rows to show at each end of the ranked tables.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Re-render a saved effect report.
    Report {
        /// Saved report.json.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Rows to show at each end of the ranked tables.
        #[arg(long)]
        top_k: Option<usize>,
        /// Also write the report as CSV to this path.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenSynth { out, train_count, test_count } => {
            let overrides = TrainOverrides { seed: cli.seed, ..Default::default() };
            commands::gen_synth(&config, &overrides, &out, train_count, test_count)
        }
        Command::Ingest { train_records, test_records, evidence, pathologies, gold_source, out } => {
            commands::ingest(
                &config,
                train_records.as_deref(),
                test_records.as_deref(),
                evidence.as_deref(),
                pathologies.as_deref(),
                gold_source.map(Into::into),
                &out,
            )
        }
        Command::Train {
            stage,
            corpus,
            tc_checkpoint,
            out,
            lambda,
            head_mode,
            target_mode,
            steps,
            batch_size,
            lr,
        } => {
            let overrides = TrainOverrides {
                seed: cli.seed,
                steps,
                batch_size,
                lr,
                lambda,
                head_mode: head_mode.map(Into::into),
                target_mode: target_mode.map(Into::into),
                ..Default::default()
            };
            commands::train(
                &config,
                &overrides,
                stage.into(),
                corpus.as_deref(),
                tc_checkpoint.as_deref(),
                &out,
            )
        }
        Command::Estimate { baseline, cf, test, concept, diseases, out, top_k } => {
            commands::estimate(
                &config,
                &baseline,
                &cf,
                test.as_deref(),
                concept.as_deref(),
                diseases.as_deref(),
                &out,
                top_k,
            )
        }
        Command::Report { input, top_k, out } => {
            commands::report(&input, top_k, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One machine-readable line: the full context chain, flattened.
            let line = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
