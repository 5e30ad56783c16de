//! The JSON run configuration.
//!
//! A config file is optional: every section has working defaults, and any
//! command-line flag wins over the corresponding config value. Unknown keys
//! anywhere in the document are rejected so a typo cannot silently fall
//! back to a default.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use treate_core::model::{EncoderConfig, HeadMode};
use treate_core::text::{chest_pain_concept, GoldSource};
use treate_core::train::{TargetMode, TrainConfig};
use treate_core::ConceptSpec;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `synth` or `ddxplus`; informational (each subcommand implies one).
    pub source: Option<DataSource>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// Raw-record inputs for ingestion.
    pub train_records: Option<PathBuf>,
    pub test_records: Option<PathBuf>,
    pub evidence_path: Option<PathBuf>,
    pub pathologies_path: Option<PathBuf>,
    pub gold_source: Option<GoldSource>,
    /// Synthetic corpus sizes.
    pub train_count: Option<usize>,
    pub test_count: Option<usize>,
    /// The treatment concept; defaults to the chest-pain keyword spec.
    pub concept: Option<ConceptSpec>,
    /// Optional control concept (requires `model.enable_cc`).
    pub control_concept: Option<ConceptSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synth,
    Ddxplus,
}

/// Encoder architecture overrides. Vocabulary size and class count are
/// always derived from the corpus, never configured.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub ff_dim: Option<usize>,
    pub max_len: Option<usize>,
    pub enable_cc: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f32>,
    pub lambda: Option<f32>,
    pub head_mode: Option<HeadMode>,
    pub target_mode: Option<TargetMode>,
    pub beta1: Option<f32>,
    pub beta2: Option<f32>,
    pub epsilon: Option<f32>,
    pub allow_constant_tc: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub test_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub top_k: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let bytes = std::fs::read(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_slice(&bytes)
                    .with_context(|| format!("invalid config {}", p.display()))
            }
        }
    }

    /// Training hyperparameters: defaults, overridden by the config file,
    /// overridden by flags.
    pub fn resolve_train(&self, overrides: &TrainOverrides) -> Result<TrainConfig> {
        let t = &self.train;
        let mut cfg = TrainConfig::new(0);
        macro_rules! apply {
            ($field:ident) => {
                if let Some(v) = t.$field {
                    cfg.$field = v;
                }
                if let Some(v) = overrides.$field {
                    cfg.$field = v;
                }
            };
        }
        apply!(seed);
        apply!(steps);
        apply!(batch_size);
        apply!(lr);
        apply!(lambda);
        apply!(head_mode);
        apply!(target_mode);
        apply!(beta1);
        apply!(beta2);
        apply!(epsilon);
        apply!(allow_constant_tc);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Encoder architecture for a corpus with the given vocabulary and
    /// class count. Reversal strength and head mode mirror the resolved
    /// training config (the trainer records them in the checkpoint).
    pub fn resolve_encoder(
        &self,
        vocab_size: usize,
        num_classes: usize,
        train: &TrainConfig,
    ) -> Result<EncoderConfig> {
        let m = &self.model;
        let mut cfg = EncoderConfig::desk_scale(vocab_size, num_classes);
        if let Some(v) = m.layers {
            cfg.layers = v;
        }
        if let Some(v) = m.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = m.heads {
            cfg.heads = v;
        }
        if let Some(v) = m.ff_dim {
            cfg.ff_dim = v;
        }
        if let Some(v) = m.max_len {
            cfg.max_len = v;
        }
        if let Some(v) = m.enable_cc {
            cfg.enable_cc = v;
        }
        cfg.lambda = train.lambda;
        cfg.head_mode = train.head_mode;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The treatment concept (config override or the chest-pain default).
    pub fn concept(&self) -> ConceptSpec {
        self.data.concept.clone().unwrap_or_else(chest_pain_concept)
    }

    /// The control concept, which is only legal with the control head on.
    pub fn control_concept(&self, enable_cc: bool) -> Result<Option<ConceptSpec>> {
        match (&self.data.control_concept, enable_cc) {
            (Some(c), true) => Ok(Some(c.clone())),
            (None, false) => Ok(None),
            (Some(c), false) => {
                bail!("control concept \"{}\" configured but model.enable_cc is off", c.name)
            }
            (None, true) => bail!("model.enable_cc is on but data.control_concept is missing"),
        }
    }
}

/// Flag-level overrides collected from the command line; `None` means the
/// flag was not given.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f32>,
    pub lambda: Option<f32>,
    pub head_mode: Option<HeadMode>,
    pub target_mode: Option<TargetMode>,
    pub beta1: Option<f32>,
    pub beta2: Option<f32>,
    pub epsilon: Option<f32>,
    pub allow_constant_tc: Option<bool>,
}
