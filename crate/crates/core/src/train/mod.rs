//! The three training stages, their shared optimizer, and checkpointing.
//!
//! Stage "baseline" trains encoder and disease classifier jointly on the
//! classification objective alone. Stage "tc" trains the encoder on
//! MLM + NSP plus the gradient-reversed treatment-concept head, producing
//! representations that forget the concept. Stage "cf" freezes a
//! tc-checkpoint's encoder bitwise and retrains only the disease classifier
//! head on top of it. Every random draw comes from a labeled stream of the
//! single run seed, so a (config, corpus) pair maps to bitwise-identical
//! checkpoints no matter when or where it runs.

mod adam;
mod checkpoint;
mod probe;
mod stages;

pub use adam::AdamState;
pub use checkpoint::{vocab_hash, Checkpoint, MANIFEST_FILE, VOCAB_FILE, WEIGHTS_FILE};
pub use probe::probe_concept_accuracy;
pub use stages::{train_baseline, train_stage1, train_stage2};

use crate::autodiff::AutodiffError;
use crate::model::{HeadMode, ModelError};
use crate::simplex::SimplexError;
use crate::text::TextError;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {detail}")]
    Config { detail: String },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("record \"{id}\" has no flag for concept \"{concept}\"")]
    MissingConceptFlag { id: String, concept: String },
    #[error(
        "every record has treatment-concept label {label}; the adversarial head \
         would be degenerate (set allow_constant_tc to proceed anyway)"
    )]
    DegenerateTcLabels { label: u8 },
    #[error("checkpoint stage is \"{got}\", expected \"{expected}\"")]
    WrongStage { expected: Stage, got: Stage },
    #[error("non-finite gradient in parameter \"{name}\" at step {step}")]
    NonFiniteGrad { name: String, step: usize },
    #[error("parameter \"{name}\" became non-finite at step {step}")]
    NonFiniteParam { name: String, step: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint is malformed: {detail}")]
    BadCheckpoint { detail: String },
    #[error("vocabulary hash mismatch: manifest says {manifest}, vocab file hashes to {actual}")]
    VocabHashMismatch { manifest: String, actual: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which training stage produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Encoder + classifier trained jointly on the disease objective.
    Baseline,
    /// Encoder trained on MLM/NSP with the gradient-reversed concept head.
    Tc,
    /// Frozen tc encoder with a freshly trained classifier head.
    Cf,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Baseline => "baseline",
            Stage::Tc => "tc",
            Stage::Cf => "cf",
        })
    }
}

/// What the classifier is fit to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Hard label (the gold distribution's argmax); sparsemax loss or
    /// softmax cross-entropy depending on the head.
    Onehot,
    /// Squared error between the predicted and gold distributions.
    Distribution,
}

fn default_beta1() -> f32 {
    0.9
}
fn default_beta2() -> f32 {
    0.999
}
fn default_epsilon() -> f32 {
    1e-8
}

/// Hyperparameters shared by all stages. Serialized into checkpoint
/// manifests so a run can be reproduced from its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Gradient-reversal strength for the treatment-concept head (stage tc).
    pub lambda: f32,
    pub head_mode: HeadMode,
    pub target_mode: TargetMode,
    #[serde(default = "default_beta1")]
    pub beta1: f32,
    #[serde(default = "default_beta2")]
    pub beta2: f32,
    #[serde(default = "default_epsilon")]
    pub epsilon: f32,
    /// Stage tc normally refuses a corpus whose concept labels are all
    /// identical, since the adversary then has nothing to forget. This
    /// override exists for null-concept control experiments.
    #[serde(default)]
    pub allow_constant_tc: bool,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            seed,
            steps: 200,
            batch_size: 8,
            lr: 1e-3,
            lambda: 6.0,
            head_mode: HeadMode::Sparsemax,
            target_mode: TargetMode::Onehot,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            allow_constant_tc: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |detail: String| Err(TrainError::Config { detail });
        if self.steps == 0 {
            return fail("steps must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr {} must be finite and > 0", self.lr));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(value.is_finite() && (0.0..1.0).contains(&value)) {
                return fail(format!("{name} {value} must lie in [0, 1)"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon {} must be finite and > 0", self.epsilon));
        }
        Ok(())
    }
}

/// One step's losses. Components that a stage does not compute stay `None`
/// and serialize as empty CSV cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub mlm: Option<f32>,
    pub nsp: Option<f32>,
    pub tc: Option<f32>,
    pub total: f32,
}

/// Per-step loss history of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,mlm,nsp,tc,total\n");
        let cell = |v: Option<f32>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.step,
                cell(row.mlm),
                cell(row.nsp),
                cell(row.tc),
                row.total
            ));
        }
        out
    }

    /// Mean of `total` over the trailing `window` rows (all rows if fewer).
    pub fn trailing_mean(&self, window: usize) -> f64 {
        let n = self.rows.len().min(window.max(1));
        if n == 0 {
            return f64::NAN;
        }
        let tail = &self.rows[self.rows.len() - n..];
        tail.iter().map(|r| r.total as f64).sum::<f64>() / n as f64
    }
}
