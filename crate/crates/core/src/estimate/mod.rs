//! TReATE and CONEXP estimation over a test set, plus ranked effect reports.
//!
//! TReATE is the causal estimate: the difference between the mean predicted
//! disease distribution of the baseline model and that of the
//! concept-forgetting counterfactual model, over the *same* examples. A
//! disease whose probability mass moves when the concept is scrubbed from
//! the representation is causally sensitive to that concept.
//!
//! CONEXP is the correlational baseline: the difference between the
//! baseline model's mean prediction on concept-present examples and on
//! concept-absent examples. It needs no second model but conflates the
//! concept with everything correlated with it.
//!
//! Per-disease means accumulate in f64 in ascending example order, so
//! results are deterministic and permutation of the test set moves them by
//! no more than reduction noise (well under 1e-9).

mod rank;
mod report;

pub use rank::{spearman, validate_against_oracle, RankAgreement};
pub use report::{DiseaseEffect, EffectReport, Metric};

use crate::model::{classify, ModelError};
use crate::text::{tokenize, CanonicalRecord, TextError};
use crate::train::{Checkpoint, Stage};
use crate::SimplexVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("models disagree on the disease count: baseline {o}, counterfactual {cf}")]
    DiseaseCountMismatch { o: usize, cf: usize },
    #[error(
        "checkpoints were tokenized with different vocabularies: \
         baseline hash {o}, counterfactual hash {cf}"
    )]
    VocabMismatch { o: String, cf: String },
    #[error("record \"{id}\" has no flag for concept \"{concept}\"")]
    MissingConceptFlag { id: String, concept: String },
    #[error(
        "concept \"{concept}\" does not split the test set: \
         {present} example(s) with the concept, {absent} without"
    )]
    DegenerateSplit { concept: String, present: usize, absent: usize },
    #[error("expected {want} disease entries, got {got}")]
    LengthMismatch { got: usize, want: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
}

/// Anything that maps raw text to a distribution over diseases. The
/// trait exists so estimator arithmetic can be exercised against
/// hand-specified stub models independently of the transformer.
pub trait DiseasePredictor {
    fn num_diseases(&self) -> usize;
    fn predict(&self, text: &str) -> Result<SimplexVector, EstimateError>;
}

/// A trained checkpoint viewed as a predictor: tokenize with the
/// checkpoint's vocabulary, encode, classify under its configured head.
pub struct CheckpointPredictor<'a> {
    checkpoint: &'a Checkpoint,
}

impl<'a> CheckpointPredictor<'a> {
    pub fn new(checkpoint: &'a Checkpoint) -> Self {
        CheckpointPredictor { checkpoint }
    }
}

impl DiseasePredictor for CheckpointPredictor<'_> {
    fn num_diseases(&self) -> usize {
        self.checkpoint.encoder.num_classes
    }

    fn predict(&self, text: &str) -> Result<SimplexVector, EstimateError> {
        let c = self.checkpoint;
        let ids = tokenize(text, &c.vocab, c.encoder.max_len)?;
        Ok(classify(&c.params, &c.encoder, &ids)?)
    }
}

/// Signed and absolute per-disease effect estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub signed: Vec<f64>,
    pub abs: Vec<f64>,
}

/// Per-disease mean predicted distribution, accumulated in f64 in example
/// order.
fn mean_prediction(
    model: &impl DiseasePredictor,
    testset: &[CanonicalRecord],
) -> Result<Vec<f64>, EstimateError> {
    let d = model.num_diseases();
    let mut sums = vec![0.0f64; d];
    for record in testset {
        let p = model.predict(&record.text)?;
        if p.len() != d {
            return Err(EstimateError::DiseaseCountMismatch { o: d, cf: p.len() });
        }
        for (s, &v) in sums.iter_mut().zip(p.as_slice()) {
            *s += v as f64;
        }
    }
    let n = testset.len() as f64;
    for s in &mut sums {
        *s /= n;
    }
    Ok(sums)
}

/// TReATE over arbitrary predictors: mean prediction under the baseline
/// minus mean prediction under the counterfactual, elementwise.
pub fn treate_models(
    o: &impl DiseasePredictor,
    cf: &impl DiseasePredictor,
    testset: &[CanonicalRecord],
) -> Result<EffectEstimate, EstimateError> {
    if testset.is_empty() {
        return Err(EstimateError::EmptyTestSet);
    }
    if o.num_diseases() != cf.num_diseases() {
        return Err(EstimateError::DiseaseCountMismatch {
            o: o.num_diseases(),
            cf: cf.num_diseases(),
        });
    }
    let mean_o = mean_prediction(o, testset)?;
    let mean_cf = mean_prediction(cf, testset)?;
    let signed: Vec<f64> = mean_o.iter().zip(&mean_cf).map(|(a, b)| a - b).collect();
    let abs = signed.iter().map(|v| v.abs()).collect();
    Ok(EffectEstimate { signed, abs })
}

/// TReATE over checkpoints; additionally refuses models whose vocabularies
/// (and therefore tokenizations) differ.
pub fn treate(
    o: &Checkpoint,
    cf: &Checkpoint,
    testset: &[CanonicalRecord],
) -> Result<EffectEstimate, EstimateError> {
    if o.vocab_hash != cf.vocab_hash {
        return Err(EstimateError::VocabMismatch {
            o: o.vocab_hash.clone(),
            cf: cf.vocab_hash.clone(),
        });
    }
    treate_models(&CheckpointPredictor::new(o), &CheckpointPredictor::new(cf), testset)
}

/// CONEXP result: the signed per-disease difference of conditional means,
/// plus the sizes of the two index sets it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConexpEstimate {
    pub signed: Vec<f64>,
    pub present: usize,
    pub absent: usize,
}

/// CONEXP over an arbitrary predictor: mean prediction over concept-present
/// examples minus mean over concept-absent examples, in one pass.
pub fn conexp_model(
    o: &impl DiseasePredictor,
    testset: &[CanonicalRecord],
    concept: &str,
) -> Result<ConexpEstimate, EstimateError> {
    if testset.is_empty() {
        return Err(EstimateError::EmptyTestSet);
    }
    let d = o.num_diseases();
    let mut sum_present = vec![0.0f64; d];
    let mut sum_absent = vec![0.0f64; d];
    let (mut present, mut absent) = (0usize, 0usize);

    for record in testset {
        let flag = record.concept_flags.get(concept).copied().ok_or_else(|| {
            EstimateError::MissingConceptFlag {
                id: record.id.clone(),
                concept: concept.to_string(),
            }
        })?;
        let p = o.predict(&record.text)?;
        if p.len() != d {
            return Err(EstimateError::DiseaseCountMismatch { o: d, cf: p.len() });
        }
        let (sums, count) = if flag == 1 {
            (&mut sum_present, &mut present)
        } else {
            (&mut sum_absent, &mut absent)
        };
        *count += 1;
        for (s, &v) in sums.iter_mut().zip(p.as_slice()) {
            *s += v as f64;
        }
    }

    if present == 0 || absent == 0 {
        return Err(EstimateError::DegenerateSplit {
            concept: concept.to_string(),
            present,
            absent,
        });
    }
    let signed = sum_present
        .iter()
        .zip(&sum_absent)
        .map(|(p, a)| p / present as f64 - a / absent as f64)
        .collect();
    Ok(ConexpEstimate { signed, present, absent })
}

/// CONEXP over a checkpoint.
pub fn conexp(
    o: &Checkpoint,
    testset: &[CanonicalRecord],
    concept: &str,
) -> Result<ConexpEstimate, EstimateError> {
    conexp_model(&CheckpointPredictor::new(o), testset, concept)
}

/// Assemble the full per-disease effect report from a baseline and a
/// counterfactual checkpoint. Stages are not enforced (the arithmetic is
/// well-defined for any pair sharing vocabulary and disease count); the
/// checkpoint ids recorded in the report carry the stage tags for audit.
pub fn effect_report(
    o: &Checkpoint,
    cf: &Checkpoint,
    testset: &[CanonicalRecord],
    concept: &str,
    disease_names: &[String],
) -> Result<EffectReport, EstimateError> {
    let d = o.encoder.num_classes;
    if disease_names.len() != d {
        return Err(EstimateError::LengthMismatch { got: disease_names.len(), want: d });
    }
    let treate_est = treate(o, cf, testset)?;
    let conexp_est = conexp(o, testset, concept)?;

    let effects = disease_names
        .iter()
        .enumerate()
        .map(|(j, name)| DiseaseEffect {
            disease: name.clone(),
            treate_signed: treate_est.signed[j],
            treate_abs: treate_est.abs[j],
            conexp_signed: conexp_est.signed[j],
        })
        .collect();

    Ok(EffectReport {
        concept: concept.to_string(),
        test_size: testset.len(),
        present_count: conexp_est.present,
        absent_count: conexp_est.absent,
        baseline_id: o.id(),
        counterfactual_id: cf.id(),
        counterfactual_used_control_head: cf.stage == Stage::Cf && cf.encoder.enable_cc,
        effects,
    })
}
