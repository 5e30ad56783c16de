//! Text pipeline: structured records to dialogue text, keyword concept
//! labeling, vocabulary and tokenization, MLM/NSP pretraining examples, and
//! DDXPlus-style ingestion.
//!
//! Record processing is stateless per record. RNG streams for masking and
//! pairing are derived from `(global seed, record id)` (see [`crate::rng`]),
//! so processing order never changes the examples a record yields.

mod concept;
mod ddxplus;
mod dialogue;
mod pretrain;
mod vocab;

pub use concept::{chest_pain_concept, label_concept};
pub use ddxplus::{format_test_share, ingest_ddxplus, GoldSource};
pub use dialogue::{render_dialogue, split_turns};
pub use pretrain::{make_mlm_example, make_mlm_example_with_rate, make_nsp_pair, MlmExample, NspExample};
pub use vocab::{build_vocab, detokenize, tokenize, Vocab, CLS_ID, MASK_ID, PAD_ID, SEP_ID, UNK_ID};

use crate::simplex::{SimplexError, SimplexVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("record {id}: empty symptom list, nothing to render")]
    EmptySymptoms { id: String },
    #[error("empty corpus: no tokens to build a vocabulary from")]
    EmptyCorpus,
    #[error("min_freq must be >= 1, got {min_freq}")]
    MinFreqZero { min_freq: usize },
    #[error("max_len must be >= 3 to fit CLS and SEP, got {max_len}")]
    MaxLenTooSmall { max_len: usize },
    #[error("sequence has no non-special tokens to mask")]
    NoMaskableTokens,
    #[error("negative sampling needs at least two documents in the corpus")]
    SingleDocumentCorpus,
    #[error("record {id}: dialogue has fewer than two turns")]
    FewerThanTwoTurns { id: String },
    #[error("record {id}: unknown evidence code \"{code}\"")]
    UnknownEvidenceCode { id: String, code: String },
    #[error("record {id}: pathology \"{name}\" not in the pathology list")]
    UnknownPathology { id: String, name: String },
    #[error("record {id}: no pathology while gold source is the pathology label")]
    MissingPathology { id: String },
    #[error("record {id}: no differential while gold source is the differential")]
    MissingDifferential { id: String },
    #[error("record {id}: differential weights are not normalizable: {detail}")]
    BadDifferential { id: String, detail: String },
    #[error("concept \"{name}\" has an empty keyword list")]
    EmptyKeywords { name: String },
    #[error("invalid gold distribution: {0}")]
    BadGold(#[from] SimplexError),
}

/// Whether a concept is the treatment under study or a control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptRole {
    Treatment,
    Control,
}

/// A named concept and the keyword phrases that define its presence in text.
/// Matching is case-insensitive on token boundaries; keywords are folded to
/// lowercase at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub name: String,
    pub keywords: Vec<String>,
    pub role: ConceptRole,
}

impl ConceptSpec {
    pub fn new(
        name: impl Into<String>,
        keywords: Vec<String>,
        role: ConceptRole,
    ) -> Result<Self, TextError> {
        let name = name.into();
        if keywords.is_empty() {
            return Err(TextError::EmptyKeywords { name });
        }
        let keywords = keywords.into_iter().map(|k| k.to_lowercase()).collect();
        Ok(ConceptSpec { name, keywords, role })
    }
}

/// A record after ingestion: rendered dialogue text, binary concept flags,
/// and a gold disease distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub id: String,
    pub text: String,
    /// Concept name -> 0/1 presence flag. BTreeMap keeps the serialized
    /// form deterministic.
    pub concept_flags: BTreeMap<String, u8>,
    pub gold: SimplexVector,
}

impl CanonicalRecord {
    /// Check that every active concept has a flag and flags are binary.
    pub fn validate_against(&self, concepts: &[ConceptSpec]) -> Result<(), String> {
        for spec in concepts {
            match self.concept_flags.get(&spec.name) {
                Some(0) | Some(1) => {}
                Some(v) => return Err(format!("flag for \"{}\" is {v}, not 0/1", spec.name)),
                None => return Err(format!("missing flag for concept \"{}\"", spec.name)),
            }
        }
        Ok(())
    }
}

/// Structured input record, one JSON object per line in the canonical
/// interchange format. For DDXPlus-style data the symptom and antecedent
/// entries are evidence codes to be expanded through the evidence
/// dictionary; for synthetic data they are already phrases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub age: u32,
    pub sex: String,
    pub symptoms: Vec<String>,
    #[serde(default)]
    pub antecedents: Vec<String>,
    #[serde(default)]
    pub pathology: Option<String>,
    /// Optional differential diagnosis as (pathology name, weight) pairs.
    #[serde(default)]
    pub differential: Option<Vec<(String, f64)>>,
}
