//! Ingestion of DDXPlus-style records: evidence codes are expanded to
//! phrases through an evidence dictionary, the record is rendered as
//! dialogue, concept flags are computed, and the gold target is assembled
//! over a fixed pathology list.

use super::concept::label_concept;
use super::dialogue::render_dialogue;
use super::{CanonicalRecord, ConceptSpec, RawRecord, TextError};
use crate::simplex::SimplexVector;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Where the gold disease distribution comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldSource {
    /// One-hot at the record's pathology.
    Pathology,
    /// The record's differential diagnosis, normalized to sum to 1.
    Differential,
}

fn expand_codes(
    id: &str,
    codes: &[String],
    dictionary: &BTreeMap<String, String>,
) -> Result<Vec<String>, TextError> {
    codes
        .iter()
        .map(|code| {
            dictionary
                .get(code)
                .cloned()
                .ok_or_else(|| TextError::UnknownEvidenceCode {
                    id: id.to_string(),
                    code: code.clone(),
                })
        })
        .collect()
}

fn pathology_index(id: &str, name: &str, pathologies: &[String]) -> Result<usize, TextError> {
    pathologies
        .iter()
        .position(|p| p == name)
        .ok_or_else(|| TextError::UnknownPathology { id: id.to_string(), name: name.to_string() })
}

/// Convert a raw DDXPlus-style record into a [`CanonicalRecord`].
///
/// The pathology list fixes both the number of diseases and their index
/// order; every gold vector is expressed over it. Concept flags are computed
/// for every spec in `concepts`, so the emitted record always satisfies the
/// flag-coverage invariant for that set.
pub fn ingest_ddxplus(
    raw: &RawRecord,
    dictionary: &BTreeMap<String, String>,
    pathologies: &[String],
    gold_source: GoldSource,
    concepts: &[ConceptSpec],
) -> Result<CanonicalRecord, TextError> {
    let expanded = RawRecord {
        symptoms: expand_codes(&raw.id, &raw.symptoms, dictionary)?,
        antecedents: expand_codes(&raw.id, &raw.antecedents, dictionary)?,
        ..raw.clone()
    };
    let text = render_dialogue(&expanded)?;

    let gold = match gold_source {
        GoldSource::Pathology => {
            let name = raw
                .pathology
                .as_deref()
                .ok_or_else(|| TextError::MissingPathology { id: raw.id.clone() })?;
            let idx = pathology_index(&raw.id, name, pathologies)?;
            let mut v = vec![0.0f32; pathologies.len()];
            v[idx] = 1.0;
            SimplexVector::new(v)?
        }
        GoldSource::Differential => {
            let differential = raw
                .differential
                .as_deref()
                .ok_or_else(|| TextError::MissingDifferential { id: raw.id.clone() })?;
            let mut weights = vec![0.0f64; pathologies.len()];
            let mut total = 0.0f64;
            for (name, w) in differential {
                if !w.is_finite() || *w < 0.0 {
                    return Err(TextError::BadDifferential {
                        id: raw.id.clone(),
                        detail: format!("weight {w} for \"{name}\""),
                    });
                }
                weights[pathology_index(&raw.id, name, pathologies)?] += w;
                total += w;
            }
            if total <= 0.0 {
                return Err(TextError::BadDifferential {
                    id: raw.id.clone(),
                    detail: format!("weights sum to {total}"),
                });
            }
            SimplexVector::new(weights.iter().map(|w| (w / total) as f32).collect())?
        }
    };

    let concept_flags = concepts
        .iter()
        .map(|spec| (spec.name.clone(), label_concept(&text, spec)))
        .collect();

    Ok(CanonicalRecord { id: raw.id.clone(), text, concept_flags, gold })
}

/// Test-set share of a train/test split, formatted as a percentage with two
/// decimals (e.g. `"11.60%"`).
pub fn format_test_share(test_count: u64, train_count: u64) -> String {
    let share = test_count as f64 / (test_count + train_count) as f64;
    format!("{:.2}%", share * 100.0)
}
