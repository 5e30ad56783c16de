//! Keyword-based concept labeling.
//!
//! A concept is "present" when any of its keyword phrases occurs in the
//! text as a contiguous token sequence, case-insensitively. This is a
//! recall-oriented rule: negated mentions ("no chest pain") still flag as
//! present, a documented limitation of keyword labeling.

use super::vocab::split_tokens;
use super::{ConceptRole, ConceptSpec};

/// Default treatment concept: chest pain, flagged by any of its anatomical
/// keywords. "sterum" is kept alongside "sternum" so the common misspelling
/// in clinical notes still matches.
pub fn chest_pain_concept() -> ConceptSpec {
    ConceptSpec::new(
        "chest pain",
        ["chest", "sternum", "sterum", "breastbone"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ConceptRole::Treatment,
    )
    .expect("static keyword list is nonempty")
}

/// 1 iff any keyword phrase of `spec` occurs in `text` on token boundaries.
pub fn label_concept(text: &str, spec: &ConceptSpec) -> u8 {
    let tokens = split_tokens(text);
    for keyword in &spec.keywords {
        let phrase = split_tokens(keyword);
        if phrase.is_empty() {
            continue;
        }
        if tokens.windows(phrase.len()).any(|w| w == phrase.as_slice()) {
            return 1;
        }
    }
    0
}
