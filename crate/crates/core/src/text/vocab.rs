//! Word-level vocabulary and tokenization.
//!
//! Tokens are lowercased runs of alphanumeric characters; everything else
//! separates tokens. Five special tokens occupy the first five ids.

use super::TextError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Bijective token <-> id mapping with the five specials at ids 0-4.
/// Serialized as the id-ordered token list, which pins the assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { id_to_token, token_to_id }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.id_to_token
    }
}

impl Vocab {
    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Number of non-special tokens.
    pub fn real_token_count(&self) -> usize {
        self.id_to_token.len() - SPECIALS.len()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn is_special(id: u32) -> bool {
        id <= MASK_ID
    }

    /// First non-special id; ids `first_real_id()..len()` are real tokens.
    pub fn first_real_id() -> u32 {
        SPECIALS.len() as u32
    }
}

/// Lowercase and split on non-alphanumeric characters.
pub fn split_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Build a vocabulary from a corpus, keeping tokens seen at least
/// `min_freq` times. Ids are assigned in (frequency descending, token
/// ascending) order so identical corpora always produce identical mappings.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Result<Vocab, TextError> {
    if min_freq < 1 {
        return Err(TextError::MinFreqZero { min_freq });
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for token in split_tokens(text.as_ref()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    id_to_token.extend(kept.into_iter().map(|(t, _)| t));
    Ok(Vocab::from(id_to_token))
}

/// Tokenize text to exactly `max_len` ids: `[CLS] tokens... [SEP] [PAD]...`,
/// with unknown words mapped to UNK. When the text does not fit, it is
/// truncated so SEP lands at position `max_len - 1`.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<Vec<u32>, TextError> {
    if max_len < 3 {
        return Err(TextError::MaxLenTooSmall { max_len });
    }
    let tokens = split_tokens(text);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    for token in tokens.iter().take(max_len - 2) {
        ids.push(vocab.id_of(token).unwrap_or(UNK_ID));
    }
    ids.push(SEP_ID);
    ids.resize(max_len, PAD_ID);
    Ok(ids)
}

/// Render ids back to text. PAD, CLS, and SEP are dropped; UNK and MASK
/// render as their bracketed surface forms. Out-of-range ids render as UNK.
pub fn detokenize(ids: &[u32], vocab: &Vocab) -> String {
    ids.iter()
        .filter(|&&id| id != PAD_ID && id != CLS_ID && id != SEP_ID)
        .map(|&id| vocab.token_of(id).unwrap_or(SPECIALS[UNK_ID as usize]))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn min_freq_filters_rare_tokens() {
        let vocab = build_vocab(&["a a b"], 2).unwrap();
        assert_eq!(vocab.len(), 6);
        assert_eq!(vocab.id_of("a"), Some(5));
        assert_eq!(vocab.id_of("b"), None);

        let vocab = build_vocab(&["a a b"], 1).unwrap();
        assert_eq!(vocab.id_of("b"), Some(6));
    }

    #[test]
    fn id_assignment_is_frequency_then_lexicographic() {
        let vocab = build_vocab(&["pain pain cough cough chest"], 1).unwrap();
        // "cough" and "pain" both occur twice; ties break lexicographically.
        assert_eq!(vocab.id_of("cough"), Some(5));
        assert_eq!(vocab.id_of("pain"), Some(6));
        assert_eq!(vocab.id_of("chest"), Some(7));
    }

    #[test]
    fn builds_identically_across_runs() {
        let corpus = ["chest pain and cough", "cough and fever", "fever"];
        let a = build_vocab(&corpus, 1).unwrap();
        let b = build_vocab(&corpus, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_corpus_and_zero_min_freq() {
        assert!(matches!(
            build_vocab::<&str>(&[], 1),
            Err(TextError::EmptyCorpus)
        ));
        assert!(matches!(
            build_vocab(&["..."], 1),
            Err(TextError::EmptyCorpus)
        ));
        assert!(matches!(
            build_vocab(&["a"], 0),
            Err(TextError::MinFreqZero { min_freq: 0 })
        ));
    }

    #[test]
    fn tokenize_frames_and_pads() {
        let vocab = build_vocab(&["chest pain"], 1).unwrap();
        let ids = tokenize("chest pain.", &vocab, 8).unwrap();
        let chest = vocab.id_of("chest").unwrap();
        let pain = vocab.id_of("pain").unwrap();
        assert_eq!(ids, vec![CLS_ID, chest, pain, SEP_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]);
    }

    #[test]
    fn tokenize_maps_unknowns_to_unk() {
        let vocab = build_vocab(&["chest pain"], 1).unwrap();
        let ids = tokenize("chest throb", &vocab, 6).unwrap();
        assert_eq!(ids[2], UNK_ID);
    }

    #[test]
    fn tokenize_truncates_with_sep_at_the_end() {
        let vocab = build_vocab(&["a b c d e f g h"], 1).unwrap();
        let ids = tokenize("a b c d e f g h", &vocab, 5).unwrap();
        assert_eq!(ids.len(), 5);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(ids[4], SEP_ID);
        assert!(ids[1..4].iter().all(|&id| !Vocab::is_special(id)));
    }

    #[test]
    fn tokenize_rejects_tiny_max_len() {
        let vocab = build_vocab(&["a"], 1).unwrap();
        assert!(matches!(
            tokenize("a", &vocab, 2),
            Err(TextError::MaxLenTooSmall { max_len: 2 })
        ));
    }

    #[test]
    fn vocab_serde_roundtrip_preserves_ids() {
        let vocab = build_vocab(&["chest pain cough fever"], 1).unwrap();
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(vocab, back);
        assert_eq!(back.id_of("chest"), vocab.id_of("chest"));
    }

    proptest! {
        /// Tokenizing in-vocab text and rendering it back preserves the
        /// token sequence (specials and padding excluded).
        #[test]
        fn tokenize_detokenize_roundtrip(words in proptest::collection::vec("[a-z]{1,8}", 1..10)) {
            let text = words.join(" ");
            let vocab = build_vocab(&[text.as_str()], 1).unwrap();
            let ids = tokenize(&text, &vocab, 64).unwrap();
            let rendered = detokenize(&ids, &vocab);
            prop_assert_eq!(split_tokens(&rendered), split_tokens(&text));
        }
    }
}
