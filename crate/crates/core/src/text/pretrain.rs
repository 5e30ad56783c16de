//! MLM and NSP example construction for encoder pretraining.
//!
//! Masking follows the standard recipe: each non-special position is
//! selected independently with probability 0.15; a selected position becomes
//! MASK 80% of the time, a random real token 10%, and stays unchanged 10%.
//! NSP pairs consecutive dialogue turns (label 1) or a turn with one drawn
//! from a different document (label 0), 50/50.

use super::vocab::{Vocab, CLS_ID, MASK_ID, SEP_ID};
use super::{tokenize, TextError};
use crate::rng::{below, unit_f64};
use rand_chacha::rand_core::RngCore;

/// A masked-language-modeling example: the corrupted sequence plus the
/// original token at each selected position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlmExample {
    pub input_ids: Vec<u32>,
    /// (position, original id) for every selected position, ascending.
    pub targets: Vec<(usize, u32)>,
}

/// A next-sentence-prediction example: `[CLS] A [SEP] B [SEP]` padded to a
/// fixed length, with label 1 when B actually followed A.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NspExample {
    pub input_ids: Vec<u32>,
    pub is_next: u8,
}

/// Apply MLM corruption at the standard 15% selection rate.
pub fn make_mlm_example<R: RngCore>(
    ids: &[u32],
    vocab: &Vocab,
    rng: &mut R,
) -> Result<MlmExample, TextError> {
    make_mlm_example_with_rate(ids, vocab, rng, 0.15)
}

/// Apply MLM corruption with an explicit selection rate (test hook; rate 0
/// legitimately yields an example with no targets).
pub fn make_mlm_example_with_rate<R: RngCore>(
    ids: &[u32],
    vocab: &Vocab,
    rng: &mut R,
    rate: f64,
) -> Result<MlmExample, TextError> {
    if !ids.iter().any(|&id| !Vocab::is_special(id)) {
        return Err(TextError::NoMaskableTokens);
    }
    let real_tokens = vocab.real_token_count();
    let mut input_ids = ids.to_vec();
    let mut targets = Vec::new();
    for (pos, slot) in input_ids.iter_mut().enumerate() {
        if Vocab::is_special(*slot) {
            continue;
        }
        if unit_f64(rng) >= rate {
            continue;
        }
        targets.push((pos, *slot));
        let roll = unit_f64(rng);
        if roll < 0.8 {
            *slot = MASK_ID;
        } else if roll < 0.9 && real_tokens > 0 {
            *slot = Vocab::first_real_id() + below(rng, real_tokens) as u32;
        } // else: keep the original token
    }
    Ok(MlmExample { input_ids, targets })
}

/// Build one NSP example for the document at `doc_index`.
///
/// `documents` holds each document's dialogue turns. With probability 0.5
/// the pair is two consecutive turns of this document (label 1); otherwise
/// the second turn is drawn uniformly from a different document (label 0),
/// which requires the corpus to contain at least two documents with turns.
pub fn make_nsp_pair<R: RngCore>(
    documents: &[Vec<String>],
    doc_index: usize,
    vocab: &Vocab,
    max_len: usize,
    rng: &mut R,
) -> Result<NspExample, TextError> {
    let turns = &documents[doc_index];
    if turns.len() < 2 {
        return Err(TextError::FewerThanTwoTurns { id: format!("document {doc_index}") });
    }

    let (first, second, is_next) = if unit_f64(rng) < 0.5 {
        let i = below(rng, turns.len() - 1);
        (turns[i].as_str(), turns[i + 1].as_str(), 1u8)
    } else {
        let others: Vec<usize> = (0..documents.len())
            .filter(|&d| d != doc_index && !documents[d].is_empty())
            .collect();
        if others.is_empty() {
            return Err(TextError::SingleDocumentCorpus);
        }
        let i = below(rng, turns.len());
        let other = others[below(rng, others.len())];
        let j = below(rng, documents[other].len());
        (turns[i].as_str(), documents[other][j].as_str(), 0u8)
    };

    Ok(NspExample {
        input_ids: frame_pair(first, second, vocab, max_len)?,
        is_next,
    })
}

/// `[CLS] A [SEP] B [SEP]`, truncated (keeping a final SEP) and padded to
/// `max_len`.
fn frame_pair(a: &str, b: &str, vocab: &Vocab, max_len: usize) -> Result<Vec<u32>, TextError> {
    if max_len < 3 {
        return Err(TextError::MaxLenTooSmall { max_len });
    }
    // tokenize() yields [CLS] tokens [SEP] padded; strip padding, then splice.
    let a_ids = tokenize(a, vocab, max_len)?;
    let b_ids = tokenize(b, vocab, max_len)?;
    let a_end = a_ids.iter().position(|&id| id == SEP_ID).expect("tokenize always emits SEP");
    let b_end = b_ids.iter().position(|&id| id == SEP_ID).expect("tokenize always emits SEP");

    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend_from_slice(&a_ids[1..=a_end]); // A tokens + SEP
    ids.extend_from_slice(&b_ids[1..b_end]); // B tokens
    ids.push(SEP_ID);
    if ids.len() > max_len {
        ids.truncate(max_len - 1);
        ids.push(SEP_ID);
    }
    ids.resize(max_len, super::vocab::PAD_ID);
    Ok(ids)
}
