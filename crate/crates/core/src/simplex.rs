//! Sparsemax: Euclidean projection of a score vector onto the probability
//! simplex, its Jacobian-vector product, and the sparsemax classification
//! loss.
//!
//! Unlike softmax, sparsemax assigns exactly zero probability to low-scoring
//! classes, which keeps predicted disease distributions sparse and makes the
//! per-disease effect estimates read cleanly. [`project_simplex_oracle`] is
//! an independent exhaustive-support implementation used to cross-check the
//! fast path; the two routes are deliberately kept separate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("empty input vector")]
    Empty,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("negative probability {value} at index {index}")]
    Negative { index: usize, value: f32 },
    #[error("probabilities sum to {sum}, expected 1 within 1e-6")]
    SumOffOne { sum: f64 },
    #[error("gold label {gold} out of range for {len} classes")]
    GoldOutOfRange { gold: usize, len: usize },
    #[error("upstream gradient has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("oracle supports at most 12 dimensions, got {len}")]
    OracleTooLarge { len: usize },
}

/// A probability vector: entries are nonnegative and sum to 1 within 1e-6.
/// Construction validates; the contents are immutable afterwards. The serde
/// form is a plain array, re-validated on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct SimplexVector(Vec<f32>);

impl TryFrom<Vec<f32>> for SimplexVector {
    type Error = SimplexError;

    fn try_from(values: Vec<f32>) -> Result<Self, SimplexError> {
        SimplexVector::new(values)
    }
}

impl From<SimplexVector> for Vec<f32> {
    fn from(v: SimplexVector) -> Vec<f32> {
        v.0
    }
}

impl SimplexVector {
    pub fn new(values: Vec<f32>) -> Result<Self, SimplexError> {
        if values.is_empty() {
            return Err(SimplexError::Empty);
        }
        let mut sum = 0.0f64;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SimplexError::NonFinite { index: i, value: v });
            }
            if v < 0.0 {
                return Err(SimplexError::Negative { index: i, value: v });
            }
            sum += v as f64;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(SimplexError::SumOffOne { sum });
        }
        Ok(SimplexVector(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // guaranteed non-empty by construction
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

fn validate_scores(z: &[f32]) -> Result<(), SimplexError> {
    if z.is_empty() {
        return Err(SimplexError::Empty);
    }
    for (i, &v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(SimplexError::NonFinite { index: i, value: v });
        }
    }
    Ok(())
}

/// Support size and threshold tau for sparsemax, computed in f64.
///
/// With scores sorted descending, the support size is the largest `k` with
/// `1 + k * z_(k) >= sum_{j<=k} z_(j)`. The comparison is `>=` so that
/// entries exactly at the threshold are counted into the support; they get
/// probability zero either way, and `z^2 - tau^2` vanishes for them, so the
/// output and the loss are unchanged by the tie rule.
fn support_and_tau(z: &[f32]) -> (usize, f64) {
    let mut sorted: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let mut cum = 0.0f64;
    let mut k = 1usize;
    let mut cum_k = sorted[0];
    for (j, &v) in sorted.iter().enumerate() {
        cum += v;
        let kk = j + 1;
        if 1.0 + kk as f64 * v >= cum {
            k = kk;
            cum_k = cum;
        }
    }
    let tau = (cum_k - 1.0) / k as f64;
    (k, tau)
}

/// Project scores onto the probability simplex (sparsemax forward).
pub fn sparsemax(z: &[f32]) -> Result<SimplexVector, SimplexError> {
    validate_scores(z)?;
    let (_, tau) = support_and_tau(z);
    let p: Vec<f32> = z.iter().map(|&v| (v as f64 - tau).max(0.0) as f32).collect();
    SimplexVector::new(p)
}

/// Jacobian-vector product of sparsemax at an output `p`.
///
/// For support `S = {i : p_i > 0}`, the result is
/// `upstream_i - mean_{j in S}(upstream_j)` on the support and 0 elsewhere.
pub fn sparsemax_backward(p: &SimplexVector, upstream: &[f32]) -> Result<Vec<f32>, SimplexError> {
    if upstream.len() != p.len() {
        return Err(SimplexError::LengthMismatch { expected: p.len(), got: upstream.len() });
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (pv, &u) in p.as_slice().iter().zip(upstream) {
        if *pv > 0.0 {
            sum += u as f64;
            count += 1;
        }
    }
    let mean = sum / count as f64;
    Ok(p
        .as_slice()
        .iter()
        .zip(upstream)
        .map(|(&pv, &u)| if pv > 0.0 { (u as f64 - mean) as f32 } else { 0.0 })
        .collect())
}

/// Sparsemax classification loss and its gradient in the scores.
///
/// `L(z, gold) = -z_gold + 1/2 * sum_{j in S}(z_j^2 - tau^2) + 1/2`, and the
/// gradient is exactly `sparsemax(z) - onehot(gold)` (the returned gradient
/// reuses the same projected floats, so the identity holds bitwise).
pub fn sparsemax_loss(z: &[f32], gold: usize) -> Result<(f32, Vec<f32>), SimplexError> {
    validate_scores(z)?;
    if gold >= z.len() {
        return Err(SimplexError::GoldOutOfRange { gold, len: z.len() });
    }
    let (_, tau) = support_and_tau(z);
    let mut acc = 0.0f64;
    for &v in z {
        let v = v as f64;
        if v > tau {
            acc += v * v - tau * tau;
        }
    }
    let loss = (0.5 * acc + 0.5 - z[gold] as f64) as f32;
    let p = sparsemax(z)?;
    let mut grad = p.into_vec();
    grad[gold] -= 1.0;
    Ok((loss, grad))
}

/// Exhaustive simplex projection for small vectors (<= 12 entries).
///
/// Enumerates every nonempty support set, forms the affine projection onto
/// that support, keeps the feasible candidates, and returns the one closest
/// to `z` in squared distance. Entirely independent of [`sparsemax`]'s
/// sort-and-threshold route; used only to verify it.
pub fn project_simplex_oracle(z: &[f32]) -> Result<Vec<f64>, SimplexError> {
    validate_scores(z)?;
    let n = z.len();
    if n > 12 {
        return Err(SimplexError::OracleTooLarge { len: n });
    }
    let zf: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let size = mask.count_ones() as f64;
        let sum: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| zf[i]).sum();
        let tau = (sum - 1.0) / size;
        let mut candidate = vec![0.0f64; n];
        let mut feasible = true;
        for (i, slot) in candidate.iter_mut().enumerate() {
            if mask >> i & 1 == 1 {
                let p = zf[i] - tau;
                if p < -1e-12 {
                    feasible = false;
                    break;
                }
                *slot = p.max(0.0);
            }
        }
        if !feasible {
            continue;
        }
        let dist: f64 = candidate.iter().zip(&zf).map(|(p, v)| (p - v) * (p - v)).sum();
        match &best {
            Some((d, _)) if *d <= dist => {}
            _ => best = Some((dist, candidate)),
        }
    }
    Ok(best.expect("full support is always a candidate").1)
}

/// Softmax of a score vector, accumulated in f64.
pub fn softmax_probs(z: &[f32]) -> Result<SimplexVector, SimplexError> {
    validate_scores(z)?;
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = z.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    SimplexVector::new(exps.iter().map(|e| (e / sum) as f32).collect())
}

/// Jacobian-vector product of softmax at an output `p`:
/// `p_i * (upstream_i - <upstream, p>)`.
pub fn softmax_backward(p: &SimplexVector, upstream: &[f32]) -> Vec<f32> {
    let dot: f64 = p
        .as_slice()
        .iter()
        .zip(upstream)
        .map(|(&pv, &u)| pv as f64 * u as f64)
        .sum();
    p.as_slice()
        .iter()
        .zip(upstream)
        .map(|(&pv, &u)| (pv as f64 * (u as f64 - dot)) as f32)
        .collect()
}
