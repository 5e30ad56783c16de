//! Rank-agreement statistics for validating estimates against a known
//! ground truth (the synthetic benchmark's exactly computed effects).

use super::{EffectReport, EstimateError};

/// How well an estimated ranking matches the true one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankAgreement {
    /// Spearman rank correlation (ties get averaged ranks).
    pub spearman: f64,
    /// Whether the top-ranked disease agrees.
    pub top1: bool,
}

/// Ranks 1..=n with ties assigned the mean of the positions they span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0f64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the averaged 1-based rank.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// First index of the maximum.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Spearman rank correlation with averaged tied ranks. Returns 0 when
/// either side is entirely tied (no ranking to correlate with).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, EstimateError> {
    if a.len() != b.len() {
        return Err(EstimateError::LengthMismatch { got: b.len(), want: a.len() });
    }
    if a.len() < 2 {
        return Err(EstimateError::LengthMismatch { got: a.len(), want: 2 });
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        var_a += (x - mean) * (x - mean);
        var_b += (y - mean) * (y - mean);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Compare a report's absolute TReATE ranking against a known per-disease
/// effect vector (compared by magnitude, since the truth may be signed).
pub fn validate_against_oracle(
    report: &EffectReport,
    truth: &[f64],
) -> Result<RankAgreement, EstimateError> {
    if truth.len() != report.effects.len() {
        return Err(EstimateError::LengthMismatch {
            got: truth.len(),
            want: report.effects.len(),
        });
    }
    let estimated: Vec<f64> = report.effects.iter().map(|e| e.treate_abs).collect();
    let true_abs: Vec<f64> = truth.iter().map(|v| v.abs()).collect();
    Ok(RankAgreement {
        spearman: spearman(&estimated, &true_abs)?,
        top1: argmax(&estimated) == argmax(&true_abs),
    })
}
