//! Concept probe: how recoverable is a binary concept from frozen CLS
//! features?
//!
//! The probe retrains a fresh logistic-regression head on the encoder's
//! CLS vectors — it deliberately ignores any concept head the model carries,
//! since a forgetting claim is about the representation, not about one
//! particular readout. High probe accuracy means the concept is still
//! linearly present; chance-level accuracy means it has been scrubbed.

use super::TrainError;
use crate::model::{encode_cls, EncoderConfig, ModelParams};
use crate::rng::{below, stream};

/// Evaluation accuracy of a freshly trained linear probe.
///
/// `inputs` are tokenized sequences, `labels` their binary concept flags.
/// Examples are shuffled by `(seed, "probe:split")` and split 75/25 into
/// probe-train and probe-eval. The probe is full-batch logistic regression
/// in f64 (convex, so the zero init is canonical), run for `steps` of
/// plain gradient descent at rate `lr`.
pub fn probe_concept_accuracy(
    params: &ModelParams,
    encoder: &EncoderConfig,
    inputs: &[Vec<u32>],
    labels: &[u8],
    seed: u64,
    steps: usize,
    lr: f64,
) -> Result<f32, TrainError> {
    if inputs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if inputs.len() != labels.len() {
        return Err(TrainError::Config {
            detail: format!("{} inputs but {} labels", inputs.len(), labels.len()),
        });
    }
    if inputs.len() < 4 {
        return Err(TrainError::Config {
            detail: "probe needs at least 4 examples for a 75/25 split".into(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(TrainError::Config {
            detail: format!("probe label {bad} is not binary"),
        });
    }
    if steps == 0 || !(lr.is_finite() && lr > 0.0) {
        return Err(TrainError::Config {
            detail: format!("probe needs steps >= 1 and lr > 0 (got {steps}, {lr})"),
        });
    }

    let features: Vec<Vec<f32>> = inputs
        .iter()
        .map(|ids| encode_cls(params, encoder, ids))
        .collect::<Result<_, _>>()?;
    let h = encoder.hidden;

    // Deterministic shuffled split: Fisher-Yates driven by the probe stream.
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = stream(seed, "probe:split");
    for i in (1..order.len()).rev() {
        order.swap(i, below(&mut rng, i + 1));
    }
    let cut = (order.len() * 3) / 4;
    let (train_idx, eval_idx) = order.split_at(cut);

    // Two-class logistic regression, parameterized by a single logit
    // difference per feature (w, b), trained full batch.
    let mut w = vec![0.0f64; h];
    let mut b = 0.0f64;
    for _ in 0..steps {
        let mut dw = vec![0.0f64; h];
        let mut db = 0.0f64;
        for &i in train_idx {
            let feat = &features[i];
            let z: f64 = b + feat.iter().zip(&w).map(|(&f, &w)| f as f64 * w).sum::<f64>();
            // p = P(label = 1); stable sigmoid.
            let p = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            let err = p - labels[i] as f64;
            db += err;
            for (dw, &f) in dw.iter_mut().zip(feat) {
                *dw += err * f as f64;
            }
        }
        let n = train_idx.len() as f64;
        b -= lr * db / n;
        for (w, dw) in w.iter_mut().zip(&dw) {
            *w -= lr * dw / n;
        }
    }

    let mut correct = 0usize;
    for &i in eval_idx {
        let feat = &features[i];
        let z: f64 = b + feat.iter().zip(&w).map(|(&f, &w)| f as f64 * w).sum::<f64>();
        let predicted = u8::from(z > 0.0);
        if predicted == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f32 / eval_idx.len() as f32)
}
