//! The three training stages.
//!
//! All three consume canonical records and a vocabulary and produce a
//! [`Checkpoint`] plus a per-step [`LossTrace`]. Batch composition at step
//! `s` is drawn from the stream `(seed, "batch:<stage>:<s>")`, so runs are
//! bitwise reproducible and any step can be replayed in isolation.

use super::checkpoint::{vocab_hash, Checkpoint};
use super::{AdamState, LossTrace, Stage, TargetMode, TraceRow, TrainConfig, TrainError};
use crate::autodiff::{Gradients, Graph, Tensor};
use crate::model::{
    cls_batch, encode_cls, linear, stage1_loss, EncoderConfig, HeadMode, ModelParams,
    ParamLeaves, Stage1Batch, TcExample,
};
use crate::rng::{below, stream};
use crate::simplex::{
    softmax_backward, softmax_probs, sparsemax, sparsemax_backward, sparsemax_loss,
    SimplexVector,
};
use crate::text::{
    make_mlm_example, make_nsp_pair, split_turns, tokenize, CanonicalRecord, ConceptSpec,
    Vocab,
};

/// First index of the maximum (deterministic tie rule).
fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Loss and d(loss)/d(scores) for one example under the configured head and
/// target. This closed form is shared by the baseline stage (where it seeds
/// backprop through the encoder) and the frozen-encoder stage (where the
/// chain stops at the classifier).
pub(crate) fn head_loss_grad(
    scores: &[f32],
    gold: &SimplexVector,
    head: HeadMode,
    target: TargetMode,
) -> Result<(f32, Vec<f32>), TrainError> {
    match target {
        TargetMode::Onehot => {
            let label = argmax(gold.as_slice());
            match head {
                HeadMode::Sparsemax => Ok(sparsemax_loss(scores, label)?),
                HeadMode::Softmax => {
                    let probs = softmax_probs(scores)?;
                    // Cross-entropy via log-sum-exp in f64.
                    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                    let lse: f64 = scores
                        .iter()
                        .map(|&z| ((z as f64) - max).exp())
                        .sum::<f64>()
                        .ln()
                        + max;
                    let loss = (lse - scores[label] as f64) as f32;
                    let mut grad = probs.as_slice().to_vec();
                    grad[label] -= 1.0;
                    Ok((loss, grad))
                }
            }
        }
        TargetMode::Distribution => {
            let probs = match head {
                HeadMode::Sparsemax => sparsemax(scores)?,
                HeadMode::Softmax => softmax_probs(scores)?,
            };
            if gold.len() != probs.len() {
                return Err(TrainError::Config {
                    detail: format!(
                        "gold distribution has {} entries, classifier has {}",
                        gold.len(),
                        probs.len()
                    ),
                });
            }
            let mut loss = 0.0f64;
            let mut upstream = vec![0.0f32; probs.len()];
            for (i, (&p, &g)) in probs.as_slice().iter().zip(gold.as_slice()).enumerate() {
                let d = p as f64 - g as f64;
                loss += d * d;
                upstream[i] = (2.0 * d) as f32;
            }
            let grad = match head {
                HeadMode::Sparsemax => sparsemax_backward(&probs, &upstream)?,
                HeadMode::Softmax => softmax_backward(&probs, &upstream),
            };
            Ok((loss as f32, grad))
        }
    }
}

/// The encoder config a stage actually trains with: the training config's
/// reversal strength and head mode override the architecture defaults, and
/// both are recorded in the resulting checkpoint.
fn effective_encoder(encoder: &EncoderConfig, train: &TrainConfig) -> EncoderConfig {
    EncoderConfig {
        lambda: train.lambda,
        head_mode: train.head_mode,
        ..encoder.clone()
    }
}

fn check_corpus(
    records: &[CanonicalRecord],
    num_classes: usize,
) -> Result<(), TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    for r in records {
        if r.gold.len() != num_classes {
            return Err(TrainError::Config {
                detail: format!(
                    "record \"{}\" has a {}-way gold distribution, model has {} classes",
                    r.id,
                    r.gold.len(),
                    num_classes
                ),
            });
        }
    }
    Ok(())
}

fn check_vocab(encoder: &EncoderConfig, vocab: &Vocab) -> Result<(), TrainError> {
    if encoder.vocab_size != vocab.len() {
        return Err(TrainError::Config {
            detail: format!(
                "encoder vocab_size {} does not match vocabulary size {}",
                encoder.vocab_size,
                vocab.len()
            ),
        });
    }
    Ok(())
}

fn tokenize_corpus(
    records: &[CanonicalRecord],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<Vec<u32>>, TrainError> {
    records
        .iter()
        .map(|r| tokenize(&r.text, vocab, max_len).map_err(TrainError::from))
        .collect()
}

/// Indices of one batch, drawn with replacement from `(seed, label, step)`.
fn batch_indices(seed: u64, stage: Stage, step: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut rng = stream(seed, &format!("batch:{stage}:{step}"));
    (0..batch).map(|_| below(&mut rng, n)).collect()
}

/// Collect parameter gradients by leaf name, sorted so downstream behavior
/// never depends on hash-map iteration order.
fn named_grads(leaves: &ParamLeaves, grads: &Gradients) -> Vec<(String, Vec<f32>)> {
    let mut out: Vec<(String, Vec<f32>)> = leaves
        .iter()
        .filter_map(|(name, id)| grads.get(id).map(|t| (name.to_string(), t.data().to_vec())))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn finite_or(loss: f32, step: usize) -> Result<f32, TrainError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(TrainError::NonFiniteLoss { step })
    }
}

/// Stage "baseline": train encoder and disease classifier jointly on the
/// classification objective alone. No concept head is attached, so the
/// reversal strength is irrelevant here (it is still recorded for
/// provenance).
pub fn train_baseline(
    encoder: &EncoderConfig,
    train: &TrainConfig,
    records: &[CanonicalRecord],
    vocab: &Vocab,
) -> Result<(Checkpoint, LossTrace), TrainError> {
    train.validate()?;
    let config = effective_encoder(encoder, train);
    config.validate()?;
    check_vocab(&config, vocab)?;
    check_corpus(records, config.num_classes)?;

    let ids = tokenize_corpus(records, vocab, config.max_len)?;
    let mut params = ModelParams::init(&config, train.seed)?;
    let mut adam = AdamState::new(train);
    let mut trace = LossTrace::default();

    for step in 1..=train.steps {
        let idx = batch_indices(train.seed, Stage::Baseline, step, train.batch_size, ids.len());
        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&params, &mut g);
        let cls = cls_batch(&mut g, &leaves, &config, idx.iter().map(|&i| &ids[i]))?;
        let scores = linear(&mut g, &leaves, cls, "cls.w", "cls.b")?;

        let score_rows = g.value(scores).data().to_vec();
        let d = config.num_classes;
        let b = idx.len();
        let mut loss_sum = 0.0f64;
        let mut seed_grad = vec![0.0f32; b * d];
        for (row, &i) in idx.iter().enumerate() {
            let (loss, dz) = head_loss_grad(
                &score_rows[row * d..(row + 1) * d],
                &records[i].gold,
                config.head_mode,
                train.target_mode,
            )?;
            loss_sum += loss as f64;
            for (j, &v) in dz.iter().enumerate() {
                seed_grad[row * d + j] = v / b as f32;
            }
        }
        let loss = finite_or((loss_sum / b as f64) as f32, step)?;

        let grads = g.backprop_from(scores, Tensor::new(vec![b, d], seed_grad)?)?;
        adam.apply(&mut params, &named_grads(&leaves, &grads), train.lr, step)?;
        trace.rows.push(TraceRow { step, mlm: None, nsp: None, tc: None, total: loss });
    }

    let final_losses = [("total".to_string(), trace.rows.last().unwrap().total)]
        .into_iter()
        .collect();
    Ok((
        Checkpoint {
            stage: Stage::Baseline,
            encoder: config,
            train: train.clone(),
            final_losses,
            vocab_hash: vocab_hash(vocab),
            params,
            vocab: vocab.clone(),
        },
        trace,
    ))
}

fn concept_labels(
    records: &[CanonicalRecord],
    concept: &ConceptSpec,
) -> Result<Vec<u8>, TrainError> {
    records
        .iter()
        .map(|r| {
            r.concept_flags.get(&concept.name).copied().ok_or_else(|| {
                TrainError::MissingConceptFlag {
                    id: r.id.clone(),
                    concept: concept.name.clone(),
                }
            })
        })
        .collect()
}

/// Stage "tc": train the encoder on MLM + NSP while the gradient-reversed
/// concept head pushes its representations to forget the treatment concept.
/// `control` must be given iff the encoder config enables the
/// control-concept head (which trains *without* reversal, as a check that
/// forgetting is specific to the treated concept).
pub fn train_stage1(
    encoder: &EncoderConfig,
    train: &TrainConfig,
    records: &[CanonicalRecord],
    vocab: &Vocab,
    concept: &ConceptSpec,
    control: Option<&ConceptSpec>,
) -> Result<(Checkpoint, LossTrace), TrainError> {
    train.validate()?;
    let config = effective_encoder(encoder, train);
    config.validate()?;
    check_vocab(&config, vocab)?;
    if records.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if records.len() < 2 {
        return Err(TrainError::Config {
            detail: "next-sentence prediction needs at least two documents".into(),
        });
    }
    match (config.enable_cc, control) {
        (true, None) => {
            return Err(TrainError::Config {
                detail: "enable_cc is on but no control concept was given".into(),
            })
        }
        (false, Some(_)) => {
            return Err(TrainError::Config {
                detail: "control concept given but enable_cc is off".into(),
            })
        }
        _ => {}
    }

    let tc_labels = concept_labels(records, concept)?;
    if let Some(&first) = tc_labels.first() {
        if tc_labels.iter().all(|&l| l == first) && !train.allow_constant_tc {
            return Err(TrainError::DegenerateTcLabels { label: first });
        }
    }
    let cc_labels = control.map(|c| concept_labels(records, c)).transpose()?;

    let ids = tokenize_corpus(records, vocab, config.max_len)?;
    let docs: Vec<Vec<String>> = records.iter().map(|r| split_turns(&r.text)).collect();

    let mut params = ModelParams::init(&config, train.seed)?;
    let mut adam = AdamState::new(train);
    let mut trace = LossTrace::default();
    let mut final_cc: Option<f32> = None;

    for step in 1..=train.steps {
        // One stream drives the whole step: index draws, masking, and pair
        // construction, in a fixed order.
        let mut rng = stream(train.seed, &format!("batch:{}:{step}", Stage::Tc));

        let mut mlm = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            let i = below(&mut rng, ids.len());
            mlm.push(make_mlm_example(&ids[i], vocab, &mut rng)?);
        }
        let mut nsp = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            let doc = below(&mut rng, docs.len());
            nsp.push(make_nsp_pair(&docs, doc, vocab, config.max_len, &mut rng)?);
        }
        let mut tc = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            let i = below(&mut rng, ids.len());
            tc.push(TcExample { input_ids: ids[i].clone(), label: tc_labels[i] });
        }
        let cc: Option<Vec<TcExample>> = cc_labels.as_ref().map(|labels| {
            (0..train.batch_size)
                .map(|_| {
                    let i = below(&mut rng, ids.len());
                    TcExample { input_ids: ids[i].clone(), label: labels[i] }
                })
                .collect()
        });

        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&params, &mut g);
        let batch = Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: cc.as_deref() };
        let loss = stage1_loss(&mut g, &leaves, &config, &batch)?;

        let total = finite_or(g.value(loss.total).item(), step)?;
        let row = TraceRow {
            step,
            mlm: Some(g.value(loss.mlm).item()),
            nsp: Some(g.value(loss.nsp).item()),
            tc: Some(g.value(loss.tc).item()),
            total,
        };
        final_cc = loss.cc.map(|id| g.value(id).item());

        let grads = g.backprop(loss.total)?;
        adam.apply(&mut params, &named_grads(&leaves, &grads), train.lr, step)?;
        trace.rows.push(row);
    }

    let last = trace.rows.last().unwrap();
    let mut final_losses: std::collections::BTreeMap<String, f32> = [
        ("mlm".to_string(), last.mlm.unwrap()),
        ("nsp".to_string(), last.nsp.unwrap()),
        ("tc".to_string(), last.tc.unwrap()),
        ("total".to_string(), last.total),
    ]
    .into_iter()
    .collect();
    if let Some(cc) = final_cc {
        final_losses.insert("cc".to_string(), cc);
    }

    Ok((
        Checkpoint {
            stage: Stage::Tc,
            encoder: config,
            train: train.clone(),
            final_losses,
            vocab_hash: vocab_hash(vocab),
            params,
            vocab: vocab.clone(),
        },
        trace,
    ))
}

/// Stage "cf": freeze a tc checkpoint's encoder bitwise and retrain only
/// the disease classifier (`cls.w`, `cls.b`) on top of its CLS features.
/// The encoder is run once per record up front; training then never touches
/// it, so every non-classifier tensor of the result is byte-identical to
/// the input checkpoint.
pub fn train_stage2(
    train: &TrainConfig,
    tc: &Checkpoint,
    records: &[CanonicalRecord],
) -> Result<(Checkpoint, LossTrace), TrainError> {
    train.validate()?;
    if tc.stage != Stage::Tc {
        return Err(TrainError::WrongStage { expected: Stage::Tc, got: tc.stage });
    }
    // The head mode may be chosen afresh at this stage; the architecture and
    // the (already applied) reversal strength come from the checkpoint.
    let config = EncoderConfig { head_mode: train.head_mode, ..tc.encoder.clone() };
    config.validate()?;
    check_corpus(records, config.num_classes)?;

    let ids = tokenize_corpus(records, &tc.vocab, config.max_len)?;
    let features: Vec<Vec<f32>> = ids
        .iter()
        .map(|ids| encode_cls(&tc.params, &config, ids))
        .collect::<Result<_, _>>()?;

    let mut params = tc.params.clone();
    let mut adam = AdamState::new(train);
    let mut trace = LossTrace::default();
    let h = config.hidden;
    let d = config.num_classes;

    for step in 1..=train.steps {
        let idx = batch_indices(train.seed, Stage::Cf, step, train.batch_size, ids.len());
        let b = idx.len();

        let w = params.get("cls.w")?.data();
        let bias = params.get("cls.b")?.data();
        let mut loss_sum = 0.0f64;
        let mut dw = vec![0.0f64; h * d];
        let mut db = vec![0.0f64; d];
        for &i in &idx {
            let feat = &features[i];
            let mut scores = vec![0.0f32; d];
            for (j, score) in scores.iter_mut().enumerate() {
                let mut acc = bias[j] as f64;
                for (k, &f) in feat.iter().enumerate() {
                    acc += f as f64 * w[k * d + j] as f64;
                }
                *score = acc as f32;
            }
            let (loss, dz) =
                head_loss_grad(&scores, &records[i].gold, config.head_mode, train.target_mode)?;
            loss_sum += loss as f64;
            for (j, &g) in dz.iter().enumerate() {
                let g = g as f64 / b as f64;
                db[j] += g;
                for (k, &f) in feat.iter().enumerate() {
                    dw[k * d + j] += f as f64 * g;
                }
            }
        }
        let loss = finite_or((loss_sum / b as f64) as f32, step)?;

        let grads = vec![
            ("cls.w".to_string(), dw.iter().map(|&v| v as f32).collect::<Vec<f32>>()),
            ("cls.b".to_string(), db.iter().map(|&v| v as f32).collect::<Vec<f32>>()),
        ];
        adam.apply(&mut params, &grads, train.lr, step)?;
        trace.rows.push(TraceRow { step, mlm: None, nsp: None, tc: None, total: loss });
    }

    let final_losses = [("total".to_string(), trace.rows.last().unwrap().total)]
        .into_iter()
        .collect();
    Ok((
        Checkpoint {
            stage: Stage::Cf,
            encoder: config,
            train: train.clone(),
            final_losses,
            vocab_hash: tc.vocab_hash.clone(),
            params,
            vocab: tc.vocab.clone(),
        },
        trace,
    ))
}
