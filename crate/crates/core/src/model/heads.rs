//! Stage-1 multi-task loss: masked-language-model, next-sentence, and
//! treatment-concept cross-entropies, summed with equal weight. The TC head
//! reads the CLS vector through gradient reversal, so its own parameters
//! train normally while the encoder is pushed to *maximize* TC loss — the
//! standard domain-adversarial arrangement. The optional control-concept
//! head is wired identically but without reversal, preserving
//! control-concept information in the representation.

use super::encoder::{encode, linear, ParamLeaves};
use super::{EncoderConfig, ModelError};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::text::{MlmExample, NspExample};

/// One record for a binary concept head: token ids plus the 0/1 flag.
#[derive(Debug, Clone)]
pub struct TcExample {
    pub input_ids: Vec<u32>,
    pub label: u8,
}

/// The three (or four) sub-batches of one stage-1 step. Each sub-batch is
/// encoded independently; they need not be the same records.
pub struct Stage1Batch<'a> {
    pub mlm: &'a [MlmExample],
    pub nsp: &'a [NspExample],
    pub tc: &'a [TcExample],
    /// Control-concept examples; required iff the config enables the head.
    pub cc: Option<&'a [TcExample]>,
}

/// Loss nodes of one stage-1 step: `total` is the graph-level sum of the
/// components, so its value is exactly the f32 sum of theirs.
#[derive(Debug)]
pub struct Stage1Loss {
    pub total: NodeId,
    pub mlm: NodeId,
    pub nsp: NodeId,
    pub tc: NodeId,
    pub cc: Option<NodeId>,
}

fn binary_targets(examples: &[TcExample]) -> Result<Vec<usize>, ModelError> {
    examples
        .iter()
        .map(|e| match e.label {
            0 | 1 => Ok(e.label as usize),
            v => Err(ModelError::InvalidLabel { value: v }),
        })
        .collect()
}

/// Encode each sequence and stack the CLS vectors into a `[batch, hidden]`
/// matrix.
pub(crate) fn cls_batch(
    g: &mut Graph,
    leaves: &ParamLeaves,
    config: &EncoderConfig,
    sequences: impl Iterator<Item = impl AsRef<[u32]>>,
) -> Result<NodeId, ModelError> {
    let mut rows = Vec::new();
    for ids in sequences {
        let (_, cls) = encode(g, leaves, config, ids.as_ref())?;
        rows.push(cls);
    }
    Ok(if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? })
}

/// Build the combined stage-1 loss on `g`.
///
/// `Loss_total = Loss_MLM + Loss_NSP + Loss_TC (+ Loss_CC)`, each a mean
/// cross-entropy: over masked positions for MLM (taken across the whole
/// sub-batch, so every masked position weighs equally), over examples for
/// the sentence and concept heads. An MLM sub-batch may legitimately carry
/// zero masked positions (e.g. under a zero selection rate); its term is
/// then the constant 0 and contributes no gradient.
pub fn stage1_loss(
    g: &mut Graph,
    leaves: &ParamLeaves,
    config: &EncoderConfig,
    batch: &Stage1Batch,
) -> Result<Stage1Loss, ModelError> {
    if batch.mlm.is_empty() {
        return Err(ModelError::BatchEmpty { which: "mlm" });
    }
    if batch.nsp.is_empty() {
        return Err(ModelError::BatchEmpty { which: "nsp" });
    }
    if batch.tc.is_empty() {
        return Err(ModelError::BatchEmpty { which: "tc" });
    }
    match (config.enable_cc, batch.cc) {
        (true, None) => return Err(ModelError::CcBatchMissing),
        (true, Some(cc)) if cc.is_empty() => return Err(ModelError::BatchEmpty { which: "cc" }),
        (false, Some(_)) => return Err(ModelError::CcBatchWithoutHead),
        _ => {}
    }

    // MLM: gather the states at masked positions of every example, stack
    // them, and score against the original ids.
    let mut mlm_logit_blocks = Vec::new();
    let mut mlm_targets = Vec::new();
    for example in batch.mlm {
        let (states, _) = encode(g, leaves, config, &example.input_ids)?;
        if example.targets.is_empty() {
            continue;
        }
        let mut positions = Vec::with_capacity(example.targets.len());
        for &(pos, original) in &example.targets {
            if pos >= config.max_len {
                return Err(ModelError::PositionOutOfRange { position: pos, max_len: config.max_len });
            }
            if original as usize >= config.vocab_size {
                return Err(ModelError::IdOutOfRange { id: original, vocab: config.vocab_size });
            }
            positions.push(pos);
            mlm_targets.push(original as usize);
        }
        let gathered = g.lookup(states, &positions)?;
        mlm_logit_blocks.push(linear(g, leaves, gathered, "mlm.w", "mlm.b")?);
    }
    let mlm = if mlm_logit_blocks.is_empty() {
        g.leaf(Tensor::scalar(0.0)?)
    } else {
        let logits = if mlm_logit_blocks.len() == 1 {
            mlm_logit_blocks[0]
        } else {
            g.concat(&mlm_logit_blocks, 0)?
        };
        g.cross_entropy(logits, &mlm_targets)?
    };

    // NSP: CLS of each pair through the sentence head.
    let nsp = {
        let cls = cls_batch(g, leaves, config, batch.nsp.iter().map(|e| &e.input_ids))?;
        let logits = linear(g, leaves, cls, "nsp.w", "nsp.b")?;
        let targets: Vec<usize> = batch.nsp.iter().map(|e| e.is_next as usize).collect();
        g.cross_entropy(logits, &targets)?
    };

    // TC: CLS through gradient reversal, then the concept head. The head's
    // own weight and bias sit *after* the reversal, so they receive
    // standard gradients; only the encoder side is reversed.
    let tc = {
        let cls = cls_batch(g, leaves, config, batch.tc.iter().map(|e| &e.input_ids))?;
        let reversed = g.grad_reverse(cls, config.lambda)?;
        let logits = linear(g, leaves, reversed, "tc.w", "tc.b")?;
        g.cross_entropy(logits, &binary_targets(batch.tc)?)?
    };

    // CC: identical wiring, no reversal.
    let cc = match batch.cc {
        Some(examples) => {
            let cls = cls_batch(g, leaves, config, examples.iter().map(|e| &e.input_ids))?;
            let logits = linear(g, leaves, cls, "cc.w", "cc.b")?;
            Some(g.cross_entropy(logits, &binary_targets(examples)?)?)
        }
        None => None,
    };

    let mut total = g.add(mlm, nsp)?;
    total = g.add(total, tc)?;
    if let Some(cc) = cc {
        total = g.add(total, cc)?;
    }
    Ok(Stage1Loss { total, mlm, nsp, tc, cc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadMode, ModelParams};
    use crate::rng::stream;
    use rand_chacha::rand_core::RngCore;

    fn config() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            hidden: 16,
            heads: 4,
            ff_dim: 32,
            max_len: 8,
            vocab_size: 24,
            num_classes: 3,
            lambda: 6.0,
            enable_cc: false,
            head_mode: HeadMode::Sparsemax,
        }
    }

    fn random_ids(rng: &mut impl RngCore, config: &EncoderConfig) -> Vec<u32> {
        let mut ids = vec![2u32];
        for _ in 0..config.max_len - 3 {
            ids.push(5 + (rng.next_u64() % (config.vocab_size as u64 - 5)) as u32);
        }
        ids.push(3);
        ids.resize(config.max_len, 0);
        ids
    }

    fn fixture_batch(
        config: &EncoderConfig,
        seed: u64,
    ) -> (Vec<MlmExample>, Vec<NspExample>, Vec<TcExample>) {
        fixture_batch_n(config, seed, 2)
    }

    fn fixture_batch_n(
        config: &EncoderConfig,
        seed: u64,
        count: usize,
    ) -> (Vec<MlmExample>, Vec<NspExample>, Vec<TcExample>) {
        let mut rng = stream(seed, "heads:fixture");
        let mlm: Vec<MlmExample> = (0..count)
            .map(|_| {
                let ids = random_ids(&mut rng, config);
                MlmExample {
                    targets: vec![(1, ids[1]), (3, ids[3])],
                    input_ids: {
                        let mut corrupted = ids.clone();
                        corrupted[1] = 4; // MASK
                        corrupted
                    },
                }
            })
            .collect();
        let nsp: Vec<NspExample> = (0..count)
            .map(|i| NspExample { input_ids: random_ids(&mut rng, config), is_next: (i % 2) as u8 })
            .collect();
        let tc: Vec<TcExample> = (0..count)
            .map(|i| TcExample { input_ids: random_ids(&mut rng, config), label: (i % 2) as u8 })
            .collect();
        (mlm, nsp, tc)
    }

    /// Gradients of every parameter under a loss built by `build`.
    fn param_grads<F>(params: &ModelParams, build: F) -> Vec<(String, Option<Vec<f32>>)>
    where
        F: Fn(&mut Graph, &ParamLeaves) -> NodeId,
    {
        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(params, &mut g);
        let loss = build(&mut g, &leaves);
        let grads = g.backprop(loss).unwrap();
        params
            .iter()
            .map(|(name, _)| {
                let node = leaves.get(name).unwrap();
                (name.to_string(), grads.get(node).map(|t| t.data().to_vec()))
            })
            .collect()
    }

    #[test]
    fn total_is_the_exact_sum_of_the_components() {
        let c = config();
        let params = ModelParams::init(&c, 11).unwrap();
        let (mlm, nsp, tc) = fixture_batch(&c, 1);
        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&params, &mut g);
        let loss = stage1_loss(
            &mut g,
            &leaves,
            &c,
            &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: None },
        )
        .unwrap();
        let (lt, lm, ln, lc) = (
            g.value(loss.total).item(),
            g.value(loss.mlm).item(),
            g.value(loss.nsp).item(),
            g.value(loss.tc).item(),
        );
        assert_eq!(lt, (lm + ln) + lc, "sum identity must hold bitwise");
        assert!(lm > 0.0 && ln > 0.0 && lc > 0.0);
    }

    #[test]
    fn empty_sub_batches_are_rejected() {
        let c = config();
        let params = ModelParams::init(&c, 12).unwrap();
        let (mlm, nsp, tc) = fixture_batch(&c, 2);
        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&params, &mut g);
        let err = stage1_loss(
            &mut g,
            &leaves,
            &c,
            &Stage1Batch { mlm: &[], nsp: &nsp, tc: &tc, cc: None },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::BatchEmpty { which: "mlm" }));
        let err = stage1_loss(
            &mut g,
            &leaves,
            &c,
            &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &[], cc: None },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::BatchEmpty { which: "tc" }));
    }

    #[test]
    fn cc_batch_wiring_is_validated() {
        let mut c = config();
        let (mlm, nsp, tc) = fixture_batch(&c, 3);
        let params = ModelParams::init(&c, 13).unwrap();
        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&params, &mut g);
        let err = stage1_loss(
            &mut g,
            &leaves,
            &c,
            &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: Some(&tc) },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::CcBatchWithoutHead));

        c.enable_cc = true;
        let params = ModelParams::init(&c, 13).unwrap();
        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&params, &mut g);
        let err = stage1_loss(
            &mut g,
            &leaves,
            &c,
            &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: None },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::CcBatchMissing));

        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&params, &mut g);
        let loss = stage1_loss(
            &mut g,
            &leaves,
            &c,
            &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: Some(&tc) },
        )
        .unwrap();
        let cc = loss.cc.expect("cc component present");
        let total = g.value(loss.total).item();
        let parts = g.value(loss.mlm).item() + g.value(loss.nsp).item();
        let parts = parts + g.value(loss.tc).item();
        assert_eq!(total, parts + g.value(cc).item());
    }

    #[test]
    fn tc_encoder_gradient_is_minus_lambda_times_unreversed() {
        // Two-graph comparison: the TC term alone, once through the GRL at
        // lambda = 6 and once with a plain (unreversed) head. Encoder
        // parameters must see exactly -6x the unreversed gradient; the TC
        // head's own parameters must see identical (unreversed) gradients.
        let c = config();
        let params = ModelParams::init(&c, 21).unwrap();
        let (_, _, tc) = fixture_batch(&c, 4);
        let targets = binary_targets(&tc).unwrap();

        let reversed = param_grads(&params, |g, leaves| {
            let cls = cls_batch(g, leaves, &c, tc.iter().map(|e| &e.input_ids)).unwrap();
            let rev = g.grad_reverse(cls, 6.0).unwrap();
            let logits = linear(g, leaves, rev, "tc.w", "tc.b").unwrap();
            g.cross_entropy(logits, &targets).unwrap()
        });
        let plain = param_grads(&params, |g, leaves| {
            let cls = cls_batch(g, leaves, &c, tc.iter().map(|e| &e.input_ids)).unwrap();
            let logits = linear(g, leaves, cls, "tc.w", "tc.b").unwrap();
            g.cross_entropy(logits, &targets).unwrap()
        });

        for ((name, a), (_, b)) in reversed.iter().zip(&plain) {
            let (Some(a), Some(b)) = (a, b) else { continue };
            let factor = if name.starts_with("tc.") { 1.0 } else { -6.0 };
            for (x, y) in a.iter().zip(b) {
                let want = factor * y;
                assert!(
                    (x - want).abs() <= 1e-5 * want.abs().max(1.0),
                    "{name}: {x} vs {want}"
                );
            }
        }
    }

    #[test]
    fn lambda_zero_silences_tc_gradients_to_the_encoder() {
        // With lambda = 0 the reversal factor is zero: the TC term still
        // trains its own head, but contributes nothing to the encoder, so
        // full-stage gradients equal the MLM+NSP-only gradients there.
        let mut c = config();
        c.lambda = 0.0;
        let params = ModelParams::init(&c, 22).unwrap();
        let (mlm, nsp, tc) = fixture_batch(&c, 5);

        let with_tc = param_grads(&params, |g, leaves| {
            stage1_loss(
                g,
                leaves,
                &c,
                &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: None },
            )
            .unwrap()
            .total
        });
        let without_tc = param_grads(&params, |g, leaves| {
            let l = stage1_loss(
                g,
                leaves,
                &c,
                &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: None },
            )
            .unwrap();
            g.add(l.mlm, l.nsp).unwrap()
        });

        for ((name, a), (_, b)) in with_tc.iter().zip(&without_tc) {
            if name.starts_with("tc.") {
                let a = a.as_ref().expect("tc head still trains");
                assert!(a.iter().any(|&v| v != 0.0), "{name} got no gradient");
                continue;
            }
            match (a, b) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.iter().zip(b) {
                        assert!((x - y).abs() <= 1e-6, "{name}: {x} vs {y}");
                    }
                }
                (Some(a), None) => assert!(a.iter().all(|&v| v == 0.0), "{name}"),
                (None, None) => {}
                (None, Some(_)) => panic!("{name}: gradient disappeared"),
            }
        }
    }

    #[test]
    fn zero_masked_positions_yield_a_zero_mlm_term() {
        let c = config();
        let params = ModelParams::init(&c, 23).unwrap();
        let (mut mlm, nsp, tc) = fixture_batch(&c, 6);
        for e in mlm.iter_mut() {
            e.targets.clear();
        }
        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&params, &mut g);
        let loss = stage1_loss(
            &mut g,
            &leaves,
            &c,
            &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: None },
        )
        .unwrap();
        assert_eq!(g.value(loss.mlm).item(), 0.0);
        assert_eq!(
            g.value(loss.total).item(),
            g.value(loss.nsp).item() + g.value(loss.tc).item()
        );
    }

    #[test]
    fn stage1_gradients_match_finite_differences() {
        // Finite differences measure the derivative of the objective's
        // forward value. The reversal layer is a forward identity whose
        // backward is deliberately *not* that derivative (it scales the
        // concept-head gradient by -lambda on its way into the encoder), so
        // backprop on the objective itself cannot agree with differences on
        // encoder parameters. The true derivative of the forward value is
        // the backprop of the identically wired composition with the
        // concept head attached directly; the reversal's own backward is
        // pinned separately (forward identity, exact -lambda scaling).
        let c = config();
        let params = ModelParams::init(&c, 31).unwrap();
        let (mlm, nsp, tc) = fixture_batch_n(&c, 7, 4);

        // Forward value of the real objective (reversal included).
        let loss_value = |p: &ModelParams| -> f64 {
            let mut g = Graph::new();
            let leaves = ParamLeaves::insert(p, &mut g);
            let l = stage1_loss(
                &mut g,
                &leaves,
                &c,
                &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: None },
            )
            .unwrap();
            g.value(l.total).item() as f64
        };

        // Same wiring, concept head unreversed: its backprop is the
        // derivative of the objective's forward value.
        let grads = param_grads(&params, |g, leaves| {
            let mut blocks = Vec::new();
            let mut mlm_targets = Vec::new();
            for e in &mlm {
                let (states, _) = encode(g, leaves, &c, &e.input_ids).unwrap();
                let positions: Vec<usize> = e.targets.iter().map(|&(p, _)| p).collect();
                mlm_targets.extend(e.targets.iter().map(|&(_, t)| t as usize));
                let gathered = g.lookup(states, &positions).unwrap();
                blocks.push(linear(g, leaves, gathered, "mlm.w", "mlm.b").unwrap());
            }
            let logits = g.concat(&blocks, 0).unwrap();
            let mlm_loss = g.cross_entropy(logits, &mlm_targets).unwrap();

            let nsp_cls = cls_batch(g, leaves, &c, nsp.iter().map(|e| &e.input_ids)).unwrap();
            let nsp_logits = linear(g, leaves, nsp_cls, "nsp.w", "nsp.b").unwrap();
            let nsp_targets: Vec<usize> = nsp.iter().map(|e| e.is_next as usize).collect();
            let nsp_loss = g.cross_entropy(nsp_logits, &nsp_targets).unwrap();

            let tc_cls = cls_batch(g, leaves, &c, tc.iter().map(|e| &e.input_ids)).unwrap();
            let tc_logits = linear(g, leaves, tc_cls, "tc.w", "tc.b").unwrap();
            let tc_loss = g.cross_entropy(tc_logits, &binary_targets(&tc).unwrap()).unwrap();

            let sum = g.add(mlm_loss, nsp_loss).unwrap();
            g.add(sum, tc_loss).unwrap()
        });

        // Sanity: the unreversed twin has the same forward value bitwise.
        {
            let mut g = Graph::new();
            let leaves = ParamLeaves::insert(&params, &mut g);
            let l = stage1_loss(
                &mut g,
                &leaves,
                &c,
                &Stage1Batch { mlm: &mlm, nsp: &nsp, tc: &tc, cc: None },
            )
            .unwrap();
            assert_eq!(g.value(l.total).item() as f64, loss_value(&params));
        }

        let mut rng = stream(2718, "heads:fd");
        let names: Vec<&str> = params.iter().map(|(n, _)| n).collect();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 20 && attempts < 200 {
            attempts += 1;
            let name = names[crate::rng::below(&mut rng, names.len())];
            let numel = params.get(name).unwrap().numel();
            let coord = crate::rng::below(&mut rng, numel);
            let analytic = match &grads.iter().find(|(n, _)| n == name).unwrap().1 {
                Some(g) => g[coord] as f64,
                None => continue, // cls.* take no part in stage 1
            };

            // 2e-3 balances quotient noise (~1 ulp of the f32 loss per
            // evaluation) against curvature error, which peaks for
            // embedding rows whose scale is only ~0.03.
            let eps = 2e-3f32;
            let mut perturbed = params.clone();
            let original = perturbed.get(name).unwrap().data()[coord];
            perturbed.get_mut(name).unwrap().data_mut()[coord] = original + eps;
            let hi = loss_value(&perturbed);
            perturbed.get_mut(name).unwrap().data_mut()[coord] = original - eps;
            let lo = loss_value(&perturbed);
            let h = (original + eps) as f64 - (original - eps) as f64;
            let fd = (hi - lo) / h;

            // The floor keeps coordinates whose derivative sits below the
            // f32 resolution of the quotient from turning rounding noise
            // into spurious relative error; for them the check is absolute
            // at 2e-4, still far tighter than any wrong backward rule.
            let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(2e-2);
            assert!(rel < 1e-2, "{name}[{coord}]: analytic {analytic}, fd {fd}, rel {rel}");
            checked += 1;
        }
        assert_eq!(checked, 20, "could not collect 20 differentiable coordinates");
    }
}
