//! Encoder forward pass on the autodiff graph: embeddings, masked
//! multi-head self-attention, feed-forward blocks with post-layer-norm, and
//! the CLS-based disease classifier.

use super::{EncoderConfig, HeadMode, ModelError, ModelParams};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::simplex::{softmax_probs, sparsemax, SimplexVector};
use crate::text::PAD_ID;
use std::collections::HashMap;

const LN_EPS: f32 = 1e-5;
/// Additive attention penalty for PAD keys; exp() underflows to exact zero.
const MASK_VALUE: f32 = -1e9;

/// Leaf nodes for every model parameter in one graph. Parameters are
/// inserted exactly once per graph, so every use shares the same node and
/// gradients accumulate across uses.
pub struct ParamLeaves {
    nodes: HashMap<String, NodeId>,
}

impl ParamLeaves {
    /// Insert all of `params` into `g` as leaves.
    pub fn insert(params: &ModelParams, g: &mut Graph) -> Self {
        let nodes = params
            .iter()
            .map(|(name, tensor)| (name.to_string(), g.leaf(tensor.clone())))
            .collect();
        ParamLeaves { nodes }
    }

    pub fn get(&self, name: &str) -> Result<NodeId, ModelError> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam { name: name.to_string() })
    }

    /// Iterate (name, node) pairs; order is unspecified.
    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(n, &id)| (n.as_str(), id))
    }
}

/// `x @ w + b` using the `{prefix}.w`-style naming convention.
pub fn linear(
    g: &mut Graph,
    leaves: &ParamLeaves,
    x: NodeId,
    weight: &str,
    bias: &str,
) -> Result<NodeId, ModelError> {
    let w = leaves.get(weight)?;
    let b = leaves.get(bias)?;
    let xw = g.matmul(x, w)?;
    Ok(g.add(xw, b)?)
}

fn layer_norm(
    g: &mut Graph,
    leaves: &ParamLeaves,
    x: NodeId,
    prefix: &str,
) -> Result<NodeId, ModelError> {
    let gamma = leaves.get(&format!("{prefix}.gamma"))?;
    let beta = leaves.get(&format!("{prefix}.beta"))?;
    Ok(g.layer_norm(x, gamma, beta, LN_EPS)?)
}

/// Run the encoder over one `max_len`-long id sequence.
///
/// Returns the full sequence states `[max_len, hidden]` and the CLS vector
/// `[1, hidden]` (the state at position 0). PAD keys are masked out of every
/// attention row, so trailing padding cannot influence any non-pad state.
pub fn encode(
    g: &mut Graph,
    leaves: &ParamLeaves,
    config: &EncoderConfig,
    ids: &[u32],
) -> Result<(NodeId, NodeId), ModelError> {
    config.validate()?;
    if ids.len() != config.max_len {
        return Err(ModelError::WrongLength { got: ids.len(), want: config.max_len });
    }
    for &id in ids {
        if id as usize >= config.vocab_size {
            return Err(ModelError::IdOutOfRange { id, vocab: config.vocab_size });
        }
    }
    let len = config.max_len;
    let ids_usize: Vec<usize> = ids.iter().map(|&id| id as usize).collect();

    let tok = {
        let table = leaves.get("tok_emb")?;
        g.lookup(table, &ids_usize)?
    };
    let pos = {
        let table = leaves.get("pos_emb")?;
        let positions: Vec<usize> = (0..len).collect();
        g.lookup(table, &positions)?
    };
    let summed = g.add(tok, pos)?;
    let mut x = layer_norm(g, leaves, summed, "emb_ln")?;

    // Additive mask: -1e9 in every column whose key position is PAD.
    let mask = {
        let mut data = vec![0.0f32; len * len];
        for (j, &id) in ids.iter().enumerate() {
            if id == PAD_ID {
                for i in 0..len {
                    data[i * len + j] = MASK_VALUE;
                }
            }
        }
        g.leaf(Tensor::new(vec![len, len], data)?)
    };

    let head_dim = config.head_dim();
    let scale = 1.0 / (head_dim as f32).sqrt();

    for l in 0..config.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        let q = linear(g, leaves, x, &p("attn.wq"), &p("attn.bq"))?;
        let k = linear(g, leaves, x, &p("attn.wk"), &p("attn.bk"))?;
        let v = linear(g, leaves, x, &p("attn.wv"), &p("attn.bv"))?;

        let mut contexts = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let (start, end) = (h * head_dim, (h + 1) * head_dim);
            let qh = g.slice(q, 1, start, end)?;
            let kh = g.slice(k, 1, start, end)?;
            let vh = g.slice(v, 1, start, end)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scaled = g.scale(scores, scale)?;
            let masked = g.add(scaled, mask)?;
            let attn = g.softmax(masked)?;
            contexts.push(g.matmul(attn, vh)?);
        }
        let ctx = g.concat(&contexts, 1)?;
        let proj = linear(g, leaves, ctx, &p("attn.wo"), &p("attn.bo"))?;
        let res1 = g.add(x, proj)?;
        x = layer_norm(g, leaves, res1, &p("ln1"))?;

        let ff1 = linear(g, leaves, x, &p("ff.w1"), &p("ff.b1"))?;
        let act = g.gelu(ff1)?;
        let ff2 = linear(g, leaves, act, &p("ff.w2"), &p("ff.b2"))?;
        let res2 = g.add(x, ff2)?;
        x = layer_norm(g, leaves, res2, &p("ln2"))?;
    }

    let cls = g.slice(x, 0, 0, 1)?;
    Ok((x, cls))
}

/// Forward-only encode returning the CLS vector's values. Used for probing
/// and for caching frozen features during stage-2 training.
pub fn encode_cls(
    params: &ModelParams,
    config: &EncoderConfig,
    ids: &[u32],
) -> Result<Vec<f32>, ModelError> {
    let mut g = Graph::new();
    let leaves = ParamLeaves::insert(params, &mut g);
    let (_, cls) = encode(&mut g, &leaves, config, ids)?;
    Ok(g.value(cls).data().to_vec())
}

/// Raw disease scores (pre-activation) for one sequence.
pub fn classify_scores(
    params: &ModelParams,
    config: &EncoderConfig,
    ids: &[u32],
) -> Result<Vec<f32>, ModelError> {
    let mut g = Graph::new();
    let leaves = ParamLeaves::insert(params, &mut g);
    let (_, cls) = encode(&mut g, &leaves, config, ids)?;
    let scores = linear(&mut g, &leaves, cls, "cls.w", "cls.b")?;
    Ok(g.value(scores).data().to_vec())
}

/// Predicted disease distribution for one sequence, using the config's head
/// mode (sparsemax yields genuinely sparse distributions; softmax is the
/// strictly-positive comparison mode).
pub fn classify(
    params: &ModelParams,
    config: &EncoderConfig,
    ids: &[u32],
) -> Result<SimplexVector, ModelError> {
    let scores = classify_scores(params, config, ids)?;
    let dist = match config.head_mode {
        HeadMode::Sparsemax => sparsemax(&scores)?,
        HeadMode::Softmax => softmax_probs(&scores)?,
    };
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadMode;

    fn config() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            hidden: 16,
            heads: 4,
            ff_dim: 32,
            max_len: 10,
            vocab_size: 30,
            num_classes: 4,
            lambda: 6.0,
            enable_cc: false,
            head_mode: HeadMode::Sparsemax,
        }
    }

    fn cls_values(config: &EncoderConfig, params: &ModelParams, ids: &[u32]) -> Vec<f32> {
        encode_cls(params, config, ids).unwrap()
    }

    #[test]
    fn rejects_wrong_length_and_bad_ids() {
        let c = config();
        let p = ModelParams::init(&c, 1).unwrap();
        let mut g = Graph::new();
        let leaves = ParamLeaves::insert(&p, &mut g);
        assert!(matches!(
            encode(&mut g, &leaves, &c, &[2, 5, 3]),
            Err(ModelError::WrongLength { got: 3, want: 10 })
        ));
        let ids = [2, 99, 3, 0, 0, 0, 0, 0, 0, 0];
        assert!(matches!(
            encode(&mut g, &leaves, &c, &ids),
            Err(ModelError::IdOutOfRange { id: 99, vocab: 30 })
        ));
    }

    #[test]
    fn swapping_two_tokens_changes_the_cls_vector() {
        let c = config();
        let p = ModelParams::init(&c, 2).unwrap();
        let a = cls_values(&c, &p, &[2, 7, 8, 9, 3, 0, 0, 0, 0, 0]);
        let b = cls_values(&c, &p, &[2, 8, 7, 9, 3, 0, 0, 0, 0, 0]);
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff > 1e-4, "cls insensitive to token order: {max_diff}");
    }

    #[test]
    fn pad_tail_is_masked_out_of_the_cls_vector() {
        // Same parameters (per-name streams), two sequence lengths: the
        // longer one only appends PAD, so CLS must agree to 1e-5.
        let short = config();
        let mut long = config();
        long.max_len = 16;
        let p_short = ModelParams::init(&short, 3).unwrap();
        let p_long = ModelParams::init(&long, 3).unwrap();

        let ids_short = [2, 7, 8, 9, 11, 3, 0, 0, 0, 0];
        let mut ids_long = ids_short.to_vec();
        ids_long.resize(16, 0);

        let a = cls_values(&short, &p_short, &ids_short);
        let b = cls_values(&long, &p_long, &ids_long);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn encoding_is_finite_and_deterministic() {
        let c = config();
        let p = ModelParams::init(&c, 4).unwrap();
        let ids = [2, 5, 6, 7, 8, 9, 10, 11, 3, 0];
        let a = cls_values(&c, &p, &ids);
        let b = cls_values(&c, &p, &ids);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn classify_output_is_a_distribution_in_both_modes() {
        let mut c = config();
        let ids = [2, 5, 6, 3, 0, 0, 0, 0, 0, 0];

        c.head_mode = HeadMode::Sparsemax;
        let p = ModelParams::init(&c, 5).unwrap();
        let dist = classify(&p, &c, &ids).unwrap();
        let sum: f64 = dist.as_slice().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);

        c.head_mode = HeadMode::Softmax;
        let dist = classify(&p, &c, &ids).unwrap();
        assert!(dist.as_slice().iter().all(|&v| v > 0.0));
        let sum: f64 = dist.as_slice().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
