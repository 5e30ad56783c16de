//! Tiny transformer encoder with CLS pooling and four heads: masked language
//! modeling, next-sentence prediction, a treatment-concept head behind
//! gradient reversal, an optional control-concept head, and the disease
//! classifier read off the CLS vector.
//!
//! Parameters are read-shared for inference; training mutates them on a
//! single thread. Batch inference may fan out across threads as long as
//! results are reduced in example-index order.

mod encoder;
mod heads;

pub use encoder::{encode, encode_cls, classify, classify_scores, linear, ParamLeaves};
pub use heads::{stage1_loss, Stage1Batch, Stage1Loss, TcExample};
pub(crate) use heads::cls_batch;

use crate::autodiff::{AutodiffError, Tensor};
use crate::rng::{normal_f64, stream};
use crate::simplex::SimplexError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {detail}")]
    Config { detail: String },
    #[error("token id {id} out of range for vocab size {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("sequence length {got} does not match max_len {want}")]
    WrongLength { got: usize, want: usize },
    #[error("masked position {position} out of range for max_len {max_len}")]
    PositionOutOfRange { position: usize, max_len: usize },
    #[error("no parameter named \"{name}\"")]
    MissingParam { name: String },
    #[error("{which} batch is empty")]
    BatchEmpty { which: &'static str },
    #[error("binary label {value} is not 0 or 1")]
    InvalidLabel { value: u8 },
    #[error("control-concept batch given but enable_cc is off")]
    CcBatchWithoutHead,
    #[error("enable_cc is on but no control-concept batch was given")]
    CcBatchMissing,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

/// How disease scores become a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    Sparsemax,
    Softmax,
}

/// Architecture and head configuration.
///
/// Desk-scale defaults (2 layers, hidden 64, 4 heads) train in minutes on a
/// single core; the architecture is the standard post-LN encoder otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    /// Gradient-reversal factor for the treatment-concept head.
    pub lambda: f32,
    pub enable_cc: bool,
    pub head_mode: HeadMode,
}

impl EncoderConfig {
    /// Defaults sized for minutes-scale single-core training.
    pub fn desk_scale(vocab_size: usize, num_classes: usize) -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ff_dim: 128,
            max_len: 128,
            vocab_size,
            num_classes,
            lambda: 6.0,
            enable_cc: false,
            head_mode: HeadMode::Sparsemax,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |detail: String| Err(ModelError::Config { detail });
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            ));
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be >= 1".into());
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} too small for CLS/SEP framing", self.max_len));
        }
        if self.vocab_size < 6 {
            return fail(format!("vocab_size {} leaves no room for real tokens", self.vocab_size));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes {} is not a classification task", self.num_classes));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return fail(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        Ok(())
    }

    pub(crate) fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Named parameter tensors in a fixed insertion order.
///
/// The order is part of the checkpoint format: weights are serialized by
/// walking the entries front to back.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Initialize parameters for `config`: weights and embeddings are drawn
    /// from a seeded normal with scale 0.02, biases start at zero, and
    /// layer-norm gains at one. Each parameter has its own RNG stream keyed
    /// by its name, so two configs that share a parameter (same name and
    /// shape prefix) agree on the shared values.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ModelParams { entries: Vec::new(), index: HashMap::new() };
        let (h, ff, v) = (config.hidden, config.ff_dim, config.vocab_size);

        params.push_normal("tok_emb", &[v, h], seed)?;
        params.push_normal("pos_emb", &[config.max_len, h], seed)?;
        params.push_layer_norm("emb_ln")?;
        for l in 0..config.layers {
            for w in ["wq", "wk", "wv", "wo"] {
                params.push_normal(&format!("layer{l}.attn.{w}"), &[h, h], seed)?;
                params.push_zeros(&format!("layer{l}.attn.{}", w.replace('w', "b")), &[h])?;
            }
            params.push_layer_norm(&format!("layer{l}.ln1"))?;
            params.push_normal(&format!("layer{l}.ff.w1"), &[h, ff], seed)?;
            params.push_zeros(&format!("layer{l}.ff.b1"), &[ff])?;
            params.push_normal(&format!("layer{l}.ff.w2"), &[ff, h], seed)?;
            params.push_zeros(&format!("layer{l}.ff.b2"), &[h])?;
            params.push_layer_norm(&format!("layer{l}.ln2"))?;
        }
        params.push_normal("mlm.w", &[h, v], seed)?;
        params.push_zeros("mlm.b", &[v])?;
        params.push_normal("nsp.w", &[h, 2], seed)?;
        params.push_zeros("nsp.b", &[2])?;
        params.push_normal("tc.w", &[h, 2], seed)?;
        params.push_zeros("tc.b", &[2])?;
        if config.enable_cc {
            params.push_normal("cc.w", &[h, 2], seed)?;
            params.push_zeros("cc.b", &[2])?;
        }
        params.push_normal("cls.w", &[h, config.num_classes], seed)?;
        params.push_zeros("cls.b", &[config.num_classes])?;
        Ok(params)
    }

    fn push(&mut self, name: &str, tensor: Tensor) {
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
    }

    fn push_normal(&mut self, name: &str, shape: &[usize], seed: u64) -> Result<(), ModelError> {
        let mut rng = stream(seed, &format!("init:{name}"));
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = (0..numel).map(|_| (normal_f64(&mut rng) * 0.02) as f32).collect();
        self.push(name, Tensor::new(shape.to_vec(), data)?);
        Ok(())
    }

    fn push_zeros(&mut self, name: &str, shape: &[usize]) -> Result<(), ModelError> {
        self.push(name, Tensor::zeros(shape.to_vec()));
        Ok(())
    }

    fn push_layer_norm(&mut self, prefix: &str) -> Result<(), ModelError> {
        // Gain starts at 1, bias at 0; both are rank-1 over the hidden dim.
        let h = {
            let (_, t) = &self.entries[self.index["tok_emb"]];
            t.shape()[1]
        };
        self.push(
            &format!("{prefix}.gamma"),
            Tensor::new(vec![h], vec![1.0; h])?,
        );
        self.push_zeros(&format!("{prefix}.beta"), &[h])
    }

    /// Rebuild from (name, tensor) pairs, e.g. when loading a checkpoint.
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        ModelParams { entries, index }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| ModelError::MissingParam { name: name.to_string() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ModelError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(ModelError::MissingParam { name: name.to_string() }),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
