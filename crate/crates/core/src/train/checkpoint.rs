//! Checkpoint directory format.
//!
//! A checkpoint is a directory of three files:
//! - `manifest.json`: stage tag, encoder and training configs, final
//!   losses, the vocabulary hash, and the tensor table (name, shape, byte
//!   offset) in serialization order;
//! - `weights.bin`: every tensor's elements as little-endian f32, packed
//!   back to back in manifest order;
//! - `vocab.json`: the id-ordered token list.
//!
//! Loading re-derives the vocabulary hash and refuses a directory whose
//! manifest disagrees, so weights can never be silently paired with a
//! different tokenizer.

use super::{Stage, TrainConfig, TrainError};
use crate::autodiff::Tensor;
use crate::model::{EncoderConfig, ModelParams};
use crate::text::Vocab;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const VOCAB_FILE: &str = "vocab.json";

/// SHA-256 (hex) of the vocabulary's canonical JSON form.
pub fn vocab_hash(vocab: &Vocab) -> String {
    let bytes = serde_json::to_vec(vocab).expect("vocab serialization cannot fail");
    hex(&Sha256::digest(&bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    stage: Stage,
    encoder: EncoderConfig,
    train: TrainConfig,
    final_losses: BTreeMap<String, f32>,
    vocab_hash: String,
    tensors: Vec<TensorMeta>,
}

/// A trained model plus everything needed to reuse it: configs, the
/// vocabulary it was tokenized with, and the stage that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub final_losses: BTreeMap<String, f32>,
    pub vocab_hash: String,
    pub params: ModelParams,
    pub vocab: Vocab,
}

impl Checkpoint {
    /// Short identifier: stage tag plus a digest of the weight bytes.
    /// Two checkpoints share an id iff their stage and weights agree.
    pub fn id(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in self.params.iter() {
            hasher.update(name.as_bytes());
            for v in tensor.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        format!("{}-{}", self.stage, &hex(&hasher.finalize())[..12])
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;

        let mut weights: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        for (name, tensor) in self.params.iter() {
            tensors.push(TensorMeta {
                name: name.to_string(),
                shape: tensor.shape().to_vec(),
                offset: weights.len() as u64,
            });
            for v in tensor.data() {
                weights.extend_from_slice(&v.to_le_bytes());
            }
        }

        let manifest = Manifest {
            stage: self.stage,
            encoder: self.encoder.clone(),
            train: self.train.clone(),
            final_losses: self.final_losses.clone(),
            vocab_hash: self.vocab_hash.clone(),
            tensors,
        };

        fs::write(dir.join(WEIGHTS_FILE), &weights)?;
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        fs::write(dir.join(VOCAB_FILE), serde_json::to_string(&self.vocab)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint, TrainError> {
        let manifest: Manifest =
            serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let weights = fs::read(dir.join(WEIGHTS_FILE))?;
        let vocab: Vocab = serde_json::from_slice(&fs::read(dir.join(VOCAB_FILE))?)?;

        let actual = vocab_hash(&vocab);
        if actual != manifest.vocab_hash {
            return Err(TrainError::VocabHashMismatch {
                manifest: manifest.vocab_hash,
                actual,
            });
        }
        manifest.encoder.validate()?;
        manifest.train.validate()?;

        let mut entries = Vec::with_capacity(manifest.tensors.len());
        let mut cursor = 0u64;
        for meta in &manifest.tensors {
            if meta.offset != cursor {
                return Err(TrainError::BadCheckpoint {
                    detail: format!(
                        "tensor \"{}\" at offset {}, expected {cursor}",
                        meta.name, meta.offset
                    ),
                });
            }
            let numel: usize = meta.shape.iter().product();
            let bytes = numel * 4;
            let end = cursor as usize + bytes;
            let Some(chunk) = weights.get(cursor as usize..end) else {
                return Err(TrainError::BadCheckpoint {
                    detail: format!(
                        "weights file is {} bytes, tensor \"{}\" needs {end}",
                        weights.len(),
                        meta.name
                    ),
                });
            };
            let data: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let tensor = Tensor::new(meta.shape.clone(), data).map_err(|e| {
                TrainError::BadCheckpoint {
                    detail: format!("tensor \"{}\": {e}", meta.name),
                }
            })?;
            entries.push((meta.name.clone(), tensor));
            cursor = end as u64;
        }
        if cursor as usize != weights.len() {
            return Err(TrainError::BadCheckpoint {
                detail: format!(
                    "weights file has {} trailing bytes",
                    weights.len() - cursor as usize
                ),
            });
        }

        Ok(Checkpoint {
            stage: manifest.stage,
            encoder: manifest.encoder,
            train: manifest.train,
            final_losses: manifest.final_losses,
            vocab_hash: manifest.vocab_hash,
            params: ModelParams::from_entries(entries),
            vocab,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadMode;
    use crate::text::build_vocab;

    fn tiny_checkpoint() -> Checkpoint {
        let vocab = build_vocab(
            &["pain in the chest", "no pain at all", "the chest hurts"],
            1,
        )
        .unwrap();
        let encoder = EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ff_dim: 16,
            max_len: 8,
            vocab_size: vocab.len(),
            num_classes: 3,
            lambda: 6.0,
            enable_cc: false,
            head_mode: HeadMode::Sparsemax,
        };
        let params = ModelParams::init(&encoder, 11).unwrap();
        Checkpoint {
            stage: Stage::Tc,
            encoder,
            train: TrainConfig::new(11),
            final_losses: [("total".to_string(), 1.25f32)].into_iter().collect(),
            vocab_hash: vocab_hash(&vocab),
            params,
            vocab,
        }
    }

    #[test]
    fn save_load_round_trips_bitwise() {
        let ckpt = tiny_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();

        assert_eq!(back.stage, ckpt.stage);
        assert_eq!(back.encoder, ckpt.encoder);
        assert_eq!(back.train, ckpt.train);
        assert_eq!(back.final_losses, ckpt.final_losses);
        assert_eq!(back.vocab, ckpt.vocab);
        assert_eq!(back.params.len(), ckpt.params.len());
        for ((n1, t1), (n2, t2)) in back.params.iter().zip(ckpt.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits1, bits2, "tensor {n1} changed across save/load");
        }
        assert_eq!(back.id(), ckpt.id());
    }

    #[test]
    fn saving_twice_writes_identical_bytes() {
        let ckpt = tiny_checkpoint();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        ckpt.save(d1.path()).unwrap();
        ckpt.save(d2.path()).unwrap();
        for file in [MANIFEST_FILE, WEIGHTS_FILE, VOCAB_FILE] {
            let b1 = fs::read(d1.path().join(file)).unwrap();
            let b2 = fs::read(d2.path().join(file)).unwrap();
            assert_eq!(b1, b2, "{file} differs between saves");
        }
    }

    #[test]
    fn tampered_vocab_is_rejected() {
        let ckpt = tiny_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();

        let other = build_vocab(&["entirely different words"], 1).unwrap();
        fs::write(
            dir.path().join(VOCAB_FILE),
            serde_json::to_string(&other).unwrap(),
        )
        .unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err();
        assert!(matches!(err, TrainError::VocabHashMismatch { .. }), "{err}");
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let ckpt = tiny_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();

        let weights = fs::read(dir.path().join(WEIGHTS_FILE)).unwrap();
        fs::write(dir.path().join(WEIGHTS_FILE), &weights[..weights.len() - 8]).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err();
        assert!(matches!(err, TrainError::BadCheckpoint { .. }), "{err}");
    }

    #[test]
    fn ids_distinguish_stage_and_weights() {
        let ckpt = tiny_checkpoint();
        let mut as_cf = ckpt.clone();
        as_cf.stage = Stage::Cf;
        assert_ne!(ckpt.id(), as_cf.id());
        assert!(ckpt.id().starts_with("tc-"));
        assert!(as_cf.id().starts_with("cf-"));

        let mut perturbed = ckpt.clone();
        perturbed.params.get_mut("cls.b").unwrap().data_mut()[0] += 0.5;
        assert_ne!(ckpt.id(), perturbed.id());
    }

    #[test]
    fn vocab_hash_tracks_content_not_identity() {
        let v1 = build_vocab(&["alpha beta gamma"], 1).unwrap();
        let v2 = build_vocab(&["alpha beta gamma"], 1).unwrap();
        let v3 = build_vocab(&["alpha beta delta"], 1).unwrap();
        assert_eq!(vocab_hash(&v1), vocab_hash(&v2));
        assert_ne!(vocab_hash(&v1), vocab_hash(&v3));
    }
}
