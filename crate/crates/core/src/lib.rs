//! Quantifies the causal effect of a text-level concept (e.g. the symptom
//! "chest pain") on a text classifier's predicted disease distribution.
//!
//! The pipeline trains two models on the same corpus: a baseline encoder and
//! classifier trained on the disease objective alone, and a counterfactual
//! encoder trained with a gradient-reversed concept head so its
//! representations "forget" the treatment concept while staying good at
//! masked-language-modeling and next-sentence prediction. Comparing the two
//! models' average predicted distributions over a test set yields the TReATE
//! estimate of the concept's causal effect; the correlational CONEXP baseline
//! is computed from the baseline model alone.
//!
//! Modules:
//! - [`autodiff`]: dense-tensor reverse-mode differentiation, including the
//!   gradient-reversal operator.
//! - [`simplex`]: sparsemax forward/backward, the sparsemax classification
//!   loss, and a brute-force simplex-projection oracle.
//! - [`text`]: dialogue rendering, keyword concept labeling, vocabulary,
//!   tokenization, MLM/NSP example construction, and DDXPlus-style ingestion.
//! - [`synth`]: a synthetic data-generating process with exactly computable
//!   ground-truth concept effects.
//! - [`model`]: the tiny transformer encoder with MLM/NSP/TC heads and the
//!   frozen-encoder disease classifier.
//! - [`train`]: the three training stages, Adam, checkpoints, loss traces,
//!   and the concept probe.
//! - [`estimate`]: TReATE and CONEXP over a test set, report assembly and
//!   emission, and rank validation against known ground truth.

pub mod autodiff;
pub mod estimate;
pub mod model;
pub mod rng;
pub mod simplex;
pub mod synth;
pub mod text;
pub mod train;

pub use autodiff::{Graph, NodeId, Tensor};
pub use simplex::SimplexVector;
pub use text::{CanonicalRecord, ConceptSpec, Vocab};
