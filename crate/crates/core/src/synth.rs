//! Synthetic clinic: a small structural causal model over diseases and
//! symptoms with exactly computable posteriors and concept effects.
//!
//! A disease is drawn from the priors, then each symptom is emitted
//! independently with the disease's Bernoulli probability. Because the
//! symptom count is capped at 12, posteriors and the ground-truth effect of
//! the concept symptom can be computed by exhaustive enumeration, giving the
//! causal estimators a known answer to be validated against.
//!
//! Symptom-symptom dependencies and confounded concept pairs are out of
//! scope; emissions are conditionally independent given the disease.

use crate::rng::{below, record_stream, unit_f64};
use crate::simplex::{SimplexError, SimplexVector};
use crate::text::{CanonicalRecord, RawRecord, TextError};
use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Resampling cap for records that draw zero symptoms.
const MAX_SAMPLE_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("emission matrix is {rows}x{cols}, expected {diseases}x{symptoms}")]
    EmissionShape { rows: usize, cols: usize, diseases: usize, symptoms: usize },
    #[error("{count} symptoms exceeds the enumeration cap of 12")]
    TooManySymptoms { count: usize },
    #[error("emission probability {value} at disease {disease}, symptom {symptom} is outside [0, 1]")]
    EmissionOutOfRange { disease: usize, symptom: usize, value: f64 },
    #[error("concept symptom index {index} out of range for {len} symptoms")]
    ConceptOutOfRange { index: usize, len: usize },
    #[error("{0} names provided for {1} entries")]
    NameCount(usize, usize),
    #[error("symptom configuration {config:?} has zero likelihood under every disease")]
    ZeroLikelihood { config: Vec<bool> },
    #[error("no symptomatic record after {attempts} attempts; emission rows are too sparse")]
    ResampleCapExceeded { attempts: usize },
    #[error("invalid distribution: {0}")]
    BadDistribution(#[from] SimplexError),
    #[error("rendering failed: {0}")]
    Render(#[from] TextError),
}

/// The data-generating process: disease priors, per-disease symptom
/// emission probabilities, and the index of the symptom that acts as the
/// treatment concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scm {
    pub disease_names: Vec<String>,
    pub symptom_names: Vec<String>,
    pub disease_priors: SimplexVector,
    /// `emission[d][s]` = P(symptom s present | disease d).
    pub emission: Vec<Vec<f64>>,
    /// Index into `symptom_names` of the treatment concept.
    pub concept_symptom: usize,
    /// Name under which the concept flag is recorded on emitted records.
    pub concept_name: String,
}

impl Scm {
    pub fn diseases(&self) -> usize {
        self.disease_priors.len()
    }

    pub fn symptoms(&self) -> usize {
        self.symptom_names.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let d = self.diseases();
        let s = self.symptoms();
        if s > 12 {
            return Err(SynthError::TooManySymptoms { count: s });
        }
        if self.disease_names.len() != d {
            return Err(SynthError::NameCount(self.disease_names.len(), d));
        }
        let rows = self.emission.len();
        let cols = self.emission.first().map_or(0, Vec::len);
        if rows != d || self.emission.iter().any(|r| r.len() != s) {
            return Err(SynthError::EmissionShape { rows, cols, diseases: d, symptoms: s });
        }
        for (di, row) in self.emission.iter().enumerate() {
            for (si, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(SynthError::EmissionOutOfRange { disease: di, symptom: si, value: p });
                }
            }
        }
        if self.concept_symptom >= s {
            return Err(SynthError::ConceptOutOfRange { index: self.concept_symptom, len: s });
        }
        Ok(())
    }

    /// Draw one record: disease from the priors, symptoms from the
    /// disease's emission row, rendered as dialogue. Draws with zero
    /// symptoms are rejected and resampled (the dialogue template needs at
    /// least one symptom), up to a fixed attempt cap.
    pub fn sample_record<R: RngCore>(
        &self,
        id: &str,
        rng: &mut R,
    ) -> Result<CanonicalRecord, SynthError> {
        self.validate()?;
        let (disease, bits) = self.sample_config(rng)?;

        let age = 18 + below(rng, 72) as u32;
        let sex = if unit_f64(rng) < 0.5 { "M" } else { "F" };
        let symptoms: Vec<String> = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(s, _)| self.symptom_names[s].clone())
            .collect();

        let raw = RawRecord {
            id: id.to_string(),
            age,
            sex: sex.to_string(),
            symptoms,
            antecedents: vec![],
            pathology: Some(self.disease_names[disease].clone()),
            differential: None,
        };
        let text = crate::text::render_dialogue(&raw)?;

        let mut gold = vec![0.0f32; self.diseases()];
        gold[disease] = 1.0;
        let concept_flags = [(self.concept_name.clone(), bits[self.concept_symptom] as u8)]
            .into_iter()
            .collect();

        Ok(CanonicalRecord {
            id: id.to_string(),
            text,
            concept_flags,
            gold: SimplexVector::new(gold)?,
        })
    }

    fn sample_config<R: RngCore>(&self, rng: &mut R) -> Result<(usize, Vec<bool>), SynthError> {
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let u = unit_f64(rng);
            let mut cum = 0.0f64;
            let mut disease = self.diseases() - 1;
            for (d, &p) in self.disease_priors.as_slice().iter().enumerate() {
                cum += p as f64;
                if u < cum {
                    disease = d;
                    break;
                }
            }
            let bits: Vec<bool> = self.emission[disease]
                .iter()
                .map(|&p| unit_f64(rng) < p)
                .collect();
            if bits.iter().any(|&b| b) {
                return Ok((disease, bits));
            }
        }
        Err(SynthError::ResampleCapExceeded { attempts: MAX_SAMPLE_ATTEMPTS })
    }

    /// Generate a corpus of `count` records. Each record gets its own RNG
    /// stream keyed by `(seed, id)`, so the corpus is identical no matter
    /// how generation is ordered or parallelized.
    pub fn generate_corpus(
        &self,
        seed: u64,
        count: usize,
        id_prefix: &str,
    ) -> Result<Vec<CanonicalRecord>, SynthError> {
        self.validate()?;
        (0..count)
            .map(|i| {
                let id = format!("{id_prefix}{i}");
                let mut rng = record_stream(seed, &id);
                self.sample_record(&id, &mut rng)
            })
            .collect()
    }

    /// Exact Bayes posterior over diseases given a full symptom
    /// configuration.
    pub fn true_posterior(&self, config: &[bool]) -> Result<SimplexVector, SynthError> {
        self.validate()?;
        let weights = self.joint_weights(config);
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(SynthError::ZeroLikelihood { config: config.to_vec() });
        }
        Ok(SimplexVector::new(
            weights.iter().map(|w| (w / total) as f32).collect(),
        )?)
    }

    fn posterior_f64(&self, config: &[bool]) -> Result<Vec<f64>, SynthError> {
        let weights = self.joint_weights(config);
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(SynthError::ZeroLikelihood { config: config.to_vec() });
        }
        Ok(weights.iter().map(|w| w / total).collect())
    }

    /// `P(d, config)` for each disease (unnormalized posterior weights).
    fn joint_weights(&self, config: &[bool]) -> Vec<f64> {
        self.disease_priors
            .as_slice()
            .iter()
            .enumerate()
            .map(|(d, &prior)| {
                let mut w = prior as f64;
                for (s, &present) in config.iter().enumerate() {
                    let p = self.emission[d][s];
                    w *= if present { p } else { 1.0 - p };
                }
                w
            })
            .collect()
    }

    /// Ground-truth causal effect of the concept symptom on each disease's
    /// posterior probability:
    ///
    /// `effect_d = sum_over_other_configs P(others) *
    ///             [P(d | others, concept=1) - P(d | others, concept=0)]`
    ///
    /// computed by exhaustive enumeration of the non-concept bits. The
    /// entries sum to zero since each term is a difference of two
    /// distributions.
    pub fn true_concept_effect(&self) -> Result<Vec<f64>, SynthError> {
        self.validate()?;
        let s = self.symptoms();
        let c = self.concept_symptom;
        let others: Vec<usize> = (0..s).filter(|&i| i != c).collect();
        let mut effect = vec![0.0f64; self.diseases()];

        for mask in 0u32..(1 << others.len()) {
            let mut config = vec![false; s];
            for (bit, &sym) in others.iter().enumerate() {
                config[sym] = mask >> bit & 1 == 1;
            }
            // Marginal probability of this non-concept configuration.
            let weight: f64 = self
                .disease_priors
                .as_slice()
                .iter()
                .enumerate()
                .map(|(d, &prior)| {
                    let mut w = prior as f64;
                    for &sym in &others {
                        let p = self.emission[d][sym];
                        w *= if config[sym] { p } else { 1.0 - p };
                    }
                    w
                })
                .sum();
            if weight == 0.0 {
                continue;
            }
            // Posteriors in full f64 precision; the f32 SimplexVector
            // round-trip would eat the 1e-9 sum-to-zero budget.
            config[c] = true;
            let with = self.posterior_f64(&config)?;
            config[c] = false;
            let without = self.posterior_f64(&config)?;
            for (e, (a, b)) in effect.iter_mut().zip(with.iter().zip(&without)) {
                *e += weight * (a - b);
            }
        }
        Ok(effect)
    }
}

/// The default desk-scale benchmark: 5 diseases, 8 symptoms, with the
/// concept symptom ("chest pain") strongly indicative of the first two
/// diseases and weak elsewhere, so the ground-truth effects are well
/// separated and rank comparisons are stable.
pub fn benchmark_scm() -> Scm {
    let scm = Scm {
        disease_names: ["bronchitis", "tachycardia", "influenza", "migraine", "anemia"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        symptom_names: [
            "chest pain",
            "cough",
            "fever",
            "headache",
            "fatigue",
            "nausea",
            "shortness of breath",
            "sore throat",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        disease_priors: SimplexVector::new(vec![0.3, 0.25, 0.2, 0.15, 0.1])
            .expect("static priors sum to 1"),
        emission: vec![
            vec![0.9, 0.8, 0.4, 0.1, 0.3, 0.1, 0.6, 0.3],
            vec![0.8, 0.1, 0.1, 0.2, 0.5, 0.3, 0.7, 0.1],
            vec![0.1, 0.6, 0.9, 0.5, 0.7, 0.3, 0.2, 0.7],
            vec![0.1, 0.1, 0.2, 0.9, 0.5, 0.6, 0.1, 0.1],
            vec![0.1, 0.1, 0.1, 0.3, 0.9, 0.4, 0.5, 0.1],
        ],
        concept_symptom: 0,
        concept_name: "chest pain".to_string(),
    };
    scm.validate().expect("benchmark model is well-formed");
    scm
}
