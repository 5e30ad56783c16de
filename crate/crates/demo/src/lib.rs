//! Browser bindings for the interactive demo page.
//!
//! Three operations, each taking and returning JSON strings so the same
//! functions are directly unit-testable on native targets and callable
//! from vanilla JavaScript once compiled to WebAssembly:
//!
//! - [`project_to_simplex`]: sparse vs. dense probability mapping of a
//!   score vector, for the head-comparison panel.
//! - [`dialogue_preview`]: render a structured record as clinical dialogue
//!   and label the treatment concept, for the ingestion panel.
//! - [`synthetic_effects`]: sample a corpus from the built-in synthetic
//!   generator and compare the exact causal concept effect with the
//!   correlational conditional-mean difference of the Bayes-optimal
//!   classifier, for the causal-vs-correlational panel.
//!
//! Every function returns an object with an `"error"` string field instead
//! of throwing, so the page can render failures inline.

use serde::Serialize;
use treate_core::estimate::{conexp_model, DiseasePredictor, EstimateError};
use treate_core::rng::stream;
use treate_core::simplex::{softmax_probs, sparsemax};
use treate_core::synth::{benchmark_scm, Scm};
use treate_core::text::{chest_pain_concept, label_concept, render_dialogue, split_turns, RawRecord};
use treate_core::SimplexVector;
use wasm_bindgen::prelude::wasm_bindgen;

fn err_json(detail: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": detail.to_string() }).to_string()
}

fn ok_json(value: &impl Serialize) -> String {
    serde_json::to_string(value).unwrap_or_else(err_json)
}

#[derive(Serialize)]
struct Projection {
    sparsemax: Vec<f32>,
    softmax: Vec<f32>,
    support: usize,
}

/// Map a JSON array of scores to both probability heads.
///
/// Returns `{"sparsemax": [...], "softmax": [...], "support": n}` where
/// `support` counts the classes sparsemax keeps nonzero.
#[wasm_bindgen]
pub fn project_to_simplex(scores_json: &str) -> String {
    let scores: Vec<f32> = match serde_json::from_str(scores_json) {
        Ok(v) => v,
        Err(e) => return err_json(format!("scores must be a JSON number array: {e}")),
    };
    let sparse = match sparsemax(&scores) {
        Ok(p) => p,
        Err(e) => return err_json(e),
    };
    let dense = match softmax_probs(&scores) {
        Ok(p) => p,
        Err(e) => return err_json(e),
    };
    let support = sparse.as_slice().iter().filter(|&&p| p > 0.0).count();
    ok_json(&Projection {
        sparsemax: sparse.as_slice().to_vec(),
        softmax: dense.as_slice().to_vec(),
        support,
    })
}

#[derive(Serialize)]
struct Preview {
    text: String,
    turns: Vec<String>,
    concept: String,
    flag: u8,
}

/// Render a structured record (the raw-record JSON shape) as dialogue and
/// label the chest-pain treatment concept on the result.
#[wasm_bindgen]
pub fn dialogue_preview(record_json: &str) -> String {
    let record: RawRecord = match serde_json::from_str(record_json) {
        Ok(r) => r,
        Err(e) => return err_json(format!("malformed record: {e}")),
    };
    let text = match render_dialogue(&record) {
        Ok(t) => t,
        Err(e) => return err_json(e),
    };
    let concept = chest_pain_concept();
    let flag = label_concept(&text, &concept);
    let turns = split_turns(&text);
    ok_json(&Preview { text, turns, concept: concept.name, flag })
}

/// The Bayes-optimal classifier for the synthetic generator: recover the
/// symptom configuration from the rendered dialogue, return the exact
/// posterior. Even this ideal model's correlational estimate is biased by
/// confounding, which is the point of the panel.
struct BayesPredictor<'a> {
    scm: &'a Scm,
}

impl DiseasePredictor for BayesPredictor<'_> {
    fn num_diseases(&self) -> usize {
        self.scm.disease_names.len()
    }

    fn predict(&self, text: &str) -> Result<SimplexVector, EstimateError> {
        // Symptoms render exactly as "I have {name}." turns.
        let bits: Vec<bool> = self
            .scm
            .symptom_names
            .iter()
            .map(|name| text.contains(&format!("I have {name}.")))
            .collect();
        self.scm
            .true_posterior(&bits)
            .map_err(|e| EstimateError::Model(treate_core::model::ModelError::Config {
                detail: e.to_string(),
            }))
    }
}

#[derive(Serialize)]
struct SampleRow {
    text: String,
    flag: u8,
    disease: String,
}

#[derive(Serialize)]
struct SyntheticEffects {
    diseases: Vec<String>,
    concept: String,
    true_effect: Vec<f64>,
    conexp_signed: Vec<f64>,
    present: usize,
    absent: usize,
    samples: Vec<SampleRow>,
}

/// Sample `count` records from the built-in synthetic generator and return
/// the exact per-disease causal effect of the concept alongside the
/// correlational estimate computed from the Bayes-optimal classifier's
/// predictions on the sample.
#[wasm_bindgen]
pub fn synthetic_effects(seed: u32, count: u32) -> String {
    if count == 0 || count > 20_000 {
        return err_json("count must be between 1 and 20000");
    }
    let scm = benchmark_scm();
    let records = match scm.generate_corpus(seed as u64, count as usize, "demo-") {
        Ok(r) => r,
        Err(e) => return err_json(e),
    };
    let true_effect = match scm.true_concept_effect() {
        Ok(e) => e,
        Err(e) => return err_json(e),
    };
    let bayes = BayesPredictor { scm: &scm };
    let estimate = match conexp_model(&bayes, &records, &scm.concept_name) {
        Ok(c) => c,
        Err(e) => return err_json(e),
    };

    let samples = records
        .iter()
        .take(6)
        .map(|r| {
            let disease = r
                .gold
                .as_slice()
                .iter()
                .position(|&p| p == 1.0)
                .map(|d| scm.disease_names[d].clone())
                .unwrap_or_default();
            SampleRow {
                text: r.text.clone(),
                flag: *r.concept_flags.get(&scm.concept_name).unwrap_or(&0),
                disease,
            }
        })
        .collect();

    ok_json(&SyntheticEffects {
        diseases: scm.disease_names.clone(),
        concept: scm.concept_name.clone(),
        true_effect,
        conexp_signed: estimate.signed,
        present: estimate.present,
        absent: estimate.absent,
        samples,
    })
}

/// A deterministic score vector for the projection panel's "randomize"
/// button, so the page needs no RNG of its own.
#[wasm_bindgen]
pub fn random_scores(seed: u32, dims: u32) -> String {
    use treate_core::rng::unit_f64;
    if !(2..=16).contains(&dims) {
        return err_json("dims must be between 2 and 16");
    }
    let mut rng = stream(seed as u64, "demo:scores");
    let scores: Vec<f32> = (0..dims).map(|_| (unit_f64(&mut rng) * 6.0 - 3.0) as f32).collect();
    ok_json(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(&s.to_string()).expect("valid JSON out")
    }

    #[test]
    fn projection_returns_both_heads() {
        let out = parse(&project_to_simplex("[2.0, 0.0, -1.0]"));
        let sparse: Vec<f64> =
            out["sparsemax"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let dense: Vec<f64> =
            out["softmax"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(sparse.len(), 3);
        assert_eq!(dense.len(), 3);
        // A 2-point score gap puts sparsemax on a single class; softmax
        // keeps every class strictly positive.
        assert_eq!(out["support"], 1);
        assert_eq!(sparse[0], 1.0);
        assert!(dense.iter().all(|&p| p > 0.0));
        let sum: f64 = dense.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn projection_rejects_bad_input() {
        assert!(parse(&project_to_simplex("not json"))["error"].is_string());
        assert!(parse(&project_to_simplex("[]"))["error"].is_string());
    }

    #[test]
    fn preview_renders_and_flags() {
        let record = r#"{"id":"x","age":40,"sex":"F","symptoms":["pain in my chest","a cough"]}"#;
        let out = parse(&dialogue_preview(record));
        assert_eq!(out["flag"], 1);
        assert_eq!(out["concept"], "chest pain");
        assert!(out["text"].as_str().unwrap().starts_with("Doctor: What brings you in?"));
        assert!(out["turns"].as_array().unwrap().len() >= 4);

        let no_concept = r#"{"id":"x","age":40,"sex":"M","symptoms":["a cough"]}"#;
        assert_eq!(parse(&dialogue_preview(no_concept))["flag"], 0);
    }

    #[test]
    fn preview_rejects_malformed_record() {
        let out = parse(&dialogue_preview("{\"id\":"));
        assert!(out["error"].as_str().unwrap().contains("malformed record"));
    }

    #[test]
    fn synthetic_effects_reports_both_estimates() {
        let out = parse(&synthetic_effects(7, 800));
        let diseases = out["diseases"].as_array().unwrap();
        assert_eq!(diseases.len(), 5);
        let true_effect: Vec<f64> =
            out["true_effect"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let conexp: Vec<f64> =
            out["conexp_signed"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(conexp.len(), 5);
        // Exact effects sum to zero; the sample splits into both groups.
        assert!(true_effect.iter().sum::<f64>().abs() < 1e-12);
        let present = out["present"].as_u64().unwrap() as usize;
        let absent = out["absent"].as_u64().unwrap() as usize;
        assert_eq!(present + absent, 800);
        assert!(present > 0 && absent > 0);
        assert_eq!(out["samples"].as_array().unwrap().len(), 6);
        // The Bayes classifier sees the true concept signal: its
        // correlational estimate has the same top disease as the truth
        // at this sample size, but is not numerically equal (confounding).
        let top = |v: &[f64]| {
            v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
        };
        assert_eq!(top(&true_effect), top(&conexp));
        assert!(true_effect.iter().zip(&conexp).any(|(t, c)| (t - c).abs() > 1e-3));
    }

    #[test]
    fn synthetic_effects_is_deterministic() {
        assert_eq!(synthetic_effects(3, 150), synthetic_effects(3, 150));
        assert_ne!(synthetic_effects(3, 150), synthetic_effects(4, 150));
    }

    #[test]
    fn random_scores_are_seeded_and_bounded() {
        let a = parse(&random_scores(1, 5));
        let b = parse(&random_scores(1, 5));
        assert_eq!(a, b);
        let v: Vec<f64> = a.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(v.len(), 5);
        assert!(v.iter().all(|x| (-3.0..=3.0).contains(x)));
        assert!(parse(&random_scores(1, 1))["error"].is_string());
    }
}
