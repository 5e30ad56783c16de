//! Deterministic rendering of a structured record as a doctor/patient
//! dialogue. The template is frozen by a golden test: downstream artifacts
//! (vocabularies, tokenized corpora, checkpoints) all depend on this exact
//! wording, so any change here is a breaking change.

use super::{RawRecord, TextError};

fn sex_phrase(sex: &str) -> String {
    match sex {
        "M" | "m" => "male".to_string(),
        "F" | "f" => "female".to_string(),
        other => other.to_lowercase(),
    }
}

/// Render a record as dialogue text.
///
/// Template, in order: a doctor greeting, a patient self-introduction built
/// from age and sex, a doctor question, one patient turn per symptom (input
/// order), and — only when antecedents are present — a doctor history
/// question followed by one patient turn per antecedent (input order).
/// A record with one symptom and no antecedents renders as exactly four
/// turns.
pub fn render_dialogue(record: &RawRecord) -> Result<String, TextError> {
    if record.symptoms.is_empty() {
        return Err(TextError::EmptySymptoms { id: record.id.clone() });
    }
    let mut turns: Vec<String> = Vec::with_capacity(4 + record.symptoms.len() + record.antecedents.len());
    turns.push("Doctor: What brings you in?".to_string());
    turns.push(format!(
        "Patient: I am a {} year old {}.",
        record.age,
        sex_phrase(&record.sex)
    ));
    turns.push("Doctor: What symptoms do you have?".to_string());
    for symptom in &record.symptoms {
        turns.push(format!("Patient: I have {symptom}."));
    }
    if !record.antecedents.is_empty() {
        turns.push("Doctor: Do you have any relevant medical history?".to_string());
        for antecedent in &record.antecedents {
            turns.push(format!("Patient: I have a history of {antecedent}."));
        }
    }
    Ok(turns.join(" "))
}

/// Split rendered dialogue back into turns. A turn starts at each
/// "Doctor:" or "Patient:" marker.
pub fn split_turns(text: &str) -> Vec<String> {
    let mut turns: Vec<String> = Vec::new();
    let mut current = String::new();
    for word in text.split_whitespace() {
        if (word == "Doctor:" || word == "Patient:") && !current.is_empty() {
            turns.push(current.trim_end().to_string());
            current.clear();
        }
        current.push_str(word);
        current.push(' ');
    }
    if !current.trim().is_empty() {
        turns.push(current.trim_end().to_string());
    }
    turns
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(age: u32, sex: &str, symptoms: &[&str], antecedents: &[&str]) -> RawRecord {
        RawRecord {
            id: "r1".into(),
            age,
            sex: sex.into(),
            symptoms: symptoms.iter().map(|s| s.to_string()).collect(),
            antecedents: antecedents.iter().map(|s| s.to_string()).collect(),
            pathology: None,
            differential: None,
        }
    }

    #[test]
    fn golden_template() {
        let r = record(55, "M", &["chest pain", "cough"], &[]);
        let text = render_dialogue(&r).unwrap();
        assert_eq!(
            text,
            "Doctor: What brings you in? Patient: I am a 55 year old male. \
             Doctor: What symptoms do you have? Patient: I have chest pain. \
             Patient: I have cough."
        );
    }

    #[test]
    fn golden_template_with_antecedents() {
        let r = record(40, "F", &["fever"], &["asthma"]);
        let text = render_dialogue(&r).unwrap();
        assert_eq!(
            text,
            "Doctor: What brings you in? Patient: I am a 40 year old female. \
             Doctor: What symptoms do you have? Patient: I have fever. \
             Doctor: Do you have any relevant medical history? \
             Patient: I have a history of asthma."
        );
    }

    #[test]
    fn single_symptom_renders_exactly_four_turns() {
        let r = record(30, "F", &["cough"], &[]);
        let text = render_dialogue(&r).unwrap();
        assert_eq!(split_turns(&text).len(), 4);
    }

    #[test]
    fn rendering_is_deterministic() {
        let r = record(62, "M", &["fatigue", "nausea"], &["diabetes"]);
        assert_eq!(render_dialogue(&r).unwrap(), render_dialogue(&r).unwrap());
    }

    #[test]
    fn empty_symptom_list_is_an_error() {
        let r = record(30, "F", &[], &["asthma"]);
        assert!(matches!(
            render_dialogue(&r),
            Err(TextError::EmptySymptoms { .. })
        ));
    }

    #[test]
    fn split_turns_recovers_each_speaker_turn() {
        let r = record(55, "M", &["chest pain", "cough"], &[]);
        let text = render_dialogue(&r).unwrap();
        let turns = split_turns(&text);
        assert_eq!(
            turns,
            vec![
                "Doctor: What brings you in?",
                "Patient: I am a 55 year old male.",
                "Doctor: What symptoms do you have?",
                "Patient: I have chest pain.",
                "Patient: I have cough.",
            ]
        );
    }
}
