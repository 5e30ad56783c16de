//! Calibration scratch: probe accuracy of a checkpoint on a corpus,
//! swept over probe training budgets to check convergence behaviour.
//! Usage: probe_cal <checkpoint-dir> <corpus.jsonl> <concept-name>

use treate_core::text::tokenize;
use treate_core::train::{probe_concept_accuracy, Checkpoint};
use treate_core::CanonicalRecord;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = Checkpoint::load(std::path::Path::new(&args[1])).unwrap();
    let text = std::fs::read_to_string(&args[2]).unwrap();
    let records: Vec<CanonicalRecord> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let concept = &args[3];
    let inputs: Vec<Vec<u32>> = records
        .iter()
        .map(|r| tokenize(&r.text, &ckpt.vocab, ckpt.encoder.max_len).unwrap())
        .collect();
    let labels: Vec<u8> = records.iter().map(|r| r.concept_flags[concept]).collect();
    let ones = labels.iter().filter(|&&l| l == 1).count();
    print!("base rate {:.4} |", ones.max(labels.len() - ones) as f64 / labels.len() as f64);
    for (steps, lr) in
        [(200usize, 0.5f64), (500, 0.5), (1000, 0.5), (2000, 0.5), (2000, 2.0), (5000, 2.0)]
    {
        let acc = probe_concept_accuracy(
            &ckpt.params, &ckpt.encoder, &inputs, &labels, 123, steps, lr,
        )
        .unwrap();
        print!(" {steps}@{lr}: {acc:.4}");
    }
    println!();
}
