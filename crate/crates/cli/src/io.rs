//! File plumbing: upfront path checks, JSON Lines corpora, and JSON
//! documents. All writes are whole-file, so identical inputs produce
//! identical output bytes.

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::Path;
use treate_core::CanonicalRecord;

/// Fail early (before any work) when an input file is missing.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist or is not a file", path.display());
    }
    Ok(())
}

/// Fail early when a checkpoint directory is missing.
pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} {} does not exist or is not a directory", path.display());
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {what} {}", path.display()))?;
    serde_json::from_slice(&bytes)
        .with_context(|| format!("invalid {what} {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, what: &str) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {what} {}", path.display()))?;
    Ok(())
}

/// Parse a JSON Lines file, reporting the 1-based line number of the first
/// malformed line. Blank lines are not allowed (they are malformed input,
/// not formatting).
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {what} {}", path.display()))?;
    if text.trim().is_empty() {
        bail!("{what} {} is empty", path.display());
    }
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).with_context(|| {
                format!("{what} {}: line {}: malformed record", path.display(), i + 1)
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T], what: &str) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    std::fs::write(path, out)
        .with_context(|| format!("cannot write {what} {}", path.display()))?;
    Ok(())
}

pub fn read_corpus(path: &Path, what: &str) -> Result<Vec<CanonicalRecord>> {
    require_file(path, what)?;
    read_jsonl(path, what)
}

/// Bold a heading unless a NO_COLOR-style variable asks for plain output.
pub fn heading(text: &str) -> String {
    if std::env::var_os("NO_COLOR").is_some() {
        text.to_string()
    } else {
        format!("\x1b[1m{text}\x1b[0m")
    }
}
