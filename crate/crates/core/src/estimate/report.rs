//! Effect report assembly and emission.
//!
//! The report carries per-disease TReATE (signed and absolute) and CONEXP
//! values plus the provenance needed to reproduce them: test-set size, the
//! concept split counts, and the two checkpoint ids. It is emitted as JSON
//! (full precision, for machines) and as a comma-separated table rounded
//! the way the effect tables are conventionally printed (four decimals,
//! trailing zeros trimmed).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseEffect {
    pub disease: String,
    pub treate_signed: f64,
    pub treate_abs: f64,
    pub conexp_signed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub concept: String,
    pub test_size: usize,
    pub present_count: usize,
    pub absent_count: usize,
    pub baseline_id: String,
    pub counterfactual_id: String,
    /// Whether the counterfactual encoder was trained with the extra
    /// (non-reversed) control-concept head.
    pub counterfactual_used_control_head: bool,
    pub effects: Vec<DiseaseEffect>,
}

/// Which column a ranked view sorts and displays by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    TreateAbs,
    TreateSigned,
    ConexpSigned,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::TreateAbs => "treate",
            Metric::TreateSigned => "treate_signed",
            Metric::ConexpSigned => "conexp",
        }
    }

    fn value(self, e: &DiseaseEffect) -> f64 {
        match self {
            Metric::TreateAbs => e.treate_abs,
            Metric::TreateSigned => e.treate_signed,
            Metric::ConexpSigned => e.conexp_signed,
        }
    }
}

/// Four decimal places with trailing zeros (and a bare trailing point)
/// trimmed, matching how effect tables are conventionally printed:
/// 0.082 stays "0.082", 0.2708 stays "0.2708", 0 prints "0".
pub(crate) fn format_value(v: f64) -> String {
    let mut s = format!("{v:.4}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

impl EffectReport {
    /// Effects sorted descending by `metric` (stable, so equal values keep
    /// their original disease order).
    pub fn ranked(&self, metric: Metric) -> Vec<&DiseaseEffect> {
        let mut rows: Vec<&DiseaseEffect> = self.effects.iter().collect();
        rows.sort_by(|a, b| {
            metric
                .value(b)
                .partial_cmp(&metric.value(a))
                .expect("effect values are finite")
        });
        rows
    }

    /// The full table: `disease,treate_abs,treate_signed,conexp`, one row
    /// per disease, sorted descending by absolute TReATE.
    pub fn to_csv(&self) -> String {
        self.to_csv_top_bottom(self.effects.len(), 0)
    }

    /// Top-`top` and bottom-`bottom` rows of the full table (by absolute
    /// TReATE), with an ellipsis row marking any omitted middle.
    pub fn to_csv_top_bottom(&self, top: usize, bottom: usize) -> String {
        let line = |e: &DiseaseEffect| {
            format!(
                "{},{},{},{}\n",
                e.disease,
                format_value(e.treate_abs),
                format_value(e.treate_signed),
                format_value(e.conexp_signed),
            )
        };
        self.render(Metric::TreateAbs, top, bottom, "disease,treate_abs,treate_signed,conexp\n", "...,...,...,...\n", line)
    }

    /// A two-column ranked view (`disease,<metric>`), highest first, with
    /// an ellipsis row when the middle is omitted. This is the layout of
    /// the published effect tables: top movers, a gap, bottom movers.
    pub fn format_table(&self, metric: Metric, top: usize, bottom: usize) -> String {
        let line =
            |e: &DiseaseEffect| format!("{},{}\n", e.disease, format_value(metric.value(e)));
        let header = format!("disease,{}\n", metric.label());
        self.render(metric, top, bottom, &header, "...,...\n", line)
    }

    fn render(
        &self,
        metric: Metric,
        top: usize,
        bottom: usize,
        header: &str,
        ellipsis: &str,
        line: impl Fn(&DiseaseEffect) -> String,
    ) -> String {
        let rows = self.ranked(metric);
        let mut out = header.to_string();
        if top + bottom >= rows.len() {
            for e in rows {
                out.push_str(&line(e));
            }
        } else {
            for e in &rows[..top] {
                out.push_str(&line(e));
            }
            out.push_str(ellipsis);
            for e in &rows[rows.len() - bottom..] {
                out.push_str(&line(e));
            }
        }
        out
    }
}
