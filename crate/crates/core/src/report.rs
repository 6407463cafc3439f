//! The end-of-run metrics report and its two serializations.
//!
//! Every number here is recomputable from the run log and the collection
//! database alone; the report is a convenience view, not a second source
//! of truth. The table format is for humans, the machine format is JSON
//! carrying every field.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Redo-log footprint of one template's honeypots at teardown, against
/// the template's full virtual disk size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRedoRow {
    pub template: String,
    /// Largest redo log any honeypot of this template held at teardown.
    pub redo_bytes: u64,
    pub disk_bytes: u64,
    /// redo_bytes / disk_bytes.
    pub ratio: f64,
}

impl TemplateRedoRow {
    pub fn new(template: String, redo_bytes: u64, disk_bytes: u64) -> Self {
        let ratio = if disk_bytes == 0 {
            0.0
        } else {
            redo_bytes as f64 / disk_bytes as f64
        };
        TemplateRedoRow {
            template,
            redo_bytes,
            disk_bytes,
            ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub tick: u64,
    pub inspectors: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub ticks_run: u64,
    pub total_records: u64,
    pub per_network_collections: BTreeMap<String, u64>,
    pub per_family_distinct: BTreeMap<String, u64>,
    pub per_template_redo: Vec<TemplateRedoRow>,
    /// Records collected from networks the scenario seeded no worm into.
    pub false_positives: u64,
    /// Worm-bearing networks that completed at least one inspection
    /// lifecycle yet produced no records.
    pub false_negatives: u64,
    pub peak_alive_honeypots: u64,
    /// Change points of the inspector count, starting at the first tick.
    pub inspector_timeline: Vec<TimelinePoint>,
}

fn section<K: std::fmt::Display, V: std::fmt::Display>(
    out: &mut String,
    title: &str,
    rows: impl Iterator<Item = (K, V)>,
) {
    let _ = writeln!(out, "{title}");
    let mut any = false;
    for (k, v) in rows {
        any = true;
        let _ = writeln!(out, "  {k:<24} {v}");
    }
    if !any {
        let _ = writeln!(out, "  (none)");
    }
    let _ = writeln!(out);
}

impl MetricsReport {
    /// Human-readable table rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run summary");
        let _ = writeln!(out, "  {:<24} {}", "seed", self.seed);
        let _ = writeln!(out, "  {:<24} {}", "ticks run", self.ticks_run);
        let _ = writeln!(out, "  {:<24} {}", "total records", self.total_records);
        let _ = writeln!(
            out,
            "  {:<24} {}",
            "peak alive honeypots", self.peak_alive_honeypots
        );
        let _ = writeln!(out, "  {:<24} {}", "false positives", self.false_positives);
        let _ = writeln!(out, "  {:<24} {}", "false negatives", self.false_negatives);
        let _ = writeln!(out);

        section(
            &mut out,
            "inspector count timeline",
            self.inspector_timeline
                .iter()
                .map(|p| (format!("t={}", p.tick), p.inspectors)),
        );
        section(
            &mut out,
            "collections by network",
            self.per_network_collections.iter(),
        );
        section(
            &mut out,
            "distinct instances by family",
            self.per_family_distinct.iter(),
        );

        let _ = writeln!(out, "redo log size at teardown");
        if self.per_template_redo.is_empty() {
            let _ = writeln!(out, "  (none)");
        } else {
            let _ = writeln!(
                out,
                "  {:<16} {:>14} {:>14} {:>8}",
                "template", "redo_bytes", "disk_bytes", "ratio"
            );
            for row in &self.per_template_redo {
                let _ = writeln!(
                    out,
                    "  {:<16} {:>14} {:>14} {:>7.2}%",
                    row.template,
                    row.redo_bytes,
                    row.disk_bytes,
                    row.ratio * 100.0
                );
            }
        }
        out
    }

    /// Machine-readable rendering: JSON with every field.
    pub fn to_machine(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn from_machine(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| crate::Error::scenario(format!("malformed machine report: {e}")))
    }
}
