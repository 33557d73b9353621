//! Structured evaluation report: one cell per (normalizer variant, noise
//! profile, task mode), each holding per-task metric values in the shape
//! of the end-to-end result tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One axis point of the evaluation grid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub normalizer: String,
    pub noise: String,
    pub mode: String,
}

impl CellKey {
    pub fn new(normalizer: &str, noise: &str, mode: &str) -> Self {
        Self { normalizer: normalizer.into(), noise: noise.into(), mode: mode.into() }
    }
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "normalizer={}|noise={}|mode={}", self.normalizer, self.noise, self.mode)
    }
}

/// A metric is either a computed value or an explicit skip with a reason;
/// cells are never silently omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Value(f64),
    Skipped { skipped: String },
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Skipped { .. } => None,
        }
    }
}

/// Metrics for one task within one cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub metrics: BTreeMap<String, MetricValue>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl TaskReport {
    pub fn insert(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), MetricValue::Value(value));
        self.evaluated += 1;
    }

    pub fn skip(&mut self, name: &str, reason: &str) {
        self.metrics.insert(name.to_string(), MetricValue::Skipped { skipped: reason.into() });
        self.skipped += 1;
    }
}

/// The full evaluation report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Echo of the evaluation configuration (k values, smoothing, seeds).
    pub config: BTreeMap<String, String>,
    /// cell key string -> task name -> metrics.
    pub cells: BTreeMap<String, BTreeMap<String, TaskReport>>,
}

impl MetricReport {
    pub fn task_mut(&mut self, cell: &CellKey, task: &str) -> &mut TaskReport {
        self.cells.entry(cell.to_string()).or_default().entry(task.to_string()).or_default()
    }

    pub fn task(&self, cell: &CellKey, task: &str) -> Option<&TaskReport> {
        self.cells.get(&cell.to_string()).and_then(|m| m.get(task))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// SHA-256 of the canonical JSON serialization; identical runs produce
    /// identical digests.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        hex_string(&hasher.finalize())
    }

    /// Checks structural invariants: every value finite and top-k accuracy
    /// non-decreasing in k within each task.
    pub fn validate(&self) -> Result<(), String> {
        for (cell, tasks) in &self.cells {
            for (task, report) in tasks {
                for (name, value) in &report.metrics {
                    if let MetricValue::Value(v) = value {
                        if !v.is_finite() {
                            return Err(format!("{cell}/{task}/{name} is not finite"));
                        }
                    }
                }
                let top = |k: &str| report.metrics.get(k).and_then(MetricValue::value);
                if let (Some(t1), Some(t3)) = (top("top1"), top("top3")) {
                    if t1 > t3 + 1e-12 {
                        return Err(format!("{cell}/{task}: top1 > top3"));
                    }
                }
                if let (Some(t3), Some(t5)) = (top("top3"), top("top5")) {
                    if t3 > t5 + 1e-12 {
                        return Err(format!("{cell}/{task}: top3 > top5"));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").expect("writing to string");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_digest_is_deterministic() {
        let mut r = MetricReport::default();
        r.config.insert("seed".into(), "7".into());
        let cell = CellKey::new("lexicon", "clean", "multi");
        r.task_mut(&cell, "protocol").insert("top1", 0.5);
        r.task_mut(&cell, "protocol").insert("top3", 0.75);
        let d1 = r.digest();
        let d2 = r.digest();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 64);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn validate_catches_topk_inversion() {
        let mut r = MetricReport::default();
        let cell = CellKey::new("none", "clean", "multi");
        r.task_mut(&cell, "protocol").insert("top1", 0.9);
        r.task_mut(&cell, "protocol").insert("top3", 0.5);
        assert!(r.validate().is_err());
    }

    #[test]
    fn skipped_metrics_are_explicit() {
        let mut r = MetricReport::default();
        let cell = CellKey::new("none", "clean", "single:quantity");
        r.task_mut(&cell, "quantity").skip("pearson", "zero variance in predictions");
        let json = r.to_json();
        assert!(json.contains("zero variance"));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
