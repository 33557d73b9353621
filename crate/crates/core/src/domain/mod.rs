//! Core data model and the record-preparation pipeline: completeness
//! filtering, deterministic splits, and derivation of the pre-arrival
//! text/vitals stages.

pub mod dataset;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("need at least {parts} records to split, got {got}")]
    InsufficientRecords { parts: usize, got: usize },
    #[error("record {key} has no {kind} series")]
    MissingVital { key: String, kind: VitalKind },
    #[error("all samples removed as outliers")]
    EmptyAfterFilter,
    #[error("normalization range is empty (min must be < max)")]
    EmptyRange,
}

/// The vital-sign channels a record can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VitalKind {
    /// Heart rate.
    HR,
    /// Blood pressure.
    BP,
    /// Pulse oximetry.
    PO,
    /// Respiratory rate.
    RR,
    /// End-tidal CO2.
    CO2,
    /// Blood glucose.
    BG,
}

impl std::fmt::Display for VitalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VitalKind::HR => "HR",
            VitalKind::BP => "BP",
            VitalKind::PO => "PO",
            VitalKind::RR => "RR",
            VitalKind::CO2 => "CO2",
            VitalKind::BG => "BG",
        };
        f.write_str(s)
    }
}

/// One ordered series of samples for a single vital kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsSeries {
    pub kind: VitalKind,
    pub values: Vec<f64>,
    pub unit: String,
}

impl VitalsSeries {
    pub fn new(kind: VitalKind, values: Vec<f64>, unit: impl Into<String>) -> Self {
        Self { kind, values, unit: unit.into() }
    }
}

/// One 911 event: symptoms, vitals, and the four task labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    /// Unique incident identifier within a dataset.
    pub key: String,
    pub primary_symptoms: Vec<String>,
    pub secondary_symptoms: Vec<String>,
    pub vitals: BTreeMap<VitalKind, VitalsSeries>,
    pub protocol: Option<u32>,
    pub med_type: Option<u32>,
    /// Dose units; non-negative when present.
    pub med_quantity: Option<f64>,
    pub procedures: Vec<u32>,
}

impl IncidentRecord {
    /// Complete means: non-empty primary symptoms, all four labels present,
    /// and an HR series available.
    pub fn is_complete(&self) -> bool {
        !self.primary_symptoms.is_empty()
            && self.protocol.is_some()
            && self.med_type.is_some()
            && self.med_quantity.map_or(false, |q| q >= 0.0)
            && !self.procedures.is_empty()
            && self.vitals.contains_key(&VitalKind::HR)
    }
}

/// Tags naming each staged dataset a file can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetStage {
    Text0,
    Text1,
    Text2,
    Text3,
    Text4,
    Text5,
    Text6,
    Text7,
    Vitals0,
    Vitals1,
    Vitals2,
    Vitals3,
    #[serde(rename = "Audio-surrogate")]
    AudioSurrogate,
}

impl DatasetStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetStage::Text0 => "Text0",
            DatasetStage::Text1 => "Text1",
            DatasetStage::Text2 => "Text2",
            DatasetStage::Text3 => "Text3",
            DatasetStage::Text4 => "Text4",
            DatasetStage::Text5 => "Text5",
            DatasetStage::Text6 => "Text6",
            DatasetStage::Text7 => "Text7",
            DatasetStage::Vitals0 => "Vitals0",
            DatasetStage::Vitals1 => "Vitals1",
            DatasetStage::Vitals2 => "Vitals2",
            DatasetStage::Vitals3 => "Vitals3",
            DatasetStage::AudioSurrogate => "Audio-surrogate",
        }
    }
}

impl std::fmt::Display for DatasetStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Split ratios plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [u32; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [3, 1, 1], seed: 0 }
    }
}

/// Retains exactly the complete records, preserving relative order.
pub fn filter_complete(records: Vec<IncidentRecord>) -> Vec<IncidentRecord> {
    records.into_iter().filter(IncidentRecord::is_complete).collect()
}

/// Deterministic shuffle by seed, then partition by ratio. The remainder
/// after flooring the val/test shares goes to train.
pub fn split_dataset<T>(
    records: Vec<T>,
    spec: &SplitSpec,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), DomainError> {
    let parts = 3usize;
    let n = records.len();
    if n < parts {
        return Err(DomainError::InsufficientRecords { parts, got: n });
    }
    let total: u64 = spec.ratios.iter().map(|&r| u64::from(r)).sum();
    debug_assert!(total > 0);

    let mut shuffled = records;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffled.shuffle(&mut rng);

    let n_val = (n as u64 * u64::from(spec.ratios[1]) / total) as usize;
    let n_test = (n as u64 * u64::from(spec.ratios[2]) / total) as usize;
    let n_train = n - n_val - n_test;

    let mut it = shuffled.into_iter();
    let train: Vec<T> = it.by_ref().take(n_train).collect();
    let val: Vec<T> = it.by_ref().take(n_val).collect();
    let test: Vec<T> = it.collect();
    Ok((train, val, test))
}

/// Pre-arrival symptom text: the primary symptoms only, space-joined in
/// original order (stage Text1).
pub fn derive_prearrival_text(record: &IncidentRecord) -> String {
    record.primary_symptoms.join(" ")
}

/// Pre-arrival vitals: the HR series only (stage Vitals1).
pub fn derive_prearrival_vitals(record: &IncidentRecord) -> Result<VitalsSeries, DomainError> {
    record
        .vitals
        .get(&VitalKind::HR)
        .cloned()
        .ok_or_else(|| DomainError::MissingVital { key: record.key.clone(), kind: VitalKind::HR })
}

/// Removes samples outside `bounds`, then maps the rest through the affine
/// normalization `(v - min) / (max - min)` clamped to [0, 1].
pub fn preprocess_vitals(
    series: &VitalsSeries,
    bounds: (f64, f64),
    norm_range: (f64, f64),
) -> Result<VitalsSeries, DomainError> {
    let (low, high) = bounds;
    let (min, max) = norm_range;
    if !(min < max) {
        return Err(DomainError::EmptyRange);
    }
    let values: Vec<f64> = series
        .values
        .iter()
        .copied()
        .filter(|v| *v >= low && *v <= high)
        .map(|v| ((v - min) / (max - min)).clamp(0.0, 1.0))
        .collect();
    if values.is_empty() {
        return Err(DomainError::EmptyAfterFilter);
    }
    Ok(VitalsSeries { kind: series.kind, values, unit: "normalized".to_string() })
}

/// Default heart-rate outlier bounds in bpm.
pub const DEFAULT_HR_BOUNDS: (f64, f64) = (20.0, 250.0);
