//! Seeded synthetic data: incident records with a tunable symptom-to-label
//! coupling, PPG waveforms with known ground-truth heart rate, and the
//! library/pool pair the hooking stage consumes. Everything is a pure
//! function of its config.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::domain::{IncidentRecord, VitalKind, VitalsSeries};
use crate::hooking::KeyedSeries;
use crate::normalizer::Lexicon;
use crate::prenet::{Sample, TaskLabels};
use crate::rppg::PpgWaveform;

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("profile bpm {0} outside the physiological band (45, 150)")]
    BandError(f64),
    #[error("waveform duration {0}s shorter than one 6s window")]
    DurationTooShort(f64),
    #[error("pool needs at least {need} records, config generates {got}")]
    PoolTooSmall { need: usize, got: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("record {0} is incomplete")]
    IncompleteRecord(String),
}

/// How labels relate to the inputs. The symptom bank is partitioned into
/// label classes and both primary symptoms of a record come from the same
/// class, so the class is a symmetric (order-free) function of the pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelStructure {
    /// The protocol is the symptom pair's class; vitals carry no protocol
    /// information.
    SymptomDriven,
    /// The protocol factors into a text part (the pair's class) and a
    /// vitals part (encoded in the HR level):
    /// `protocol = text_part * vitals_classes + vitals_part`, so
    /// k_protocol must equal text_classes * vitals_classes.
    Split { text_classes: usize, vitals_classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub n_records: usize,
    pub k_protocol: usize,
    pub k_med_type: usize,
    pub k_procedure: usize,
    /// Mutual information knob between symptoms and labels: 1.0 makes
    /// labels deterministic functions of the symptoms, 0.0 decouples them.
    pub coupling: f64,
    pub label_structure: LabelStructure,
    /// Fraction of records emitted with missing fields, for exercising
    /// completeness filtering.
    pub incomplete_fraction: f64,
    /// Waveform noise level; `None` means clean.
    pub snr_db: Option<f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_records: 600,
            k_protocol: 8,
            k_med_type: 6,
            k_procedure: 5,
            coupling: 1.0,
            label_structure: LabelStructure::SymptomDriven,
            incomplete_fraction: 0.0,
            snr_db: None,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<(), DatagenError> {
        if self.k_protocol < 2 || self.k_med_type < 2 || self.k_procedure < 2 {
            return Err(DatagenError::BadConfig("label vocabularies need >= 2 classes".into()));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(DatagenError::BadConfig("coupling outside [0, 1]".into()));
        }
        if let LabelStructure::Split { text_classes, vitals_classes } = self.label_structure {
            if text_classes < 2 || vitals_classes < 2 {
                return Err(DatagenError::BadConfig("split parts need >= 2 classes".into()));
            }
            if text_classes * vitals_classes != self.k_protocol {
                return Err(DatagenError::BadConfig(format!(
                    "k_protocol {} != text_classes {text_classes} * vitals_classes {vitals_classes}",
                    self.k_protocol
                )));
            }
        }
        Ok(())
    }
}

/// Seeded per-symptom label tables shared by every record of a config.
struct LabelTables {
    text_part: BTreeMap<String, u32>,
    med_type: BTreeMap<String, u32>,
    procedures: BTreeMap<String, Vec<u32>>,
}

fn build_tables(cfg: &GenConfig, symptoms: &[String]) -> LabelTables {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "label-tables"));
    let text_classes = match cfg.label_structure {
        LabelStructure::SymptomDriven => cfg.k_protocol,
        LabelStructure::Split { text_classes, .. } => text_classes,
    };
    let mut text_part = BTreeMap::new();
    let mut med_type = BTreeMap::new();
    let mut procedures = BTreeMap::new();
    for s in symptoms {
        text_part.insert(s.clone(), rng.gen_range(0..text_classes as u32));
        med_type.insert(s.clone(), rng.gen_range(0..cfg.k_med_type as u32));
        let n_procs = rng.gen_range(1..=2usize);
        let mut procs: Vec<u32> =
            (0..n_procs).map(|_| rng.gen_range(0..cfg.k_procedure as u32)).collect();
        procs.sort_unstable();
        procs.dedup();
        procedures.insert(s.clone(), procs);
    }
    LabelTables { text_part, med_type, procedures }
}

/// HR level encoding the vitals class: evenly spaced levels within the
/// band the estimator searches.
fn hr_level_for_class(class: u32, classes: usize) -> f64 {
    if classes <= 1 {
        return 90.0;
    }
    55.0 + (class as f64) * (80.0 / (classes as f64 - 1.0))
}

/// Synthetic incident records drawn from the bundled symptom lexicon with
/// the configured symptom-to-label coupling. Deterministic per config.
pub fn gen_incidents(cfg: &GenConfig) -> Result<Vec<IncidentRecord>, DatagenError> {
    cfg.validate()?;
    let lexicon = Lexicon::bundled();
    let bank: Vec<String> = lexicon.entries().to_vec();
    let tables = build_tables(cfg, &bank);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "incidents"));
    let jitter = Normal::new(0.0, 2.0).expect("valid normal");

    let vitals_classes = match cfg.label_structure {
        LabelStructure::SymptomDriven => 0,
        LabelStructure::Split { vitals_classes, .. } => vitals_classes,
    };

    let mut records = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        // two distinct primary symptoms, up to two distinct secondaries
        let mut picks: Vec<usize> = (0..bank.len()).collect();
        picks.shuffle(&mut rng);
        let primary: Vec<String> = picks[..2].iter().map(|&j| bank[j].clone()).collect();
        let n_secondary = rng.gen_range(0..=2usize);
        let secondary: Vec<String> =
            picks[2..2 + n_secondary].iter().map(|&j| bank[j].clone()).collect();

        let coupled = |rng: &mut ChaCha8Rng| rng.gen_bool(cfg.coupling);

        // vitals class and HR level
        let vitals_part = if vitals_classes > 0 {
            rng.gen_range(0..vitals_classes as u32)
        } else {
            0
        };
        let level = match cfg.label_structure {
            LabelStructure::SymptomDriven => rng.gen_range(60.0..130.0),
            LabelStructure::Split { vitals_classes, .. } => {
                hr_level_for_class(vitals_part, vitals_classes)
            }
        };
        let len = rng.gen_range(6..=14usize);
        let hr_values: Vec<f64> = (0..len)
            .map(|_| {
                let v: f64 = level + jitter.sample(&mut rng);
                (v * 100.0).round() / 100.0
            })
            .collect();

        // labels
        let text_part = tables.text_part[&primary[0]];
        let protocol = match cfg.label_structure {
            LabelStructure::SymptomDriven => {
                if coupled(&mut rng) {
                    text_part
                } else {
                    rng.gen_range(0..cfg.k_protocol as u32)
                }
            }
            LabelStructure::Split { vitals_classes, .. } => {
                if coupled(&mut rng) {
                    text_part * vitals_classes as u32 + vitals_part
                } else {
                    rng.gen_range(0..cfg.k_protocol as u32)
                }
            }
        };
        let med_type = if coupled(&mut rng) {
            tables.med_type[&primary[1]]
        } else {
            rng.gen_range(0..cfg.k_med_type as u32)
        };
        let mut procedures: Vec<u32> = if coupled(&mut rng) {
            primary.iter().flat_map(|s| tables.procedures[s].iter().copied()).collect()
        } else {
            (0..cfg.k_procedure as u32).filter(|_| rng.gen_bool(0.4)).collect()
        };
        procedures.sort_unstable();
        procedures.dedup();
        if procedures.is_empty() {
            procedures.push(med_type % cfg.k_procedure as u32);
        }
        let quantity_noise: f64 = jitter.sample(&mut rng) * 0.05 * (1.0 - cfg.coupling + 0.1);
        let quantity =
            ((0.5 + f64::from(med_type) * 0.5 + quantity_noise).max(0.0) * 1000.0).round() / 1000.0;

        let mut record = IncidentRecord {
            key: format!("inc-{i:06}"),
            primary_symptoms: primary,
            secondary_symptoms: secondary,
            vitals: BTreeMap::from([(
                VitalKind::HR,
                VitalsSeries::new(VitalKind::HR, hr_values, "bpm"),
            )]),
            protocol: Some(protocol),
            med_type: Some(med_type),
            med_quantity: Some(quantity),
            procedures,
        };
        if rng.gen_bool(cfg.incomplete_fraction) {
            // knock out one field so completeness filtering has work to do
            match rng.gen_range(0..3u8) {
                0 => record.primary_symptoms.clear(),
                1 => record.protocol = None,
                _ => {
                    record.vitals.clear();
                }
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Synthetic PPG waveform: a fundamental at bpm/60 Hz with a 0.3-amplitude
/// second harmonic and optional white noise at the given SNR. The profile
/// lists one bpm per six-second window (cycled if shorter than the
/// duration). Returns the waveform plus the ground-truth per-window bpm.
pub fn gen_ppg(
    hr_bpm_profile: &[f64],
    rate_hz: f64,
    duration_s: f64,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<(PpgWaveform, Vec<f64>), DatagenError> {
    if hr_bpm_profile.is_empty() {
        return Err(DatagenError::BadConfig("empty bpm profile".into()));
    }
    for &bpm in hr_bpm_profile {
        if !(45.0 < bpm && bpm < 150.0) {
            return Err(DatagenError::BandError(bpm));
        }
    }
    if duration_s < 6.0 {
        return Err(DatagenError::DurationTooShort(duration_s));
    }
    let n = (rate_hz * duration_s).round() as usize;
    let window = (rate_hz * 6.0).round() as usize;
    let n_windows = n / window;

    let mut phase = 0.0f64;
    let mut phase2 = 0.0f64;
    let tau = 2.0 * std::f64::consts::PI;
    let mut signal = Vec::with_capacity(n);
    for i in 0..n {
        let w = (i / window).min(n_windows.saturating_sub(1));
        let f = hr_bpm_profile[w % hr_bpm_profile.len()] / 60.0;
        phase += tau * f / rate_hz;
        phase2 += tau * 2.0 * f / rate_hz;
        signal.push(phase.sin() + 0.3 * phase2.sin());
    }

    let samples = match snr_db {
        None => signal,
        Some(snr) => {
            let power = signal.iter().map(|s| s * s).sum::<f64>() / signal.len() as f64;
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            let noise = Normal::new(0.0, sigma)
                .map_err(|e| DatagenError::BadConfig(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "ppg-noise"));
            signal.into_iter().map(|s| s + noise.sample(&mut rng)).collect()
        }
    };
    let truth: Vec<f64> =
        (0..n_windows).map(|w| hr_bpm_profile[w % hr_bpm_profile.len()]).collect();
    let wave = PpgWaveform::new(samples, rate_hz)
        .map_err(|e| DatagenError::BadConfig(e.to_string()))?;
    Ok((wave, truth))
}

/// One library entry: a waveform for the estimation pipeline and its true
/// per-window HR labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub id: String,
    pub waveform: PpgWaveform,
    pub true_hr: VitalsSeries,
}

pub const LIBRARY_SIZE: usize = 42;

/// The hooking inputs: 42 waveform-bearing library entries and a pool of
/// keyed HR series derived from the generated incidents.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryPool {
    pub library: Vec<LibraryEntry>,
    pub pool: Vec<KeyedSeries>,
}

pub fn gen_library_pool(cfg: &GenConfig) -> Result<LibraryPool, DatagenError> {
    let incidents = crate::domain::filter_complete(gen_incidents(cfg)?);
    if incidents.len() < LIBRARY_SIZE {
        return Err(DatagenError::PoolTooSmall { need: LIBRARY_SIZE, got: incidents.len() });
    }
    let pool: Vec<KeyedSeries> = incidents
        .iter()
        .map(|r| {
            let series = crate::domain::derive_prearrival_vitals(r)
                .map_err(|_| DatagenError::IncompleteRecord(r.key.clone()))?;
            Ok(KeyedSeries { key: r.key.clone(), series })
        })
        .collect::<Result<_, DatagenError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "library"));
    let mut library = Vec::with_capacity(LIBRARY_SIZE);
    for i in 0..LIBRARY_SIZE {
        // two windows per subject, bpm within the estimator's safe band
        let bpm: Vec<f64> = (0..2)
            .map(|_| {
                let v: f64 = rng.gen_range(52.0..138.0);
                (v * 10.0).round() / 10.0
            })
            .collect();
        let (waveform, truth) = gen_ppg(&bpm, 30.0, 12.0, cfg.snr_db, cfg.seed ^ (i as u64))?;
        library.push(LibraryEntry {
            id: format!("lib-{i:03}"),
            waveform,
            true_hr: VitalsSeries::new(VitalKind::HR, truth, "bpm"),
        });
    }
    Ok(LibraryPool { library, pool })
}

/// Converts a complete incident record into a training sample: tokenized
/// pre-arrival text, normalized HR series, and the four labels. The dose
/// quantity is divided by `quantity_scale` so the regression head trains
/// on normalized values.
pub fn record_to_sample(
    record: &IncidentRecord,
    bounds: (f64, f64),
    norm_range: (f64, f64),
    quantity_scale: f64,
) -> Result<Sample, DatagenError> {
    if !(quantity_scale > 0.0) {
        return Err(DatagenError::BadConfig("quantity scale must be positive".into()));
    }
    let text = crate::domain::derive_prearrival_text(record);
    let hr = crate::domain::derive_prearrival_vitals(record)
        .map_err(|_| DatagenError::IncompleteRecord(record.key.clone()))?;
    let normalized = crate::domain::preprocess_vitals(&hr, bounds, norm_range)
        .map_err(|e| DatagenError::BadConfig(e.to_string()))?;
    let labels = TaskLabels {
        protocol: record
            .protocol
            .ok_or_else(|| DatagenError::IncompleteRecord(record.key.clone()))?,
        med_type: record
            .med_type
            .ok_or_else(|| DatagenError::IncompleteRecord(record.key.clone()))?,
        quantity: record
            .med_quantity
            .ok_or_else(|| DatagenError::IncompleteRecord(record.key.clone()))?
            / quantity_scale,
        procedures: record.procedures.iter().copied().collect(),
    };
    Ok(Sample { tokens: crate::text::tokenize(&text), vitals: normalized.values, labels })
}
