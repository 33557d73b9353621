//! Single-stage subcommands: datagen, prep, hook, relay-sim, rppg,
//! normalize.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

use prearrival_core::datagen::{gen_library_pool, gen_incidents, GenConfig, LabelStructure};
use prearrival_core::domain::dataset::{
    IncidentDataset, TextDataset, TextRecord, VitalsDataset, VitalsRecord,
};
use prearrival_core::domain::{
    self, DatasetStage, SplitSpec, VitalKind, DEFAULT_HR_BOUNDS,
};
use prearrival_core::hooking::{hook_directed, write_pairing, HookDirection};
use prearrival_core::normalizer::{
    ExternalNormalizer, Lexicon, LexiconNormalizer, Normalizer, Transcript, DEFAULT_THRESHOLD,
};
use prearrival_core::relay::{generate_script, run_scenario, RoomConfig, ScenarioSpec};
use prearrival_core::rppg::{hr_series, source, SpectralConfig};

use crate::cfgfile::ConfigFile;
use crate::manifest::RunManifest;
use crate::CommonArgs;

pub(crate) fn resolve_seed(common: &CommonArgs, cfg: &ConfigFile) -> Result<u64> {
    cfg.resolve(common.seed, "seed", 0)
}

pub fn run_datagen(
    common: &CommonArgs,
    out: &Path,
    records: Option<usize>,
    coupling: Option<f64>,
    split_labels: Option<String>,
    incomplete: Option<f64>,
    snr: Option<f64>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let seed = resolve_seed(common, &cfg)?;
    let n_records = cfg.resolve(records, "records", 600)?;
    let coupling = cfg.resolve(coupling, "coupling", 1.0)?;
    let incomplete = cfg.resolve(incomplete, "incomplete", 0.0)?;
    let split_labels = match split_labels {
        Some(s) => Some(s),
        None => cfg.resolve(None::<String>, "split_labels", String::new()).ok().filter(|s| !s.is_empty()),
    };

    let mut gen = GenConfig {
        seed,
        n_records,
        coupling,
        incomplete_fraction: incomplete,
        snr_db: snr,
        ..GenConfig::default()
    };
    if let Some(spec) = &split_labels {
        let (a, b) = parse_split_labels(spec)?;
        gen.k_protocol = a * b;
        gen.label_structure = LabelStructure::Split { text_classes: a, vitals_classes: b };
    }

    std::fs::create_dir_all(out)?;
    let incidents = gen_incidents(&gen).map_err(|e| anyhow::anyhow!(e))?;
    let incidents_path = out.join("incidents.jsonl");
    IncidentDataset::new(DatasetStage::Text0, seed, incidents).write_to(&incidents_path)?;

    // waveform library with ground-truth HR labels
    let lp = gen_library_pool(&gen).map_err(|e| anyhow::anyhow!(e))?;
    let wave_dir = out.join("waveforms");
    std::fs::create_dir_all(&wave_dir)?;
    let mut truth_records = Vec::new();
    for entry in &lp.library {
        let path = wave_dir.join(format!("{}.f32", entry.id));
        let mut file = std::fs::File::create(&path)?;
        source::write_binary(&mut file, &entry.waveform).map_err(|e| anyhow::anyhow!(e))?;
        truth_records.push(VitalsRecord {
            key: entry.id.clone(),
            kind: VitalKind::HR,
            values: entry.true_hr.values.clone(),
            unit: entry.true_hr.unit.clone(),
        });
    }
    let truth_path = out.join("library_truth.jsonl");
    VitalsDataset::new(DatasetStage::Vitals3, seed, truth_records).write_to(&truth_path)?;

    let mut config = BTreeMap::new();
    config.insert("records".into(), n_records.to_string());
    config.insert("coupling".into(), coupling.to_string());
    config.insert("incomplete".into(), incomplete.to_string());
    config.insert("seed".into(), seed.to_string());
    if let Some(s) = &split_labels {
        config.insert("split_labels".into(), s.clone());
    }
    if let Some(s) = snr {
        config.insert("snr_db".into(), s.to_string());
    }
    let mut manifest = RunManifest::new("datagen", seed, config);
    manifest.record_output(&incidents_path)?;
    manifest.record_output(&truth_path)?;
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;
    println!(
        "datagen: {} records, {} library waveforms -> {}",
        n_records,
        lp.library.len(),
        out.display()
    );
    Ok(())
}

fn parse_split_labels(spec: &str) -> Result<(usize, usize)> {
    let Some((a, b)) = spec.split_once(['x', 'X']) else {
        bail!("--split-labels expects AxB, got {spec}");
    };
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub(crate) fn parse_ratios(spec: &str) -> Result<[u32; 3]> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("--ratios expects A:B:C, got {spec}");
    }
    let mut out = [0u32; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part.trim().parse().context("ratio component")?;
        if *slot == 0 {
            bail!("ratio components must be positive");
        }
    }
    Ok(out)
}

/// Normalization constants computed on the training split and frozen for
/// val/test.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PrepStats {
    pub hr_bounds: (f64, f64),
    pub norm_min: f64,
    pub norm_max: f64,
    /// Scale dividing dose quantities so the regression head trains on
    /// values near [0, 1].
    pub quantity_max: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub fn run_prep(
    common: &CommonArgs,
    input: &Path,
    out: &Path,
    ratios: Option<String>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let seed = resolve_seed(common, &cfg)?;
    let ratios_s = cfg.resolve(ratios, "ratios", "3:1:1".to_string())?;
    let ratios = parse_ratios(&ratios_s)?;

    let dataset = IncidentDataset::read_expecting(input, DatasetStage::Text0)?;
    let total_in = dataset.records.len();
    let complete = domain::filter_complete(dataset.records);
    let kept = complete.len();
    let spec = SplitSpec { ratios, seed };
    let (train, val, test) =
        domain::split_dataset(complete, &spec).map_err(|e| anyhow::anyhow!(e))?;

    // normalization constants: min/max of in-bounds training HR values
    // plus the training dose-quantity scale
    let bounds = DEFAULT_HR_BOUNDS;
    let mut norm_min = f64::INFINITY;
    let mut norm_max = f64::NEG_INFINITY;
    let mut quantity_max = 0.0f64;
    for record in &train {
        if let Some(series) = record.vitals.get(&VitalKind::HR) {
            for &v in &series.values {
                if v >= bounds.0 && v <= bounds.1 {
                    norm_min = norm_min.min(v);
                    norm_max = norm_max.max(v);
                }
            }
        }
        if let Some(q) = record.med_quantity {
            quantity_max = quantity_max.max(q);
        }
    }
    if !(norm_min < norm_max) {
        bail!("degenerate training split: cannot derive normalization range");
    }
    let stats = PrepStats {
        hr_bounds: bounds,
        norm_min,
        norm_max,
        quantity_max: quantity_max.max(1e-9),
        train: train.len(),
        val: val.len(),
        test: test.len(),
    };

    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    for (name, records) in [("train", &train), ("val", &val), ("test", &test)] {
        let incidents_path = out.join(format!("incidents_{name}.jsonl"));
        IncidentDataset::new(DatasetStage::Text0, seed, records.to_vec())
            .write_to(&incidents_path)?;
        outputs.push(incidents_path);

        let text_records: Vec<TextRecord> = records
            .iter()
            .map(|r| TextRecord { key: r.key.clone(), text: domain::derive_prearrival_text(r) })
            .collect();
        let text_path = out.join(format!("text1_{name}.jsonl"));
        TextDataset::new(DatasetStage::Text1, seed, text_records).write_to(&text_path)?;
        outputs.push(text_path);

        let vitals_records: Vec<VitalsRecord> = records
            .iter()
            .map(|r| {
                let series = domain::derive_prearrival_vitals(r)?;
                Ok(VitalsRecord {
                    key: r.key.clone(),
                    kind: series.kind,
                    values: series.values,
                    unit: series.unit,
                })
            })
            .collect::<Result<_, domain::DomainError>>()
            .map_err(|e| anyhow::anyhow!(e))?;
        let vitals_path = out.join(format!("vitals1_{name}.jsonl"));
        VitalsDataset::new(DatasetStage::Vitals1, seed, vitals_records).write_to(&vitals_path)?;
        outputs.push(vitals_path);
    }
    let stats_path = out.join("prep_stats.json");
    std::fs::write(&stats_path, serde_json::to_string_pretty(&stats)?)?;
    outputs.push(stats_path);

    let mut config = BTreeMap::new();
    config.insert("ratios".into(), ratios_s.clone());
    config.insert("seed".into(), seed.to_string());
    config.insert("hr_bounds".into(), format!("{}:{}", bounds.0, bounds.1));
    config.insert("norm_range".into(), format!("{norm_min}:{norm_max}"));
    let mut manifest = RunManifest::new("prep", seed, config);
    manifest.record_input(input);
    for path in &outputs {
        manifest.record_output(path)?;
    }
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;
    println!(
        "prep: {total_in} in, {kept} complete -> {}/{}/{} (train/val/test) in {}",
        stats.train,
        stats.val,
        stats.test,
        out.display()
    );
    Ok(())
}

pub fn run_hook(
    common: &CommonArgs,
    library: &Path,
    pool: &Path,
    out: &Path,
    direction: Option<String>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let seed = resolve_seed(common, &cfg)?;
    let direction_s = cfg.resolve(direction, "direction", "library".to_string())?;
    let direction = match direction_s.as_str() {
        "library" => HookDirection::ForEachLibrary,
        "pool" => HookDirection::ForEachPool,
        other => bail!("--direction must be library or pool, got {other}"),
    };

    let lib_ds = VitalsDataset::read_from(library)?;
    let pool_ds = VitalsDataset::read_from(pool)?;
    let lib_series: Vec<_> = lib_ds
        .records
        .iter()
        .map(|r| domain::VitalsSeries::new(r.kind, r.values.clone(), r.unit.clone()))
        .collect();
    let pool_series: Vec<_> = pool_ds
        .records
        .iter()
        .map(|r| domain::VitalsSeries::new(r.kind, r.values.clone(), r.unit.clone()))
        .collect();

    let pairing =
        hook_directed(&lib_series, &pool_series, direction).map_err(|e| anyhow::anyhow!(e))?;
    let mut file = std::fs::File::create(out)?;
    write_pairing(&mut file, &pairing, seed)?;
    file.flush()?;

    let mut config = BTreeMap::new();
    config.insert("direction".into(), direction_s);
    config.insert("seed".into(), seed.to_string());
    let mut manifest = RunManifest::new("hook", seed, config);
    manifest.record_input(library);
    manifest.record_input(pool);
    manifest.record_output(out)?;
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;
    println!("hook: {} pairs -> {}", pairing.pairs.len(), out.display());
    Ok(())
}

pub fn run_relay_sim(
    common: &CommonArgs,
    script: Option<PathBuf>,
    out: &Path,
    packets: Option<usize>,
    publishers: Option<usize>,
    subscribers: Option<usize>,
    reorder: Option<f64>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let seed = resolve_seed(common, &cfg)?;

    let (script_text, script_origin) = match &script {
        Some(path) => (std::fs::read_to_string(path)?, path.display().to_string()),
        None => {
            let spec = ScenarioSpec {
                publishers: cfg.resolve(publishers, "publishers", 3)?,
                subscribers: cfg.resolve(subscribers, "subscribers", 5)?,
                packets: cfg.resolve(packets, "packets", 10_000)?,
                reorder_fraction: cfg.resolve(reorder, "reorder", 0.2)?,
                seed,
                ..ScenarioSpec::default()
            };
            (generate_script(&spec), "generated".to_string())
        }
    };
    let trace = run_scenario(&script_text, RoomConfig::default())
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    std::fs::write(out, trace.to_text())?;

    let mut config = BTreeMap::new();
    config.insert("script".into(), script_origin);
    config.insert("seed".into(), seed.to_string());
    let mut manifest = RunManifest::new("relay-sim", seed, config);
    if let Some(path) = &script {
        manifest.record_input(path);
    }
    manifest.record_output(out)?;
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;

    let a = trace.counters.audio;
    let v = trace.counters.video;
    println!(
        "relay-sim: {} deliveries, audio {}/{}/{}, video {}/{}/{} (offered/delivered/dropped), digest {}",
        trace.deliveries.len(),
        a.offered,
        a.delivered,
        a.dropped,
        v.offered,
        v.delivered,
        v.dropped,
        trace.digest()
    );
    Ok(())
}

pub fn run_rppg(common: &CommonArgs, input: &Path, out: &Path, rate: Option<f64>) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let seed = resolve_seed(common, &cfg)?;
    let rate = match rate {
        Some(r) => Some(r),
        None => {
            let r = cfg.resolve(None::<f64>, "rate", -1.0)?;
            (r > 0.0).then_some(r)
        }
    };

    let wave = source::load_waveform(input, rate).map_err(|e| anyhow::anyhow!(e))?;
    let spectral = SpectralConfig::default();
    let estimates = hr_series(&wave, &spectral).map_err(|e| anyhow::anyhow!(e))?;

    let mut body = String::new();
    body.push_str(&serde_json::json!({
        "kind": "hr_estimates",
        "rate_hz": wave.rate,
        "window_seconds": spectral.window_seconds,
        "band_hz": [spectral.band.0, spectral.band.1],
    })
    .to_string());
    body.push('\n');
    for (i, est) in estimates.iter().enumerate() {
        let bpm = est.map(|e| (e.bpm * 1000.0).round() / 1000.0);
        body.push_str(&serde_json::json!({"window": i, "bpm": bpm}).to_string());
        body.push('\n');
    }
    std::fs::write(out, body)?;

    let mut config = BTreeMap::new();
    config.insert("rate".into(), wave.rate.to_string());
    config.insert("window_seconds".into(), spectral.window_seconds.to_string());
    let mut manifest = RunManifest::new("rppg", seed, config);
    manifest.record_input(input);
    manifest.record_output(out)?;
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;

    let valid = estimates.iter().flatten().count();
    println!("rppg: {} windows ({valid} with peaks) -> {}", estimates.len(), out.display());
    Ok(())
}

pub fn run_normalize(
    common: &CommonArgs,
    input: &Path,
    out: &Path,
    normalizer: Option<String>,
    threshold: Option<f64>,
    lexicon: Option<PathBuf>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let seed = resolve_seed(common, &cfg)?;
    let normalizer_s = cfg.resolve(normalizer, "normalizer", "lexicon".to_string())?;
    let threshold = cfg.resolve(threshold, "threshold", DEFAULT_THRESHOLD)?;

    let engine: Box<dyn Normalizer> = if normalizer_s == "lexicon" {
        let lex = match &lexicon {
            Some(path) => Lexicon::from_file(path).map_err(|e| anyhow::anyhow!(e))?,
            None => Lexicon::bundled(),
        };
        Box::new(LexiconNormalizer { lexicon: lex, threshold })
    } else if let Some(command) = normalizer_s.strip_prefix("external:") {
        Box::new(ExternalNormalizer { command: command.to_string() })
    } else {
        bail!("--normalizer must be lexicon or external:<cmd>, got {normalizer_s}");
    };

    let dataset = TextDataset::read_from(input)?;
    let mut out_records = Vec::with_capacity(dataset.records.len());
    for record in &dataset.records {
        let transcript = Transcript::new(record.text.clone(), dataset.header.stage)
            .map_err(|e| anyhow::anyhow!("record {}: {e}", record.key))?;
        let sentence = engine.normalize(&transcript).map_err(|e| anyhow::anyhow!(e))?;
        out_records.push(TextRecord { key: record.key.clone(), text: sentence });
    }
    TextDataset::new(DatasetStage::Text7, seed, out_records).write_to(out)?;

    let mut config = BTreeMap::new();
    config.insert("normalizer".into(), normalizer_s);
    config.insert("threshold".into(), threshold.to_string());
    if let Some(path) = &lexicon {
        config.insert("lexicon".into(), path.display().to_string());
    }
    let mut manifest = RunManifest::new("normalize", seed, config);
    manifest.record_input(input);
    manifest.record_output(out)?;
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;
    println!("normalize: {} transcripts -> {}", dataset.records.len(), out.display());
    Ok(())
}
