//! The end-to-end chain: generate incidents, prepare splits, hook the
//! waveform library onto the test pool, estimate heart rates from the
//! library waveforms, synthesize and corrupt conversations, normalize
//! them, train the inference models, and evaluate the full
//! {normalizer} x {noise} x {task mode} grid into one report.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use prearrival_core::datagen::{gen_incidents, gen_library_pool, GenConfig, LabelStructure};
use prearrival_core::derive_seed;
use prearrival_core::domain::dataset::{IncidentDataset, TextDataset, TextRecord};
use prearrival_core::domain::{
    self, DatasetStage, IncidentRecord, SplitSpec, VitalKind, DEFAULT_HR_BOUNDS,
};
use prearrival_core::hooking::{self, KeyedSeries};
use prearrival_core::metrics::{self, CellKey, MetricReport};
use prearrival_core::normalizer::{
    conversation_for_symptoms, corrupt_transcript, LexiconNormalizer, NoiseConfig, Normalizer,
};
use prearrival_core::prenet::{
    run_training, ModalityMode, PreNetConfig, PreNetModel, Sample, Task, TaskLabels, TaskMode,
    TrainOptions,
};
use prearrival_core::rppg::{hr_series, SpectralConfig};

use crate::cfgfile::ConfigFile;
use crate::manifest::RunManifest;
use crate::ops::{resolve_seed, PrepStats};
use crate::training::{all_tasks, default_lr, evaluate_cell};
use crate::CommonArgs;

pub struct E2eParams {
    pub seed: u64,
    pub records: usize,
    pub steps: usize,
}

impl Default for E2eParams {
    fn default() -> Self {
        Self { seed: 0, records: 600, steps: 400 }
    }
}

pub struct E2eOutcome {
    pub report: MetricReport,
    pub digest: String,
}

pub fn run_e2e_command(
    common: &CommonArgs,
    out: &Path,
    records: Option<usize>,
    steps: Option<usize>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let params = E2eParams {
        seed: resolve_seed(common, &cfg)?,
        records: cfg.resolve(records, "records", 600)?,
        steps: cfg.resolve(steps, "steps", 400)?,
    };
    let outcome = run_e2e(&params, out)?;

    let mut config = BTreeMap::new();
    config.insert("seed".into(), params.seed.to_string());
    config.insert("records".into(), params.records.to_string());
    config.insert("steps".into(), params.steps.to_string());
    let mut manifest = RunManifest::new("e2e", params.seed, config);
    for name in [
        "incidents.jsonl",
        "pairing.txt",
        "hr_estimates.jsonl",
        "conversations_clean.jsonl",
        "conversations_noisy.jsonl",
        "text7_clean.jsonl",
        "text7_noisy.jsonl",
        "report.json",
    ] {
        manifest.record_output(&out.join(name))?;
    }
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;
    println!("e2e: report digest {}", outcome.digest);
    Ok(())
}

pub fn run_e2e(params: &E2eParams, out: &Path) -> Result<E2eOutcome> {
    std::fs::create_dir_all(out)?;
    let seed = params.seed;

    // ---- generation ----
    let gen = GenConfig {
        seed,
        n_records: params.records,
        k_protocol: 12,
        k_med_type: 6,
        k_procedure: 5,
        coupling: 0.9,
        label_structure: LabelStructure::Split { text_classes: 4, vitals_classes: 3 },
        incomplete_fraction: 0.05,
        snr_db: None,
    };
    let incidents = gen_incidents(&gen).map_err(|e| anyhow::anyhow!(e))?;
    IncidentDataset::new(DatasetStage::Text0, seed, incidents.clone())
        .write_to(&out.join("incidents.jsonl"))?;

    // ---- preparation ----
    let complete = domain::filter_complete(incidents);
    let spec = SplitSpec { ratios: [3, 1, 1], seed: derive_seed(seed, "split") };
    let (train_records, _val_records, test_records) =
        domain::split_dataset(complete, &spec).map_err(|e| anyhow::anyhow!(e))?;

    let bounds = DEFAULT_HR_BOUNDS;
    let mut norm_min = f64::INFINITY;
    let mut norm_max = f64::NEG_INFINITY;
    let mut quantity_max = 0.0f64;
    for r in &train_records {
        if let Some(series) = r.vitals.get(&VitalKind::HR) {
            for &v in &series.values {
                if v >= bounds.0 && v <= bounds.1 {
                    norm_min = norm_min.min(v);
                    norm_max = norm_max.max(v);
                }
            }
        }
        if let Some(q) = r.med_quantity {
            quantity_max = quantity_max.max(q);
        }
    }
    if !(norm_min < norm_max) {
        bail!("degenerate training split");
    }
    let quantity_max = quantity_max.max(1e-9);
    let stats = PrepStats {
        hr_bounds: bounds,
        norm_min,
        norm_max,
        quantity_max,
        train: train_records.len(),
        val: _val_records.len(),
        test: test_records.len(),
    };

    // ---- hooking: library vs the test-split pool ----
    let library = gen_library_pool(&gen).map_err(|e| anyhow::anyhow!(e))?.library;
    let pool: Vec<KeyedSeries> = test_records
        .iter()
        .map(|r| {
            let series = domain::derive_prearrival_vitals(r).map_err(|e| anyhow::anyhow!(e))?;
            Ok(KeyedSeries { key: r.key.clone(), series })
        })
        .collect::<Result<_>>()?;
    let library_series: Vec<_> = library.iter().map(|e| e.true_hr.clone()).collect();
    let pool_series: Vec<_> = pool.iter().map(|e| e.series.clone()).collect();
    let pairing = hooking::hook(&library_series, &pool_series).map_err(|e| anyhow::anyhow!(e))?;
    {
        let mut f = std::fs::File::create(out.join("pairing.txt"))?;
        hooking::write_pairing(&mut f, &pairing, seed)?;
        f.flush()?;
    }
    let text1_by_key: BTreeMap<String, String> = test_records
        .iter()
        .map(|r| (r.key.clone(), domain::derive_prearrival_text(r)))
        .collect();
    let hooked = hooking::build_hooked_sets(&pairing, &library_series, &pool, &text1_by_key)
        .map_err(|e| anyhow::anyhow!(e))?;

    // ---- heart-rate estimation over the library waveforms ----
    let spectral = SpectralConfig::default();
    let mut estimated_bpm: Vec<Vec<f64>> = Vec::with_capacity(library.len());
    let mut hr_lines = String::new();
    for entry in &library {
        let estimates = hr_series(&entry.waveform, &spectral).map_err(|e| anyhow::anyhow!(e))?;
        let bpm: Vec<f64> =
            estimates.iter().flatten().map(|e| (e.bpm * 1000.0).round() / 1000.0).collect();
        if bpm.is_empty() {
            bail!("no spectral peaks for library entry {}", entry.id);
        }
        for (w, est) in estimates.iter().enumerate() {
            let bpm_value = est.map(|e| (e.bpm * 1000.0).round() / 1000.0);
            hr_lines.push_str(
                &serde_json::json!({"key": entry.id, "window": w, "bpm": bpm_value}).to_string(),
            );
            hr_lines.push('\n');
        }
        estimated_bpm.push(bpm);
    }
    std::fs::write(out.join("hr_estimates.jsonl"), hr_lines)?;

    // ---- conversations, corruption, normalization ----
    let test_by_key: BTreeMap<&str, &IncidentRecord> =
        test_records.iter().map(|r| (r.key.as_str(), r)).collect();
    let lexicon_engine = LexiconNormalizer::bundled();

    struct EvalRow {
        truth_sentence: String,
        clean_conversation: String,
        noisy_conversation: String,
        text7_clean: String,
        text7_noisy: String,
        vitals: Vec<f64>,
        labels: TaskLabels,
        key: String,
    }

    let mut rows: Vec<EvalRow> = Vec::with_capacity(pairing.pairs.len());
    for (i, pair) in pairing.pairs.iter().enumerate() {
        let key = &pool[pair.pool_index].key;
        let incident = test_by_key[key.as_str()];
        let symptoms = incident.primary_symptoms.clone();
        let truth_sentence = hooked.text2[i].1.clone();

        let conversation = conversation_for_symptoms(&symptoms, derive_seed(seed, "conversations"))
            .map_err(|e| anyhow::anyhow!(e))?;
        let noise = NoiseConfig { bias_substrings: symptoms.clone(), ..NoiseConfig::default() };
        let noisy =
            corrupt_transcript(&conversation, &noise, derive_seed(seed, &format!("noise-{key}")));

        let text7_clean =
            lexicon_engine.normalize(&conversation).map_err(|e| anyhow::anyhow!(e))?;
        let text7_noisy = lexicon_engine.normalize(&noisy).map_err(|e| anyhow::anyhow!(e))?;

        let est_series = domain::VitalsSeries::new(VitalKind::HR, estimated_bpm[i].clone(), "bpm");
        let normalized =
            domain::preprocess_vitals(&est_series, bounds, (norm_min, norm_max))
                .map_err(|e| anyhow::anyhow!(e))?;

        rows.push(EvalRow {
            truth_sentence,
            clean_conversation: conversation.text,
            noisy_conversation: noisy.text,
            text7_clean,
            text7_noisy,
            vitals: normalized.values,
            labels: TaskLabels {
                protocol: incident.protocol.context("complete record")?,
                med_type: incident.med_type.context("complete record")?,
                quantity: incident.med_quantity.context("complete record")? / quantity_max,
                procedures: incident.procedures.iter().copied().collect(),
            },
            key: key.clone(),
        });
    }

    // artifact files for the conversation stages
    let write_text_stage = |name: &str, stage: DatasetStage, texts: &dyn Fn(&EvalRow) -> String| -> Result<()> {
        let records: Vec<TextRecord> =
            rows.iter().map(|r| TextRecord { key: r.key.clone(), text: texts(r) }).collect();
        TextDataset::new(stage, seed, records).write_to(&out.join(name))?;
        Ok(())
    };
    write_text_stage("conversations_clean.jsonl", DatasetStage::Text3, &|r| {
        r.clean_conversation.clone()
    })?;
    write_text_stage("conversations_noisy.jsonl", DatasetStage::Text5, &|r| {
        r.noisy_conversation.clone()
    })?;
    write_text_stage("text7_clean.jsonl", DatasetStage::Text7, &|r| r.text7_clean.clone())?;
    write_text_stage("text7_noisy.jsonl", DatasetStage::Text7, &|r| r.text7_noisy.clone())?;

    // ---- training ----
    let train_samples: Vec<Sample> = train_records
        .iter()
        .map(|r| {
            prearrival_core::datagen::record_to_sample(
                r,
                bounds,
                (norm_min, norm_max),
                quantity_max,
            )
            .map_err(|e| anyhow::anyhow!(e))
        })
        .collect::<Result<_>>()?;
    let model_config = PreNetConfig {
        k_protocol: gen.k_protocol,
        k_med_type: gen.k_med_type,
        k_procedure: gen.k_procedure,
        ..PreNetConfig::default()
    };
    let lr = default_lr();
    let train_one = |mode: TaskMode, label: &str| -> Result<PreNetModel> {
        let mut model =
            PreNetModel::new(model_config, ModalityMode::Fused, derive_seed(seed, label));
        run_training(
            &mut model,
            &train_samples,
            &TrainOptions {
                lr,
                steps: params.steps,
                batch_size: 32,
                mode,
                seed: derive_seed(seed, label),
            },
        )
        .map_err(|e| anyhow::anyhow!(e))?;
        Ok(model)
    };
    let multi_model = train_one(TaskMode::Multi, "train-multi")?;
    let mut single_models: BTreeMap<Task, PreNetModel> = BTreeMap::new();
    for task in all_tasks() {
        single_models.insert(
            task,
            train_one(TaskMode::Single(task), &format!("train-single-{}", task.as_str()))?,
        );
    }

    // ---- grid evaluation ----
    let mut report = MetricReport::default();
    report.config.insert("seed".into(), seed.to_string());
    report.config.insert("records".into(), params.records.to_string());
    report.config.insert("steps".into(), params.steps.to_string());
    report.config.insert("lr".into(), lr.to_string());
    report.config.insert("k_values".into(), "1,3,5".into());
    report.config.insert("threshold".into(), lexicon_engine.threshold.to_string());
    report.config.insert("eval_samples".into(), rows.len().to_string());
    report.config.insert("unique_text2".into(), hooked.unique_text2.to_string());
    report
        .config
        .insert("k_classes".into(), format!("{},{},{}", gen.k_protocol, gen.k_med_type, gen.k_procedure));

    for normalizer in ["lexicon", "none"] {
        for noise in ["clean", "noisy"] {
            let text_of = |row: &EvalRow| -> String {
                match (normalizer, noise) {
                    ("lexicon", "clean") => row.text7_clean.clone(),
                    ("lexicon", "noisy") => row.text7_noisy.clone(),
                    ("none", "clean") => row.clean_conversation.clone(),
                    _ => row.noisy_conversation.clone(),
                }
            };
            let samples: Vec<Sample> = rows
                .iter()
                .map(|row| Sample {
                    tokens: prearrival_core::text::tokenize(&text_of(row)),
                    vitals: row.vitals.clone(),
                    labels: row.labels.clone(),
                })
                .collect();

            for mode in ["multi", "single"] {
                let cell = CellKey::new(normalizer, noise, mode);
                let models: BTreeMap<Task, &PreNetModel> = match mode {
                    "multi" => all_tasks().iter().map(|&t| (t, &multi_model)).collect(),
                    _ => single_models.iter().map(|(&t, m)| (t, m)).collect(),
                };
                evaluate_cell(&mut report, &cell, &models, &samples, quantity_max)?;

                // normalization quality alongside the lexicon cells
                if normalizer == "lexicon" {
                    let entry = report.task_mut(&cell, "extraction");
                    let n = rows.len() as f64;
                    let em = rows
                        .iter()
                        .map(|r| f64::from(metrics::exact_match(&r.truth_sentence, &text_of(r))))
                        .sum::<f64>()
                        / n;
                    let cer = rows
                        .iter()
                        .map(|r| metrics::cer(&r.truth_sentence, &text_of(r)))
                        .sum::<f64>()
                        / n;
                    let bleu = rows
                        .iter()
                        .map(|r| metrics::bleu(&r.truth_sentence, &text_of(r), 4))
                        .sum::<f64>()
                        / n;
                    entry.insert("exact_match", em);
                    entry.insert("cer", cer);
                    entry.insert("bleu", bleu);
                    entry.evaluated = rows.len();
                }
            }
        }
    }

    report.validate().map_err(|e| anyhow::anyhow!(e))?;
    std::fs::write(out.join("prep_stats.json"), serde_json::to_string_pretty(&stats)?)?;
    std::fs::write(out.join("report.json"), report.to_json())?;
    let digest = report.digest();
    Ok(E2eOutcome { report, digest })
}
