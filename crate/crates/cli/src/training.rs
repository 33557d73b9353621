//! Model training and evaluation: loading prepared splits into samples,
//! the train/eval subcommands, and the per-task metric computation shared
//! with the end-to-end chain.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use prearrival_core::domain::dataset::IncidentDataset;
use prearrival_core::domain::{DatasetStage, IncidentRecord};
use prearrival_core::metrics::{self, CellKey, MetricReport};
use prearrival_core::prenet::{
    checkpoint, forward_sample, predict_procedures, rank_classes, run_training, ModalityMode,
    PreNetConfig, PreNetModel, Sample, Task, TaskMode, TaskOutputs, TrainOptions,
};

use crate::cfgfile::ConfigFile;
use crate::manifest::RunManifest;
use crate::ops::{resolve_seed, PrepStats};
use crate::CommonArgs;

/// Base learning rate named by the training recipe, and the scale that
/// adapts it to plain gradient descent on this desk-scale model. The
/// product stays under the regression head's stability threshold
/// (1 / ||F_C||^2 with saturated features).
pub const BASE_LR: f64 = 5e-5;
pub const LR_SCALE: f64 = 1e3;

pub fn default_lr() -> f64 {
    BASE_LR * LR_SCALE
}

pub struct PreparedData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: PrepStats,
    pub config: PreNetConfig,
}

pub fn load_prep_stats(data_dir: &Path) -> Result<PrepStats> {
    let path = data_dir.join("prep_stats.json");
    let body = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&body)?)
}

fn records_to_samples(records: &[IncidentRecord], stats: &PrepStats) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            prearrival_core::datagen::record_to_sample(
                r,
                stats.hr_bounds,
                (stats.norm_min, stats.norm_max),
                stats.quantity_max,
            )
            .map_err(|e| anyhow::anyhow!(e))
        })
        .collect()
}

/// Loads the three incident splits, converts them to samples with the
/// frozen normalization constants, and sizes the label vocabularies from
/// the data.
pub fn load_prepared(data_dir: &Path) -> Result<PreparedData> {
    let stats = load_prep_stats(data_dir)?;
    let mut splits = Vec::new();
    for name in ["train", "val", "test"] {
        let path = data_dir.join(format!("incidents_{name}.jsonl"));
        let ds = IncidentDataset::read_expecting(&path, DatasetStage::Text0)?;
        splits.push(ds.records);
    }
    let all: Vec<&IncidentRecord> = splits.iter().flatten().collect();
    let max_of = |f: &dyn Fn(&IncidentRecord) -> u32| -> usize {
        all.iter().map(|r| f(r) as usize).max().unwrap_or(0) + 1
    };
    let config = PreNetConfig {
        k_protocol: max_of(&|r| r.protocol.unwrap_or(0)).max(2),
        k_med_type: max_of(&|r| r.med_type.unwrap_or(0)).max(2),
        k_procedure: all
            .iter()
            .flat_map(|r| r.procedures.iter().map(|&p| p as usize + 1))
            .max()
            .unwrap_or(2)
            .max(2),
        ..PreNetConfig::default()
    };
    let test = records_to_samples(&splits.pop().unwrap(), &stats)?;
    let val = records_to_samples(&splits.pop().unwrap(), &stats)?;
    let train = records_to_samples(&splits.pop().unwrap(), &stats)?;
    Ok(PreparedData { train, val, test, stats, config })
}

pub fn parse_task_mode(spec: &str) -> Result<TaskMode> {
    if spec == "multi" {
        return Ok(TaskMode::Multi);
    }
    if let Some(task) = spec.strip_prefix("single:") {
        return Task::parse(task)
            .map(TaskMode::Single)
            .ok_or_else(|| anyhow::anyhow!("unknown task {task}"));
    }
    bail!("--mode must be multi or single:<task>, got {spec}")
}

pub fn parse_modality(spec: &str) -> Result<ModalityMode> {
    match spec {
        "fused" => Ok(ModalityMode::Fused),
        "text" => Ok(ModalityMode::TextOnly),
        "vitals" => Ok(ModalityMode::VitalsOnly),
        other => bail!("--modality must be fused, text, or vitals, got {other}"),
    }
}

pub fn run_train(
    common: &CommonArgs,
    data_dir: &Path,
    out: &Path,
    mode: Option<String>,
    modality: Option<String>,
    steps: Option<usize>,
    lr: Option<f64>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let seed = resolve_seed(common, &cfg)?;
    let mode_s = cfg.resolve(mode, "mode", "multi".to_string())?;
    let modality_s = cfg.resolve(modality, "modality", "fused".to_string())?;
    let steps = cfg.resolve(steps, "steps", 500)?;
    let lr = cfg.resolve(lr, "lr", default_lr())?;
    let mode = parse_task_mode(&mode_s)?;
    let modality = parse_modality(&modality_s)?;

    let data = load_prepared(data_dir)?;
    let mut model = PreNetModel::new(data.config, modality, seed);
    let losses = run_training(
        &mut model,
        &data.train,
        &TrainOptions { lr, steps, batch_size: 32, mode, seed },
    )
    .map_err(|e| anyhow::anyhow!(e))?;
    checkpoint::save_model(&model, out).map_err(|e| anyhow::anyhow!(e))?;

    let mut config = BTreeMap::new();
    config.insert("mode".into(), mode_s);
    config.insert("modality".into(), modality_s);
    config.insert("steps".into(), steps.to_string());
    config.insert("lr".into(), lr.to_string());
    config.insert("seed".into(), seed.to_string());
    let mut manifest = RunManifest::new("train", seed, config);
    manifest.record_input(data_dir);
    manifest.record_output(out)?;
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;
    println!(
        "train: {} steps, final loss {:.4} -> {}",
        steps,
        losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// Per-sample outputs for one task's model, evaluated over a sample list.
fn collect_outputs(model: &PreNetModel, samples: &[Sample]) -> Result<Vec<TaskOutputs>> {
    samples.iter().map(|s| forward_sample(model, s).map_err(|e| anyhow::anyhow!(e))).collect()
}

/// Fills one report cell from per-task model outputs. `models` maps each
/// task to the model serving it (the same model four times in multi-task
/// mode). Quantity predictions and labels are rescaled by
/// `quantity_scale` so the MSE is reported in dose units.
pub fn evaluate_cell(
    report: &mut MetricReport,
    cell: &CellKey,
    models: &BTreeMap<Task, &PreNetModel>,
    samples: &[Sample],
    quantity_scale: f64,
) -> Result<()> {
    if samples.is_empty() {
        bail!("evaluation set is empty");
    }
    for (&task, &model) in models {
        let outputs = collect_outputs(model, samples)?;
        let entry = report.task_mut(cell, task.as_str());
        match task {
            Task::Protocol | Task::MedType => {
                let (rankings, truths): (Vec<Vec<u32>>, Vec<u32>) = outputs
                    .iter()
                    .zip(samples)
                    .map(|(o, s)| match task {
                        Task::Protocol => {
                            (rank_classes(&o.protocol_probs), s.labels.protocol)
                        }
                        _ => (rank_classes(&o.med_type_probs), s.labels.med_type),
                    })
                    .unzip();
                for k in [1usize, 3, 5] {
                    match metrics::topk_accuracy(&rankings, &truths, k) {
                        Ok(v) => entry.insert(&format!("top{k}"), v),
                        Err(e) => entry.skip(&format!("top{k}"), &e.to_string()),
                    }
                }
                entry.evaluated = samples.len();
            }
            Task::Quantity => {
                let preds: Vec<f64> =
                    outputs.iter().map(|o| o.quantity * quantity_scale).collect();
                let truths: Vec<f64> =
                    samples.iter().map(|s| s.labels.quantity * quantity_scale).collect();
                match metrics::mse(&preds, &truths) {
                    Ok(v) => entry.insert("mse", v),
                    Err(e) => entry.skip("mse", &e.to_string()),
                }
                match metrics::pearson(&preds, &truths) {
                    Ok(v) => entry.insert("pearson", v),
                    Err(e) => entry.skip("pearson", &e.to_string()),
                }
                match metrics::spearman(&preds, &truths) {
                    Ok(v) => entry.insert("spearman", v),
                    Err(e) => entry.skip("spearman", &e.to_string()),
                }
                entry.evaluated = samples.len();
            }
            Task::Procedure => {
                let k_proc = model.config.k_procedure;
                let universe: BTreeSet<u32> = (0..k_proc as u32).collect();
                let preds: Vec<BTreeSet<u32>> =
                    outputs.iter().map(predict_procedures).collect();
                let truths: Vec<BTreeSet<u32>> =
                    samples.iter().map(|s| s.labels.procedures.clone()).collect();
                match metrics::f1_scores(&truths, &preds, &universe) {
                    Ok((micro, macro_f1)) => {
                        entry.insert("f1_micro", micro);
                        entry.insert("f1_macro", macro_f1);
                    }
                    Err(e) => {
                        entry.skip("f1_micro", &e.to_string());
                        entry.skip("f1_macro", &e.to_string());
                    }
                }
                entry.evaluated = samples.len();
            }
        }
    }
    Ok(())
}

pub fn all_tasks() -> [Task; 4] {
    [Task::Protocol, Task::MedType, Task::Quantity, Task::Procedure]
}

pub fn run_eval(common: &CommonArgs, model_path: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigFile::load(common.config.as_deref())?;
    let seed = resolve_seed(common, &cfg)?;

    let model = checkpoint::load_model(model_path).map_err(|e| anyhow::anyhow!(e))?;
    let data = load_prepared(data_dir)?;
    if model.config != data.config {
        bail!(
            "model dimensions {:?} do not match prepared data {:?}",
            model.config,
            data.config
        );
    }

    let mut report = MetricReport::default();
    report.config.insert("seed".into(), seed.to_string());
    report.config.insert("modality".into(), model.modality.as_str().into());
    report.config.insert("k_values".into(), "1,3,5".into());
    let cell = CellKey::new("none", "clean", "checkpoint");
    let models: BTreeMap<Task, &PreNetModel> =
        all_tasks().iter().map(|&t| (t, &model)).collect();
    evaluate_cell(&mut report, &cell, &models, &data.test, data.stats.quantity_max)?;
    report.validate().map_err(|e| anyhow::anyhow!(e))?;
    std::fs::write(out, report.to_json())?;

    let mut config = BTreeMap::new();
    config.insert("model".into(), model_path.display().to_string());
    config.insert("seed".into(), seed.to_string());
    let mut manifest = RunManifest::new("eval", seed, config);
    manifest.record_input(model_path);
    manifest.record_input(data_dir);
    manifest.record_output(out)?;
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    manifest.write_beside(out)?;
    println!("eval: report digest {} -> {}", report.digest(), out.display());
    Ok(())
}
