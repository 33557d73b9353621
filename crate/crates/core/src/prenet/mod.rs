//! Multimodal multitask inference network: a hash-embedding text encoder
//! and a from-scratch gated-recurrent vitals encoder feed a concatenated
//! joint embedding into four task heads (protocol, medication type,
//! medication quantity, procedures). Training is exact-gradient
//! backpropagation; any weight matrix can carry a low-rank adapter.

pub mod checkpoint;
pub mod lora;
pub mod math;
pub mod train;

#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use math::{sigmoid, softmax, Matrix};

pub use lora::LoraAdapter;
pub use train::{compute_gradients, run_training, train_step, Gradients, TrainOptions};

#[derive(Debug, Error, PartialEq)]
pub enum PrenetError {
    #[error("vitals series is empty")]
    EmptySeries,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: usize, got: usize },
    #[error("label {label} out of range for {task} ({classes} classes)")]
    LabelError { task: &'static str, label: u32, classes: usize },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("rank {rank} invalid for a {rows}x{cols} layer")]
    RankError { rank: usize, rows: usize, cols: usize },
    #[error("k={k} exceeds {classes} classes")]
    RangeError { k: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Model dimensions. The class counts come from the dataset's label
/// vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreNetConfig {
    pub d_text: usize,
    pub d_vitals: usize,
    pub vocab_buckets: usize,
    pub k_protocol: usize,
    pub k_med_type: usize,
    pub k_procedure: usize,
}

impl Default for PreNetConfig {
    fn default() -> Self {
        Self {
            d_text: 64,
            d_vitals: 32,
            vocab_buckets: 4096,
            k_protocol: 8,
            k_med_type: 6,
            k_procedure: 5,
        }
    }
}

impl PreNetConfig {
    pub fn d_joint(&self) -> usize {
        self.d_text + self.d_vitals
    }
}

/// Which input modalities drive the joint embedding; the absent feature
/// slot is zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalityMode {
    Fused,
    TextOnly,
    VitalsOnly,
}

impl ModalityMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModalityMode::Fused => "fused",
            ModalityMode::TextOnly => "text-only",
            ModalityMode::VitalsOnly => "vitals-only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    Protocol,
    MedType,
    Quantity,
    Procedure,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Protocol => "protocol",
            Task::MedType => "med_type",
            Task::Quantity => "quantity",
            Task::Procedure => "procedure",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "protocol" => Some(Task::Protocol),
            "med_type" | "medtype" => Some(Task::MedType),
            "quantity" => Some(Task::Quantity),
            "procedure" => Some(Task::Procedure),
            _ => None,
        }
    }
}

/// Multi-task trains all four heads with unit weights; single-task keeps
/// exactly one loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    Multi,
    Single(Task),
}

/// Identifies an adaptable weight matrix. Ordering is stable and doubles
/// as the checkpoint layer id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LayerId {
    Embed,
    GruUpdateInput,
    GruUpdateHidden,
    GruResetInput,
    GruResetHidden,
    GruCandInput,
    GruCandHidden,
    HeadProtocol,
    HeadMedType,
    HeadQuantity,
    HeadProcedure,
}

impl LayerId {
    pub const ALL: [LayerId; 11] = [
        LayerId::Embed,
        LayerId::GruUpdateInput,
        LayerId::GruUpdateHidden,
        LayerId::GruResetInput,
        LayerId::GruResetHidden,
        LayerId::GruCandInput,
        LayerId::GruCandHidden,
        LayerId::HeadProtocol,
        LayerId::HeadMedType,
        LayerId::HeadQuantity,
        LayerId::HeadProcedure,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LayerId::Embed => "embed",
            LayerId::GruUpdateInput => "gru.w_update",
            LayerId::GruUpdateHidden => "gru.u_update",
            LayerId::GruResetInput => "gru.w_reset",
            LayerId::GruResetHidden => "gru.u_reset",
            LayerId::GruCandInput => "gru.w_cand",
            LayerId::GruCandHidden => "gru.u_cand",
            LayerId::HeadProtocol => "head_protocol.weight",
            LayerId::HeadMedType => "head_med_type.weight",
            LayerId::HeadQuantity => "head_quantity.weight",
            LayerId::HeadProcedure => "head_procedure.weight",
        }
    }

    pub fn code(&self) -> u8 {
        LayerId::ALL.iter().position(|l| l == self).expect("listed") as u8
    }

    pub fn from_code(code: u8) -> Option<LayerId> {
        LayerId::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(outputs: usize, inputs: usize) -> Self {
        Self { weight: Matrix::zeros(outputs, inputs), bias: vec![0.0; outputs] }
    }
}

/// Gated recurrent cell parameters; input is the scalar vitals sample per
/// step, so the input matrices have one column.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_update: Matrix,
    pub u_update: Matrix,
    pub b_update: Vec<f64>,
    pub w_reset: Matrix,
    pub u_reset: Matrix,
    pub b_reset: Vec<f64>,
    pub w_cand: Matrix,
    pub u_cand: Matrix,
    pub b_cand: Vec<f64>,
}

/// The full model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreNetModel {
    pub config: PreNetConfig,
    pub modality: ModalityMode,
    /// Hash-bucket embedding table, vocab_buckets x d_text.
    pub embed: Matrix,
    pub embed_bias: Vec<f64>,
    pub gru: GruParams,
    pub head_protocol: Linear,
    pub head_med_type: Linear,
    pub head_quantity: Linear,
    pub head_procedure: Linear,
    pub adapters: BTreeMap<LayerId, LoraAdapter>,
}

impl PreNetModel {
    /// Seeded initialization: embeddings and recurrent weights from small
    /// normal draws, heads at zero (uniform softmax out of the box).
    pub fn new(config: PreNetConfig, modality: ModalityMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "prenet-init"));
        let dv = config.d_vitals;
        // Box-Muller keeps initialization free of distribution-crate
        // version drift.
        let mut normal = |scale: f64| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * scale
        };
        let embed = Matrix::from_fn(config.vocab_buckets, config.d_text, |_, _| normal(0.2));
        let gru_scale = 1.0 / (dv as f64).sqrt();
        let mut gru_mat = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| normal(gru_scale))
        };
        let gru = GruParams {
            w_update: gru_mat(dv, 1),
            u_update: gru_mat(dv, dv),
            b_update: vec![0.0; dv],
            w_reset: gru_mat(dv, 1),
            u_reset: gru_mat(dv, dv),
            b_reset: vec![0.0; dv],
            w_cand: gru_mat(dv, 1),
            u_cand: gru_mat(dv, dv),
            b_cand: vec![0.0; dv],
        };
        let dc = config.d_joint();
        Self {
            config,
            modality,
            embed,
            embed_bias: vec![0.0; config.d_text],
            gru,
            head_protocol: Linear::zeros(config.k_protocol, dc),
            head_med_type: Linear::zeros(config.k_med_type, dc),
            head_quantity: Linear::zeros(1, dc),
            head_procedure: Linear::zeros(config.k_procedure, dc),
            adapters: BTreeMap::new(),
        }
    }

    /// All-zero parameters; useful for contract tests.
    pub fn zeroed(config: PreNetConfig, modality: ModalityMode) -> Self {
        let dv = config.d_vitals;
        let dc = config.d_joint();
        Self {
            config,
            modality,
            embed: Matrix::zeros(config.vocab_buckets, config.d_text),
            embed_bias: vec![0.0; config.d_text],
            gru: GruParams {
                w_update: Matrix::zeros(dv, 1),
                u_update: Matrix::zeros(dv, dv),
                b_update: vec![0.0; dv],
                w_reset: Matrix::zeros(dv, 1),
                u_reset: Matrix::zeros(dv, dv),
                b_reset: vec![0.0; dv],
                w_cand: Matrix::zeros(dv, 1),
                u_cand: Matrix::zeros(dv, dv),
                b_cand: vec![0.0; dv],
            },
            head_protocol: Linear::zeros(config.k_protocol, dc),
            head_med_type: Linear::zeros(config.k_med_type, dc),
            head_quantity: Linear::zeros(1, dc),
            head_procedure: Linear::zeros(config.k_procedure, dc),
            adapters: BTreeMap::new(),
        }
    }

    pub fn base_matrix(&self, id: LayerId) -> &Matrix {
        match id {
            LayerId::Embed => &self.embed,
            LayerId::GruUpdateInput => &self.gru.w_update,
            LayerId::GruUpdateHidden => &self.gru.u_update,
            LayerId::GruResetInput => &self.gru.w_reset,
            LayerId::GruResetHidden => &self.gru.u_reset,
            LayerId::GruCandInput => &self.gru.w_cand,
            LayerId::GruCandHidden => &self.gru.u_cand,
            LayerId::HeadProtocol => &self.head_protocol.weight,
            LayerId::HeadMedType => &self.head_med_type.weight,
            LayerId::HeadQuantity => &self.head_quantity.weight,
            LayerId::HeadProcedure => &self.head_procedure.weight,
        }
    }

    pub fn base_matrix_mut(&mut self, id: LayerId) -> &mut Matrix {
        match id {
            LayerId::Embed => &mut self.embed,
            LayerId::GruUpdateInput => &mut self.gru.w_update,
            LayerId::GruUpdateHidden => &mut self.gru.u_update,
            LayerId::GruResetInput => &mut self.gru.w_reset,
            LayerId::GruResetHidden => &mut self.gru.u_reset,
            LayerId::GruCandInput => &mut self.gru.w_cand,
            LayerId::GruCandHidden => &mut self.gru.u_cand,
            LayerId::HeadProtocol => &mut self.head_protocol.weight,
            LayerId::HeadMedType => &mut self.head_med_type.weight,
            LayerId::HeadQuantity => &mut self.head_quantity.weight,
            LayerId::HeadProcedure => &mut self.head_procedure.weight,
        }
    }

    /// Effective weight of a layer: W0 + B*A when an adapter is attached,
    /// the base otherwise.
    pub fn effective_matrix(&self, id: LayerId) -> std::borrow::Cow<'_, Matrix> {
        match self.adapters.get(&id) {
            None => std::borrow::Cow::Borrowed(self.base_matrix(id)),
            Some(adapter) => {
                let mut w = self.base_matrix(id).clone();
                w.scaled_add(&adapter.b.matmul(&adapter.a), 1.0);
                std::borrow::Cow::Owned(w)
            }
        }
    }

    /// Effective embedding row for a bucket without materializing the full
    /// adapted table.
    pub fn embed_row(&self, bucket: usize) -> Vec<f64> {
        let mut row = self.embed.row(bucket).to_vec();
        if let Some(adapter) = self.adapters.get(&LayerId::Embed) {
            let low = adapter.a.matvec_transpose(adapter.b.row(bucket));
            math::add_assign(&mut row, &low);
        }
        row
    }
}

/// Text feature F_T.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeature(pub Vec<f64>);

/// Vitals feature F_V.
#[derive(Debug, Clone, PartialEq)]
pub struct VitalsFeature(pub Vec<f64>);

/// Joint embedding F_C = [F_T, F_V] with presence flags for the
/// zero-filled slots.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbedding {
    pub vector: Vec<f64>,
    pub text_present: bool,
    pub vitals_present: bool,
}

/// Deterministic token-to-bucket hash (FNV-1a 64).
pub fn token_bucket(token: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    (h % buckets as u64) as usize
}

/// F_T = tanh(mean of bucket embeddings + bias); an empty token list
/// yields tanh(bias).
pub fn encode_text(tokens: &[String], model: &PreNetModel) -> TextFeature {
    let mut acc = model.embed_bias.clone();
    if !tokens.is_empty() {
        let inv = 1.0 / tokens.len() as f64;
        for token in tokens {
            let row = model.embed_row(token_bucket(token, model.config.vocab_buckets));
            for (slot, v) in acc.iter_mut().zip(&row) {
                *slot += v * inv;
            }
        }
    }
    TextFeature(acc.into_iter().map(f64::tanh).collect())
}

/// One gated recurrent step over the scalar sample series starting from a
/// zero hidden state; F_V is the final hidden state.
pub fn encode_vitals(values: &[f64], model: &PreNetModel) -> Result<VitalsFeature, PrenetError> {
    if values.is_empty() {
        return Err(PrenetError::EmptySeries);
    }
    let trace = train::gru_forward(values, model);
    Ok(VitalsFeature(trace.hidden.last().expect("non-empty series").clone()))
}

/// Exact concatenation, text first; absent features are zero-filled and
/// flagged.
pub fn fuse(
    text: Option<&TextFeature>,
    vitals: Option<&VitalsFeature>,
    config: &PreNetConfig,
) -> JointEmbedding {
    let mut vector = Vec::with_capacity(config.d_joint());
    match text {
        Some(t) => vector.extend_from_slice(&t.0),
        None => vector.extend(std::iter::repeat(0.0).take(config.d_text)),
    }
    match vitals {
        Some(v) => vector.extend_from_slice(&v.0),
        None => vector.extend(std::iter::repeat(0.0).take(config.d_vitals)),
    }
    JointEmbedding { vector, text_present: text.is_some(), vitals_present: vitals.is_some() }
}

/// Per-head outputs: probability simplexes for the classification heads,
/// an unbounded scalar for quantity, and per-label probabilities for the
/// procedure head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutputs {
    pub protocol_probs: Vec<f64>,
    pub med_type_probs: Vec<f64>,
    pub quantity: f64,
    pub procedure_probs: Vec<f64>,
}

/// Runs the four heads over a joint embedding.
pub fn forward(fc: &JointEmbedding, model: &PreNetModel) -> Result<TaskOutputs, PrenetError> {
    let dc = model.config.d_joint();
    if fc.vector.len() != dc {
        return Err(PrenetError::ShapeError { expected: dc, got: fc.vector.len() });
    }
    let head = |id: LayerId, linear: &Linear| -> Vec<f64> {
        let mut logits = model.effective_matrix(id).matvec(&fc.vector);
        math::add_assign(&mut logits, &linear.bias);
        logits
    };
    let protocol_logits = head(LayerId::HeadProtocol, &model.head_protocol);
    let med_logits = head(LayerId::HeadMedType, &model.head_med_type);
    let qty = head(LayerId::HeadQuantity, &model.head_quantity)[0];
    let proc_logits = head(LayerId::HeadProcedure, &model.head_procedure);
    Ok(TaskOutputs {
        protocol_probs: softmax(&protocol_logits),
        med_type_probs: softmax(&med_logits),
        quantity: qty,
        procedure_probs: proc_logits.into_iter().map(sigmoid).collect(),
    })
}

/// Ground-truth labels for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLabels {
    pub protocol: u32,
    pub med_type: u32,
    pub quantity: f64,
    pub procedures: BTreeSet<u32>,
}

/// One training/evaluation sample. `vitals` may be empty in text-only
/// mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<String>,
    pub vitals: Vec<f64>,
    pub labels: TaskLabels,
}

pub(crate) fn check_labels(labels: &TaskLabels, config: &PreNetConfig) -> Result<(), PrenetError> {
    if labels.protocol as usize >= config.k_protocol {
        return Err(PrenetError::LabelError {
            task: "protocol",
            label: labels.protocol,
            classes: config.k_protocol,
        });
    }
    if labels.med_type as usize >= config.k_med_type {
        return Err(PrenetError::LabelError {
            task: "med_type",
            label: labels.med_type,
            classes: config.k_med_type,
        });
    }
    if let Some(&bad) =
        labels.procedures.iter().find(|&&p| p as usize >= config.k_procedure)
    {
        return Err(PrenetError::LabelError {
            task: "procedure",
            label: bad,
            classes: config.k_procedure,
        });
    }
    Ok(())
}

const LOG_FLOOR: f64 = 1e-300;

/// Unit-weight loss: cross-entropy on both classification heads, squared
/// error on quantity, mean binary cross-entropy on procedures. Single-task
/// mode keeps exactly one term.
pub fn loss(
    outputs: &TaskOutputs,
    labels: &TaskLabels,
    config: &PreNetConfig,
    mode: TaskMode,
) -> Result<f64, PrenetError> {
    check_labels(labels, config)?;
    let ce_protocol =
        || -outputs.protocol_probs[labels.protocol as usize].max(LOG_FLOOR).ln();
    let ce_med = || -outputs.med_type_probs[labels.med_type as usize].max(LOG_FLOOR).ln();
    let mse_qty = || (outputs.quantity - labels.quantity).powi(2);
    let bce_proc = || {
        let k = config.k_procedure as f64;
        outputs
            .procedure_probs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let y = f64::from(labels.procedures.contains(&(i as u32)));
                -(y * p.max(LOG_FLOOR).ln() + (1.0 - y) * (1.0 - p).max(LOG_FLOOR).ln())
            })
            .sum::<f64>()
            / k
    };
    let value = match mode {
        TaskMode::Multi => ce_protocol() + ce_med() + mse_qty() + bce_proc(),
        TaskMode::Single(Task::Protocol) => ce_protocol(),
        TaskMode::Single(Task::MedType) => ce_med(),
        TaskMode::Single(Task::Quantity) => mse_qty(),
        TaskMode::Single(Task::Procedure) => bce_proc(),
    };
    if !value.is_finite() {
        return Err(PrenetError::NonFiniteLoss);
    }
    Ok(value)
}

/// Full forward pass for one sample under the model's modality mode.
pub fn forward_sample(model: &PreNetModel, sample: &Sample) -> Result<TaskOutputs, PrenetError> {
    let text = match model.modality {
        ModalityMode::VitalsOnly => None,
        _ => Some(encode_text(&sample.tokens, model)),
    };
    let vitals = match model.modality {
        ModalityMode::TextOnly => None,
        _ => Some(encode_vitals(&sample.vitals, model)?),
    };
    let fc = fuse(text.as_ref(), vitals.as_ref(), &model.config);
    forward(&fc, model)
}

/// All classes ranked by descending probability, ties by smaller index.
pub fn rank_classes(probs: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..probs.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        probs[b as usize]
            .partial_cmp(&probs[a as usize])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    idx
}

/// Ranked class lists per classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct TopkPredictions {
    pub protocol: Vec<u32>,
    pub med_type: Vec<u32>,
}

/// Indices of the k most probable classes per classification head.
pub fn predict_topk(outputs: &TaskOutputs, k: usize) -> Result<TopkPredictions, PrenetError> {
    if k == 0 || k > outputs.protocol_probs.len() {
        return Err(PrenetError::RangeError { k, classes: outputs.protocol_probs.len() });
    }
    if k > outputs.med_type_probs.len() {
        return Err(PrenetError::RangeError { k, classes: outputs.med_type_probs.len() });
    }
    let mut protocol = rank_classes(&outputs.protocol_probs);
    protocol.truncate(k);
    let mut med_type = rank_classes(&outputs.med_type_probs);
    med_type.truncate(k);
    Ok(TopkPredictions { protocol, med_type })
}

/// Procedure set prediction at the 0.5 threshold.
pub fn predict_procedures(outputs: &TaskOutputs) -> BTreeSet<u32> {
    outputs
        .procedure_probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= 0.5)
        .map(|(i, _)| i as u32)
        .collect()
}
