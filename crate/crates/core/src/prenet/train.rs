//! Exact-gradient backpropagation through both encoders and the active
//! heads, plain gradient-descent updates, and the seeded training loop.
//! With adapters attached, only adapter factors (and head parameters)
//! move; every adapted base matrix stays frozen.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::math::{add_assign, hadamard, sigmoid, softmax, Matrix};
use super::{
    token_bucket, LayerId, Linear, ModalityMode, PreNetModel, PrenetError, Sample, Task,
    TaskMode, TaskOutputs,
};

/// Cached forward pass of the recurrent vitals encoder.
pub(crate) struct GruTrace {
    pub inputs: Vec<f64>,
    /// h_t after each step.
    pub hidden: Vec<Vec<f64>>,
    pub update: Vec<Vec<f64>>,
    pub reset: Vec<Vec<f64>>,
    pub cand: Vec<Vec<f64>>,
}

pub(crate) struct EffectiveGru<'m> {
    pub wz: Cow<'m, Matrix>,
    pub uz: Cow<'m, Matrix>,
    pub wr: Cow<'m, Matrix>,
    pub ur: Cow<'m, Matrix>,
    pub wh: Cow<'m, Matrix>,
    pub uh: Cow<'m, Matrix>,
    pub bz: &'m [f64],
    pub br: &'m [f64],
    pub bh: &'m [f64],
}

impl PreNetModel {
    pub(crate) fn effective_gru(&self) -> EffectiveGru<'_> {
        EffectiveGru {
            wz: self.effective_matrix(LayerId::GruUpdateInput),
            uz: self.effective_matrix(LayerId::GruUpdateHidden),
            wr: self.effective_matrix(LayerId::GruResetInput),
            ur: self.effective_matrix(LayerId::GruResetHidden),
            wh: self.effective_matrix(LayerId::GruCandInput),
            uh: self.effective_matrix(LayerId::GruCandHidden),
            bz: &self.gru.b_update,
            br: &self.gru.b_reset,
            bh: &self.gru.b_cand,
        }
    }
}

pub(crate) fn gru_forward_with(eff: &EffectiveGru, values: &[f64], d_vitals: usize) -> GruTrace {
    let mut trace = GruTrace {
        inputs: values.to_vec(),
        hidden: Vec::with_capacity(values.len()),
        update: Vec::with_capacity(values.len()),
        reset: Vec::with_capacity(values.len()),
        cand: Vec::with_capacity(values.len()),
    };
    let mut h = vec![0.0; d_vitals];
    for &x in values {
        let mut az = eff.uz.matvec(&h);
        let mut ar = eff.ur.matvec(&h);
        for i in 0..d_vitals {
            az[i] += eff.wz.get(i, 0) * x + eff.bz[i];
            ar[i] += eff.wr.get(i, 0) * x + eff.br[i];
        }
        let z: Vec<f64> = az.iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = ar.iter().map(|&v| sigmoid(v)).collect();
        let gated = hadamard(&r, &h);
        let mut ah = eff.uh.matvec(&gated);
        for i in 0..d_vitals {
            ah[i] += eff.wh.get(i, 0) * x + eff.bh[i];
        }
        let hc: Vec<f64> = ah.iter().map(|&v| v.tanh()).collect();
        let mut h_next = vec![0.0; d_vitals];
        for i in 0..d_vitals {
            h_next[i] = (1.0 - z[i]) * h[i] + z[i] * hc[i];
        }
        trace.update.push(z);
        trace.reset.push(r);
        trace.cand.push(hc);
        trace.hidden.push(h_next.clone());
        h = h_next;
    }
    trace
}

pub(crate) fn gru_forward(values: &[f64], model: &PreNetModel) -> GruTrace {
    gru_forward_with(&model.effective_gru(), values, model.config.d_vitals)
}

/// Gradient tensors mirroring the model parameters. Adapted layers carry
/// their gradients in `adapters`; the matching base tensors stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: Matrix,
    pub embed_bias: Vec<f64>,
    pub gru_w_update: Matrix,
    pub gru_u_update: Matrix,
    pub gru_b_update: Vec<f64>,
    pub gru_w_reset: Matrix,
    pub gru_u_reset: Matrix,
    pub gru_b_reset: Vec<f64>,
    pub gru_w_cand: Matrix,
    pub gru_u_cand: Matrix,
    pub gru_b_cand: Vec<f64>,
    pub head_protocol_w: Matrix,
    pub head_protocol_b: Vec<f64>,
    pub head_med_type_w: Matrix,
    pub head_med_type_b: Vec<f64>,
    pub head_quantity_w: Matrix,
    pub head_quantity_b: Vec<f64>,
    pub head_procedure_w: Matrix,
    pub head_procedure_b: Vec<f64>,
    /// LayerId -> (grad A, grad B).
    pub adapters: BTreeMap<LayerId, (Matrix, Matrix)>,
}

impl Gradients {
    pub fn zeros_like(model: &PreNetModel) -> Self {
        let c = &model.config;
        let dv = c.d_vitals;
        let dc = c.d_joint();
        let mut adapters = BTreeMap::new();
        for (&id, adapter) in &model.adapters {
            adapters.insert(
                id,
                (
                    Matrix::zeros(adapter.a.rows, adapter.a.cols),
                    Matrix::zeros(adapter.b.rows, adapter.b.cols),
                ),
            );
        }
        Self {
            embed: Matrix::zeros(c.vocab_buckets, c.d_text),
            embed_bias: vec![0.0; c.d_text],
            gru_w_update: Matrix::zeros(dv, 1),
            gru_u_update: Matrix::zeros(dv, dv),
            gru_b_update: vec![0.0; dv],
            gru_w_reset: Matrix::zeros(dv, 1),
            gru_u_reset: Matrix::zeros(dv, dv),
            gru_b_reset: vec![0.0; dv],
            gru_w_cand: Matrix::zeros(dv, 1),
            gru_u_cand: Matrix::zeros(dv, dv),
            gru_b_cand: vec![0.0; dv],
            head_protocol_w: Matrix::zeros(c.k_protocol, dc),
            head_protocol_b: vec![0.0; c.k_protocol],
            head_med_type_w: Matrix::zeros(c.k_med_type, dc),
            head_med_type_b: vec![0.0; c.k_med_type],
            head_quantity_w: Matrix::zeros(1, dc),
            head_quantity_b: vec![0.0; 1],
            head_procedure_w: Matrix::zeros(c.k_procedure, dc),
            head_procedure_b: vec![0.0; c.k_procedure],
            adapters,
        }
    }

    fn base_matrix_mut(&mut self, id: LayerId) -> &mut Matrix {
        match id {
            LayerId::Embed => &mut self.embed,
            LayerId::GruUpdateInput => &mut self.gru_w_update,
            LayerId::GruUpdateHidden => &mut self.gru_u_update,
            LayerId::GruResetInput => &mut self.gru_w_reset,
            LayerId::GruResetHidden => &mut self.gru_u_reset,
            LayerId::GruCandInput => &mut self.gru_w_cand,
            LayerId::GruCandHidden => &mut self.gru_u_cand,
            LayerId::HeadProtocol => &mut self.head_protocol_w,
            LayerId::HeadMedType => &mut self.head_med_type_w,
            LayerId::HeadQuantity => &mut self.head_quantity_w,
            LayerId::HeadProcedure => &mut self.head_procedure_w,
        }
    }

    /// Flat view of a gradient tensor by its model tensor name.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t: &[f64] = match name {
            "embed" => &self.embed.data,
            "embed_bias" => &self.embed_bias,
            "gru.w_update" => &self.gru_w_update.data,
            "gru.u_update" => &self.gru_u_update.data,
            "gru.b_update" => &self.gru_b_update,
            "gru.w_reset" => &self.gru_w_reset.data,
            "gru.u_reset" => &self.gru_u_reset.data,
            "gru.b_reset" => &self.gru_b_reset,
            "gru.w_cand" => &self.gru_w_cand.data,
            "gru.u_cand" => &self.gru_u_cand.data,
            "gru.b_cand" => &self.gru_b_cand,
            "head_protocol.weight" => &self.head_protocol_w.data,
            "head_protocol.bias" => &self.head_protocol_b,
            "head_med_type.weight" => &self.head_med_type_w.data,
            "head_med_type.bias" => &self.head_med_type_b,
            "head_quantity.weight" => &self.head_quantity_w.data,
            "head_quantity.bias" => &self.head_quantity_b,
            "head_procedure.weight" => &self.head_procedure_w.data,
            "head_procedure.bias" => &self.head_procedure_b,
            other => {
                let rest = other.strip_prefix("adapter.")?;
                let (layer_name, which) = rest.rsplit_once('.')?;
                let id = LayerId::ALL.iter().find(|l| l.as_str() == layer_name)?;
                let (ga, gb) = self.adapters.get(id)?;
                return Some(match which {
                    "a" => &ga.data,
                    "b" => &gb.data,
                    _ => return None,
                });
            }
        };
        Some(t)
    }
}

/// Base tensor names in declaration (checkpoint) order.
pub const BASE_TENSOR_NAMES: [&str; 19] = [
    "embed",
    "embed_bias",
    "gru.w_update",
    "gru.u_update",
    "gru.b_update",
    "gru.w_reset",
    "gru.u_reset",
    "gru.b_reset",
    "gru.w_cand",
    "gru.u_cand",
    "gru.b_cand",
    "head_protocol.weight",
    "head_protocol.bias",
    "head_med_type.weight",
    "head_med_type.bias",
    "head_quantity.weight",
    "head_quantity.bias",
    "head_procedure.weight",
    "head_procedure.bias",
];

impl PreNetModel {
    /// Every trainable tensor name: base tensors, then adapter factors.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = BASE_TENSOR_NAMES.iter().map(|s| s.to_string()).collect();
        for id in self.adapters.keys() {
            names.push(format!("adapter.{}.a", id.as_str()));
            names.push(format!("adapter.{}.b", id.as_str()));
        }
        names
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t: &[f64] = match name {
            "embed" => &self.embed.data,
            "embed_bias" => &self.embed_bias,
            "gru.w_update" => &self.gru.w_update.data,
            "gru.u_update" => &self.gru.u_update.data,
            "gru.b_update" => &self.gru.b_update,
            "gru.w_reset" => &self.gru.w_reset.data,
            "gru.u_reset" => &self.gru.u_reset.data,
            "gru.b_reset" => &self.gru.b_reset,
            "gru.w_cand" => &self.gru.w_cand.data,
            "gru.u_cand" => &self.gru.u_cand.data,
            "gru.b_cand" => &self.gru.b_cand,
            "head_protocol.weight" => &self.head_protocol.weight.data,
            "head_protocol.bias" => &self.head_protocol.bias,
            "head_med_type.weight" => &self.head_med_type.weight.data,
            "head_med_type.bias" => &self.head_med_type.bias,
            "head_quantity.weight" => &self.head_quantity.weight.data,
            "head_quantity.bias" => &self.head_quantity.bias,
            "head_procedure.weight" => &self.head_procedure.weight.data,
            "head_procedure.bias" => &self.head_procedure.bias,
            other => {
                let rest = other.strip_prefix("adapter.")?;
                let (layer_name, which) = rest.rsplit_once('.')?;
                let id = LayerId::ALL.iter().find(|l| l.as_str() == layer_name)?;
                let adapter = self.adapters.get(id)?;
                return Some(match which {
                    "a" => &adapter.a.data,
                    "b" => &adapter.b.data,
                    _ => return None,
                });
            }
        };
        Some(t)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t: &mut [f64] = match name {
            "embed" => &mut self.embed.data,
            "embed_bias" => &mut self.embed_bias,
            "gru.w_update" => &mut self.gru.w_update.data,
            "gru.u_update" => &mut self.gru.u_update.data,
            "gru.b_update" => &mut self.gru.b_update,
            "gru.w_reset" => &mut self.gru.w_reset.data,
            "gru.u_reset" => &mut self.gru.u_reset.data,
            "gru.b_reset" => &mut self.gru.b_reset,
            "gru.w_cand" => &mut self.gru.w_cand.data,
            "gru.u_cand" => &mut self.gru.u_cand.data,
            "gru.b_cand" => &mut self.gru.b_cand,
            "head_protocol.weight" => &mut self.head_protocol.weight.data,
            "head_protocol.bias" => &mut self.head_protocol.bias,
            "head_med_type.weight" => &mut self.head_med_type.weight.data,
            "head_med_type.bias" => &mut self.head_med_type.bias,
            "head_quantity.weight" => &mut self.head_quantity.weight.data,
            "head_quantity.bias" => &mut self.head_quantity.bias,
            "head_procedure.weight" => &mut self.head_procedure.weight.data,
            "head_procedure.bias" => &mut self.head_procedure.bias,
            other => {
                let rest = other.strip_prefix("adapter.")?;
                let (layer_name, which) = rest.rsplit_once('.')?;
                let id = *LayerId::ALL.iter().find(|l| l.as_str() == layer_name)?;
                let adapter = self.adapters.get_mut(&id)?;
                return Some(match which {
                    "a" => &mut adapter.a.data,
                    "b" => &mut adapter.b.data,
                    _ => return None,
                });
            }
        };
        Some(t)
    }
}

struct ActiveHeads {
    protocol: bool,
    med_type: bool,
    quantity: bool,
    procedure: bool,
}

impl ActiveHeads {
    fn for_mode(mode: TaskMode) -> Self {
        match mode {
            TaskMode::Multi => {
                Self { protocol: true, med_type: true, quantity: true, procedure: true }
            }
            TaskMode::Single(t) => Self {
                protocol: t == Task::Protocol,
                med_type: t == Task::MedType,
                quantity: t == Task::Quantity,
                procedure: t == Task::Procedure,
            },
        }
    }
}

/// Mean loss over the batch plus exact gradients for every parameter (or
/// adapter factor) the current configuration trains.
pub fn compute_gradients(
    model: &PreNetModel,
    batch: &[Sample],
    mode: TaskMode,
) -> Result<(f64, Gradients), PrenetError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let config = model.config;
    let dv = config.d_vitals;
    let dt = config.d_text;
    let inv = 1.0 / batch.len() as f64;
    let active = ActiveHeads::for_mode(mode);

    let eff_gru = model.effective_gru();
    let w_protocol = model.effective_matrix(LayerId::HeadProtocol);
    let w_med = model.effective_matrix(LayerId::HeadMedType);
    let w_qty = model.effective_matrix(LayerId::HeadQuantity);
    let w_proc = model.effective_matrix(LayerId::HeadProcedure);

    let mut grads = Gradients::zeros_like(model);
    let mut total_loss = 0.0;

    for sample in batch {
        super::check_labels(&sample.labels, &config)?;

        // ---- forward ----
        let use_text = model.modality != ModalityMode::VitalsOnly;
        let use_vitals = model.modality != ModalityMode::TextOnly;

        let mut buckets: Vec<usize> = Vec::new();
        let mut ft = vec![0.0; dt];
        if use_text {
            let mut acc = model.embed_bias.clone();
            if !sample.tokens.is_empty() {
                let token_inv = 1.0 / sample.tokens.len() as f64;
                for token in &sample.tokens {
                    let bucket = token_bucket(token, config.vocab_buckets);
                    buckets.push(bucket);
                    let row = model.embed_row(bucket);
                    for (slot, v) in acc.iter_mut().zip(&row) {
                        *slot += v * token_inv;
                    }
                }
            }
            ft = acc.into_iter().map(f64::tanh).collect();
        }

        let gru_trace = if use_vitals {
            if sample.vitals.is_empty() {
                return Err(PrenetError::EmptySeries);
            }
            Some(gru_forward_with(&eff_gru, &sample.vitals, dv))
        } else {
            None
        };
        let fv: Vec<f64> = match &gru_trace {
            Some(trace) => trace.hidden.last().expect("non-empty").clone(),
            None => vec![0.0; dv],
        };

        let mut fc = Vec::with_capacity(config.d_joint());
        fc.extend_from_slice(&ft);
        fc.extend_from_slice(&fv);

        let head_logits = |w: &Matrix, linear: &Linear| -> Vec<f64> {
            let mut l = w.matvec(&fc);
            add_assign(&mut l, &linear.bias);
            l
        };
        let protocol_probs = softmax(&head_logits(&w_protocol, &model.head_protocol));
        let med_probs = softmax(&head_logits(&w_med, &model.head_med_type));
        let quantity = head_logits(&w_qty, &model.head_quantity)[0];
        let proc_probs: Vec<f64> =
            head_logits(&w_proc, &model.head_procedure).iter().map(|&l| sigmoid(l)).collect();

        let outputs = TaskOutputs {
            protocol_probs: protocol_probs.clone(),
            med_type_probs: med_probs.clone(),
            quantity,
            procedure_probs: proc_probs.clone(),
        };
        total_loss += super::loss(&outputs, &sample.labels, &config, mode)?;

        // ---- backward ----
        let mut g_fc = vec![0.0; config.d_joint()];
        if active.protocol {
            let mut dz = protocol_probs;
            dz[sample.labels.protocol as usize] -= 1.0;
            grads.head_protocol_w.add_outer(&dz, &fc, inv);
            for (slot, d) in grads.head_protocol_b.iter_mut().zip(&dz) {
                *slot += d * inv;
            }
            add_assign(&mut g_fc, &w_protocol.matvec_transpose(&dz));
        }
        if active.med_type {
            let mut dz = med_probs;
            dz[sample.labels.med_type as usize] -= 1.0;
            grads.head_med_type_w.add_outer(&dz, &fc, inv);
            for (slot, d) in grads.head_med_type_b.iter_mut().zip(&dz) {
                *slot += d * inv;
            }
            add_assign(&mut g_fc, &w_med.matvec_transpose(&dz));
        }
        if active.quantity {
            let dq = 2.0 * (quantity - sample.labels.quantity);
            grads.head_quantity_w.add_outer(&[dq], &fc, inv);
            grads.head_quantity_b[0] += dq * inv;
            add_assign(&mut g_fc, &w_qty.matvec_transpose(&[dq]));
        }
        if active.procedure {
            let k = config.k_procedure as f64;
            let dz: Vec<f64> = proc_probs
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let y = f64::from(sample.labels.procedures.contains(&(i as u32)));
                    (p - y) / k
                })
                .collect();
            grads.head_procedure_w.add_outer(&dz, &fc, inv);
            for (slot, d) in grads.head_procedure_b.iter_mut().zip(&dz) {
                *slot += d * inv;
            }
            add_assign(&mut g_fc, &w_proc.matvec_transpose(&dz));
        }

        // text encoder
        if use_text {
            let g_ft = &g_fc[..dt];
            let g_u: Vec<f64> =
                g_ft.iter().zip(&ft).map(|(g, f)| g * (1.0 - f * f)).collect();
            for (slot, g) in grads.embed_bias.iter_mut().zip(&g_u) {
                *slot += g * inv;
            }
            if !buckets.is_empty() {
                let token_inv = 1.0 / buckets.len() as f64;
                for &bucket in &buckets {
                    let row = grads.embed.row_mut(bucket);
                    for (slot, g) in row.iter_mut().zip(&g_u) {
                        *slot += g * token_inv * inv;
                    }
                }
            }
        }

        // vitals encoder (backpropagation through time)
        if let Some(trace) = &gru_trace {
            let zeros = vec![0.0; dv];
            let mut g_h: Vec<f64> = g_fc[dt..].to_vec();
            for t in (0..trace.inputs.len()).rev() {
                let h_prev: &[f64] =
                    if t == 0 { &zeros } else { &trace.hidden[t - 1] };
                let z = &trace.update[t];
                let r = &trace.reset[t];
                let hc = &trace.cand[t];
                let x = trace.inputs[t];

                let mut g_az = vec![0.0; dv];
                let mut g_ah = vec![0.0; dv];
                for i in 0..dv {
                    let g_z = g_h[i] * (hc[i] - h_prev[i]);
                    g_az[i] = g_z * z[i] * (1.0 - z[i]);
                    let g_hc = g_h[i] * z[i];
                    g_ah[i] = g_hc * (1.0 - hc[i] * hc[i]);
                }

                let gated = hadamard(r, h_prev);
                grads.gru_u_cand.add_outer(&g_ah, &gated, inv);
                for i in 0..dv {
                    grads.gru_w_cand.data[i] += g_ah[i] * x * inv;
                    grads.gru_b_cand[i] += g_ah[i] * inv;
                }

                let g_rh = eff_gru.uh.matvec_transpose(&g_ah);
                let mut g_ar = vec![0.0; dv];
                for i in 0..dv {
                    let g_r = g_rh[i] * h_prev[i];
                    g_ar[i] = g_r * r[i] * (1.0 - r[i]);
                }
                grads.gru_u_reset.add_outer(&g_ar, h_prev, inv);
                grads.gru_u_update.add_outer(&g_az, h_prev, inv);
                for i in 0..dv {
                    grads.gru_w_reset.data[i] += g_ar[i] * x * inv;
                    grads.gru_b_reset[i] += g_ar[i] * inv;
                    grads.gru_w_update.data[i] += g_az[i] * x * inv;
                    grads.gru_b_update[i] += g_az[i] * inv;
                }

                let via_update = eff_gru.uz.matvec_transpose(&g_az);
                let via_reset = eff_gru.ur.matvec_transpose(&g_ar);
                let mut g_h_prev = vec![0.0; dv];
                for i in 0..dv {
                    g_h_prev[i] = g_h[i] * (1.0 - z[i])
                        + g_rh[i] * r[i]
                        + via_update[i]
                        + via_reset[i];
                }
                g_h = g_h_prev;
            }
        }
    }

    total_loss *= inv;
    if !total_loss.is_finite() {
        return Err(PrenetError::NonFiniteLoss);
    }

    // Route adapted layers' weight gradients into their factors:
    // dL/dA = B^T G, dL/dB = G A^T; the base gradient stays zero.
    for (&id, adapter) in &model.adapters {
        let g_w = std::mem::replace(
            grads.base_matrix_mut(id),
            Matrix::zeros(0, 0),
        );
        let g_a = lora_transpose(&adapter.b).matmul(&g_w);
        let g_b = g_w.matmul(&lora_transpose(&adapter.a));
        let slot = grads.adapters.get_mut(&id).expect("zeroed alongside model");
        *slot = (g_a, g_b);
        *grads.base_matrix_mut(id) = Matrix::zeros(g_w.rows, g_w.cols);
    }

    Ok((total_loss, grads))
}

fn lora_transpose(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.cols, m.rows, |r, c| m.get(c, r))
}

/// One plain gradient-descent step. Without adapters every parameter
/// moves; with adapters attached, only adapter factors and head
/// parameters do, and adapted base matrices stay bitwise frozen.
pub fn train_step(
    model: &mut PreNetModel,
    batch: &[Sample],
    lr: f64,
    mode: TaskMode,
) -> Result<f64, PrenetError> {
    let (loss, grads) = compute_gradients(model, batch, mode)?;
    apply_gradients(model, &grads, lr);
    Ok(loss)
}

fn apply_gradients(model: &mut PreNetModel, grads: &Gradients, lr: f64) {
    let adapter_mode = !model.adapters.is_empty();

    let update_matrix = |m: &mut Matrix, g: &Matrix| {
        for (slot, d) in m.data.iter_mut().zip(&g.data) {
            *slot -= lr * d;
        }
    };
    let update_vec = |v: &mut [f64], g: &[f64]| {
        for (slot, d) in v.iter_mut().zip(g) {
            *slot -= lr * d;
        }
    };

    if !adapter_mode {
        update_matrix(&mut model.embed, &grads.embed);
        update_vec(&mut model.embed_bias, &grads.embed_bias);
        update_matrix(&mut model.gru.w_update, &grads.gru_w_update);
        update_matrix(&mut model.gru.u_update, &grads.gru_u_update);
        update_vec(&mut model.gru.b_update, &grads.gru_b_update);
        update_matrix(&mut model.gru.w_reset, &grads.gru_w_reset);
        update_matrix(&mut model.gru.u_reset, &grads.gru_u_reset);
        update_vec(&mut model.gru.b_reset, &grads.gru_b_reset);
        update_matrix(&mut model.gru.w_cand, &grads.gru_w_cand);
        update_matrix(&mut model.gru.u_cand, &grads.gru_u_cand);
        update_vec(&mut model.gru.b_cand, &grads.gru_b_cand);
    }

    // heads: weights update unless the head itself is adapted
    for (id, w, b, gw, gb) in [
        (
            LayerId::HeadProtocol,
            &mut model.head_protocol.weight,
            &mut model.head_protocol.bias,
            &grads.head_protocol_w,
            &grads.head_protocol_b,
        ),
        (
            LayerId::HeadMedType,
            &mut model.head_med_type.weight,
            &mut model.head_med_type.bias,
            &grads.head_med_type_w,
            &grads.head_med_type_b,
        ),
        (
            LayerId::HeadQuantity,
            &mut model.head_quantity.weight,
            &mut model.head_quantity.bias,
            &grads.head_quantity_w,
            &grads.head_quantity_b,
        ),
        (
            LayerId::HeadProcedure,
            &mut model.head_procedure.weight,
            &mut model.head_procedure.bias,
            &grads.head_procedure_w,
            &grads.head_procedure_b,
        ),
    ] {
        if !model.adapters.contains_key(&id) {
            update_matrix(w, gw);
        }
        update_vec(b, gb);
    }

    for (id, (ga, gb)) in &grads.adapters {
        if let Some(adapter) = model.adapters.get_mut(id) {
            update_matrix(&mut adapter.a, ga);
            update_matrix(&mut adapter.b, gb);
        }
    }
}

/// Mean loss over a batch without touching gradients.
pub fn batch_loss(
    model: &PreNetModel,
    batch: &[Sample],
    mode: TaskMode,
) -> Result<f64, PrenetError> {
    let mut total = 0.0;
    for sample in batch {
        let outputs = super::forward_sample(model, sample)?;
        total += super::loss(&outputs, &sample.labels, &model.config, mode)?;
    }
    Ok(total / batch.len() as f64)
}

/// Outcome of a finite-difference sweep over every trainable parameter.
#[derive(Debug, Clone)]
pub struct GradientCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub params_checked: usize,
}

/// Compares analytic gradients against central finite differences for
/// every parameter tensor (adapter factors included when attached).
/// The relative error denominator is floored so parameters with
/// negligible gradients are judged by absolute agreement.
pub fn gradient_check(
    model: &mut PreNetModel,
    batch: &[Sample],
    mode: TaskMode,
    eps: f64,
) -> Result<GradientCheckReport, PrenetError> {
    let (_, grads) = compute_gradients(model, batch, mode)?;
    let mut report = GradientCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        params_checked: 0,
    };
    let names = model.tensor_names();
    for name in names {
        // adapted base matrices are frozen and carry no gradient
        let analytic = grads.tensor(&name).expect("gradient tensor exists").to_vec();
        let is_adapted_base = model
            .adapters
            .keys()
            .any(|id| id.as_str() == name);
        if is_adapted_base {
            continue;
        }
        for i in 0..analytic.len() {
            let original = model.tensor(&name).expect("tensor exists")[i];
            model.tensor_mut(&name).expect("tensor exists")[i] = original + eps;
            let plus = batch_loss(model, batch, mode)?;
            model.tensor_mut(&name).expect("tensor exists")[i] = original - eps;
            let minus = batch_loss(model, batch, mode)?;
            model.tensor_mut(&name).expect("tensor exists")[i] = original;
            let fd = (plus - minus) / (2.0 * eps);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            let rel = (analytic[i] - fd).abs() / denom;
            report.params_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// Seeded mini-batch training loop.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub mode: TaskMode,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { lr: 0.5, steps: 500, batch_size: 32, mode: TaskMode::Multi, seed: 0 }
    }
}

/// Runs `steps` gradient steps over seeded mini-batches (sampling with
/// replacement, deterministic per seed) and returns the per-step losses.
pub fn run_training(
    model: &mut PreNetModel,
    samples: &[Sample],
    opts: &TrainOptions,
) -> Result<Vec<f64>, PrenetError> {
    assert!(!samples.is_empty(), "training set must be non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(opts.seed, "train-order"));
    let mut losses = Vec::with_capacity(opts.steps);
    let mut batch = Vec::with_capacity(opts.batch_size);
    for _ in 0..opts.steps {
        batch.clear();
        for _ in 0..opts.batch_size.max(1) {
            batch.push(samples[rng.gen_range(0..samples.len())].clone());
        }
        losses.push(train_step(model, &batch, opts.lr, opts.mode)?);
    }
    Ok(losses)
}
