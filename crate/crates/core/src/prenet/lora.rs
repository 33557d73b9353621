//! Low-rank adaptation: a frozen base matrix W0 plus trainable factors so
//! the effective weight is W0 + B*A. At attach time B is zero, so the
//! adapted forward pass is bitwise identical to the base model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::math::Matrix;
use super::{LayerId, PreNetModel, PrenetError};

/// Trainable low-rank factors for one layer. For a d_out x d_in base,
/// A is rank x d_in and B is d_out x rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: Matrix,
    pub b: Matrix,
    pub rank: usize,
}

impl LoraAdapter {
    /// Trainable parameter count: rank * (d_in + d_out).
    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

const INIT_SCALE: f64 = 0.02;

/// Attaches adapters of the given rank to each listed layer. A is drawn
/// from seeded small-scale normals, B starts at zero.
pub fn lora_attach(
    model: &mut PreNetModel,
    layers: &[LayerId],
    rank: usize,
    seed: u64,
) -> Result<(), PrenetError> {
    // validate all layers before mutating any
    for &id in layers {
        let base = model.base_matrix(id);
        if rank == 0 || rank > base.rows.min(base.cols) {
            return Err(PrenetError::RankError { rank, rows: base.rows, cols: base.cols });
        }
    }
    for &id in layers {
        let base = model.base_matrix(id);
        let (rows, cols) = (base.rows, base.cols);
        let mut rng =
            ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, &format!("lora-{}", id.as_str())));
        let mut normal = || -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * INIT_SCALE
        };
        let a = Matrix::from_fn(rank, cols, |_, _| normal());
        let b = Matrix::zeros(rows, rank);
        model.adapters.insert(id, LoraAdapter { a, b, rank });
    }
    Ok(())
}

/// Folds every adapter into its base matrix (W0 += B*A) and removes the
/// adapters; the merged forward matches the adapted forward.
pub fn lora_merge(model: &mut PreNetModel) {
    let adapters = std::mem::take(&mut model.adapters);
    for (id, adapter) in adapters {
        let delta = adapter.b.matmul(&adapter.a);
        model.base_matrix_mut(id).scaled_add(&delta, 1.0);
    }
}

/// Number of parameters gradient descent actually moves in the current
/// configuration: everything without adapters; adapter factors plus
/// non-adapted head weights plus head biases with them.
pub fn trainable_param_count(model: &PreNetModel) -> usize {
    let head_params = |linear: &super::Linear, id: LayerId| -> usize {
        let w = if model.adapters.contains_key(&id) { 0 } else { linear.weight.len() };
        w + linear.bias.len()
    };
    if model.adapters.is_empty() {
        let g = &model.gru;
        model.embed.len()
            + model.embed_bias.len()
            + g.w_update.len()
            + g.u_update.len()
            + g.b_update.len()
            + g.w_reset.len()
            + g.u_reset.len()
            + g.b_reset.len()
            + g.w_cand.len()
            + g.u_cand.len()
            + g.b_cand.len()
            + head_params(&model.head_protocol, LayerId::HeadProtocol)
            + head_params(&model.head_med_type, LayerId::HeadMedType)
            + head_params(&model.head_quantity, LayerId::HeadQuantity)
            + head_params(&model.head_procedure, LayerId::HeadProcedure)
    } else {
        let adapters: usize = model.adapters.values().map(LoraAdapter::param_count).sum();
        adapters
            + head_params(&model.head_protocol, LayerId::HeadProtocol)
            + head_params(&model.head_med_type, LayerId::HeadMedType)
            + head_params(&model.head_quantity, LayerId::HeadQuantity)
            + head_params(&model.head_procedure, LayerId::HeadProcedure)
    }
}
