//! Versioned binary checkpoints: a little-endian header with the model
//! dimensions followed by the parameter tensors as f64 in declaration
//! order. Adapters are stored in their own file so deployable storage
//! only needs the factors.

use std::io::{Read, Write};
use std::path::Path;

use super::math::Matrix;
use super::train::BASE_TENSOR_NAMES;
use super::{LayerId, LoraAdapter, ModalityMode, PreNetConfig, PreNetModel, PrenetError};

const MODEL_MAGIC: &[u8; 4] = b"PNC1";
const ADAPTER_MAGIC: &[u8; 4] = b"PNA1";
const VERSION: u32 = 1;

fn err(message: impl Into<String>) -> PrenetError {
    PrenetError::Checkpoint(message.into())
}

fn io_err(e: std::io::Error) -> PrenetError {
    err(e.to_string())
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<(), PrenetError> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, PrenetError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_tensor<W: Write>(w: &mut W, data: &[f64]) -> Result<(), PrenetError> {
    for v in data {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>, PrenetError> {
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes).map_err(io_err)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
        .collect())
}

fn modality_code(m: ModalityMode) -> u8 {
    match m {
        ModalityMode::Fused => 0,
        ModalityMode::TextOnly => 1,
        ModalityMode::VitalsOnly => 2,
    }
}

fn modality_from(code: u8) -> Result<ModalityMode, PrenetError> {
    match code {
        0 => Ok(ModalityMode::Fused),
        1 => Ok(ModalityMode::TextOnly),
        2 => Ok(ModalityMode::VitalsOnly),
        other => Err(err(format!("unknown modality code {other}"))),
    }
}

/// Writes the base model (adapters excluded) to `path`.
pub fn save_model(model: &PreNetModel, path: &Path) -> Result<(), PrenetError> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    write_u32(&mut out, VERSION)?;
    let c = model.config;
    for dim in [
        c.d_text,
        c.d_vitals,
        c.vocab_buckets,
        c.k_protocol,
        c.k_med_type,
        c.k_procedure,
    ] {
        write_u32(&mut out, dim as u32)?;
    }
    out.push(modality_code(model.modality));
    for name in BASE_TENSOR_NAMES {
        write_tensor(&mut out, model.tensor(name).expect("base tensor exists"))?;
    }
    std::fs::write(path, out).map_err(io_err)
}

/// Loads a base checkpoint.
pub fn load_model(path: &Path) -> Result<PreNetModel, PrenetError> {
    let bytes = std::fs::read(path).map_err(io_err)?;
    let mut r: &[u8] = &bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MODEL_MAGIC {
        return Err(err("bad model magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let dims: Vec<usize> =
        (0..6).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<_, _>>()?;
    let config = PreNetConfig {
        d_text: dims[0],
        d_vitals: dims[1],
        vocab_buckets: dims[2],
        k_protocol: dims[3],
        k_med_type: dims[4],
        k_procedure: dims[5],
    };
    let mut modality_byte = [0u8; 1];
    r.read_exact(&mut modality_byte).map_err(io_err)?;
    let modality = modality_from(modality_byte[0])?;

    let mut model = PreNetModel::zeroed(config, modality);
    for name in BASE_TENSOR_NAMES {
        let len = model.tensor(name).expect("base tensor exists").len();
        let data = read_tensor(&mut r, len)?;
        model.tensor_mut(name).expect("base tensor exists").copy_from_slice(&data);
    }
    if !r.is_empty() {
        return Err(err("trailing bytes in checkpoint"));
    }
    Ok(model)
}

/// Writes only the adapter factors.
pub fn save_adapters(model: &PreNetModel, path: &Path) -> Result<(), PrenetError> {
    let mut out = Vec::new();
    out.extend_from_slice(ADAPTER_MAGIC);
    write_u32(&mut out, VERSION)?;
    write_u32(&mut out, model.adapters.len() as u32)?;
    for (id, adapter) in &model.adapters {
        out.push(id.code());
        write_u32(&mut out, adapter.rank as u32)?;
        write_u32(&mut out, adapter.b.rows as u32)?;
        write_u32(&mut out, adapter.a.cols as u32)?;
        write_tensor(&mut out, &adapter.a.data)?;
        write_tensor(&mut out, &adapter.b.data)?;
    }
    std::fs::write(path, out).map_err(io_err)
}

/// Loads adapter factors and attaches them to the model, checking that
/// shapes line up with the base matrices.
pub fn load_adapters(model: &mut PreNetModel, path: &Path) -> Result<(), PrenetError> {
    let bytes = std::fs::read(path).map_err(io_err)?;
    let mut r: &[u8] = &bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != ADAPTER_MAGIC {
        return Err(err("bad adapter magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    for _ in 0..count {
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(io_err)?;
        let id = LayerId::from_code(code[0]).ok_or_else(|| err("unknown layer id"))?;
        let rank = read_u32(&mut r)? as usize;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let base = model.base_matrix(id);
        if base.rows != rows || base.cols != cols {
            return Err(err(format!(
                "adapter {} shaped {rows}x{cols} does not fit base {}x{}",
                id.as_str(),
                base.rows,
                base.cols
            )));
        }
        let a_data = read_tensor(&mut r, rank * cols)?;
        let b_data = read_tensor(&mut r, rows * rank)?;
        model.adapters.insert(
            id,
            LoraAdapter {
                a: Matrix { rows: rank, cols, data: a_data },
                b: Matrix { rows, cols: rank, data: b_data },
                rank,
            },
        );
    }
    if !r.is_empty() {
        return Err(err("trailing bytes in adapter file"));
    }
    Ok(())
}
