//! Pre-arrival EMS analytics core.
//!
//! The library covers the full desk-scale pipeline: a deterministic
//! multi-party media relay simulator, PPG-waveform heart-rate estimation,
//! lexicon-driven symptom extraction and normalization, moment-based
//! sequence matching ("hooking"), a from-scratch multimodal multitask
//! network with optional low-rank adapters, the evaluation metric suite,
//! and seeded synthetic data generators.

pub mod datagen;
pub mod domain;
pub mod hooking;
pub mod metrics;
pub mod normalizer;
pub mod prenet;
pub mod relay;
pub mod rppg;
pub mod text;

/// Derives a sub-seed from a base seed and a stage label so independent
/// pipeline stages draw from disjoint deterministic streams.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded into the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}
