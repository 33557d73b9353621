//! Pluggable waveform sources and the two on-disk waveform formats:
//! two-column text `(time_s, value)` and raw little-endian f32 with a
//! small header (magic + rate). A model-backed source can implement
//! [`WaveformSource`] and slot into the same pipeline.

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use super::{PpgWaveform, RppgError};

/// Pull interface: the next window of samples, or `None` when exhausted.
pub trait WaveformSource {
    fn rate(&self) -> f64;
    fn next_window(&mut self, samples: usize) -> Option<Vec<f64>>;
}

/// A source backed by an in-memory waveform (covers file-backed use too:
/// load, then stream).
#[derive(Debug, Clone)]
pub struct MemorySource {
    wave: PpgWaveform,
    pos: usize,
}

impl MemorySource {
    pub fn new(wave: PpgWaveform) -> Self {
        Self { wave, pos: 0 }
    }
}

impl WaveformSource for MemorySource {
    fn rate(&self) -> f64 {
        self.wave.rate
    }

    fn next_window(&mut self, samples: usize) -> Option<Vec<f64>> {
        if samples == 0 || self.pos + samples > self.wave.samples.len() {
            return None;
        }
        let window = self.wave.samples[self.pos..self.pos + samples].to_vec();
        self.pos += samples;
        Some(window)
    }
}

/// Drains a source window-by-window into one waveform.
pub fn collect_source<S: WaveformSource>(source: &mut S, window_samples: usize) -> PpgWaveform {
    let mut samples = Vec::new();
    while let Some(w) = source.next_window(window_samples) {
        samples.extend(w);
    }
    PpgWaveform { samples, rate: source.rate() }
}

const BINARY_MAGIC: &[u8; 4] = b"PPG1";

/// Writes the binary format: magic, rate as f64 LE, samples as f32 LE.
pub fn write_binary<W: Write>(w: &mut W, wave: &PpgWaveform) -> std::io::Result<()> {
    let mut out = BufWriter::new(w);
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&wave.rate.to_le_bytes())?;
    for &s in &wave.samples {
        out.write_all(&(s as f32).to_le_bytes())?;
    }
    out.flush()
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<PpgWaveform, RppgError> {
    let io_err = |e: std::io::Error| RppgError::InvalidWaveform(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != BINARY_MAGIC {
        return Err(RppgError::InvalidWaveform("bad magic".into()));
    }
    let mut rate_bytes = [0u8; 8];
    r.read_exact(&mut rate_bytes).map_err(io_err)?;
    let rate = f64::from_le_bytes(rate_bytes);
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io_err)?;
    if rest.len() % 4 != 0 {
        return Err(RppgError::InvalidWaveform("truncated sample data".into()));
    }
    let samples = rest
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    PpgWaveform::new(samples, rate)
}

/// Writes the text format: `time_s value` per line, derived from the rate.
pub fn write_text<W: Write>(w: &mut W, wave: &PpgWaveform) -> std::io::Result<()> {
    let mut out = BufWriter::new(w);
    for (i, &s) in wave.samples.iter().enumerate() {
        writeln!(out, "{:.6} {:.9}", i as f64 / wave.rate, s)?;
    }
    out.flush()
}

/// Reads the text format; the rate is recovered from the time column (or
/// must be supplied when the file has a single sample).
pub fn read_text<R: BufRead>(r: R, fallback_rate: Option<f64>) -> Result<PpgWaveform, RppgError> {
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| RppgError::InvalidWaveform(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let bad = |what: &str| RppgError::InvalidWaveform(format!("line {}: {what}", i + 1));
        let t: f64 =
            parts.next().ok_or_else(|| bad("missing time"))?.parse().map_err(|_| bad("bad time"))?;
        let v: f64 = parts
            .next()
            .ok_or_else(|| bad("missing value"))?
            .parse()
            .map_err(|_| bad("bad value"))?;
        times.push(t);
        samples.push(v);
    }
    let rate = if times.len() >= 2 {
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if dt <= 0.0 {
            return Err(RppgError::InvalidWaveform("non-increasing time column".into()));
        }
        1.0 / dt
    } else {
        fallback_rate.ok_or_else(|| {
            RppgError::InvalidWaveform("cannot infer rate from fewer than 2 samples".into())
        })?
    };
    PpgWaveform::new(samples, rate)
}

pub fn load_waveform(path: &Path, fallback_rate: Option<f64>) -> Result<PpgWaveform, RppgError> {
    let io_err = |e: std::io::Error| RppgError::InvalidWaveform(e.to_string());
    let bytes = std::fs::read(path).map_err(io_err)?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(&mut &bytes[..])
    } else {
        read_text(std::io::BufReader::new(&bytes[..]), fallback_rate)
    }
}
