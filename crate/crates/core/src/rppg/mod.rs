//! PPG-waveform post-processing: non-overlapping six-second windows,
//! moving-average detrend, frequency-domain band-pass, and heart-rate
//! estimation from the periodogram peak within the physiological band.

pub mod source;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::domain::{VitalKind, VitalsSeries};

#[derive(Debug, Error, PartialEq)]
pub enum RppgError {
    #[error("waveform shorter than one {0}s window")]
    TooShort(f64),
    #[error("band high edge {high} Hz reaches Nyquist ({nyquist} Hz)")]
    BandExceedsNyquist { high: f64, nyquist: f64 },
    #[error("no spectral peak above the power floor in the search band")]
    NoPeak,
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
}

/// A PPG-like waveform sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgWaveform {
    pub samples: Vec<f64>,
    /// Samples per second.
    pub rate: f64,
}

impl PpgWaveform {
    pub fn new(samples: Vec<f64>, rate: f64) -> Result<Self, RppgError> {
        if rate <= 0.0 {
            return Err(RppgError::InvalidWaveform("rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(RppgError::InvalidWaveform("samples must be finite".into()));
        }
        Ok(Self { samples, rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }
}

/// One per-window heart-rate estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrEstimate {
    pub window_index: usize,
    /// Beats per minute, within the configured band by construction.
    pub bpm: f64,
    pub peak_power: f64,
}

/// Spectral analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    /// Search band in Hz; defaults to (0.75, 2.5), i.e. 45-150 bpm.
    pub band: (f64, f64),
    pub window_seconds: f64,
    /// Zero-padding target for the periodogram grid.
    pub freq_resolution: f64,
    /// Span of the moving-average detrend in seconds.
    pub detrend_span_s: f64,
    /// Extra margin applied to the band-pass edges inside [`hr_series`] so
    /// spectral lines near the search-band edges survive filtering intact.
    pub filter_guard_hz: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            band: (0.75, 2.5),
            window_seconds: 6.0,
            freq_resolution: 0.01,
            detrend_span_s: 2.5,
            filter_guard_hz: 0.35,
        }
    }
}

/// Splits a waveform into contiguous non-overlapping windows, discarding
/// the trailing remainder.
pub fn segment_windows(
    wave: &PpgWaveform,
    window_seconds: f64,
) -> Result<Vec<PpgWaveform>, RppgError> {
    let window_len = (wave.rate * window_seconds).round() as usize;
    if window_len == 0 || wave.samples.len() < window_len {
        return Err(RppgError::TooShort(window_seconds));
    }
    Ok(wave
        .samples
        .chunks_exact(window_len)
        .map(|chunk| PpgWaveform { samples: chunk.to_vec(), rate: wave.rate })
        .collect())
}

/// Subtracts a centered moving average (edge-truncated) from the signal.
pub fn detrend(window: &PpgWaveform, span_s: f64) -> PpgWaveform {
    let n = window.samples.len();
    if n == 0 {
        return window.clone();
    }
    let half = ((window.rate * span_s).round() as usize / 2).max(1);
    // prefix sums for O(1) window means
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in &window.samples {
        prefix.push(prefix.last().unwrap() + v);
    }
    let samples = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            window.samples[i] - mean
        })
        .collect();
    PpgWaveform { samples, rate: window.rate }
}

/// Brick-wall band-pass: forward FFT, zero every bin whose frequency lies
/// outside the band, inverse FFT. Zero-phase and deterministic.
pub fn bandpass(window: &PpgWaveform, band: (f64, f64)) -> Result<PpgWaveform, RppgError> {
    let nyquist = window.rate / 2.0;
    if band.1 >= nyquist {
        return Err(RppgError::BandExceedsNyquist { high: band.1, nyquist });
    }
    let n = window.samples.len();
    if n == 0 {
        return Ok(window.clone());
    }
    let mut buf: Vec<Complex<f64>> =
        window.samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let freq = bin_frequency(k, n, window.rate).abs();
        if freq < band.0 || freq > band.1 {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let samples = buf.iter().map(|c| c.re / n as f64).collect();
    Ok(PpgWaveform { samples, rate: window.rate })
}

/// Signed frequency of FFT bin `k` for an `n`-point transform.
fn bin_frequency(k: usize, n: usize, rate: f64) -> f64 {
    if k <= n / 2 {
        k as f64 * rate / n as f64
    } else {
        (k as f64 - n as f64) * rate / n as f64
    }
}

/// Peak power floor relative to total spectral power.
const POWER_FLOOR_RATIO: f64 = 1e-12;

/// Heart rate from the periodogram peak inside the search band.
///
/// The window is Hann-tapered and zero-padded until the frequency grid
/// reaches `cfg.freq_resolution`; the argmax over in-band bins, ties
/// broken toward lower frequency, gives the rate. Scaling the window by
/// any positive constant leaves the estimate unchanged.
pub fn estimate_hr(window: &PpgWaveform, cfg: &SpectralConfig) -> Result<HrEstimate, RppgError> {
    let nyquist = window.rate / 2.0;
    if cfg.band.1 >= nyquist {
        return Err(RppgError::BandExceedsNyquist { high: cfg.band.1, nyquist });
    }
    let n = window.samples.len();
    if n == 0 {
        return Err(RppgError::NoPeak);
    }
    let padded = (window.rate / cfg.freq_resolution).ceil() as usize;
    let padded = padded.max(n);

    let mut buf = vec![Complex::new(0.0, 0.0); padded];
    for (i, &s) in window.samples.iter().enumerate() {
        let w = if n > 1 {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
        } else {
            1.0
        };
        buf[i] = Complex::new(s * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);

    let total_power: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
    let mut best: Option<(f64, f64)> = None; // (freq, power)
    for (k, v) in buf.iter().enumerate().take(padded / 2 + 1) {
        let freq = k as f64 * window.rate / padded as f64;
        if freq < cfg.band.0 || freq > cfg.band.1 {
            continue;
        }
        let power = v.norm_sqr();
        // strict > keeps the lowest-frequency bin on ties
        if best.map_or(true, |(_, p)| power > p) {
            best = Some((freq, power));
        }
    }
    let (freq, power) = best.ok_or(RppgError::NoPeak)?;
    if power <= POWER_FLOOR_RATIO * total_power {
        return Err(RppgError::NoPeak);
    }
    Ok(HrEstimate { window_index: 0, bpm: 60.0 * freq, peak_power: power })
}

/// Full per-window pipeline: segment, detrend, band-pass (with the guard
/// margin on the filter edges), estimate. Windows that yield no peak come
/// back as `None`.
pub fn hr_series(
    wave: &PpgWaveform,
    cfg: &SpectralConfig,
) -> Result<Vec<Option<HrEstimate>>, RppgError> {
    let windows = segment_windows(wave, cfg.window_seconds)?;
    let filter_band = (
        (cfg.band.0 - cfg.filter_guard_hz).max(cfg.freq_resolution),
        (cfg.band.1 + cfg.filter_guard_hz).min(wave.rate / 2.0 - cfg.freq_resolution),
    );
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let filtered = bandpass(&detrend(w, cfg.detrend_span_s), filter_band)?;
            match estimate_hr(&filtered, cfg) {
                Ok(est) => Ok(Some(HrEstimate { window_index: i, ..est })),
                Err(RppgError::NoPeak) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Assembles per-window estimates into an HR vitals series; gap windows
/// carry NaN markers.
pub fn hr_vitals_series(estimates: &[Option<HrEstimate>]) -> VitalsSeries {
    let values = estimates.iter().map(|e| e.map_or(f64::NAN, |e| e.bpm)).collect();
    VitalsSeries::new(VitalKind::HR, values, "bpm")
}
