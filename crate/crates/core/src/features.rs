//! Raw acoustic measurements behind the pitch, speed and volume factors, and
//! their binning into three levels.

use serde::{Deserialize, Serialize};

use crate::factors::Level;
use crate::{Error, Result};

pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 600.0;
pub const DEFAULT_FRAME_MS: f64 = 40.0;
pub const DEFAULT_HOP_MS: f64 = 20.0;

/// Per-utterance measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMeasurements {
    /// Mean f0 over voiced frames; 0 when nothing is voiced.
    pub mean_f0_hz: f64,
    pub rms_energy: f64,
    /// Units (phones, syllables or words) per second of voiced speech.
    pub speech_rate: f64,
}

/// Normalised-autocorrelation pitch tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchTracker {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Minimum normalised autocorrelation peak for a frame to count as voiced.
    pub voicing_threshold: f64,
    /// Frames whose RMS is below this fraction of the loudest frame are unvoiced.
    pub silence_ratio: f64,
    /// The first lag whose correlation reaches this fraction of the best peak
    /// wins, which keeps sub-harmonic lags from being chosen.
    pub octave_ratio: f64,
}

impl Default for PitchTracker {
    fn default() -> Self {
        Self {
            frame_ms: DEFAULT_FRAME_MS,
            hop_ms: DEFAULT_HOP_MS,
            voicing_threshold: 0.3,
            silence_ratio: 0.01,
            octave_ratio: 0.9,
        }
    }
}

impl PitchTracker {
    /// Per-frame f0 in Hz, 0 for unvoiced frames. Frame `k` starts at sample
    /// `k * hop`; there is one frame per started hop.
    pub fn track(&self, samples: &[f32], sample_rate_hz: u32) -> Result<Vec<f64>> {
        if sample_rate_hz < 8000 {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio samples"));
        }
        let sr = sample_rate_hz as f64;
        let win = ((self.frame_ms * sr / 1000.0).round() as usize).max(1);
        let hop = ((self.hop_ms * sr / 1000.0).round() as usize).max(1);
        let min_lag = (sr / F0_MAX_HZ).floor().max(1.0) as usize;
        let max_lag = (sr / F0_MIN_HZ).ceil() as usize;
        let frames = samples.len().div_ceil(hop);
        let mut padded = samples.to_vec();
        padded.resize(frames * hop + win + max_lag + 2, 0.0);

        let energies: Vec<f64> =
            (0..frames).map(|k| dot(&padded[k * hop..k * hop + win], &padded[k * hop..k * hop + win])).collect();
        let loudest = energies.iter().copied().fold(0.0, f64::max);
        let gate = loudest * self.silence_ratio * self.silence_ratio;

        let mut out = vec![0.0; frames];
        let mut corr = vec![0.0; max_lag + 2];
        for k in 0..frames {
            let start = k * hop;
            let e0 = energies[k];
            if e0 <= 0.0 || e0 < gate {
                continue;
            }
            let a = &padded[start..start + win];
            let mut best = f64::NEG_INFINITY;
            for lag in min_lag - 1..=max_lag + 1 {
                let b = &padded[start + lag..start + lag + win];
                let eb = dot(b, b);
                corr[lag] = if eb > 0.0 { dot(a, b) / (e0 * eb).sqrt() } else { 0.0 };
            }
            for &c in &corr[min_lag..=max_lag] {
                best = best.max(c);
            }
            if best < self.voicing_threshold {
                continue;
            }
            let floor = best * self.octave_ratio;
            let Some(lag) =
                (min_lag..=max_lag).find(|&l| corr[l] >= floor && corr[l] >= corr[l - 1] && corr[l] >= corr[l + 1])
            else {
                continue;
            };
            let (y0, y1, y2) = (corr[lag - 1], corr[lag], corr[lag + 1]);
            let denom = y0 - 2.0 * y1 + y2;
            let shift = if denom.abs() > 1e-12 { 0.5 * (y0 - y2) / denom } else { 0.0 };
            let f0 = sr / (lag as f64 + shift.clamp(-0.5, 0.5));
            if (F0_MIN_HZ..=F0_MAX_HZ).contains(&f0) {
                out[k] = f0;
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for j in 0..8 {
            acc[j] += a[c * 8 + j] * b[c * 8 + j];
        }
    }
    let mut total: f64 = acc.iter().map(|&v| v as f64).sum();
    for i in chunks * 8..a.len() {
        total += (a[i] * b[i]) as f64;
    }
    total
}

/// Per-frame f0 (0 for unvoiced) with the default tracker settings.
pub fn estimate_f0(samples: &[f32], sample_rate_hz: u32, frame_ms: f64, hop_ms: f64) -> Result<Vec<f64>> {
    PitchTracker { frame_ms, hop_ms, ..PitchTracker::default() }.track(samples, sample_rate_hz)
}

/// Mean over voiced (non-zero) frames, or 0.
pub fn mean_voiced(f0: &[f64]) -> f64 {
    let voiced: Vec<f64> = f0.iter().copied().filter(|&v| v > 0.0).collect();
    if voiced.is_empty() {
        0.0
    } else {
        voiced.iter().sum::<f64>() / voiced.len() as f64
    }
}

/// Seconds from the first to the last voiced frame inclusive.
pub fn voiced_span_s(f0: &[f64], hop_s: f64) -> f64 {
    match (f0.iter().position(|&v| v > 0.0), f0.iter().rposition(|&v| v > 0.0)) {
        (Some(a), Some(b)) => (b - a + 1) as f64 * hop_s,
        _ => 0.0,
    }
}

pub fn rms_energy(samples: &[f32]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("audio samples"));
    }
    let sum: f64 = samples.iter().map(|&v| (v as f64) * (v as f64)).sum();
    Ok((sum / samples.len() as f64).sqrt())
}

pub fn speech_rate(transcript_units: usize, voiced_duration_s: f64) -> Result<f64> {
    if voiced_duration_s.is_nan() || voiced_duration_s <= 0.0 {
        return Err(Error::ZeroDuration(voiced_duration_s));
    }
    Ok(transcript_units as f64 / voiced_duration_s)
}

/// Words in a transcript, the unit used for speaking rate.
pub fn count_units(transcript: &str) -> usize {
    transcript.split_whitespace().count()
}

/// Mean f0, RMS and speaking rate of one utterance. Rate is 0 when nothing is
/// voiced.
pub fn measure(samples: &[f32], sample_rate_hz: u32, transcript_units: usize) -> Result<RawMeasurements> {
    let tracker = PitchTracker::default();
    let f0 = tracker.track(samples, sample_rate_hz)?;
    let span = voiced_span_s(&f0, tracker.hop_ms / 1000.0);
    Ok(RawMeasurements {
        mean_f0_hz: mean_voiced(&f0),
        rms_energy: rms_energy(samples)?,
        speech_rate: if span > 0.0 { speech_rate(transcript_units, span)? } else { 0.0 },
    })
}

/// Tertile cut points of a measurement distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBins {
    pub low_cut: f64,
    pub high_cut: f64,
}

/// Linear-interpolation percentile of sorted data at the fraction `num / den`,
/// with the rank computed exactly so cut points land on data values when the
/// rank is whole.
fn quantile(sorted: &[f64], num: usize, den: usize) -> f64 {
    let scaled = (sorted.len() - 1) * num;
    let (lo, rem) = (scaled / den, scaled % den);
    if rem == 0 {
        sorted[lo]
    } else {
        sorted[lo] + (rem as f64 / den as f64) * (sorted[lo + 1] - sorted[lo])
    }
}

impl LevelBins {
    /// Cuts at the 1/3 and 2/3 quantiles.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::TooFewValues { needed: 3, got: values.len() });
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { low_cut: quantile(&sorted, 1, 3), high_cut: quantile(&sorted, 2, 3) })
    }

    pub fn classify(&self, value: f64) -> Level {
        if value < self.low_cut {
            Level::Low
        } else if value > self.high_cut {
            Level::High
        } else {
            Level::Normal
        }
    }
}
