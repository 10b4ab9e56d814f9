//! Prompt and transcript to waveform: first-layer codes from the
//! autoregressive model, remaining layers from the non-autoregressive model,
//! codebook decoding, and a sinusoidal-bank renderer.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::write_wav;
use crate::filterbank::Filterbank;
use crate::rvq::{AcousticCodeMatrix, CodebookSet, FrameFeatures};
use crate::sar::{Sampling, SarModel};
use crate::snar::SnarModel;
use crate::text::{Segment, Vocabulary};
use crate::{Error, Result};

/// Renders band amplitudes as sinusoids at the band frequencies. Amplitudes
/// are interpolated linearly between frame centres; output length is
/// `frames * hop`.
pub fn render_waveform(features: &FrameFeatures, filterbank: &Filterbank) -> Result<Vec<f32>> {
    if features.dim != filterbank.bands() {
        return Err(Error::DimensionMismatch { expected: filterbank.bands(), got: features.dim });
    }
    let frames = features.frames();
    let hop = features.hop_samples;
    let sr = features.sample_rate_hz as f64;
    let mut out = vec![0f32; frames * hop];
    if frames == 0 {
        return Ok(out);
    }
    for (b, &hz) in filterbank.centers_hz.iter().enumerate() {
        let w = 2.0 * PI * hz / sr;
        if (0..frames).all(|t| features.frame(t)[b] == 0.0) {
            continue;
        }
        for (n, sample) in out.iter_mut().enumerate() {
            let u = (n as f64 - (hop / 2) as f64) / hop as f64;
            let amp = if u <= 0.0 {
                features.frame(0)[b] as f64
            } else if u >= (frames - 1) as f64 {
                features.frame(frames - 1)[b] as f64
            } else {
                let i = u.floor() as usize;
                let frac = u - i as f64;
                let (a, c) = (features.frame(i)[b] as f64, features.frame(i + 1)[b] as f64);
                a + (c - a) * frac
            };
            *sample += (amp * (w * n as f64).sin()) as f32;
        }
    }
    Ok(out)
}

/// Everything the synthesis pipeline needs, borrowed.
pub struct Pipeline<'a> {
    pub sar: &'a SarModel<f32>,
    pub snar: &'a SnarModel<f32>,
    pub books: &'a CodebookSet,
    pub vocab: &'a Vocabulary,
    pub filterbank: &'a Filterbank,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub codes: AcousticCodeMatrix,
    pub features: FrameFeatures,
    pub waveform: Vec<f32>,
}

impl Pipeline<'_> {
    /// Generates speech for a style prompt and transcript. Deterministic for
    /// a fixed `sampling.seed`.
    pub fn synthesize(
        &self,
        prompt: &str,
        transcript: &str,
        sampling: Sampling,
        max_frames: usize,
    ) -> Result<Synthesis> {
        if self.books.dim() != self.filterbank.bands() {
            return Err(Error::DimensionMismatch { expected: self.filterbank.bands(), got: self.books.dim() });
        }
        if self.snar.codec_layers != self.books.layers() {
            return Err(Error::DimensionMismatch { expected: self.books.layers(), got: self.snar.codec_layers });
        }
        for (layer, &size) in self.books.sizes().iter().enumerate() {
            let model_k = if layer == 0 { self.sar.config.codebook_size() } else { self.snar.codebook_size() };
            if model_k != size {
                return Err(Error::DimensionMismatch { expected: size, got: model_k });
            }
        }
        let style = self.vocab.tokenize(prompt, Segment::Style)?;
        let text = self.vocab.tokenize(transcript, Segment::Text)?;
        let layer1 = self.sar.generate(&style, &text, sampling, max_frames)?;
        if layer1.is_empty() {
            tracing::warn!(prompt, transcript, "generation ended immediately; output is empty");
        }
        let snar_text = self.vocab.tokenize(transcript, Segment::Text)?;
        let codes = self.snar.predict_all(&snar_text, &layer1, &self.books.sizes())?;
        let features = self.books.decode(&codes, self.filterbank.sample_rate_hz, self.filterbank.hop_samples)?;
        let waveform = render_waveform(&features, self.filterbank)?;
        Ok(Synthesis { codes, features, waveform })
    }
}

/// Companion metadata written next to a synthesized WAV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub prompt: String,
    pub transcript: String,
    #[serde(rename = "T")]
    pub frames: usize,
    pub measured: serde_json::Value,
}

/// Writes `<path>` as 16-bit PCM and `<path>.json` alongside it.
pub fn write_output(path: &Path, waveform: &[f32], sample_rate_hz: u32, sidecar: &Sidecar) -> Result<()> {
    write_wav(path, waveform, sample_rate_hz)?;
    let json = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(path.with_extension("json"), json + "\n")?;
    Ok(())
}
