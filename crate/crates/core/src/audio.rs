//! Mono PCM WAV input/output and resampling to the working rate.

use std::path::Path;

use rubato::{FftFixedIn, Resampler};

use crate::{Error, Result};

/// Every waveform is processed at this rate.
pub const SAMPLE_RATE: u32 = 24_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate_hz: u32,
    pub samples: Vec<f32>,
}

impl Audio {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Reads a WAV file, downmixing to mono.
pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
    };
    let samples = raw.chunks(channels).map(|c| c.iter().sum::<f32>() / channels as f32).collect();
    Ok(Audio { sample_rate_hz: spec.sample_rate, samples })
}

/// Writes 16-bit mono PCM; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f32], sample_rate_hz: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Resamples to `target_hz`; identity when the rates already match.
pub fn resample(audio: &Audio, target_hz: u32) -> Result<Audio> {
    if audio.sample_rate_hz == target_hz || audio.samples.is_empty() {
        return Ok(Audio { sample_rate_hz: target_hz, samples: audio.samples.clone() });
    }
    let chunk = 1024;
    let mut rs = FftFixedIn::<f32>::new(audio.sample_rate_hz as usize, target_hz as usize, chunk, 2, 1)
        .map_err(|e| Error::InvalidConfig(format!("resampler: {e}")))?;
    let expected = (audio.samples.len() as f64 * target_hz as f64 / audio.sample_rate_hz as f64).round() as usize;
    let delay = rs.output_delay();
    let mut out = Vec::with_capacity(expected + delay + chunk);
    let mut input = audio.samples.clone();
    // Flush the filter delay with trailing silence.
    input.resize(input.len() + chunk * 2 + delay * audio.sample_rate_hz as usize / target_hz as usize, 0.0);
    for block in input.chunks(chunk) {
        let mut buf = block.to_vec();
        buf.resize(chunk, 0.0);
        let res = rs.process(&[buf], None).map_err(|e| Error::InvalidConfig(format!("resampler: {e}")))?;
        out.extend_from_slice(&res[0]);
    }
    let samples = out.into_iter().skip(delay).take(expected).collect();
    Ok(Audio { sample_rate_hz: target_hz, samples })
}

/// Reads a WAV file and brings it to [`SAMPLE_RATE`].
pub fn load_for_analysis(path: &Path) -> Result<Audio> {
    resample(&read_wav(path)?, SAMPLE_RATE)
}
