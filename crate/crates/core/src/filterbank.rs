//! Frame analysis into band amplitudes: the continuous representation that
//! the codec quantises.
//!
//! Each band is a single analysis frequency on a 20 Hz grid and each frame
//! is a 50 ms rectangular window centred on its 20 ms hop. A sinusoid at a
//! band frequency completes a whole number of cycles in the window, so it
//! projects onto its own band with its exact amplitude and onto every other
//! band with zero.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::audio::SAMPLE_RATE;
use crate::rvq::FrameFeatures;
use crate::Result;

pub const HOP_SAMPLES: usize = 480;
pub const WINDOW_SAMPLES: usize = 1200;

/// Default band frequencies in Hz.
pub const BAND_CENTERS_HZ: [f64; 16] =
    [80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0, 220.0, 240.0, 260.0, 280.0, 300.0, 360.0, 400.0, 440.0, 520.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filterbank {
    pub sample_rate_hz: u32,
    pub hop_samples: usize,
    pub window_samples: usize,
    pub centers_hz: Vec<f64>,
    #[serde(skip)]
    tables: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Default for Filterbank {
    fn default() -> Self {
        Self::new(SAMPLE_RATE, HOP_SAMPLES, WINDOW_SAMPLES, BAND_CENTERS_HZ.to_vec())
    }
}

impl Filterbank {
    pub fn new(sample_rate_hz: u32, hop_samples: usize, window_samples: usize, centers_hz: Vec<f64>) -> Self {
        let tables = centers_hz
            .iter()
            .map(|&f| {
                let w = 2.0 * PI * f / sample_rate_hz as f64;
                let cos = (0..window_samples).map(|n| (w * n as f64).cos() as f32).collect();
                let sin = (0..window_samples).map(|n| (w * n as f64).sin() as f32).collect();
                (cos, sin)
            })
            .collect();
        Self { sample_rate_hz, hop_samples, window_samples, centers_hz, tables }
    }

    pub fn bands(&self) -> usize {
        self.centers_hz.len()
    }

    /// One frame per started hop.
    pub fn frame_count(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop_samples)
    }

    pub fn analyze(&self, samples: &[f32]) -> Result<FrameFeatures> {
        let frames = self.frame_count(samples.len());
        let half = self.window_samples / 2;
        let mut data = Vec::with_capacity(frames * self.bands());
        let scale = 2.0 / self.window_samples as f64;
        for t in 0..frames {
            let center = t * self.hop_samples + self.hop_samples / 2;
            let start = center as isize - half as isize;
            for (cos, sin) in &self.tables {
                let (mut re, mut im) = (0f64, 0f64);
                for n in 0..self.window_samples {
                    let idx = start + n as isize;
                    if idx < 0 || idx as usize >= samples.len() {
                        continue;
                    }
                    let x = samples[idx as usize];
                    re += (x * cos[n]) as f64;
                    im += (x * sin[n]) as f64;
                }
                data.push((scale * (re * re + im * im).sqrt()) as f32);
            }
        }
        FrameFeatures::from_rows(self.bands(), self.sample_rate_hz, self.hop_samples, data)
    }

    /// Index of the band closest to `hz`.
    pub fn nearest_band(&self, hz: f64) -> usize {
        let mut best = 0;
        for (i, c) in self.centers_hz.iter().enumerate() {
            if (c - hz).abs() < (self.centers_hz[best] - hz).abs() {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_tone_lands_in_its_own_band_only() {
        let fb = Filterbank::default();
        let n = 24_000;
        let x: Vec<f32> = (0..n).map(|i| (0.3 * (2.0 * PI * 220.0 * i as f64 / 24_000.0).sin()) as f32).collect();
        let f = fb.analyze(&x).unwrap();
        assert_eq!(f.frames(), 50);
        let band = fb.nearest_band(220.0);
        for t in 2..48 {
            let row = f.frame(t);
            assert!((row[band] - 0.3).abs() < 1e-3, "{}", row[band]);
            for (b, v) in row.iter().enumerate() {
                if b != band {
                    assert!(v.abs() < 1e-3, "band {b}: {v}");
                }
            }
        }
    }
}
