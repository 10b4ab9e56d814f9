//! Synthetic controllability corpus, factor measurement on generated audio
//! and per-factor accuracy reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, SAMPLE_RATE};
use crate::dataset::{self, CorpusBins, ManifestEntry, PitchBinning, Split, GENDER_THRESHOLD_HZ};
use crate::factors::{Emotion, Gender, Level, StyleFactors};
use crate::features::{count_units, measure, RawMeasurements};
use crate::filterbank::Filterbank;
use crate::prompt::{offline_generate, write_prompt_sets, FilterRules, Grammar, StylePromptSet};
use crate::rvq::FrameFeatures;
use crate::synth::render_waveform;
use crate::{Error, Result};

/// Loudness contour repeated on every syllable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contour {
    Flat,
    Fall,
    Hump,
    Rise,
}

impl Contour {
    pub const ALL: [Contour; 4] = [Contour::Flat, Contour::Fall, Contour::Hump, Contour::Rise];

    /// Relative loudness at position `x` in `[0, 1]` of a syllable.
    pub fn value(self, x: f64) -> f64 {
        match self {
            Contour::Flat => 1.0,
            Contour::Fall => 1.0 - 0.75 * x,
            Contour::Hump => 0.25 + 0.75 * (std::f64::consts::PI * x).sin(),
            Contour::Rise => 0.25 + 0.75 * x,
        }
    }
}

/// Each emotion is a syllable contour paired with a dark or bright timbre.
pub fn emotion_signature(e: Emotion) -> (Contour, bool) {
    match e {
        Emotion::Neutral => (Contour::Flat, false),
        Emotion::Contempt => (Contour::Flat, true),
        Emotion::Sad => (Contour::Fall, false),
        Emotion::Disgusted => (Contour::Fall, true),
        Emotion::Fear => (Contour::Hump, false),
        Emotion::Happy => (Contour::Hump, true),
        Emotion::Surprised => (Contour::Rise, false),
        Emotion::Angry => (Contour::Rise, true),
    }
}

fn emotion_from_signature(contour: Contour, bright: bool) -> Emotion {
    *Emotion::ALL.iter().find(|e| emotion_signature(**e) == (contour, bright)).expect("signature table is complete")
}

/// Parameters of the synthetic speech generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Base frequency per gender, indexed by pitch level.
    pub male_f0_hz: [f64; 3],
    pub female_f0_hz: [f64; 3],
    /// Frames per syllable, indexed by speed level (slow, normal, fast).
    pub syllable_frames: [usize; 3],
    /// RMS of the voiced part, indexed by volume level.
    pub voiced_rms: [f64; 3],
    /// Relative random spread of the loudness.
    pub rms_jitter: f64,
    /// Second-harmonic to fundamental amplitude ratio for dark and bright timbre.
    pub harmonic_ratio: [f64; 2],
    pub silence_frames: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub syllables: Vec<String>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        let syllables = ["ba", "ko", "mi", "tu", "se", "la", "no", "pe", "ri", "du", "ga", "fo"];
        Self {
            male_f0_hz: [100.0, 120.0, 140.0],
            female_f0_hz: [180.0, 220.0, 260.0],
            syllable_frames: [20, 14, 10],
            voiced_rms: [0.04, 0.08, 0.16],
            rms_jitter: 0.08,
            harmonic_ratio: [0.25, 1.0],
            silence_frames: 4,
            min_words: 2,
            max_words: 4,
            syllables: syllables.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl GeneratorParams {
    pub fn f0(&self, g: Gender, pitch: Level) -> f64 {
        match g {
            Gender::Male => self.male_f0_hz[pitch.index()],
            Gender::Female => self.female_f0_hz[pitch.index()],
        }
    }

    /// A transcript of one-syllable pseudo-words.
    pub fn transcript<R: Rng>(&self, rng: &mut R) -> String {
        let words = rng.gen_range(self.min_words..=self.max_words);
        (0..words)
            .map(|_| self.syllables[rng.gen_range(0..self.syllables.len())].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Band amplitudes for one utterance: silence, one syllable per word, silence.
    pub fn features(&self, f: &StyleFactors, words: usize, loudness: f64, fb: &Filterbank) -> FrameFeatures {
        let f0 = self.f0(f.gender, f.pitch);
        let (contour, bright) = emotion_signature(f.emotion);
        let ratio = self.harmonic_ratio[bright as usize];
        let len = self.syllable_frames[f.speed.index()];
        let shape: Vec<f64> = (0..len).map(|i| contour.value((i as f64 + 0.5) / len as f64)).collect();
        let mean_square = shape.iter().map(|v| v * v).sum::<f64>() / len as f64;
        // two sinusoids with amplitudes a and ratio*a have RMS a*sqrt((1+ratio^2)/2)
        let fundamental = loudness * (2.0 / (1.0 + ratio * ratio)).sqrt() / mean_square.sqrt();
        let (b0, b1) = (fb.nearest_band(f0), fb.nearest_band(2.0 * f0));
        let dim = fb.bands();
        let mut out = FrameFeatures::new(dim, fb.sample_rate_hz, fb.hop_samples);
        let silent = vec![0f32; dim];
        for _ in 0..self.silence_frames {
            out.push(&silent).expect("dimension matches");
        }
        for _ in 0..words {
            for s in &shape {
                let mut row = vec![0f32; dim];
                row[b0] = (fundamental * s) as f32;
                row[b1] += (fundamental * ratio * s) as f32;
                out.push(&row).expect("dimension matches");
            }
        }
        for _ in 0..self.silence_frames {
            out.push(&silent).expect("dimension matches");
        }
        out
    }

    /// Renders one utterance with seeded loudness jitter.
    pub fn render<R: Rng>(&self, f: &StyleFactors, transcript: &str, fb: &Filterbank, rng: &mut R) -> Result<Vec<f32>> {
        let jitter = 1.0 + self.rms_jitter * (2.0 * rng.gen::<f64>() - 1.0);
        let loudness = self.voiced_rms[f.volume.index()] * jitter;
        render_waveform(&self.features(f, count_units(transcript), loudness, fb), fb)
    }
}

/// Options for the synthetic corpus.
#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub n_per_group: usize,
    pub seed: u64,
    pub prompts_per_group: usize,
    pub valid_n: usize,
    pub test_n: usize,
    pub params: GeneratorParams,
    pub jobs: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            n_per_group: 3,
            seed: 0,
            prompts_per_group: 500,
            valid_n: 200,
            test_n: 200,
            params: GeneratorParams::default(),
            jobs: 1,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes `audio/*.wav`, `manifest.jsonl` and the per-group prompt pool under
/// `out_dir`. Labels are the planted factors; raw measurements come from the
/// rendered audio.
pub fn make_synthetic_corpus(out_dir: &Path, opts: &CorpusOptions) -> Result<Vec<ManifestEntry>> {
    if opts.n_per_group == 0 {
        return Err(Error::InvalidConfig("n_per_group must be at least 1".into()));
    }
    let fb = Filterbank::default();
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;
    let groups = StyleFactors::all();
    let rules = FilterRules::default();
    let grammar = Grammar::default_prompts();
    let sets: Vec<StylePromptSet> = dataset::parallel_map(&groups, opts.jobs, |g| {
        let seed = opts.seed ^ (g.key().bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64)));
        offline_generate(g, &rules, &grammar, opts.prompts_per_group, seed)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (gi, g) in groups.iter().enumerate() {
        for k in 0..opts.n_per_group {
            let id = format!("syn{:03}_{k}", gi);
            let transcript = opts.params.transcript(&mut rng);
            jobs.push((id, *g, transcript, rng.gen::<u64>()));
        }
    }
    let rendered = dataset::parallel_map(&jobs, opts.jobs, |(id, g, transcript, seed)| -> Result<ManifestEntry> {
        let mut r = ChaCha8Rng::seed_from_u64(*seed);
        let samples = opts.params.render(g, transcript, &fb, &mut r)?;
        let rel = format!("audio/{id}.wav");
        write_wav(&out_dir.join(&rel), &samples, SAMPLE_RATE)?;
        let raw = measure(&samples, SAMPLE_RATE, count_units(transcript))?;
        Ok(ManifestEntry {
            id: id.clone(),
            audio: rel,
            text: transcript.clone(),
            prompt: String::new(),
            gender: g.gender,
            pitch: g.pitch,
            speed: g.speed,
            volume: g.volume,
            emotion: g.emotion,
            f0_hz: raw.mean_f0_hz,
            rms: raw.rms_energy,
            rate: raw.speech_rate,
            split: Split::Train,
            alignment: None,
        })
    });
    let mut entries = rendered.into_iter().collect::<Result<Vec<_>>>()?;
    dataset::attach_prompts(&mut entries, &sets, opts.seed)?;
    dataset::split(&mut entries, opts.valid_n, opts.test_n, opts.seed)?;
    let manifest = out_dir.join(MANIFEST_FILE);
    dataset::write_manifest(&manifest, &entries)?;
    write_prompt_sets(&dataset::prompt_pool_path(&manifest), &sets)?;
    Ok(entries)
}

/// Factors read off an utterance; `None` where the audio gives no evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredFactors {
    pub gender: Option<Gender>,
    pub pitch: Option<Level>,
    pub speed: Option<Level>,
    pub volume: Level,
    pub emotion: Option<Emotion>,
}

impl MeasuredFactors {
    pub fn from_factors(f: &StyleFactors) -> Self {
        Self {
            gender: Some(f.gender),
            pitch: Some(f.pitch),
            speed: Some(f.speed),
            volume: f.volume,
            emotion: Some(f.emotion),
        }
    }
}

/// Measurement context: corpus cut points plus envelope templates measured
/// on reference generator output.
#[derive(Debug, Clone)]
pub struct FactorMeter {
    pub bins: CorpusBins,
    pub params: GeneratorParams,
    pub filterbank: Filterbank,
    /// Timbre ratio separating dark from bright.
    pub timbre_threshold: f64,
    templates: BTreeMap<(usize, usize), Vec<f64>>,
}

const CONTOUR_POINTS: usize = 8;

impl FactorMeter {
    pub fn new(bins: CorpusBins, params: GeneratorParams) -> Result<Self> {
        let filterbank = Filterbank::default();
        let threshold = (params.harmonic_ratio[0] * params.harmonic_ratio[1]).sqrt();
        let mut meter = Self { bins, params, filterbank, timbre_threshold: threshold, templates: BTreeMap::new() };
        for speed in Level::ALL {
            for (ci, contour) in Contour::ALL.iter().enumerate() {
                let emotion = emotion_from_signature(*contour, false);
                let f = StyleFactors::new(Gender::Male, Level::Normal, speed, Level::Normal, emotion);
                let feats = meter.params.features(&f, 3, meter.params.voiced_rms[1], &meter.filterbank);
                let wave = render_waveform(&feats, &meter.filterbank)?;
                let analysed = meter.filterbank.analyze(&wave)?;
                let f0 = meter.params.f0(Gender::Male, Level::Normal);
                let t = meter.contour_profile(&analysed, f0, 3).ok_or(Error::EmptyInput("reference contour"))?;
                meter.templates.insert((speed.index(), ci), t);
            }
        }
        Ok(meter)
    }

    /// Fits bins on the raw measurements of a whole manifest.
    pub fn from_manifest(entries: &[ManifestEntry], params: GeneratorParams) -> Result<Self> {
        Self::new(CorpusBins::fit(entries, PitchBinning::PerGender)?, params)
    }

    /// Syllable-averaged, mean-normalised loudness contour of the voiced span.
    fn contour_profile(&self, feats: &FrameFeatures, f0: f64, units: usize) -> Option<Vec<f64>> {
        let (b0, b1) = (self.filterbank.nearest_band(f0), self.filterbank.nearest_band(2.0 * f0));
        let env: Vec<f64> = (0..feats.frames())
            .map(|t| {
                let r = feats.frame(t);
                ((r[b0] as f64).powi(2) + (r[b1] as f64).powi(2)).sqrt()
            })
            .collect();
        let peak = env.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 || units == 0 {
            return None;
        }
        let first = env.iter().position(|&v| v > 0.1 * peak)?;
        let last = env.iter().rposition(|&v| v > 0.1 * peak)?;
        let span = (last - first + 1) as f64;
        let seg = span / units as f64;
        let mut profile = [0.0; CONTOUR_POINTS];
        for u in 0..units {
            for (k, p) in profile.iter_mut().enumerate() {
                let pos = first as f64 + seg * (u as f64 + (k as f64 + 0.5) / CONTOUR_POINTS as f64) - 0.5;
                let pos = pos.clamp(first as f64, last as f64);
                let i = pos.floor() as usize;
                let j = (i + 1).min(last);
                let frac = pos - i as f64;
                *p += env[i] + (env[j] - env[i]) * frac;
            }
        }
        let mean = profile.iter().sum::<f64>() / CONTOUR_POINTS as f64;
        if mean <= 0.0 {
            return None;
        }
        Some(profile.iter().map(|v| v / mean).collect())
    }

    /// Reads all five factors from a waveform at the working sample rate.
    pub fn measure(&self, samples: &[f32], transcript: &str) -> Result<(MeasuredFactors, RawMeasurements)> {
        let units = count_units(transcript);
        if samples.is_empty() {
            let raw = RawMeasurements { mean_f0_hz: 0.0, rms_energy: 0.0, speech_rate: 0.0 };
            let m = MeasuredFactors { gender: None, pitch: None, speed: None, volume: Level::Low, emotion: None };
            return Ok((m, raw));
        }
        let raw = measure(samples, SAMPLE_RATE, units)?;
        let volume = self.bins.volume(raw.rms_energy);
        if raw.mean_f0_hz <= 0.0 {
            tracing::warn!("no voiced frames; pitch and gender unknown");
            return Ok((MeasuredFactors { gender: None, pitch: None, speed: None, volume, emotion: None }, raw));
        }
        let gender = if raw.mean_f0_hz < GENDER_THRESHOLD_HZ { Gender::Male } else { Gender::Female };
        let pitch = self.bins.pitch(gender, raw.mean_f0_hz);
        let speed = self.bins.speed(raw.speech_rate);
        let emotion = self.emotion(samples, raw.mean_f0_hz, units, speed)?;
        Ok((MeasuredFactors { gender: Some(gender), pitch, speed, volume, emotion }, raw))
    }

    fn emotion(&self, samples: &[f32], f0: f64, units: usize, speed: Option<Level>) -> Result<Option<Emotion>> {
        let feats = self.filterbank.analyze(samples)?;
        let (b0, b1) = (self.filterbank.nearest_band(f0), self.filterbank.nearest_band(2.0 * f0));
        let (mut fundamental, mut harmonic) = (0.0, 0.0);
        for t in 0..feats.frames() {
            fundamental += feats.frame(t)[b0] as f64;
            harmonic += feats.frame(t)[b1] as f64;
        }
        if fundamental <= 0.0 {
            return Ok(None);
        }
        let bright = harmonic / fundamental > self.timbre_threshold;
        let Some(profile) = self.contour_profile(&feats, f0, units) else { return Ok(None) };
        let speed = speed.unwrap_or(Level::Normal).index();
        let mut best = (f64::INFINITY, Contour::Flat);
        for (ci, contour) in Contour::ALL.iter().enumerate() {
            let t = &self.templates[&(speed, ci)];
            let d: f64 = t.iter().zip(&profile).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, *contour);
            }
        }
        Ok(Some(emotion_from_signature(best.1, bright)))
    }
}

pub const FACTOR_NAMES: [&str; 5] = ["gender", "pitch", "speed", "volume", "emotion"];
pub const CHANCE_LEVELS: [f64; 5] = [0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.125];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_factor: BTreeMap<String, f64>,
    pub mean: f64,
    pub n: usize,
    pub chance_levels: BTreeMap<String, f64>,
}

fn hits(target: &StyleFactors, m: &MeasuredFactors) -> [bool; 5] {
    [
        m.gender == Some(target.gender),
        m.pitch == Some(target.pitch),
        m.speed == Some(target.speed),
        m.volume == target.volume,
        m.emotion == Some(target.emotion),
    ]
}

/// Fraction of entries whose measured factor equals the target, per factor.
pub fn accuracy_report(
    targets: &[(String, StyleFactors)],
    outputs: &BTreeMap<String, MeasuredFactors>,
) -> Result<AccuracyReport> {
    let missing: Vec<&str> =
        targets.iter().filter(|(id, _)| !outputs.contains_key(id)).map(|(id, _)| id.as_str()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingOutput(missing.join(", ")));
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput("evaluation entries"));
    }
    let mut counts = [0usize; 5];
    for (id, target) in targets {
        for (c, h) in counts.iter_mut().zip(hits(target, &outputs[id])) {
            *c += h as usize;
        }
    }
    let n = targets.len();
    let acc: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(AccuracyReport {
        per_factor: FACTOR_NAMES.iter().zip(&acc).map(|(k, v)| (k.to_string(), *v)).collect(),
        mean: acc.iter().sum::<f64>() / 5.0,
        n,
        chance_levels: FACTOR_NAMES.iter().zip(CHANCE_LEVELS).map(|(k, v)| (k.to_string(), v)).collect(),
    })
}

impl AccuracyReport {
    /// Percentages in the order Gender, Pitch, Speed, Volume, Emotion, Mean.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let header = ["Gender", "Pitch", "Speed", "Volume", "Emotion", "Mean"];
        let _ = writeln!(s, "{:<8}{}", "", header.iter().map(|h| format!("{h:>9}")).collect::<String>());
        let row = |values: Vec<f64>| values.iter().map(|v| format!("{:>9.1}", 100.0 * v)).collect::<String>();
        let mut acc: Vec<f64> = FACTOR_NAMES.iter().map(|k| self.per_factor[*k]).collect();
        acc.push(self.mean);
        let mut chance = CHANCE_LEVELS.to_vec();
        chance.push(CHANCE_LEVELS.iter().sum::<f64>() / 5.0);
        let _ = writeln!(s, "{:<8}{}", "Acc(%)", row(acc));
        let _ = writeln!(s, "{:<8}{}", "Chance", row(chance));
        let _ = write!(s, "n = {}", self.n);
        s
    }
}
