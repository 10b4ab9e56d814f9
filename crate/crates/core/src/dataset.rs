//! Manifest construction: measurement of source audio, level assignment,
//! prompt attachment and the train/valid/test split.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_for_analysis, read_wav, write_wav, SAMPLE_RATE};
use crate::factors::{Emotion, Gender, Level, StyleFactors};
use crate::features::{count_units, measure, speech_rate, LevelBins, RawMeasurements};
use crate::prompt::StylePromptSet;
use crate::{Error, Result};

/// f0 separating male from female voices when metadata lacks gender.
pub const GENDER_THRESHOLD_HZ: f64 = 160.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Valid,
    Test,
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: String,
    pub text: String,
    pub prompt: String,
    pub gender: Gender,
    pub pitch: Level,
    pub speed: Level,
    pub volume: Level,
    pub emotion: Emotion,
    pub f0_hz: f64,
    pub rms: f64,
    pub rate: f64,
    pub split: Split,
    /// Optional phone durations in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Vec<f64>>,
}

impl ManifestEntry {
    pub fn factors(&self) -> StyleFactors {
        StyleFactors::new(self.gender, self.pitch, self.speed, self.volume, self.emotion)
    }

    pub fn raw(&self) -> RawMeasurements {
        RawMeasurements { mean_f0_hz: self.f0_hz, rms_energy: self.rms, speech_rate: self.rate }
    }

    pub fn set_factors(&mut self, f: StyleFactors) {
        self.gender = f.gender;
        self.pitch = f.pitch;
        self.speed = f.speed;
        self.volume = f.volume;
        self.emotion = f.emotion;
    }

    /// Audio path resolved against the manifest's directory.
    pub fn audio_path(&self, manifest_dir: &Path) -> PathBuf {
        let p = Path::new(&self.audio);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }
}

/// One line of the source metadata table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub id: String,
    pub audio: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub gender: Option<Gender>,
    #[serde(default)]
    pub emotion: Option<Emotion>,
    #[serde(default)]
    pub alignment: Option<Vec<f64>>,
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format { path: path.to_path_buf(), message: format!("line {}: {e}", n + 1) })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_jsonl(path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_jsonl(path, entries)
}

/// Where ingested audio lives and where converted copies go.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Directory that relative source paths are resolved against.
    pub source_dir: PathBuf,
    /// Directory for 24 kHz mono copies of files that need conversion.
    pub converted_dir: PathBuf,
    pub jobs: usize,
}

fn ingest_one(row: &SourceRow, opts: &IngestOptions) -> Result<Option<ManifestEntry>> {
    let text =
        row.text.clone().filter(|t| !t.trim().is_empty()).ok_or_else(|| Error::MissingTranscript(row.id.clone()))?;
    let src = {
        let p = Path::new(&row.audio);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            opts.source_dir.join(p)
        }
    };
    let header = match hound::WavReader::open(&src) {
        Ok(r) => r.spec(),
        Err(e) => {
            tracing::warn!(id = %row.id, path = %src.display(), error = %e, "skipping unreadable audio");
            return Ok(None);
        }
    };
    let audio = match load_for_analysis(&src) {
        Ok(a) => a,
        Err(e) => {
            tracing::warn!(id = %row.id, path = %src.display(), error = %e, "skipping unreadable audio");
            return Ok(None);
        }
    };
    let audio_path = if header.sample_rate == SAMPLE_RATE && header.channels == 1 {
        row.audio.clone()
    } else {
        std::fs::create_dir_all(&opts.converted_dir)?;
        let out = opts.converted_dir.join(format!("{}.wav", row.id));
        write_wav(&out, &audio.samples, SAMPLE_RATE)?;
        out.display().to_string()
    };
    let raw = if audio.samples.is_empty() {
        RawMeasurements { mean_f0_hz: 0.0, rms_energy: 0.0, speech_rate: 0.0 }
    } else {
        measure(&audio.samples, SAMPLE_RATE, count_units(&text))?
    };
    // Phone durations, when supplied, replace the word-based estimate.
    let raw = match row.alignment.as_deref() {
        Some(phones) if !phones.is_empty() => {
            RawMeasurements { speech_rate: speech_rate(phones.len(), phones.iter().sum())?, ..raw }
        }
        _ => raw,
    };
    let gender =
        row.gender.unwrap_or(if raw.mean_f0_hz >= GENDER_THRESHOLD_HZ { Gender::Female } else { Gender::Male });
    Ok(Some(ManifestEntry {
        id: row.id.clone(),
        audio: audio_path,
        text,
        prompt: String::new(),
        gender,
        pitch: Level::Normal,
        speed: Level::Normal,
        volume: Level::Normal,
        emotion: row.emotion.unwrap_or(Emotion::Neutral),
        f0_hz: raw.mean_f0_hz,
        rms: raw.rms_energy,
        rate: raw.speech_rate,
        split: Split::Train,
        alignment: row.alignment.clone(),
    }))
}

/// Measures every source row. Unreadable audio is logged and skipped; a
/// missing transcript is an error. Output order follows input order.
pub fn ingest(rows: &[SourceRow], opts: &IngestOptions) -> Result<Vec<ManifestEntry>> {
    let results = parallel_map(rows, opts.jobs, |row| ingest_one(row, opts));
    let mut out = Vec::with_capacity(rows.len());
    for r in results {
        if let Some(e) = r? {
            out.push(e);
        }
    }
    Ok(out)
}

/// Order-preserving map over at most `jobs` worker threads.
pub fn parallel_map<T: Sync, U: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// How pitch cut points are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PitchBinning {
    #[default]
    PerGender,
    Overall,
}

/// Cut points fitted on a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusBins {
    pub pitch_male: Option<LevelBins>,
    pub pitch_female: Option<LevelBins>,
    pub speed: LevelBins,
    pub volume: LevelBins,
}

impl CorpusBins {
    pub fn fit(entries: &[ManifestEntry], mode: PitchBinning) -> Result<Self> {
        if entries.len() < 3 {
            return Err(Error::TooFewEntries { needed: 3, got: entries.len() });
        }
        let voiced = |g: Option<Gender>| -> Vec<f64> {
            entries.iter().filter(|e| e.f0_hz > 0.0 && g.is_none_or(|g| e.gender == g)).map(|e| e.f0_hz).collect()
        };
        let fit_optional = |values: Vec<f64>| -> Result<Option<LevelBins>> {
            match values.len() {
                0 => Ok(None),
                n if n < 3 => Err(Error::TooFewEntries { needed: 3, got: n }),
                _ => LevelBins::fit(&values).map(Some),
            }
        };
        let (pitch_male, pitch_female) = match mode {
            PitchBinning::PerGender => {
                (fit_optional(voiced(Some(Gender::Male)))?, fit_optional(voiced(Some(Gender::Female)))?)
            }
            PitchBinning::Overall => {
                let all = fit_optional(voiced(None))?;
                (all, all)
            }
        };
        let rates: Vec<f64> = entries.iter().filter(|e| e.rate > 0.0).map(|e| e.rate).collect();
        let speed = if rates.len() >= 3 { LevelBins::fit(&rates)? } else { LevelBins { low_cut: 0.0, high_cut: 0.0 } };
        let volume = LevelBins::fit(&entries.iter().map(|e| e.rms).collect::<Vec<_>>())?;
        Ok(Self { pitch_male, pitch_female, speed, volume })
    }

    pub fn pitch_bins(&self, gender: Gender) -> Option<&LevelBins> {
        match gender {
            Gender::Male => self.pitch_male.as_ref(),
            Gender::Female => self.pitch_female.as_ref(),
        }
    }

    /// Pitch level; `None` for unvoiced input.
    pub fn pitch(&self, gender: Gender, f0_hz: f64) -> Option<Level> {
        if f0_hz > 0.0 {
            self.pitch_bins(gender).map(|b| b.classify(f0_hz))
        } else {
            None
        }
    }

    pub fn speed(&self, rate: f64) -> Option<Level> {
        (rate > 0.0).then(|| self.speed.classify(rate))
    }

    pub fn volume(&self, rms: f64) -> Level {
        self.volume.classify(rms)
    }
}

/// Fits corpus-wide cut points and labels pitch, speed and volume. Unvoiced
/// entries get normal pitch and speed.
pub fn assign_levels(entries: &mut [ManifestEntry], mode: PitchBinning) -> Result<CorpusBins> {
    let bins = CorpusBins::fit(entries, mode)?;
    for e in entries.iter_mut() {
        e.pitch = bins.pitch(e.gender, e.f0_hz).unwrap_or(Level::Normal);
        e.speed = bins.speed(e.rate).unwrap_or(Level::Normal);
        e.volume = bins.volume(e.rms);
    }
    Ok(bins)
}

/// Gives each entry a prompt drawn from its factor group's set.
pub fn attach_prompts(entries: &mut [ManifestEntry], sets: &[StylePromptSet], seed: u64) -> Result<()> {
    let by_group: HashMap<StyleFactors, &StylePromptSet> = sets.iter().map(|s| (s.factors, s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in entries.iter_mut() {
        let group = e.factors();
        let set =
            by_group.get(&group).filter(|s| !s.is_empty()).ok_or_else(|| Error::MissingPromptGroup(group.key()))?;
        e.prompt = set.prompts[rng.gen_range(0..set.len())].clone();
    }
    Ok(())
}

/// Seeded sampling of validation and test entries; the rest are training.
pub fn split(entries: &mut [ManifestEntry], valid_n: usize, test_n: usize, seed: u64) -> Result<()> {
    let needed = valid_n + test_n;
    if entries.len() < needed {
        return Err(Error::TooFewEntries { needed, got: entries.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, entries.len(), needed).into_vec();
    entries.iter_mut().for_each(|e| e.split = Split::Train);
    for (k, &i) in picked.iter().enumerate() {
        entries[i].split = if k < valid_n { Split::Valid } else { Split::Test };
    }
    Ok(())
}

/// Where the prompt pool behind a manifest is stored: `x.jsonl` becomes
/// `x.prompts.jsonl`.
pub fn prompt_pool_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("prompts.jsonl")
}

/// Reads a WAV whose path is relative to the manifest directory.
pub fn load_entry_audio(entry: &ManifestEntry, manifest_dir: &Path) -> Result<Vec<f32>> {
    Ok(read_wav(&entry.audio_path(manifest_dir))?.samples)
}
