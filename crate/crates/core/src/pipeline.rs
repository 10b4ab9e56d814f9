//! Glue between the stages: feature analysis of a manifest, codec fitting,
//! training-example assembly and evaluation of synthesized test entries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TransformerConfig;
use crate::dataset::{load_entry_audio, parallel_map, ManifestEntry, Split};
use crate::eval::{accuracy_report, AccuracyReport, FactorMeter, MeasuredFactors};
use crate::factors::StyleFactors;
use crate::filterbank::Filterbank;
use crate::prompt::StylePromptSet;
use crate::rvq::{fit_codebooks, AcousticCodeMatrix, CodebookSet, FrameFeatures};
use crate::sar::{Sampling, SarExample};
use crate::snar::SnarExample;
use crate::synth::Pipeline;
use crate::text::{Segment, Vocabulary};
use crate::trainer::TrainConfig;
use crate::Result;

/// Model, codec and schedule settings of one training profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Profile {
    pub model: TransformerConfig,
    pub train: TrainConfig,
    pub codec_layers: usize,
    pub codebook_size: usize,
    /// Extra prompts per training utterance for the autoregressive model,
    /// drawn from the manifest's prompt pool.
    pub extra_prompts: usize,
    pub seed: u64,
}

impl Default for Profile {
    fn default() -> Self {
        Self::demo()
    }
}

impl Profile {
    /// Desk-scale profile sized for one CPU core.
    pub fn demo() -> Self {
        Self {
            model: TransformerConfig {
                layers: 3,
                heads: 4,
                d_model: 64,
                d_ff: 256,
                dropout: 0.0,
                acoustic_vocab: 65,
                max_len: 256,
            },
            train: TrainConfig::demo(),
            codec_layers: 8,
            codebook_size: 64,
            extra_prompts: 16,
            seed: 0,
        }
    }

    /// Full architecture with the full schedule.
    pub fn full() -> Self {
        Self {
            model: TransformerConfig::default(),
            train: TrainConfig::default(),
            codec_layers: 8,
            codebook_size: 64,
            extra_prompts: 0,
            seed: 0,
        }
    }
}

/// Filterbank features of every entry, in manifest order.
pub fn analyze_entries(
    entries: &[ManifestEntry],
    dir: &Path,
    fb: &Filterbank,
    jobs: usize,
) -> Result<Vec<FrameFeatures>> {
    parallel_map(entries, jobs, |e| fb.analyze(&load_entry_audio(e, dir)?)).into_iter().collect()
}

/// Residual codebooks fitted on the training entries' features.
pub fn fit_codec(
    entries: &[ManifestEntry],
    features: &[FrameFeatures],
    layers: usize,
    codebook_size: usize,
    seed: u64,
) -> Result<CodebookSet> {
    let train: Vec<FrameFeatures> =
        entries.iter().zip(features).filter(|(e, _)| e.split == Split::Train).map(|(_, f)| f.clone()).collect();
    fit_codebooks(&train, layers, codebook_size, seed)
}

pub fn encode_all(books: &CodebookSet, features: &[FrameFeatures], jobs: usize) -> Result<Vec<AcousticCodeMatrix>> {
    parallel_map(features, jobs, |f| books.encode(f)).into_iter().collect()
}

/// Character vocabulary over every prompt and transcript.
pub fn build_vocab(entries: &[ManifestEntry]) -> Result<Vocabulary> {
    Vocabulary::build(entries.iter().flat_map(|e| [e.prompt.as_str(), e.text.as_str()]))
}

pub fn sar_examples(
    entries: &[ManifestEntry],
    codes: &[AcousticCodeMatrix],
    vocab: &Vocabulary,
    split: Split,
) -> Result<Vec<SarExample>> {
    entries
        .iter()
        .zip(codes)
        .filter(|(e, _)| e.split == split)
        .map(|(e, c)| {
            Ok(SarExample {
                style: vocab.tokenize(&e.prompt, Segment::Style)?.ids,
                text: vocab.tokenize(&e.text, Segment::Text)?.ids,
                codes: c.column(0),
            })
        })
        .collect()
}

/// Character vocabulary over the manifest plus every prompt in `pool`.
pub fn build_vocab_with_pool(entries: &[ManifestEntry], pool: &[StylePromptSet]) -> Result<Vocabulary> {
    let manifest = entries.iter().flat_map(|e| [e.prompt.as_str(), e.text.as_str()]);
    Vocabulary::build(manifest.chain(pool.iter().flat_map(|s| s.prompts.iter().map(String::as_str))))
}

/// Training-split examples where each utterance keeps its own prompt and is
/// repeated with up to `extra` further prompts drawn from its group's pool.
/// Prompts attached to validation or test entries are never drawn.
pub fn sar_train_examples(
    entries: &[ManifestEntry],
    codes: &[AcousticCodeMatrix],
    vocab: &Vocabulary,
    pool: &[StylePromptSet],
    extra: usize,
    seed: u64,
) -> Result<Vec<SarExample>> {
    let held_out: HashSet<&str> =
        entries.iter().filter(|e| e.split != Split::Train).map(|e| e.prompt.as_str()).collect();
    let by_group: HashMap<StyleFactors, Vec<&str>> = pool
        .iter()
        .map(|s| (s.factors, s.prompts.iter().map(String::as_str).filter(|p| !held_out.contains(p)).collect()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (e, c) in entries.iter().zip(codes).filter(|(e, _)| e.split == Split::Train) {
        let text = vocab.tokenize(&e.text, Segment::Text)?.ids;
        let layer1 = c.column(0);
        let candidates: Vec<&str> = by_group
            .get(&e.factors())
            .map(|v| v.iter().copied().filter(|p| *p != e.prompt).collect())
            .unwrap_or_default();
        let picked = index::sample(&mut rng, candidates.len(), extra.min(candidates.len()));
        for prompt in std::iter::once(e.prompt.as_str()).chain(picked.iter().map(|i| candidates[i])) {
            out.push(SarExample {
                style: vocab.tokenize(prompt, Segment::Style)?.ids,
                text: text.clone(),
                codes: layer1.clone(),
            });
        }
    }
    Ok(out)
}

pub fn snar_examples(
    entries: &[ManifestEntry],
    codes: &[AcousticCodeMatrix],
    vocab: &Vocabulary,
    split: Split,
) -> Result<Vec<SnarExample>> {
    entries
        .iter()
        .zip(codes)
        .filter(|(e, _)| e.split == split)
        .map(|(e, c)| Ok(SnarExample { text: vocab.tokenize(&e.text, Segment::Text)?.ids, codes: c.clone() }))
        .collect()
}

/// Per-entry outcome of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub frames: usize,
    pub measured: MeasuredFactors,
}

/// Synthesizes every entry from its prompt and transcript and scores the
/// measured factors against the entry's labels.
pub fn evaluate(
    entries: &[ManifestEntry],
    pipeline: &Pipeline<'_>,
    meter: &FactorMeter,
    sampling: Sampling,
    max_frames: usize,
    jobs: usize,
) -> Result<(AccuracyReport, Vec<EvalRow>)> {
    let rows: Vec<EvalRow> = parallel_map(entries, jobs, |e| -> Result<EvalRow> {
        let out = pipeline.synthesize(&e.prompt, &e.text, sampling, max_frames)?;
        let (measured, _) = meter.measure(&out.waveform, &e.text)?;
        Ok(EvalRow { id: e.id.clone(), frames: out.codes.frames(), measured })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let targets: Vec<_> = entries.iter().map(|e| (e.id.clone(), e.factors())).collect();
    let outputs: BTreeMap<_, _> = rows.iter().map(|r| (r.id.clone(), r.measured)).collect();
    Ok((accuracy_report(&targets, &outputs)?, rows))
}
