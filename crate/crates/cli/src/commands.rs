use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use stylevox_core::checkpoint::{Checkpoint, ModelKind};
use stylevox_core::dataset::{
    assign_levels, attach_prompts, ingest, prompt_pool_path, read_jsonl, read_manifest, split, write_manifest,
    IngestOptions, ManifestEntry, SourceRow, Split,
};
use stylevox_core::eval::{make_synthetic_corpus, AccuracyReport, CorpusOptions, FactorMeter, GeneratorParams};
use stylevox_core::factors::StyleFactors;
use stylevox_core::features::{count_units, measure};
use stylevox_core::filterbank::Filterbank;
use stylevox_core::pipeline::{
    analyze_entries, build_vocab_with_pool, encode_all, evaluate, sar_examples, sar_train_examples, snar_examples,
    EvalRow,
};
use stylevox_core::prompt::{
    build_prompt_sets, read_prompt_sets, write_prompt_sets, LlmClient, LlmConfig, PromptSource, StylePromptSet,
};
use stylevox_core::rvq::{fit_codebooks, CodebookSet};
use stylevox_core::sar::{Sampling, SarModel};
use stylevox_core::snar::SnarModel;
use stylevox_core::synth::{write_output, Pipeline, Sidecar};
use stylevox_core::text::Vocabulary;
use stylevox_core::trainer::{CheckpointEvent, TrainConfig, TrainModel, TrainState, Trainer};

use crate::settings::{resolve, Overrides};
use crate::{
    BuildDatasetArgs, EvalArgs, GenPromptsArgs, ModelChoice, SamplingArgs, SplitChoice, SynthArgs, ToyCorpusArgs,
    TrainArgs, TrainCodecArgs,
};

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn prompt_sets(groups: &[StyleFactors], count: usize, source: PromptSource, seed: u64) -> Result<Vec<StylePromptSet>> {
    let client = match source {
        PromptSource::Llm => Some(LlmClient::new(LlmConfig::from_env()?)),
        PromptSource::Offline => None,
    };
    Ok(build_prompt_sets(groups, count, source, client.as_ref(), seed)?)
}

pub fn build_dataset(a: BuildDatasetArgs, jobs: usize) -> Result<()> {
    let rows: Vec<SourceRow> = read_jsonl(&a.meta).with_context(|| format!("reading {}", a.meta.display()))?;
    let out_dir = manifest_dir(&a.out);
    std::fs::create_dir_all(&out_dir)?;
    let opts = IngestOptions { source_dir: a.audio_dir.clone(), converted_dir: out_dir.join("converted"), jobs };
    let mut entries = ingest(&rows, &opts)?;
    tracing::info!(rows = rows.len(), kept = entries.len(), "ingested");
    // Paths in the manifest resolve against its own directory.
    let same_dir = std::fs::canonicalize(&a.audio_dir).ok() == std::fs::canonicalize(&out_dir).ok();
    if !same_dir {
        for e in &mut entries {
            if Path::new(&e.audio).is_relative() {
                let full = a.audio_dir.join(&e.audio);
                e.audio = std::fs::canonicalize(&full).unwrap_or(full).display().to_string();
            }
        }
    }
    assign_levels(&mut entries, a.pitch_binning.into())?;
    let sets = match &a.prompt_file {
        Some(path) => read_prompt_sets(path)?,
        None => {
            let groups: Vec<StyleFactors> =
                entries.iter().map(|e| e.factors()).collect::<BTreeSet<_>>().into_iter().collect();
            prompt_sets(&groups, a.prompts_per_group, a.prompts.into(), a.seed)?
        }
    };
    attach_prompts(&mut entries, &sets, a.seed)?;
    split(&mut entries, a.valid, a.test, a.seed)?;
    write_manifest(&a.out, &entries)?;
    write_prompt_sets(&prompt_pool_path(&a.out), &sets)?;
    tracing::info!(entries = entries.len(), path = %a.out.display(), "manifest written");
    Ok(())
}

pub fn gen_prompts(a: GenPromptsArgs) -> Result<()> {
    let groups = match &a.factors {
        Some(key) => vec![key.parse::<StyleFactors>()?],
        None => StyleFactors::all(),
    };
    let sets = prompt_sets(&groups, a.count, a.mode.into(), a.seed)?;
    write_prompt_sets(&a.out, &sets)?;
    let total: usize = sets.iter().map(|s| s.len()).sum();
    tracing::info!(groups = sets.len(), prompts = total, path = %a.out.display(), "prompts written");
    Ok(())
}

pub fn train_codec(a: TrainCodecArgs, jobs: usize) -> Result<()> {
    let entries = load_manifest(&a.manifest)?;
    let train: Vec<ManifestEntry> = entries.into_iter().filter(|e| e.split == Split::Train).collect();
    let feats = analyze_entries(&train, &manifest_dir(&a.manifest), &Filterbank::default(), jobs)?;
    let books = fit_codebooks(&feats, a.layers, a.codebook, a.seed)?;
    books.save(&a.out)?;
    tracing::info!(layers = books.layers(), sizes = ?books.sizes(), path = %a.out.display(), "codec written");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_training<M: TrainModel>(
    model: M,
    resume: Option<Checkpoint>,
    cfg: TrainConfig,
    train: &[M::Example],
    valid: &[M::Example],
    out: &Path,
    metrics_path: &Path,
    wrap: &dyn Fn(&M, Option<TrainState>) -> Checkpoint,
) -> Result<()> {
    let mut trainer = match resume.and_then(|c| c.state) {
        Some(state) => {
            tracing::info!(step = state.step, "resuming");
            Trainer::resume(model, cfg, train, state)?
        }
        None => Trainer::new(model, cfg, train)?,
    };
    let append = trainer.state.step > 0;
    let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(metrics_path)?;
    let mut metrics = BufWriter::new(file);
    let best = PathBuf::from(format!("{}.best", out.display()));
    trainer.run(valid, &mut metrics, &mut |t, event| {
        let path = if event == CheckpointEvent::BestValid { &best } else { out };
        wrap(&t.model, Some(t.state.clone())).save(path)
    })?;
    tracing::info!(path = %out.display(), "checkpoint written");
    Ok(())
}

pub fn train(a: TrainArgs, jobs: usize) -> Result<()> {
    let overrides = Overrides {
        steps: a.steps,
        warmup: a.warmup,
        lr: a.lr,
        batch_tokens: a.batch_tokens,
        seed: a.seed,
        no_wall_time: a.no_wall_time,
    };
    let resolved = resolve(a.config.as_deref(), &overrides)?;
    resolved.log();
    let mut profile = resolved.profile;
    let entries = load_manifest(&a.manifest)?;
    let books = CodebookSet::load(&a.codec).with_context(|| format!("reading codec {}", a.codec.display()))?;
    let k = books.sizes()[0];
    if profile.model.acoustic_vocab != k + 1 {
        tracing::info!(from = profile.model.acoustic_vocab, to = k + 1, "acoustic vocabulary follows the codec");
        profile.model.acoustic_vocab = k + 1;
    }
    let feats = analyze_entries(&entries, &manifest_dir(&a.manifest), &Filterbank::default(), jobs)?;
    let codes = encode_all(&books, &feats, jobs)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let pool = match &a.prompt_pool {
        Some(path) => read_prompt_sets(path)?,
        None if prompt_pool_path(&a.manifest).exists() => read_prompt_sets(&prompt_pool_path(&a.manifest))?,
        None => {
            tracing::warn!("no prompt pool next to the manifest; training uses manifest prompts only");
            Vec::new()
        }
    };
    let vocab = match &resume {
        Some(c) => c.vocabulary()?.context("resumed checkpoint has no vocabulary")?,
        None => build_vocab_with_pool(&entries, &pool)?,
    };
    let metrics = a.metrics.clone().unwrap_or_else(|| PathBuf::from(format!("{}.metrics.jsonl", a.out.display())));
    let seed = profile.seed;
    let cfg = profile.train.clone();
    match a.model {
        ModelChoice::Sar => {
            let train = sar_train_examples(&entries, &codes, &vocab, &pool, profile.extra_prompts, seed)?;
            tracing::info!(examples = train.len(), "autoregressive training pairs");
            let valid = sar_examples(&entries, &codes, &vocab, Split::Valid)?;
            let model = match &resume {
                Some(c) => c.sar()?,
                None => SarModel::<f32>::new(profile.model.clone(), vocab.len(), seed)?,
            };
            let v = vocab.clone();
            let tc = cfg.clone();
            let wrap = move |m: &SarModel<f32>, s| {
                let mut c = Checkpoint::from_sar(m, Some(&v), s);
                c.meta.train_config = Some(tc.clone());
                c
            };
            run_training(model, resume, cfg, &train, &valid, &a.out, &metrics, &wrap)
        }
        ModelChoice::Snar => {
            let train = snar_examples(&entries, &codes, &vocab, Split::Train)?;
            let valid = snar_examples(&entries, &codes, &vocab, Split::Valid)?;
            let model = match &resume {
                Some(c) => c.snar()?,
                None => SnarModel::<f32>::new(profile.model.clone(), vocab.len(), books.layers(), seed)?,
            };
            let v = vocab.clone();
            let tc = cfg.clone();
            let wrap = move |m: &SnarModel<f32>, s| {
                let mut c = Checkpoint::from_snar(m, Some(&v), s);
                c.meta.train_config = Some(tc.clone());
                c
            };
            run_training(model, resume, cfg, &train, &valid, &a.out, &metrics, &wrap)
        }
    }
}

struct Models {
    sar: SarModel<f32>,
    snar: SnarModel<f32>,
    books: CodebookSet,
    vocab: Vocabulary,
}

fn load_models(sar: &Path, snar: &Path, codec: &Path) -> Result<Models> {
    let sar_ck = Checkpoint::load(sar).with_context(|| format!("reading {}", sar.display()))?;
    let snar_ck = Checkpoint::load(snar).with_context(|| format!("reading {}", snar.display()))?;
    if sar_ck.meta.kind != ModelKind::Sar || snar_ck.meta.kind != ModelKind::Snar {
        bail!("expected an autoregressive checkpoint for --sar and a non-autoregressive one for --snar");
    }
    let vocab = sar_ck.vocabulary()?.context("autoregressive checkpoint has no vocabulary")?;
    if let Some(other) = snar_ck.vocabulary()? {
        if other != vocab {
            bail!("the two checkpoints were trained with different vocabularies");
        }
    }
    let books = CodebookSet::load(codec).with_context(|| format!("reading codec {}", codec.display()))?;
    Ok(Models { sar: sar_ck.sar()?, snar: snar_ck.snar()?, books, vocab })
}

fn sampling(s: &SamplingArgs, greedy: bool) -> Sampling {
    if greedy {
        Sampling { seed: s.seed, ..Sampling::greedy() }
    } else {
        Sampling { temperature: s.temperature, top_k: s.top_k, seed: s.seed }
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let m = load_models(&a.sar, &a.snar, &a.codec)?;
    let fb = Filterbank::default();
    let pipeline = Pipeline { sar: &m.sar, snar: &m.snar, books: &m.books, vocab: &m.vocab, filterbank: &fb };
    let out = pipeline.synthesize(&a.prompt, &a.text, sampling(&a.sampling, false), a.sampling.max_frames)?;
    let measured = if out.waveform.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::to_value(measure(&out.waveform, fb.sample_rate_hz, count_units(&a.text))?)?
    };
    let sidecar = Sidecar { prompt: a.prompt, transcript: a.text, frames: out.codes.frames(), measured };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_output(&a.out, &out.waveform, fb.sample_rate_hz, &sidecar)?;
    tracing::info!(frames = sidecar.frames, path = %a.out.display(), "wrote audio");
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    report: AccuracyReport,
    rows: Vec<EvalRow>,
}

pub fn eval(a: EvalArgs, jobs: usize) -> Result<()> {
    let entries = load_manifest(&a.manifest)?;
    let m = load_models(&a.sar, &a.snar, &a.codec)?;
    let wanted = match a.split {
        SplitChoice::Train => Split::Train,
        SplitChoice::Valid => Split::Valid,
        SplitChoice::Test => Split::Test,
    };
    let mut subset: Vec<ManifestEntry> = entries.iter().filter(|e| e.split == wanted).cloned().collect();
    if let Some(n) = a.limit {
        subset.truncate(n);
    }
    if subset.is_empty() {
        bail!("no {:?} entries in {}", a.split, a.manifest.display());
    }
    let meter = FactorMeter::from_manifest(&entries, GeneratorParams::default())?;
    let fb = Filterbank::default();
    let pipeline = Pipeline { sar: &m.sar, snar: &m.snar, books: &m.books, vocab: &m.vocab, filterbank: &fb };
    let (report, rows) =
        evaluate(&subset, &pipeline, &meter, sampling(&a.sampling, a.greedy), a.sampling.max_frames, jobs)?;
    println!("{}", report.table());
    let out = EvalOutput { report, rows };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&a.out)?), &out)?;
    tracing::info!(path = %a.out.display(), "report written");
    Ok(())
}

pub fn make_toy_corpus(a: ToyCorpusArgs, jobs: usize) -> Result<()> {
    let opts = CorpusOptions {
        n_per_group: a.n_per_group,
        seed: a.seed,
        prompts_per_group: a.prompts_per_group,
        valid_n: a.valid,
        test_n: a.test,
        params: GeneratorParams::default(),
        jobs,
    };
    let entries = make_synthetic_corpus(&a.out, &opts)?;
    tracing::info!(entries = entries.len(), dir = %a.out.display(), "corpus written");
    Ok(())
}
