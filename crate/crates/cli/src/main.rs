mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stylevox_core::dataset::PitchBinning;
use stylevox_core::prompt::PromptSource;

#[derive(Parser, Debug)]
#[command(name = "stylevox", version, about = "Style-prompted speech synthesis with a two-stage codec language model")]
struct Cli {
    /// Worker threads for ingestion, analysis and evaluation (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: tracing::Level,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure a source corpus, label its factors, attach prompts and split it.
    BuildDataset(BuildDatasetArgs),
    /// Generate style prompts for one factor group or all of them.
    GenPrompts(GenPromptsArgs),
    /// Fit the residual codebooks on a manifest's training split.
    TrainCodec(TrainCodecArgs),
    /// Train the autoregressive (sar) or non-autoregressive (snar) model.
    Train(TrainArgs),
    /// Synthesize one utterance from a style prompt and a transcript.
    Synth(SynthArgs),
    /// Synthesize a manifest split and report per-factor accuracy.
    Eval(EvalArgs),
    /// Write the synthetic corpus with planted style factors.
    MakeToyCorpus(ToyCorpusArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PromptMode {
    Offline,
    Llm,
}

impl From<PromptMode> for PromptSource {
    fn from(m: PromptMode) -> Self {
        match m {
            PromptMode::Offline => PromptSource::Offline,
            PromptMode::Llm => PromptSource::Llm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Binning {
    PerGender,
    Overall,
}

impl From<Binning> for PitchBinning {
    fn from(b: Binning) -> Self {
        match b {
            Binning::PerGender => PitchBinning::PerGender,
            Binning::Overall => PitchBinning::Overall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Sar,
    Snar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Valid,
    Test,
}

#[derive(Args, Debug)]
struct BuildDatasetArgs {
    /// Directory that relative audio paths in the metadata resolve against.
    #[arg(long)]
    audio_dir: PathBuf,
    /// JSONL metadata: id, audio, text and optional gender, emotion, alignment.
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "offline")]
    prompts: PromptMode,
    /// Use an existing prompt file instead of generating prompts.
    #[arg(long, conflicts_with = "prompts")]
    prompt_file: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    prompts_per_group: usize,
    #[arg(long, default_value_t = 200)]
    valid: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, value_enum, default_value = "per-gender")]
    pitch_binning: Binning,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenPromptsArgs {
    /// One group as gender,pitch,speed,volume,emotion.
    #[arg(long, required_unless_present = "all", conflicts_with = "all")]
    factors: Option<String>,
    /// Every one of the 432 groups.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, value_enum, default_value = "offline")]
    mode: PromptMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainCodecArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    codebook: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelChoice,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    codec: PathBuf,
    /// TOML profile with optional [model] and [train] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; the best validation checkpoint goes to `<out>.best`.
    #[arg(long)]
    out: PathBuf,
    /// Metrics JSONL (default: `<out>.metrics.jsonl`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Continue from a checkpoint that carries trainer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Prompt pool for extra training prompts (default: `<manifest>.prompts.jsonl` if present).
    #[arg(long)]
    prompt_pool: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write 0 for wall time so reruns produce identical metrics files.
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Args, Debug)]
struct SamplingArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 0 or below decodes greedily.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// 1 decodes greedily; 0 disables the cut.
    #[arg(long, default_value_t = 16)]
    top_k: usize,
    #[arg(long, default_value_t = 400)]
    max_frames: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    prompt: String,
    #[arg(long)]
    text: String,
    #[arg(long)]
    sar: PathBuf,
    #[arg(long)]
    snar: PathBuf,
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sar: PathBuf,
    #[arg(long)]
    snar: PathBuf,
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// Evaluate at most this many entries of the split.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    greedy: bool,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args, Debug)]
struct ToyCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    n_per_group: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    prompts_per_group: usize,
    #[arg(long, default_value_t = 200)]
    valid: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
}

fn error_code(e: &anyhow::Error) -> &'static str {
    e.chain().find_map(|c| c.downcast_ref::<stylevox_core::Error>()).map_or("other", |e| e.code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(cli.log_level).with_target(false).init();
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let result = match cli.command {
        Command::BuildDataset(a) => commands::build_dataset(a, jobs),
        Command::GenPrompts(a) => commands::gen_prompts(a),
        Command::TrainCodec(a) => commands::train_codec(a, jobs),
        Command::Train(a) => commands::train(a, jobs),
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a, jobs),
        Command::MakeToyCorpus(a) => commands::make_toy_corpus(a, jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {message}", error_code(&e));
            ExitCode::FAILURE
        }
    }
}
