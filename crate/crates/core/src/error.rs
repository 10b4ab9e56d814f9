use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("too few frames: need at least {needed}, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("too few values: need at least {needed}, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("code {code} out of range for layer {layer} (codebook size {size})")]
    CodeOutOfRange { layer: usize, code: usize, size: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid sample rate {0} Hz")]
    InvalidSampleRate(u32),

    #[error("duration must be positive, got {0}")]
    ZeroDuration(f64),

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(char),

    #[error("invalid token id {id} (vocabulary size {size})")]
    InvalidId { id: usize, size: usize },

    #[error("sequence too long: {len} > max_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("bad layer index {index}; expected 2..={max}")]
    BadLayerIndex { index: usize, max: usize },

    #[error("need at least 2 codec layers, got {0}")]
    DegenerateLayers(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("training diverged: {0} consecutive non-finite losses")]
    Diverged(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no template for factor group {0}")]
    MissingTemplate(String),

    #[error("grammar can produce only {available} distinct prompts for {group}, {requested} requested")]
    InsufficientGrammar { group: String, available: usize, requested: usize },

    #[error("no prompts for factor group(s): {0}")]
    MissingPromptGroup(String),

    #[error("too few entries: need at least {needed}, got {got}")]
    TooFewEntries { needed: usize, got: usize },

    #[error("missing transcript for {0}")]
    MissingTranscript(String),

    #[error("missing synthesized output for entries: {0}")]
    MissingOutput(String),

    #[error("llm request failed after {attempts} attempt(s): {message}")]
    Llm { attempts: usize, retryable: bool, message: String },

    #[error("malformed llm response: {0}")]
    MalformedResponse(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    /// Short stable identifier, used by the command line for machine-parsable failures.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::TooFewFrames { .. } => "too_few_frames",
            Error::TooFewValues { .. } => "too_few_values",
            Error::CodeOutOfRange { .. } => "code_out_of_range",
            Error::EmptyInput(_) => "empty_input",
            Error::InvalidSampleRate(_) => "invalid_sample_rate",
            Error::ZeroDuration(_) => "zero_duration",
            Error::UnknownSymbol(_) => "unknown_symbol",
            Error::InvalidId { .. } => "invalid_id",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::BadLayerIndex { .. } => "bad_layer_index",
            Error::DegenerateLayers(_) => "degenerate_layers",
            Error::EmptyBatch => "empty_batch",
            Error::NonFiniteGradient => "non_finite_gradient",
            Error::Diverged(_) => "diverged",
            Error::InvalidConfig(_) => "invalid_config",
            Error::MissingTemplate(_) => "missing_template",
            Error::InsufficientGrammar { .. } => "insufficient_grammar",
            Error::MissingPromptGroup(_) => "missing_prompt_group",
            Error::TooFewEntries { .. } => "too_few_entries",
            Error::MissingTranscript(_) => "missing_transcript",
            Error::MissingOutput(_) => "missing_output",
            Error::Llm { .. } => "llm_request",
            Error::MalformedResponse(_) => "malformed_response",
            Error::Format { .. } => "bad_format",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Wav(_) => "wav",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
