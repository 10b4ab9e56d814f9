//! Style prompt generation: instruction recipes for a chat model, a relevance
//! filter, and a deterministic offline generator.

mod client;
mod filter;
mod grammar;
mod lexicon;
mod recipe;
mod sets;

pub use client::{
    request_prompts, LlmClient, LlmConfig, LlmResponse, RetryEvent, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL, ENV_TIMEOUT,
};
pub use filter::{
    dedupe_key, filter_and_dedupe, offline_generate, read_prompt_sets, write_prompt_sets, Candidate, FilterRules,
    PromptRecord, Provenance, StylePromptSet, DEFAULT_BANNED_WORDS,
};
pub use grammar::Grammar;
pub use lexicon::{contains_phrase, keyword, normalize, FactorKind, SynonymLexicon};
pub use recipe::{build_recipe, PromptRecipe, TemplateBank};
pub use sets::{build_prompt_sets, PromptSource};
