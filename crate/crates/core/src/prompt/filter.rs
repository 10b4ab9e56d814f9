use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grammar::Grammar;
use super::lexicon::{normalize, FactorKind, SynonymLexicon};
use crate::factors::StyleFactors;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Llm,
    Offline,
}

/// A prompt proposed for a factor group, before filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub text: String,
    pub provenance: Provenance,
    /// Written without following the keywords closely; needs only two factors surfaced.
    pub free_form: bool,
}

impl Candidate {
    pub fn llm(text: impl Into<String>) -> Self {
        Self { text: text.into(), provenance: Provenance::Llm, free_form: false }
    }

    pub fn offline(text: impl Into<String>) -> Self {
        Self { text: text.into(), provenance: Provenance::Offline, free_form: false }
    }
}

/// Accepted prompts of one factor group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePromptSet {
    pub factors: StyleFactors,
    pub prompts: Vec<String>,
    pub provenance: Vec<Provenance>,
}

/// One line of a persisted prompt file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub factors: StyleFactors,
    pub prompt: String,
    pub provenance: Provenance,
}

impl StylePromptSet {
    pub fn new(factors: StyleFactors) -> Self {
        Self { factors, prompts: Vec::new(), provenance: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.prompts
            .iter()
            .zip(&self.provenance)
            .map(|(t, p)| Candidate { text: t.clone(), provenance: *p, free_form: false })
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = PromptRecord> + '_ {
        self.prompts.iter().zip(&self.provenance).map(|(prompt, provenance)| PromptRecord {
            factors: self.factors,
            prompt: prompt.clone(),
            provenance: *provenance,
        })
    }
}

/// Scene nouns that mark a prompt as describing surroundings rather than voice.
pub const DEFAULT_BANNED_WORDS: &[&str] = &[
    "church",
    "cathedral",
    "temple",
    "hall",
    "stadium",
    "street",
    "classroom",
    "office",
    "park",
    "forest",
    "beach",
    "restaurant",
    "theater",
    "theatre",
    "library",
    "kitchen",
    "garden",
    "market",
    "station",
    "airport",
    "hospital",
    "city",
    "village",
    "mountain",
    "ocean",
    "room",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRules {
    pub lexicon: SynonymLexicon,
    pub banned_words: Vec<String>,
    /// Factors that a free-form candidate must surface.
    pub free_form_minimum: usize,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            lexicon: SynonymLexicon::default(),
            banned_words: DEFAULT_BANNED_WORDS.iter().map(|s| s.to_string()).collect(),
            free_form_minimum: 2,
        }
    }
}

impl FilterRules {
    pub fn with_lexicon(lexicon: SynonymLexicon) -> Self {
        Self { lexicon, ..Self::default() }
    }

    /// Whether a banned word or its plural occurs.
    pub fn mentions_banned(&self, normalized: &str) -> bool {
        normalized.split(' ').any(|w| {
            self.banned_words.iter().any(|b| {
                w == b || w.strip_suffix('s').is_some_and(|s| s == b) || w.strip_suffix("es").is_some_and(|s| s == b)
            })
        })
    }

    /// Relevance and ban checks, without deduplication.
    pub fn accepts(&self, candidate: &Candidate, factors: &StyleFactors) -> bool {
        let text = normalize(&candidate.text);
        if text.is_empty() || self.mentions_banned(&text) {
            return false;
        }
        let surfaced = FactorKind::CORE.iter().filter(|k| self.lexicon.mentions(**k, factors, &text)).count();
        surfaced == FactorKind::CORE.len() || (candidate.free_form && surfaced >= self.free_form_minimum)
    }
}

/// Key used to detect duplicates: case-folded with whitespace collapsed.
pub fn dedupe_key(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keeps relevant, scene-free, previously unseen candidates in input order.
pub fn filter_and_dedupe(candidates: &[Candidate], factors: &StyleFactors, rules: &FilterRules) -> StylePromptSet {
    let mut set = StylePromptSet::new(*factors);
    let mut seen = HashSet::new();
    for c in candidates {
        if rules.accepts(c, factors) && seen.insert(dedupe_key(&c.text)) {
            set.prompts.push(c.text.trim().to_string());
            set.provenance.push(c.provenance);
        }
    }
    set
}

/// Expands the grammar into `count` distinct prompts that pass the filter.
pub fn offline_generate(
    factors: &StyleFactors,
    rules: &FilterRules,
    grammar: &Grammar,
    count: usize,
    seed: u64,
) -> Result<StylePromptSet> {
    let capacity = grammar.capacity(factors);
    let insufficient = |available| Error::InsufficientGrammar { group: factors.key(), available, requested: count };
    if capacity < count as u64 {
        return Err(insufficient(capacity as usize));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tried = HashSet::new();
    let mut set = StylePromptSet::new(*factors);
    let mut seen = HashSet::new();
    while set.len() < count {
        if tried.len() as u64 == capacity {
            return Err(insufficient(set.len()));
        }
        let index = rng.gen_range(0..capacity);
        if !tried.insert(index) {
            continue;
        }
        let Some(text) = grammar.expand(factors, index) else { continue };
        let candidate = Candidate::offline(text);
        if rules.accepts(&candidate, factors) && seen.insert(dedupe_key(&candidate.text)) {
            set.prompts.push(candidate.text);
            set.provenance.push(Provenance::Offline);
        }
    }
    Ok(set)
}

pub fn write_prompt_sets(path: &Path, sets: &[StylePromptSet]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for set in sets {
        for record in set.records() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a prompt file, grouping records by factors in first-seen order.
pub fn read_prompt_sets(path: &Path) -> Result<Vec<StylePromptSet>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut sets: Vec<StylePromptSet> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PromptRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format { path: path.to_path_buf(), message: format!("line {}: {e}", n + 1) })?;
        let at = *index.entry(record.factors).or_insert_with(|| {
            sets.push(StylePromptSet::new(record.factors));
            sets.len() - 1
        });
        sets[at].prompts.push(record.prompt);
        sets[at].provenance.push(record.provenance);
    }
    Ok(sets)
}
