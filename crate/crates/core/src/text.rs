//! Character-level text frontend shared by style prompts and transcripts.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
const SPECIALS: [&str; 4] = [PAD, BOS, EOS, SEP];
/// Id of `<sep>` in every vocabulary.
pub const SEP_ID: usize = 3;
const VOCAB_VERSION: u32 = 1;

/// Which stream a token sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Style,
    Text,
    Acoustic,
}

impl Segment {
    pub fn index(self) -> usize {
        match self {
            Segment::Style => 0,
            Segment::Text => 1,
            Segment::Acoustic => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub segment: Segment,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Dense symbol table: the four specials occupy ids 0..4, characters follow
/// in order of first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    symbols: Vec<String>,
    specials: Vec<String>,
}

impl Vocabulary {
    pub fn build<I, T>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut symbols = Vec::new();
        let mut index = HashMap::new();
        let mut any = false;
        for text in corpus {
            any = true;
            for c in text.as_ref().chars().flat_map(char::to_lowercase) {
                index.entry(c).or_insert_with(|| {
                    symbols.push(c);
                    SPECIALS.len() + symbols.len() - 1
                });
            }
        }
        if !any {
            return Err(Error::EmptyInput("vocabulary corpus"));
        }
        Ok(Self { symbols, index })
    }

    fn from_symbols(symbols: Vec<char>) -> Self {
        let index = symbols.iter().enumerate().map(|(i, &c)| (c, i + SPECIALS.len())).collect();
        Self { symbols, index }
    }

    pub fn len(&self) -> usize {
        SPECIALS.len() + self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn bos(&self) -> usize {
        1
    }

    pub fn eos(&self) -> usize {
        2
    }

    pub fn sep(&self) -> usize {
        SEP_ID
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn tokenize(&self, text: &str, segment: Segment) -> Result<TokenSequence> {
        let ids = text
            .chars()
            .flat_map(char::to_lowercase)
            .map(|c| self.id_of(c).ok_or(Error::UnknownSymbol(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenSequence { ids, segment })
    }

    /// Inverse of [`tokenize`](Self::tokenize); special ids are dropped.
    pub fn detokenize(&self, seq: &TokenSequence) -> Result<String> {
        seq.ids
            .iter()
            .filter(|&&id| id >= SPECIALS.len())
            .map(|&id| self.symbols.get(id - SPECIALS.len()).copied().ok_or(Error::InvalidId { id, size: self.len() }))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: VOCAB_VERSION,
            symbols: self.symbols.iter().map(|c| c.to_string()).collect(),
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.version != VOCAB_VERSION {
            return Err(Error::Parse(format!("unsupported vocabulary version {}", file.version)));
        }
        if file.specials != SPECIALS {
            return Err(Error::Parse("unexpected special tokens".into()));
        }
        let symbols = file
            .symbols
            .iter()
            .map(|s| {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(Error::Parse(format!("vocabulary symbol {s:?} is not one character"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_symbols(symbols))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
