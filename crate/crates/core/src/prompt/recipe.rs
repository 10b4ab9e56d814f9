use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grammar::Grammar;
use super::lexicon::{keyword, FactorKind};
use crate::factors::{Emotion, Gender, Level, StyleFactors};
use crate::{Error, Result};

/// Four-stage instruction sent to the language model for one factor group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecipe {
    pub base: String,
    pub diversity: String,
    pub restriction: String,
    pub few_shot: String,
    pub keywords: Vec<String>,
}

impl PromptRecipe {
    /// All stages joined into one chat message, asking for `count` lines.
    pub fn message(&self, count: usize) -> String {
        format!(
            "{}\n{}\n{}\n{}\nWrite {count} such sentences, one per line, without numbering.",
            self.base, self.diversity, self.restriction, self.few_shot
        )
    }
}

/// Hand-written example sentences keyed by `gender,pitch,speed,volume`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub templates: BTreeMap<String, Vec<String>>,
}

pub(crate) fn core_key(f: &StyleFactors) -> String {
    format!("{},{},{},{}", f.gender, f.pitch, f.speed, f.volume)
}

impl Default for TemplateBank {
    fn default() -> Self {
        let grammar = Grammar::default_templates();
        let mut templates = BTreeMap::new();
        for g in Gender::ALL {
            for p in Level::ALL {
                for s in Level::ALL {
                    for v in Level::ALL {
                        let f = StyleFactors::new(g, p, s, v, Emotion::Neutral);
                        // one sentence per pattern, each with its first fillers
                        let mut list = Vec::new();
                        let mut index = 0;
                        for i in 0..grammar.patterns.len() {
                            list.extend(grammar.expand(&f, index));
                            index += grammar.pattern_capacity(i, &f);
                        }
                        templates.insert(core_key(&f), list);
                    }
                }
            }
        }
        Self { templates }
    }
}

fn quoted_list(items: &[String]) -> String {
    items.iter().map(|k| format!("\"{k}\"")).collect::<Vec<_>>().join(", ")
}

fn count_word(n: usize) -> String {
    match n {
        4 => "four".into(),
        5 => "five".into(),
        n => n.to_string(),
    }
}

/// Assembles the four instruction stages for a factor group. The few-shot
/// template is drawn from the bank with a seeded generator.
pub fn build_recipe(factors: &StyleFactors, bank: &TemplateBank, seed: u64) -> Result<PromptRecipe> {
    let key = core_key(factors);
    let choices = bank.templates.get(&key).filter(|v| !v.is_empty()).ok_or(Error::MissingTemplate(key))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = &choices[rng.gen_range(0..choices.len())];

    let mut keywords: Vec<String> = FactorKind::CORE.iter().map(|k| keyword(*k, factors)).collect();
    if factors.emotion != Emotion::Neutral {
        keywords.push(keyword(FactorKind::Emotion, factors));
    }
    let base = format!(
        "Generate one sentence that describes a different, natural and brief speaking style based on {} keywords: {}.",
        count_word(keywords.len()),
        quoted_list(&keywords)
    );
    let diversity = "You may use the keywords themselves or replace them with synonyms, and you may add adjectives \
                     to describe them. For example, you can use \"tone\", \"key\" or \"volume\" to describe \"pitch\"."
        .to_string();
    let restriction =
        "Remember: do not include scene descriptions such as \"churches\" in the sentences, only describe the voice."
            .to_string();
    let few_shot = format!(
        "Here is one correct template based on these keywords that you can refer to while writing diverse \
         sentences: \"{template}\""
    );
    Ok(PromptRecipe { base, diversity, restriction, few_shot, keywords })
}
