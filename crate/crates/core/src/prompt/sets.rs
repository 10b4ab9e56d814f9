use serde::{Deserialize, Serialize};

use super::client::LlmClient;
use super::filter::{filter_and_dedupe, offline_generate, Candidate, FilterRules, StylePromptSet};
use super::grammar::Grammar;
use super::recipe::{build_recipe, TemplateBank};
use crate::factors::StyleFactors;
use crate::Result;

/// Where prompt candidates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSource {
    #[default]
    Offline,
    Llm,
}

/// Derives a per-group seed so each group's draw is independent of the
/// other groups requested alongside it.
fn group_seed(seed: u64, f: &StyleFactors) -> u64 {
    f.key().bytes().fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Builds `count` accepted prompts per group. In LLM mode a group that comes
/// back short is topped up from the offline grammar.
pub fn build_prompt_sets(
    groups: &[StyleFactors],
    count: usize,
    source: PromptSource,
    client: Option<&LlmClient>,
    seed: u64,
) -> Result<Vec<StylePromptSet>> {
    let rules = FilterRules::default();
    let grammar = Grammar::default_prompts();
    match (source, client) {
        (PromptSource::Llm, Some(client)) => {
            let bank = TemplateBank::default();
            let jobs = groups
                .iter()
                .map(|f| Ok((*f, build_recipe(f, &bank, group_seed(seed, f))?)))
                .collect::<Result<Vec<_>>>()?;
            let mut sets = Vec::with_capacity(groups.len());
            for (f, response) in client.request_many(&jobs, count) {
                let response = response?;
                if !response.retries.is_empty() {
                    tracing::info!(group = %f, retries = response.retries.len(), "recovered after retries");
                }
                let candidates: Vec<Candidate> = response.candidates.iter().map(Candidate::llm).collect();
                let mut set = filter_and_dedupe(&candidates, &f, &rules);
                set.prompts.truncate(count);
                set.provenance.truncate(count);
                if set.len() < count {
                    tracing::warn!(group = %f, accepted = set.len(), count, "topping up from the offline grammar");
                    let wanted = (2 * count).min(grammar.capacity(&f) as usize);
                    let extra = offline_generate(&f, &rules, &grammar, wanted, group_seed(seed, &f))?;
                    for (p, prov) in extra.prompts.into_iter().zip(extra.provenance) {
                        if set.len() == count {
                            break;
                        }
                        if !set.prompts.iter().any(|q| super::dedupe_key(q) == super::dedupe_key(&p)) {
                            set.prompts.push(p);
                            set.provenance.push(prov);
                        }
                    }
                }
                sets.push(set);
            }
            Ok(sets)
        }
        _ => groups.iter().map(|f| offline_generate(f, &rules, &grammar, count, group_seed(seed, f))).collect(),
    }
}
