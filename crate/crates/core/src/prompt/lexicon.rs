use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::factors::{Emotion, Gender, Level, StyleFactors};

/// Which of the four non-emotion factors (or emotion) a surface form describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Gender,
    Pitch,
    Speed,
    Volume,
    Emotion,
}

impl FactorKind {
    pub const CORE: [FactorKind; 4] = [FactorKind::Gender, FactorKind::Pitch, FactorKind::Speed, FactorKind::Volume];
}

/// Canonical keyword of a factor value as it appears in the base prompt stage.
pub fn keyword(kind: FactorKind, f: &StyleFactors) -> String {
    match kind {
        FactorKind::Gender => f.gender.to_string(),
        FactorKind::Pitch => format!("{} pitch", f.pitch),
        FactorKind::Speed => match f.speed {
            Level::Low => "slow speaking speed".into(),
            Level::Normal => "normal speaking speed".into(),
            Level::High => "fast speaking speed".into(),
        },
        FactorKind::Volume => format!("{} energy", f.volume),
        FactorKind::Emotion => f.emotion.to_string(),
    }
}

/// Accepted surface forms per canonical keyword.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymLexicon {
    pub forms: BTreeMap<String, Vec<String>>,
}

fn forms(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for SynonymLexicon {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("male".into(), forms(&["male", "man", "gentleman", "guy", "boy", "he", "his"]));
        m.insert("female".into(), forms(&["female", "woman", "lady", "girl", "she", "her"]));
        m.insert(
            "high pitch".into(),
            forms(&["high pitch", "high-pitched", "high tone", "high-keyed", "high key", "shrill"]),
        );
        m.insert("low pitch".into(), forms(&["low pitch", "low-pitched", "deep", "low tone", "low-keyed", "low key"]));
        m.insert(
            "normal pitch".into(),
            forms(&[
                "normal pitch",
                "moderate pitch",
                "medium pitch",
                "normal-pitched",
                "medium-pitched",
                "normal tone",
                "medium tone",
            ]),
        );
        m.insert(
            "fast speaking speed".into(),
            forms(&["fast", "quick", "quickly", "rapid", "rapidly", "swift", "swiftly", "brisk", "briskly"]),
        );
        m.insert(
            "slow speaking speed".into(),
            forms(&["slow", "slowly", "leisurely", "unhurried", "unhurriedly", "sluggish"]),
        );
        m.insert(
            "normal speaking speed".into(),
            forms(&[
                "normal speaking speed",
                "normal speed",
                "moderate speed",
                "moderate pace",
                "steady pace",
                "normal pace",
                "normal-paced",
                "moderately paced",
            ]),
        );
        m.insert(
            "high energy".into(),
            forms(&["loud", "loudly", "high energy", "high volume", "booming", "powerful", "forceful"]),
        );
        m.insert(
            "low energy".into(),
            forms(&["quiet", "quietly", "soft", "softly", "low energy", "low volume", "hushed", "faint"]),
        );
        m.insert(
            "normal energy".into(),
            forms(&[
                "normal energy",
                "normal volume",
                "moderate volume",
                "moderate energy",
                "medium volume",
                "normal-volume",
                "medium-volume",
            ]),
        );
        m.insert("angry".into(), forms(&["angry", "furious", "irritated", "angrily"]));
        m.insert("contempt".into(), forms(&["contempt", "contemptuous", "scornful", "disdainful"]));
        m.insert("disgusted".into(), forms(&["disgusted", "repulsed", "revolted", "disgust"]));
        m.insert("fear".into(), forms(&["fear", "fearful", "frightened", "scared", "afraid"]));
        m.insert("happy".into(), forms(&["happy", "cheerful", "joyful", "happily"]));
        m.insert("sad".into(), forms(&["sad", "sorrowful", "gloomy", "melancholy", "sadly"]));
        m.insert("surprised".into(), forms(&["surprised", "astonished", "amazed"]));
        m.insert("neutral".into(), forms(&["neutral", "calm", "plain", "even"]));
        Self { forms: m }
    }
}

impl SynonymLexicon {
    /// Surface forms of a factor value; the keyword itself is always included.
    pub fn surface_forms(&self, kind: FactorKind, f: &StyleFactors) -> Vec<String> {
        let key = keyword(kind, f);
        let mut out = self.forms.get(&key).cloned().unwrap_or_default();
        if !out.iter().any(|s| s == &key) {
            out.push(key);
        }
        out
    }

    /// Whether any surface form of the factor occurs as a whole phrase.
    pub fn mentions(&self, kind: FactorKind, f: &StyleFactors, normalized_text: &str) -> bool {
        self.surface_forms(kind, f).iter().any(|form| contains_phrase(normalized_text, &normalize(form)))
    }

    /// Every keyword this lexicon must cover for the full factor space.
    pub fn required_keywords() -> Vec<String> {
        let mut keys = Vec::new();
        for g in Gender::ALL {
            keys.push(g.to_string());
        }
        let probe = |p, s, v| StyleFactors::new(Gender::Male, p, s, v, Emotion::Neutral);
        for l in Level::ALL {
            keys.push(keyword(FactorKind::Pitch, &probe(l, l, l)));
            keys.push(keyword(FactorKind::Speed, &probe(l, l, l)));
            keys.push(keyword(FactorKind::Volume, &probe(l, l, l)));
        }
        for e in Emotion::ALL {
            keys.push(e.to_string());
        }
        keys
    }
}

/// Lowercase, punctuation and hyphens to spaces, single-spaced.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whole-word phrase containment on normalized strings.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    if phrase.is_empty() {
        return false;
    }
    let padded = format!(" {text} ");
    let words_end_with_possessive = padded.replace("'s ", " ");
    padded.contains(&format!(" {phrase} ")) || words_end_with_possessive.contains(&format!(" {phrase} "))
}
