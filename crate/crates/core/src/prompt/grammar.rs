use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::factors::{Emotion, Gender, Level, StyleFactors};

/// Sentence patterns with `{slot}` placeholders and per-value slot fillers.
///
/// Fillers are keyed by slot name, then by the factor value the slot depends
/// on (`male`, `high`, `angry`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    pub patterns: Vec<String>,
    pub fillers: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

/// Factor value a slot depends on.
fn slot_value(slot: &str, f: &StyleFactors) -> Option<String> {
    let v = match slot.split('_').next()? {
        "gender" => f.gender.to_string(),
        "pitch" => f.pitch.to_string(),
        "speed" => f.speed.to_string(),
        "volume" => f.volume.to_string(),
        "emotion" => f.emotion.to_string(),
        _ => return None,
    };
    Some(v)
}

/// Slot names in a pattern, in order of appearance.
pub(crate) fn slots(pattern: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(&rest[start + 1..start + len]);
        rest = &rest[start + len + 1..];
    }
    out
}

impl Grammar {
    fn choices<'a>(&'a self, slot: &str, f: &StyleFactors) -> &'a [String] {
        slot_value(slot, f)
            .and_then(|v| self.fillers.get(slot).and_then(|m| m.get(&v)))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Number of distinct expansions of one pattern for a factor group.
    pub fn pattern_capacity(&self, pattern: usize, f: &StyleFactors) -> u64 {
        slots(&self.patterns[pattern]).iter().map(|s| self.choices(s, f).len() as u64).product()
    }

    /// Total expansions over all patterns.
    pub fn capacity(&self, f: &StyleFactors) -> u64 {
        (0..self.patterns.len()).map(|i| self.pattern_capacity(i, f)).sum()
    }

    /// Expansion number `index` in `0..capacity(f)`, in mixed-radix order.
    pub fn expand(&self, f: &StyleFactors, mut index: u64) -> Option<String> {
        for (p, pattern) in self.patterns.iter().enumerate() {
            let cap = self.pattern_capacity(p, f);
            if index >= cap {
                index -= cap;
                continue;
            }
            let mut out = String::new();
            let mut rest = pattern.as_str();
            for slot in slots(pattern) {
                let choices = self.choices(slot, f);
                let n = choices.len() as u64;
                let pick = &choices[(index % n) as usize];
                index /= n;
                let marker = format!("{{{slot}}}");
                let at = rest.find(&marker)?;
                out.push_str(&rest[..at]);
                out.push_str(pick);
                rest = &rest[at + marker.len()..];
            }
            out.push_str(rest);
            return Some(tidy(&out));
        }
        None
    }

    /// Patterns for offline prompt generation over all five factors.
    pub fn default_prompts() -> Self {
        let patterns = [
            "A {gender} speaks {speed_adv} and {volume_adv} with {pitch_np}, sounding {emotion}.",
            "The {speed_adj}, {volume_adj} and {pitch_adj} voice belongs to a {emotion} {gender}.",
            "With {pitch_np}, a {emotion} {gender} talks {speed_adv} and {volume_adv}.",
            "A {emotion} {gender} with {pitch_np} reads the words {speed_adv} and {volume_adv}.",
            "This {gender} has a {pitch_adj}, {volume_adj} voice and speaks {speed_adv}, sounding {emotion}.",
            "{speed_adj} and {volume_adj} speech from a {emotion} {gender} with {pitch_np}.",
            "A {emotion} {gender} speaks in a {pitch_adj} voice, {volume_adv} and {speed_adv}.",
            "Sounding {emotion}, the {gender} delivers the line {speed_adv} and {volume_adv} with {pitch_np}.",
        ];
        Self { patterns: patterns.iter().map(|s| s.to_string()).collect(), fillers: default_fillers() }
    }

    /// Patterns for few-shot templates, which leave emotion out.
    pub fn default_templates() -> Self {
        let patterns = [
            "The {speed_adj}, {volume_adj} and {pitch_adj} voice belongs to the {gender}.",
            "A {gender} speaks {speed_adv} and {volume_adv} with {pitch_np}.",
            "A {gender} with {pitch_np} talks {speed_adv} and {volume_adv}.",
        ];
        Self { patterns: patterns.iter().map(|s| s.to_string()).collect(), fillers: default_fillers() }
    }
}

fn level_map(low: &[&str], normal: &[&str], high: &[&str]) -> BTreeMap<String, Vec<String>> {
    let own = |l: &[&str]| l.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    [(Level::Low, own(low)), (Level::Normal, own(normal)), (Level::High, own(high))]
        .into_iter()
        .map(|(l, v)| (l.to_string(), v))
        .collect()
}

fn default_fillers() -> BTreeMap<String, BTreeMap<String, Vec<String>>> {
    let mut m = BTreeMap::new();
    let strings = |l: &[&str]| l.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    m.insert(
        "gender".to_string(),
        [
            (Gender::Male.to_string(), strings(&["man", "gentleman", "guy", "boy", "male speaker"])),
            (Gender::Female.to_string(), strings(&["girl", "woman", "lady", "female speaker"])),
        ]
        .into_iter()
        .collect(),
    );
    m.insert(
        "pitch_np".into(),
        level_map(
            &["a low pitch", "a deep tone", "a low key", "a low tone"],
            &["a normal pitch", "a moderate pitch", "a medium pitch", "a normal tone"],
            &["a high pitch", "a high tone", "a high key", "a shrill tone"],
        ),
    );
    m.insert(
        "pitch_adj".into(),
        level_map(
            &["low-pitched", "deep", "low-keyed"],
            &["normal-pitched", "medium-pitched"],
            &["high-keyed", "high-pitched", "shrill"],
        ),
    );
    m.insert(
        "speed_adv".into(),
        level_map(
            &["slowly", "leisurely", "unhurriedly"],
            &["at a normal speed", "at a moderate pace", "at a steady pace", "at a normal pace"],
            &["quickly", "rapidly", "swiftly", "briskly"],
        ),
    );
    m.insert(
        "speed_adj".into(),
        level_map(
            &["slow", "leisurely", "unhurried"],
            &["normal-paced", "moderately paced"],
            &["rapid", "fast", "quick", "brisk"],
        ),
    );
    m.insert(
        "volume_adv".into(),
        level_map(
            &["quietly", "softly", "with low energy", "at a low volume"],
            &["at a normal volume", "with moderate energy", "at a moderate volume", "with normal energy"],
            &["loudly", "with high energy", "at a high volume", "forcefully"],
        ),
    );
    m.insert(
        "volume_adj".into(),
        level_map(&["quiet", "soft", "hushed"], &["normal-volume", "medium-volume"], &["loud", "booming", "powerful"]),
    );
    let emotions: [(Emotion, &[&str]); 8] = [
        (Emotion::Angry, &["angry", "furious", "irritated"]),
        (Emotion::Contempt, &["contemptuous", "scornful", "disdainful"]),
        (Emotion::Disgusted, &["disgusted", "repulsed", "revolted"]),
        (Emotion::Fear, &["fearful", "frightened", "scared", "afraid"]),
        (Emotion::Happy, &["happy", "cheerful", "joyful"]),
        (Emotion::Sad, &["sad", "sorrowful", "gloomy", "melancholy"]),
        (Emotion::Surprised, &["surprised", "astonished", "amazed"]),
        (Emotion::Neutral, &["calm", "neutral", "relaxed"]),
    ];
    m.insert("emotion".into(), emotions.iter().map(|(e, l)| (e.to_string(), strings(l))).collect());
    m
}

/// Capitalizes the first letter and fixes `a` before vowel sounds.
fn tidy(s: &str) -> String {
    let words: Vec<&str> = s.split(' ').collect();
    let mut out: Vec<String> = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let next_vowel = words.get(i + 1).and_then(|n| n.chars().next()).is_some_and(|c| "aeiouAEIOU".contains(c));
        let w = match *w {
            "a" if next_vowel => "an",
            "A" if next_vowel => "An",
            other => other,
        };
        out.push(w.to_string());
    }
    let joined = out.join(" ");
    let mut chars = joined.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => joined,
    }
}
