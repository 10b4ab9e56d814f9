//! The five categorical style factors of an utterance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

/// Three-way level used for pitch, speaking speed and volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Normal,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry,
    Contempt,
    Disgusted,
    Fear,
    Happy,
    Sad,
    Surprised,
    Neutral,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Normal, Level::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Normal => "normal",
            Level::High => "high",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Emotion {
    pub const ALL: [Emotion; 8] = [
        Emotion::Angry,
        Emotion::Contempt,
        Emotion::Disgusted,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Surprised,
        Emotion::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Contempt => "contempt",
            Emotion::Disgusted => "disgusted",
            Emotion::Fear => "fear",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Surprised => "surprised",
            Emotion::Neutral => "neutral",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

macro_rules! display_and_parse {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let s = s.trim().to_ascii_lowercase();
                <$t>::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| Error::Parse(format!("unknown {} {s:?}", $what)))
            }
        }
    };
}

display_and_parse!(Gender, "gender");
display_and_parse!(Level, "level");
display_and_parse!(Emotion, "emotion");

/// Gender, pitch, speaking speed, volume and emotion of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StyleFactors {
    pub gender: Gender,
    pub pitch: Level,
    pub speed: Level,
    pub volume: Level,
    pub emotion: Emotion,
}

impl StyleFactors {
    pub fn new(gender: Gender, pitch: Level, speed: Level, volume: Level, emotion: Emotion) -> Self {
        Self { gender, pitch, speed, volume, emotion }
    }

    /// All 2 × 3 × 3 × 3 × 8 = 432 factor groups in a fixed order.
    pub fn all() -> Vec<StyleFactors> {
        let mut out = Vec::with_capacity(432);
        for g in Gender::ALL {
            for p in Level::ALL {
                for s in Level::ALL {
                    for v in Level::ALL {
                        for e in Emotion::ALL {
                            out.push(StyleFactors::new(g, p, s, v, e));
                        }
                    }
                }
            }
        }
        out
    }

    /// Group key, `gender,pitch,speed,volume,emotion`.
    pub fn key(&self) -> String {
        format!("{},{},{},{},{}", self.gender, self.pitch, self.speed, self.volume, self.emotion)
    }
}

impl fmt::Display for StyleFactors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for StyleFactors {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Parse(format!("expected gender,pitch,speed,volume,emotion; got {s:?}")));
        }
        Ok(StyleFactors::new(
            parts[0].parse()?,
            parts[1].parse()?,
            parts[2].parse()?,
            parts[3].parse()?,
            parts[4].parse()?,
        ))
    }
}
