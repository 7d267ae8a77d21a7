use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven basic emotion categories, with stable integer codes 0–6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Neutral = 0,
    Angry = 1,
    Disgusted = 2,
    Fear = 3,
    Happy = 4,
    Sad = 5,
    Surprised = 6,
}

pub const EMOTION_COUNT: usize = 7;

impl EmotionLabel {
    pub const ALL: [EmotionLabel; EMOTION_COUNT] = [
        EmotionLabel::Neutral,
        EmotionLabel::Angry,
        EmotionLabel::Disgusted,
        EmotionLabel::Fear,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Surprised,
    ];

    #[inline]
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Self::ALL
            .get(code)
            .copied()
            .ok_or_else(|| Error::contract(format!("unknown emotion code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Angry => "angry",
            EmotionLabel::Disgusted => "disgusted",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprised => "surprised",
        }
    }

    /// Text prompt for this emotion: `a photo of a {emotion} face`.
    pub fn prompt(self) -> String {
        format!("a photo of a {} face", self.name())
    }

    /// Position of the emotion word in the tokenized prompt.
    pub const PROMPT_EMOTION_POSITION: usize = 4;

    /// Recovers the emotion from a prompt built by [`EmotionLabel::prompt`].
    pub fn from_prompt(prompt: &str) -> Result<Self> {
        let words: Vec<&str> = prompt.split_whitespace().collect();
        match words.as_slice() {
            ["a", "photo", "of", "a", word, "face"] => word.parse(),
            _ => Err(Error::contract(format!(
                "prompt `{prompt}` does not follow the `a photo of a {{emotion}} face` template"
            ))),
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == lower)
            .ok_or_else(|| Error::contract(format!("unknown emotion `{s}`")))
    }
}
