use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The eleven gym workouts plus the background `Null` class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityLabel {
    Adductor,
    Armcurl,
    Benchpress,
    Legcurl,
    Legpress,
    Riding,
    Ropeskipping,
    Running,
    Squat,
    Stairsclimber,
    Walking,
    Null,
}

impl ActivityLabel {
    pub const COUNT: usize = 12;

    pub const ALL: [ActivityLabel; 12] = [
        ActivityLabel::Adductor,
        ActivityLabel::Armcurl,
        ActivityLabel::Benchpress,
        ActivityLabel::Legcurl,
        ActivityLabel::Legpress,
        ActivityLabel::Riding,
        ActivityLabel::Ropeskipping,
        ActivityLabel::Running,
        ActivityLabel::Squat,
        ActivityLabel::Stairsclimber,
        ActivityLabel::Walking,
        ActivityLabel::Null,
    ];

    /// Tokens used upstream for the three Squat ground types.
    pub const SQUAT_VARIANTS: [&'static str; 3] = ["Squat_concrete", "Squat_wood", "Squat_rubber"];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityLabel::Adductor => "Adductor",
            ActivityLabel::Armcurl => "Armcurl",
            ActivityLabel::Benchpress => "Benchpress",
            ActivityLabel::Legcurl => "Legcurl",
            ActivityLabel::Legpress => "Legpress",
            ActivityLabel::Riding => "Riding",
            ActivityLabel::Ropeskipping => "Ropeskipping",
            ActivityLabel::Running => "Running",
            ActivityLabel::Squat => "Squat",
            ActivityLabel::Stairsclimber => "Stairsclimber",
            ActivityLabel::Walking => "Walking",
            ActivityLabel::Null => "Null",
        }
    }

    pub fn is_workout(self) -> bool {
        self != ActivityLabel::Null
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown activity label `{0}`")]
pub struct UnknownLabel(pub String);

/// Exact enumeration tokens only; see [`SessionSchema`](super::SessionSchema)
/// for alias handling of upstream label spellings.
impl FromStr for ActivityLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}
