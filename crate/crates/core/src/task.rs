use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three shared-task settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Word segmentation.
    T1,
    /// Morphological analysis of already segmented words.
    T2,
    /// Segmentation followed by analysis.
    T3,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::T1 => "T1",
            Task::T2 => "T2",
            Task::T3 => "T3",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "t1" | "seg" | "segment" | "segmentation" => Ok(Task::T1),
            "t2" | "stem" | "analysis" | "analyze" => Ok(Task::T2),
            "t3" | "joint" => Ok(Task::T3),
            _ => Err(format!("unknown task {s:?} (expected T1, T2 or T3)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_aliases() {
        assert_eq!("seg".parse::<Task>(), Ok(Task::T1));
        assert_eq!("T2".parse::<Task>(), Ok(Task::T2));
        assert_eq!("joint".parse::<Task>(), Ok(Task::T3));
        assert!("t4".parse::<Task>().is_err());
        assert_eq!(Task::T3.to_string(), "T3");
    }
}
