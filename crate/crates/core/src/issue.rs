use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The nine quality issues: {text, structure, label} × {sparsity, noise,
/// imbalance}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Issue {
    TS,
    TN,
    TI,
    SS,
    SN,
    SI,
    LS,
    LN,
    LI,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Structure,
    Label,
}

impl Issue {
    pub const ALL: [Issue; 9] = [
        Issue::TS,
        Issue::TN,
        Issue::TI,
        Issue::SS,
        Issue::SN,
        Issue::SI,
        Issue::LS,
        Issue::LN,
        Issue::LI,
    ];

    /// Position in [`Issue::ALL`], used to index severity vectors.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn modality(self) -> Modality {
        match self {
            Issue::TS | Issue::TN | Issue::TI => Modality::Text,
            Issue::SS | Issue::SN | Issue::SI => Modality::Structure,
            Issue::LS | Issue::LN | Issue::LI => Modality::Label,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Issue::TS => "TS",
            Issue::TN => "TN",
            Issue::TI => "TI",
            Issue::SS => "SS",
            Issue::SN => "SN",
            Issue::SI => "SI",
            Issue::LS => "LS",
            Issue::LN => "LN",
            Issue::LI => "LI",
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Issue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Issue::ALL
            .into_iter()
            .find(|i| i.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown issue kind `{s}`")))
    }
}
