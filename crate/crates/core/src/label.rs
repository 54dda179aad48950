use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::SparseVector;

/// Binary class of a post: discusses performance of a software component or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// +1 for positive, -1 for negative.
    pub fn sign(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    /// Positive only for a strictly positive decision value.
    pub fn from_decision(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseLabelError(pub String);

impl fmt::Display for ParseLabelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unrecognized label `{}`", self.0)
    }
}

impl std::error::Error for ParseLabelError {}

impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "+1" | "1" | "true" | "yes" => Ok(Label::Positive),
            "negative" | "neg" | "-1" | "0" | "false" | "no" => Ok(Label::Negative),
            other => Err(ParseLabelError(other.to_string())),
        }
    }
}

/// A vectorized post with a (human or pseudo) label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub id: u64,
    pub vector: SparseVector<T>,
    pub label: Label,
}

impl<T> Example<T> {
    pub fn new(id: u64, vector: SparseVector<T>, label: Label) -> Self {
        Self { id, vector, label }
    }
}
