//! Shared recommendation schema emitted by both recommenders and consumed by
//! the replay and evaluation stages.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::value::InputKey;

/// Where a set of caching decisions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "APL")]
    Apl,
    #[serde(rename = "MEM")]
    Mem,
    #[serde(rename = "DEV")]
    Dev,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Apl => "APL",
            Source::Mem => "MEM",
            Source::Dev => "DEV",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheScope {
    Instance,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheSize {
    Single,
    Multi,
}

/// Suggested cache implementation for a recommended method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheImplHint {
    pub scope: CacheScope,
    pub size: CacheSize,
    pub getter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub method: String,
    pub score: f64,
    /// Input tuples worth caching; absent means every input is cached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitelist: Option<BTreeSet<InputKey>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<CacheImplHint>,
    /// Callees folded into this entry by call-graph clustering.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsumes: Vec<String>,
}

/// Ranked output of a recommender: entries sorted by score descending, ties
/// broken by method name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSet {
    pub source: Source,
    pub recommendations: Vec<Recommendation>,
}

impl RecommendationSet {
    pub fn new(source: Source, mut recommendations: Vec<Recommendation>) -> Self {
        recommendations.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.method.cmp(&b.method))
        });
        RecommendationSet {
            source,
            recommendations,
        }
    }

    pub fn methods(&self) -> BTreeSet<&str> {
        self.recommendations
            .iter()
            .map(|r| r.method.as_str())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.recommendations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.recommendations.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recommendation json")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        fs::write(path, self.to_json() + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_sort_by_score_then_name() {
        let set = RecommendationSet::new(
            Source::Mem,
            vec![
                Recommendation {
                    method: "b".into(),
                    score: 1.0,
                    whitelist: None,
                    hint: None,
                    subsumes: vec![],
                },
                Recommendation {
                    method: "a".into(),
                    score: 1.0,
                    whitelist: None,
                    hint: None,
                    subsumes: vec![],
                },
                Recommendation {
                    method: "c".into(),
                    score: 9.0,
                    whitelist: None,
                    hint: None,
                    subsumes: vec![],
                },
            ],
        );
        let order: Vec<&str> = set
            .recommendations
            .iter()
            .map(|r| r.method.as_str())
            .collect();
        assert_eq!(order, vec!["c", "a", "b"]);
    }

    #[test]
    fn json_round_trip() {
        let mut whitelist = BTreeSet::new();
        whitelist.insert(InputKey(vec!["1".into(), "{a:2}".into()]));
        let set = RecommendationSet::new(
            Source::Apl,
            vec![Recommendation {
                method: "m(x)".into(),
                score: 1234.5,
                whitelist: Some(whitelist),
                hint: None,
                subsumes: vec![],
            }],
        );
        let text = set.to_json();
        assert!(text.contains("\"APL\""));
        let back = RecommendationSet::from_json(&text).unwrap();
        assert_eq!(back, set);
    }
}
