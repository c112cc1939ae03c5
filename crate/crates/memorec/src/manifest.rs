//! Ground-truth method behavior manifests.
//!
//! The synthetic application emits one entry per method signature; the same
//! file doubles as the purity manifest consumed by classification. For
//! external traces the manifest is supplied by the user.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Behavior category of a method, as labeled by the trace producer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodCategory {
    Pure,
    Getter,
    TimeVarying,
    Random,
    DbWrite,
    ExternalCall,
    FileWrite,
    StaticMutation,
    ParameterMutation,
}

impl MethodCategory {
    /// Categories whose methods must never be cached: the write-style side
    /// effects plus random output. Time-varying methods stay cacheable since
    /// stale reads within a TTL are an accepted trade.
    pub fn forbids_caching(self) -> bool {
        matches!(
            self,
            MethodCategory::Random
                | MethodCategory::DbWrite
                | MethodCategory::ExternalCall
                | MethodCategory::FileWrite
                | MethodCategory::StaticMutation
                | MethodCategory::ParameterMutation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub category: MethodCategory,
    /// Output change period for time-varying methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_ns: Option<u64>,
}

/// Map from method signature to its behavior category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PurityManifest {
    pub methods: BTreeMap<String, ManifestEntry>,
}

impl PurityManifest {
    pub fn get(&self, method: &str) -> Option<&ManifestEntry> {
        self.methods.get(method)
    }

    pub fn insert(&mut self, method: impl Into<String>, entry: ManifestEntry) {
        self.methods.insert(method.into(), entry);
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest json")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, io::Error> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), io::Error> {
        fs::write(path, self.to_json() + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_validity_split() {
        assert!(!MethodCategory::Pure.forbids_caching());
        assert!(!MethodCategory::Getter.forbids_caching());
        assert!(!MethodCategory::TimeVarying.forbids_caching());
        assert!(MethodCategory::Random.forbids_caching());
        assert!(MethodCategory::DbWrite.forbids_caching());
        assert!(MethodCategory::ParameterMutation.forbids_caching());
    }

    #[test]
    fn json_round_trip() {
        let mut m = PurityManifest::default();
        m.insert(
            "a.B::c(x)",
            ManifestEntry {
                category: MethodCategory::TimeVarying,
                period_ns: Some(500),
            },
        );
        m.insert(
            "a.B::d()",
            ManifestEntry {
                category: MethodCategory::Pure,
                period_ns: None,
            },
        );
        let text = m.to_json();
        assert!(text.contains("time-varying"));
        let back = PurityManifest::from_json(&text).unwrap();
        assert_eq!(back, m);
    }
}
