//! Navigation specifications: the allowed-successor relation over requests
//! plus required-predecessor constraints within a session.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// HTTP-style request class: reads are GET-like, writes are POST/PUT/DELETE-like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Read,
    Write,
}

#[derive(Debug, Error)]
pub enum NavError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("navigation spec is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate vertex {id:?}")]
    DuplicateVertex { id: String },
    #[error("unknown request {id:?} referenced by {context}")]
    Dangling { id: String, context: String },
    #[error("prerequisite cycle involving {id:?}")]
    CyclicRequires { id: String },
    #[error("entry list is empty")]
    NoEntries,
    #[error("entry {id:?} has prerequisites and cannot start a session")]
    EntryWithPrerequisites { id: String },
}

/// Validated navigation structure. Successors come from the may-follow
/// relation; prerequisites must have appeared earlier in the same session.
#[derive(Debug, Clone)]
pub struct NavigationSpec {
    vertices: BTreeMap<String, RequestKind>,
    next: BTreeMap<String, BTreeSet<String>>,
    requires: BTreeMap<String, BTreeSet<String>>,
    entries: BTreeSet<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NavFile {
    vertices: Vec<NavVertex>,
    #[serde(default)]
    next: Vec<(String, String)>,
    #[serde(default)]
    requires: Vec<(String, String)>,
    entries: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NavVertex {
    id: String,
    kind: RequestKind,
}

impl NavigationSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, NavError> {
        let text = fs::read_to_string(path)?;
        load_navigation(&text)
    }

    /// Build a spec programmatically; runs the same validation as loading.
    pub fn build(
        vertices: impl IntoIterator<Item = (String, RequestKind)>,
        next: impl IntoIterator<Item = (String, String)>,
        requires: impl IntoIterator<Item = (String, String)>,
        entries: impl IntoIterator<Item = String>,
    ) -> Result<Self, NavError> {
        let file = NavFile {
            vertices: vertices
                .into_iter()
                .map(|(id, kind)| NavVertex { id, kind })
                .collect(),
            next: next.into_iter().collect(),
            requires: requires.into_iter().collect(),
            entries: entries.into_iter().collect(),
        };
        validate(file)
    }

    pub fn kind(&self, id: &str) -> Option<RequestKind> {
        self.vertices.get(id).copied()
    }

    pub fn vertices(&self) -> impl Iterator<Item = (&str, RequestKind)> {
        self.vertices.iter().map(|(id, k)| (id.as_str(), *k))
    }

    pub fn successors(&self, id: &str) -> impl Iterator<Item = &str> {
        self.next
            .get(id)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn prerequisites(&self, id: &str) -> impl Iterator<Item = &str> {
        self.requires
            .get(id)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn has_kind(&self, kind: RequestKind) -> bool {
        self.vertices.values().any(|k| *k == kind)
    }
}

/// Parse and validate a navigation spec document.
pub fn load_navigation(text: &str) -> Result<NavigationSpec, NavError> {
    let file: NavFile = serde_json::from_str(text)?;
    validate(file)
}

fn validate(file: NavFile) -> Result<NavigationSpec, NavError> {
    let mut vertices = BTreeMap::new();
    for v in file.vertices {
        if vertices.insert(v.id.clone(), v.kind).is_some() {
            return Err(NavError::DuplicateVertex { id: v.id });
        }
    }
    let known = |id: &str, context: &str| -> Result<(), NavError> {
        if vertices.contains_key(id) {
            Ok(())
        } else {
            Err(NavError::Dangling {
                id: id.to_string(),
                context: context.to_string(),
            })
        }
    };

    let mut next: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (v, u) in file.next {
        known(&v, "next")?;
        known(&u, "next")?;
        next.entry(v).or_default().insert(u);
    }

    let mut requires: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (v, u) in file.requires {
        known(&v, "requires")?;
        known(&u, "requires")?;
        // (v, u) reads "v must precede u".
        requires.entry(u).or_default().insert(v);
    }
    check_acyclic(&requires)?;

    if file.entries.is_empty() {
        return Err(NavError::NoEntries);
    }
    let mut entries = BTreeSet::new();
    for e in file.entries {
        known(&e, "entries")?;
        if requires.get(&e).is_some_and(|p| !p.is_empty()) {
            return Err(NavError::EntryWithPrerequisites { id: e });
        }
        entries.insert(e);
    }

    Ok(NavigationSpec {
        vertices,
        next,
        requires,
        entries,
    })
}

fn check_acyclic(requires: &BTreeMap<String, BTreeSet<String>>) -> Result<(), NavError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Gray,
        Black,
    }
    fn visit(
        node: &str,
        requires: &BTreeMap<String, BTreeSet<String>>,
        marks: &mut BTreeMap<String, Mark>,
    ) -> Result<(), NavError> {
        match marks.get(node).copied().unwrap_or(Mark::White) {
            Mark::Black => return Ok(()),
            Mark::Gray => {
                return Err(NavError::CyclicRequires {
                    id: node.to_string(),
                })
            }
            Mark::White => {}
        }
        marks.insert(node.to_string(), Mark::Gray);
        if let Some(deps) = requires.get(node) {
            for dep in deps {
                visit(dep, requires, marks)?;
            }
        }
        marks.insert(node.to_string(), Mark::Black);
        Ok(())
    }
    let mut marks = BTreeMap::new();
    for node in requires.keys() {
        visit(node, requires, &mut marks)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_vertex_self_loop_is_valid() {
        let spec = load_navigation(
            r#"{"vertices":[{"id":"home","kind":"read"}],
                "next":[["home","home"]],"requires":[],"entries":["home"]}"#,
        )
        .unwrap();
        assert_eq!(spec.kind("home"), Some(RequestKind::Read));
        assert_eq!(spec.successors("home").collect::<Vec<_>>(), vec!["home"]);
    }

    #[test]
    fn prerequisite_cycle_is_rejected() {
        let err = load_navigation(
            r#"{"vertices":[{"id":"a","kind":"read"},{"id":"b","kind":"read"}],
                "next":[],"requires":[["a","b"],["b","a"]],"entries":["a"]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, NavError::CyclicRequires { .. }));
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let err = load_navigation(
            r#"{"vertices":[{"id":"home","kind":"read"}],
                "next":[["home","x"]],"requires":[],"entries":["home"]}"#,
        )
        .unwrap_err();
        match err {
            NavError::Dangling { id, .. } => assert_eq!(id, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_entries_and_gated_entries_are_rejected() {
        let err = load_navigation(
            r#"{"vertices":[{"id":"home","kind":"read"}],"next":[],"requires":[],"entries":[]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, NavError::NoEntries));

        let err = load_navigation(
            r#"{"vertices":[{"id":"a","kind":"read"},{"id":"b","kind":"write"}],
                "next":[],"requires":[["a","b"]],"entries":["b"]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, NavError::EntryWithPrerequisites { .. }));
    }
}
