//! Canonical values: the serialized form of method inputs and outputs.
//!
//! A `CanonicalValue` is a finite tree obtained from a possibly-cyclic object
//! graph by breaking reference cycles (replaced with ancestor markers) and
//! truncating objects whose package is outside the traced application
//! (replaced with their string rendering). Two canonical values are equal
//! exactly when their text renderings are byte-identical; every comparison in
//! the toolkit goes through the rendering.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Structural characters of the canonical rendering. They are backslash
/// escaped wherever they occur inside scalar text or field names, so a
/// rendering can be parsed back into a tree without ambiguity.
fn is_special(c: char) -> bool {
    matches!(c, '\\' | '{' | '}' | ',' | ':' | '@')
}

fn escape_into(text: &str, out: &mut String) {
    for c in text.chars() {
        if is_special(c) {
            out.push('\\');
        }
        out.push(c);
    }
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    escape_into(text, &mut out);
    out
}

/// One node of a canonical value tree.
#[derive(Debug, Clone)]
pub enum CanonicalValue {
    /// Text rendering of a primitive.
    Scalar(String),
    /// Text rendering of an object that was not recursively serialized
    /// because its package lies outside the application.
    Truncated(String),
    /// Ordered field name to child pairs, in source declaration order.
    Composite(Vec<(String, CanonicalValue)>),
    /// A reference back to a strict ancestor, identified by its path from the
    /// root (`/` for the root itself, `/a/b` for nested fields).
    CycleRef(String),
}

impl CanonicalValue {
    pub fn scalar(text: impl Into<String>) -> Self {
        CanonicalValue::Scalar(text.into())
    }

    pub fn composite(fields: Vec<(String, CanonicalValue)>) -> Self {
        CanonicalValue::Composite(fields)
    }

    /// The canonical text rendering. Equality of values is defined as byte
    /// equality of this string.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        match self {
            CanonicalValue::Scalar(t) | CanonicalValue::Truncated(t) => escape_into(t, out),
            CanonicalValue::CycleRef(path) => {
                out.push_str("@ref:");
                out.push_str(path);
            }
            CanonicalValue::Composite(fields) => {
                out.push('{');
                for (i, (name, value)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    escape_into(name, out);
                    out.push(':');
                    value.render_into(out);
                }
                out.push('}');
            }
        }
    }

    /// Number of levels in the tree. Leaves count 1, a composite counts one
    /// more than its deepest child.
    pub fn depth(&self) -> u32 {
        match self {
            CanonicalValue::Composite(fields) => {
                1 + fields.iter().map(|(_, v)| v.depth()).max().unwrap_or(0)
            }
            _ => 1,
        }
    }

    /// Rendering of the tree pruned below `depth` levels. Pruned subtrees all
    /// render as the same opaque marker, so two trees that agree on the first
    /// `depth` levels render identically. The flag reports whether anything
    /// was actually cut.
    pub(crate) fn render_pruned(&self, depth: u32) -> (String, bool) {
        let mut out = String::new();
        let mut cut = false;
        self.render_pruned_into(depth, &mut out, &mut cut);
        (out, cut)
    }

    fn render_pruned_into(&self, depth: u32, out: &mut String, cut: &mut bool) {
        if depth == 0 {
            // "@cut" cannot clash with scalar text because '@' is escaped there.
            out.push_str("@cut");
            *cut = true;
            return;
        }
        match self {
            CanonicalValue::Composite(fields) => {
                out.push('{');
                for (i, (name, value)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    escape_into(name, out);
                    out.push(':');
                    value.render_pruned_into(depth - 1, out, cut);
                }
                out.push('}');
            }
            other => other.render_into(out),
        }
    }

    /// Parse a rendering produced by [`CanonicalValue::render`].
    pub fn parse(text: &str) -> Result<Self, ValueParseError> {
        let mut cur = Cursor { src: text, pos: 0 };
        let value = cur.value()?;
        if cur.pos != text.len() {
            return Err(cur.err("trailing data after value"));
        }
        Ok(value)
    }
}

impl PartialEq for CanonicalValue {
    fn eq(&self, other: &Self) -> bool {
        self.render() == other.render()
    }
}

impl Eq for CanonicalValue {}

impl PartialOrd for CanonicalValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CanonicalValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.render().cmp(&other.render())
    }
}

impl std::hash::Hash for CanonicalValue {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.render().hash(state);
    }
}

impl fmt::Display for CanonicalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for CanonicalValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for CanonicalValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        CanonicalValue::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid canonical value at byte {position}: {reason}")]
pub struct ValueParseError {
    pub position: usize,
    pub reason: String,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> ValueParseError {
        ValueParseError {
            position: self.pos,
            reason: reason.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn value(&mut self) -> Result<CanonicalValue, ValueParseError> {
        if self.src[self.pos..].starts_with("@ref:") {
            self.pos += 5;
            let path = self.raw_text()?;
            return Ok(CanonicalValue::CycleRef(path));
        }
        match self.peek() {
            Some('{') => self.composite(),
            Some('@') => Err(self.err("'@' must begin '@ref:' or be escaped")),
            _ => Ok(CanonicalValue::Scalar(self.unescaped_text(&[',', '}'])?)),
        }
    }

    fn composite(&mut self) -> Result<CanonicalValue, ValueParseError> {
        self.bump(); // '{'
        let mut fields = Vec::new();
        if self.peek() == Some('}') {
            self.bump();
            return Ok(CanonicalValue::Composite(fields));
        }
        loop {
            let name = self.unescaped_text(&[':'])?;
            if self.bump() != Some(':') {
                return Err(self.err("expected ':' after field name"));
            }
            let value = self.value()?;
            fields.push((name, value));
            match self.bump() {
                Some(',') => continue,
                Some('}') => return Ok(CanonicalValue::Composite(fields)),
                _ => return Err(self.err("expected ',' or '}' in composite")),
            }
        }
    }

    /// Unescape text up to (not including) a stop character. Any other
    /// unescaped structural character is an error.
    fn unescaped_text(&mut self, stop: &[char]) -> Result<String, ValueParseError> {
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Ok(out),
                Some('\\') => {
                    self.bump();
                    match self.bump() {
                        Some(c) if is_special(c) => out.push(c),
                        _ => return Err(self.err("invalid escape sequence")),
                    }
                }
                Some(c) if stop.contains(&c) => return Ok(out),
                Some(c) if is_special(c) => {
                    return Err(self.err(format!("unescaped '{c}' in text")))
                }
                Some(c) => {
                    self.bump();
                    out.push(c);
                }
            }
        }
    }

    /// Read cycle path text verbatim (escapes preserved) up to an unescaped
    /// ',' or '}' terminator.
    fn raw_text(&mut self) -> Result<String, ValueParseError> {
        let start = self.pos;
        loop {
            match self.peek() {
                None => break,
                Some('\\') => {
                    self.bump();
                    if self.bump().is_none() {
                        return Err(self.err("dangling escape in cycle path"));
                    }
                }
                Some(',') | Some('}') => break,
                Some(_) => {
                    self.bump();
                }
            }
        }
        Ok(self.src[start..self.pos].to_string())
    }
}

/// An input tuple keyed by the canonical renderings of its values. Used as
/// the map key for input groups, whitelists and cache entries.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputKey(pub Vec<String>);

impl InputKey {
    pub fn from_values(values: &[CanonicalValue]) -> Self {
        InputKey(values.iter().map(CanonicalValue::render).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for InputKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.0.join(", "))
    }
}

// ============================================================================
// Raw value graphs and canonicalization
// ============================================================================

/// Handle to a node inside a [`RawGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum RawNode {
    Scalar(String),
    Object {
        package: String,
        repr: String,
        fields: Vec<(String, NodeId)>,
    },
}

/// A possibly-cyclic labeled value graph, as a trace producer would observe
/// it before serialization. Nodes are created through the builder methods and
/// edges may point anywhere, including back to an ancestor.
#[derive(Debug, Clone, Default)]
pub struct RawGraph {
    nodes: Vec<RawNode>,
}

impl RawGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(&mut self, text: impl Into<String>) -> NodeId {
        self.nodes.push(RawNode::Scalar(text.into()));
        NodeId(self.nodes.len() - 1)
    }

    /// An object node tagged with its package and a fallback string rendering
    /// used when the object is truncated.
    pub fn object(&mut self, package: impl Into<String>, repr: impl Into<String>) -> NodeId {
        self.nodes.push(RawNode::Object {
            package: package.into(),
            repr: repr.into(),
            fields: Vec::new(),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Append a field to an object node. Fields keep insertion order, which
    /// canonicalization preserves verbatim.
    pub fn field(&mut self, object: NodeId, name: impl Into<String>, child: NodeId) {
        match &mut self.nodes[object.0] {
            RawNode::Object { fields, .. } => fields.push((name.into(), child)),
            RawNode::Scalar(_) => panic!("cannot add a field to a scalar node"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("package prefix {a:?} overlaps {b:?} across the application/internal lists")]
    OverlappingPrefixes { a: String, b: String },
}

/// Decides which packages are serialized recursively and which collapse to
/// their string rendering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationPolicy {
    application: Vec<String>,
    internal: Vec<String>,
}

impl TruncationPolicy {
    /// Build a policy from application and internal package prefix lists.
    /// Prefixes are normalized (trimmed, trailing dots removed) and the two
    /// lists must not overlap.
    pub fn new(application: Vec<String>, internal: Vec<String>) -> Result<Self, PolicyError> {
        let application: Vec<String> = application.iter().map(|p| normalize(p)).collect();
        let internal: Vec<String> = internal.iter().map(|p| normalize(p)).collect();
        for a in &application {
            for i in &internal {
                if covers(a, i) || covers(i, a) {
                    return Err(PolicyError::OverlappingPrefixes {
                        a: a.clone(),
                        b: i.clone(),
                    });
                }
            }
        }
        Ok(TruncationPolicy {
            application,
            internal,
        })
    }

    pub fn application_only(prefixes: impl IntoIterator<Item = impl Into<String>>) -> Self {
        TruncationPolicy {
            application: prefixes.into_iter().map(|p| normalize(&p.into())).collect(),
            internal: Vec::new(),
        }
    }

    /// True when the package belongs to the traced application. Internal and
    /// unknown packages both answer false and are truncated.
    pub fn is_application(&self, package: &str) -> bool {
        self.application.iter().any(|p| covers(p, package))
    }
}

fn normalize(prefix: &str) -> String {
    prefix.trim().trim_matches('.').to_string()
}

/// Prefix match on package segment boundaries: `com.shop` covers
/// `com.shop.web` but not `com.shopx`.
fn covers(prefix: &str, package: &str) -> bool {
    package == prefix || (package.starts_with(prefix) && package[prefix.len()..].starts_with('.'))
}

/// Serialize a raw value graph into a canonical tree. Total and
/// deterministic: cycles become `@ref` markers pointing at the ancestor's
/// path, objects outside the application packages become truncated leaves,
/// and field order is preserved verbatim.
pub fn canonicalize(graph: &RawGraph, root: NodeId, policy: &TruncationPolicy) -> CanonicalValue {
    let mut stack = Vec::new();
    canon_node(graph, root, policy, &mut stack, "/")
}

fn canon_node(
    graph: &RawGraph,
    id: NodeId,
    policy: &TruncationPolicy,
    stack: &mut Vec<(NodeId, String)>,
    path: &str,
) -> CanonicalValue {
    match &graph.nodes[id.0] {
        RawNode::Scalar(text) => CanonicalValue::Scalar(text.clone()),
        RawNode::Object {
            package,
            repr,
            fields,
        } => {
            if !policy.is_application(package) {
                return CanonicalValue::Truncated(repr.clone());
            }
            if let Some((_, ancestor_path)) = stack.iter().find(|(nid, _)| *nid == id) {
                return CanonicalValue::CycleRef(ancestor_path.clone());
            }
            stack.push((id, path.to_string()));
            let children = fields
                .iter()
                .map(|(name, child)| {
                    let child_path = if path == "/" {
                        format!("/{}", escape(name))
                    } else {
                        format!("{}/{}", path, escape(name))
                    };
                    (
                        name.clone(),
                        canon_node(graph, *child, policy, stack, &child_path),
                    )
                })
                .collect();
            stack.pop();
            CanonicalValue::Composite(children)
        }
    }
}

/// Deepest value tree among a set of values.
pub fn max_depth<'a>(values: impl IntoIterator<Item = &'a CanonicalValue>) -> u32 {
    values
        .into_iter()
        .map(CanonicalValue::depth)
        .max()
        .unwrap_or(0)
}

#[allow(dead_code)]
fn distinct_renderings(values: &[CanonicalValue]) -> usize {
    values
        .iter()
        .map(CanonicalValue::render)
        .collect::<BTreeSet<_>>()
        .len()
}
