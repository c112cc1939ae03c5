//! Synthetic application model: per-request call trees of method nodes with
//! declared behaviors. Executing a request log against the model produces a
//! labeled execution trace plus the ground-truth manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::derive_seed;
use super::gen::{ParamDecl, RequestLog};
use crate::manifest::{ManifestEntry, MethodCategory, PurityManifest};
use crate::trace::CallRecord;
use crate::value::{canonicalize, CanonicalValue, RawGraph, TruncationPolicy};

pub const APP_FORMAT: &str = "memorec-app";
pub const APP_VERSION: u32 = 1;

/// Package tag attached to structured parameter values built from JSON.
const APP_PACKAGE: &str = "app";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideEffect {
    DbWrite,
    ExternalCall,
    FileWrite,
    StaticMutation,
    ParameterMutation,
}

impl From<SideEffect> for MethodCategory {
    fn from(e: SideEffect) -> Self {
        match e {
            SideEffect::DbWrite => MethodCategory::DbWrite,
            SideEffect::ExternalCall => MethodCategory::ExternalCall,
            SideEffect::FileWrite => MethodCategory::FileWrite,
            SideEffect::StaticMutation => MethodCategory::StaticMutation,
            SideEffect::ParameterMutation => MethodCategory::ParameterMutation,
        }
    }
}

/// What a method node does to its output.
///
/// Pure nodes map equal inputs to equal outputs for the whole run. A
/// time-varying node changes its output for a fixed input exactly at
/// multiples of its period. Random nodes draw a fresh output per call.
/// Side-effecting nodes return a constant per signature (the shape of a
/// request mapping that answers a fixed view name while writing internally).
/// Getters take no inputs and answer a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Pure,
    TimeVarying { period_ns: u64 },
    Random,
    SideEffecting { effect: SideEffect },
    Getter,
}

impl Behavior {
    fn manifest_entry(self) -> ManifestEntry {
        match self {
            Behavior::Pure => ManifestEntry {
                category: MethodCategory::Pure,
                period_ns: None,
            },
            Behavior::Getter => ManifestEntry {
                category: MethodCategory::Getter,
                period_ns: None,
            },
            Behavior::Random => ManifestEntry {
                category: MethodCategory::Random,
                period_ns: None,
            },
            Behavior::TimeVarying { period_ns } => ManifestEntry {
                category: MethodCategory::TimeVarying,
                period_ns: Some(period_ns),
            },
            Behavior::SideEffecting { effect } => ManifestEntry {
                category: effect.into(),
                period_ns: None,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodNode {
    pub method: String,
    pub behavior: Behavior,
    pub cost_ns: u64,
    /// Names of request parameters feeding this method, in order.
    pub inputs: Vec<String>,
    pub children: Vec<MethodNode>,
}

#[derive(Debug, Clone)]
pub struct RequestSpec {
    pub params: Vec<ParamDecl>,
    pub root: MethodNode,
}

/// A synthetic application: one call tree per request identifier.
#[derive(Debug, Clone, Default)]
pub struct SyntheticApp {
    requests: BTreeMap<String, RequestSpec>,
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("app spec is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("app spec: {0}")]
    Invalid(String),
    #[error("request {request}: method {method}: {reason}")]
    InvalidNode {
        request: String,
        method: String,
        reason: String,
    },
    #[error("method {method} is declared with conflicting behaviors")]
    ConflictingBehavior { method: String },
    #[error("request log names unknown request {request:?}")]
    UnknownRequest { request: String },
}

// Raw JSON shapes; converted with validation.

#[derive(Debug, Serialize, Deserialize)]
struct AppFile {
    format: String,
    version: u32,
    requests: BTreeMap<String, RequestFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RequestFile {
    #[serde(default)]
    params: Vec<ParamDecl>,
    root: NodeFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeFile {
    method: String,
    behavior: String,
    #[serde(default)]
    period_ns: Option<u64>,
    #[serde(default)]
    category: Option<String>,
    cost_ns: u64,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    children: Vec<NodeFile>,
}

impl SyntheticApp {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AppError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, AppError> {
        let file: AppFile = serde_json::from_str(text)?;
        if file.format != APP_FORMAT {
            return Err(AppError::Invalid(format!(
                "unexpected format {:?}",
                file.format
            )));
        }
        if file.version != APP_VERSION {
            return Err(AppError::Invalid(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let mut requests = BTreeMap::new();
        for (id, req) in file.requests {
            for decl in &req.params {
                if decl.domain.is_empty() {
                    return Err(AppError::Invalid(format!(
                        "request {id}: parameter {} has an empty domain",
                        decl.name
                    )));
                }
            }
            let root = convert_node(&id, &req.params, req.root)?;
            requests.insert(
                id,
                RequestSpec {
                    params: req.params,
                    root,
                },
            );
        }
        let app = SyntheticApp { requests };
        app.check_behavior_consistency()?;
        Ok(app)
    }

    /// Build an app programmatically; runs the same consistency checks.
    pub fn build(
        requests: impl IntoIterator<Item = (String, RequestSpec)>,
    ) -> Result<Self, AppError> {
        let app = SyntheticApp {
            requests: requests.into_iter().collect(),
        };
        for (id, spec) in &app.requests {
            validate_node(id, &spec.params, &spec.root)?;
        }
        app.check_behavior_consistency()?;
        Ok(app)
    }

    fn check_behavior_consistency(&self) -> Result<(), AppError> {
        let mut seen: BTreeMap<&str, Behavior> = BTreeMap::new();
        for spec in self.requests.values() {
            let mut stack = vec![&spec.root];
            while let Some(node) = stack.pop() {
                match seen.get(node.method.as_str()) {
                    Some(b) if *b != node.behavior => {
                        return Err(AppError::ConflictingBehavior {
                            method: node.method.clone(),
                        })
                    }
                    _ => {
                        seen.insert(&node.method, node.behavior);
                    }
                }
                stack.extend(node.children.iter());
            }
        }
        Ok(())
    }

    pub fn params_for(&self, request: &str) -> &[ParamDecl] {
        self.requests
            .get(request)
            .map(|r| r.params.as_slice())
            .unwrap_or(&[])
    }

    pub fn request_ids(&self) -> impl Iterator<Item = &str> {
        self.requests.keys().map(String::as_str)
    }

    /// Ground-truth behavior labels per method signature.
    pub fn manifest(&self) -> PurityManifest {
        let mut manifest = PurityManifest::default();
        for spec in self.requests.values() {
            let mut stack = vec![&spec.root];
            while let Some(node) = stack.pop() {
                manifest.insert(node.method.clone(), node.behavior.manifest_entry());
                stack.extend(node.children.iter());
            }
        }
        manifest
    }
}

fn convert_node(
    request: &str,
    params: &[ParamDecl],
    node: NodeFile,
) -> Result<MethodNode, AppError> {
    let err = |reason: String| AppError::InvalidNode {
        request: request.to_string(),
        method: node.method.clone(),
        reason,
    };
    let behavior = match node.behavior.as_str() {
        "pure" => Behavior::Pure,
        "getter" => Behavior::Getter,
        "random" => Behavior::Random,
        "time-varying" => match node.period_ns {
            Some(p) if p > 0 => Behavior::TimeVarying { period_ns: p },
            _ => return Err(err("time-varying requires period_ns >= 1".into())),
        },
        "side-effecting" => {
            let category = node
                .category
                .as_deref()
                .ok_or_else(|| err("side-effecting requires a category".into()))?;
            let effect = match category {
                "db-write" => SideEffect::DbWrite,
                "external-call" => SideEffect::ExternalCall,
                "file-write" => SideEffect::FileWrite,
                "static-mutation" => SideEffect::StaticMutation,
                "parameter-mutation" => SideEffect::ParameterMutation,
                other => return Err(err(format!("unknown category {other:?}"))),
            };
            Behavior::SideEffecting { effect }
        }
        other => return Err(err(format!("unknown behavior {other:?}"))),
    };
    if !matches!(behavior, Behavior::TimeVarying { .. }) && node.period_ns.is_some() {
        return Err(err("period_ns is only valid for time-varying".into()));
    }
    if !matches!(behavior, Behavior::SideEffecting { .. }) && node.category.is_some() {
        return Err(err("category is only valid for side-effecting".into()));
    }
    let converted = MethodNode {
        method: node.method.clone(),
        behavior,
        cost_ns: node.cost_ns,
        inputs: node.inputs,
        children: node
            .children
            .into_iter()
            .map(|c| convert_node(request, params, c))
            .collect::<Result<_, _>>()?,
    };
    validate_node(request, params, &converted)?;
    Ok(converted)
}

fn validate_node(request: &str, params: &[ParamDecl], node: &MethodNode) -> Result<(), AppError> {
    let err = |reason: String| AppError::InvalidNode {
        request: request.to_string(),
        method: node.method.clone(),
        reason,
    };
    if node.cost_ns == 0 {
        return Err(err("cost_ns must be >= 1".into()));
    }
    if matches!(node.behavior, Behavior::Getter) && !node.inputs.is_empty() {
        return Err(err("getter nodes take zero inputs".into()));
    }
    for input in &node.inputs {
        if !params.iter().any(|p| &p.name == input) {
            return Err(err(format!("input {input:?} is not a declared parameter")));
        }
    }
    Ok(())
}

const STREAM_EXEC: u64 = 0xe8ec;

/// Execute a request log against the app, producing one record per method
/// node per request. The simulated clock is global and requests execute
/// sequentially: each node's interval covers its subtree and advances the
/// clock by its base cost plus a seeded jitter of at most 5%.
pub fn execute_synthetic(
    app: &SyntheticApp,
    log: &RequestLog,
    policy: &TruncationPolicy,
    seed: u64,
) -> Result<Vec<CallRecord>, AppError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_EXEC));
    let mut records = Vec::new();
    let mut clock: u64 = 0;
    for entry in &log.entries {
        let spec = app
            .requests
            .get(&entry.request)
            .ok_or_else(|| AppError::UnknownRequest {
                request: entry.request.clone(),
            })?;
        clock = clock.max(entry.issued_ns);
        let mut params: BTreeMap<&str, CanonicalValue> = BTreeMap::new();
        for (name, value) in &entry.params {
            params.insert(name.as_str(), json_to_canonical(value, policy));
        }
        exec_node(
            &spec.root,
            0,
            &entry.session,
            &entry.request,
            &params,
            &mut clock,
            &mut rng,
            &mut records,
        )?;
    }
    Ok(records)
}

#[allow(clippy::too_many_arguments)]
fn exec_node(
    node: &MethodNode,
    depth: u32,
    session: &str,
    request: &str,
    params: &BTreeMap<&str, CanonicalValue>,
    clock: &mut u64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<CallRecord>,
) -> Result<(), AppError> {
    let jitter_cap = node.cost_ns / 20;
    let own = node.cost_ns
        + if jitter_cap > 0 {
            rng.gen_range(0..=jitter_cap)
        } else {
            0
        };
    let start = *clock;

    let mut inputs = Vec::with_capacity(node.inputs.len());
    for name in &node.inputs {
        let value = params
            .get(name.as_str())
            .ok_or_else(|| AppError::InvalidNode {
                request: request.to_string(),
                method: node.method.clone(),
                reason: format!("parameter {name:?} missing from request log entry"),
            })?;
        inputs.push(value.clone());
    }
    let output = behavior_output(node, &inputs, start, rng);

    let placeholder = out.len();
    out.push(CallRecord {
        session: session.to_string(),
        method: node.method.clone(),
        inputs,
        output,
        start_ns: start,
        end_ns: start,
        depth,
    });

    if node.children.is_empty() {
        *clock += own.max(1);
    } else {
        // Split the node's own cost around its children so child intervals
        // sit strictly inside the parent's.
        let prologue = (own - own / 2).max(1);
        let epilogue = (own / 2).max(1);
        *clock += prologue;
        for child in &node.children {
            exec_node(child, depth + 1, session, request, params, clock, rng, out)?;
        }
        *clock += epilogue;
    }
    out[placeholder].end_ns = *clock;
    Ok(())
}

fn behavior_output(
    node: &MethodNode,
    inputs: &[CanonicalValue],
    start_ns: u64,
    rng: &mut ChaCha8Rng,
) -> CanonicalValue {
    let rendered: Vec<String> = inputs.iter().map(CanonicalValue::render).collect();
    let mut parts: Vec<&str> = vec![node.method.as_str()];
    parts.extend(rendered.iter().map(String::as_str));
    match node.behavior {
        Behavior::Pure | Behavior::Getter => {
            CanonicalValue::Scalar(format!("v{:016x}", fnv1a64(&parts)))
        }
        Behavior::TimeVarying { period_ns } => {
            let epoch = start_ns / period_ns;
            let tag = epoch.to_string();
            parts.push(&tag);
            // The epoch index appears verbatim, so consecutive epochs always
            // render differently.
            CanonicalValue::Scalar(format!("t{:016x}e{epoch}", fnv1a64(&parts)))
        }
        Behavior::Random => CanonicalValue::Scalar(format!("r{:016x}", rng.next_u64())),
        Behavior::SideEffecting { .. } => {
            CanonicalValue::Scalar(format!("s{:016x}", fnv1a64(&[node.method.as_str()])))
        }
    }
}

/// Stable 64-bit FNV-1a over the parts with a separator byte, so the hash is
/// identical across platforms and runs.
fn fnv1a64(parts: &[&str]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for part in parts {
        for b in part.bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100_0000_01b3);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// Convert a JSON parameter value into a canonical value under the policy.
/// Objects and arrays are treated as application-package composites; object
/// key order follows the source document.
fn json_to_canonical(value: &serde_json::Value, policy: &TruncationPolicy) -> CanonicalValue {
    fn build(g: &mut RawGraph, value: &serde_json::Value) -> crate::value::NodeId {
        use serde_json::Value;
        match value {
            Value::Null => g.scalar("null"),
            Value::Bool(b) => g.scalar(b.to_string()),
            Value::Number(n) => g.scalar(n.to_string()),
            Value::String(s) => g.scalar(s.clone()),
            Value::Array(items) => {
                let obj = g.object(APP_PACKAGE, "[]");
                for (i, item) in items.iter().enumerate() {
                    let child = build(g, item);
                    g.field(obj, i.to_string(), child);
                }
                obj
            }
            Value::Object(map) => {
                let obj = g.object(APP_PACKAGE, "{}");
                for (k, v) in map {
                    let child = build(g, v);
                    g.field(obj, k.clone(), child);
                }
                obj
            }
        }
    }
    let mut graph = RawGraph::new();
    let root = build(&mut graph, value);
    canonicalize(&graph, root, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::gen::RequestEntry;

    fn policy() -> TruncationPolicy {
        TruncationPolicy::application_only(["app"])
    }

    fn leaf(method: &str, behavior: Behavior, cost: u64, inputs: &[&str]) -> MethodNode {
        MethodNode {
            method: method.into(),
            behavior,
            cost_ns: cost,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            children: Vec::new(),
        }
    }

    fn one_request_app(root: MethodNode, params: Vec<ParamDecl>) -> SyntheticApp {
        SyntheticApp::build([("req".to_string(), RequestSpec { params, root })]).unwrap()
    }

    fn log_of(requests: &[(u64, &[(&str, serde_json::Value)])]) -> RequestLog {
        RequestLog {
            entries: requests
                .iter()
                .map(|(t, params)| RequestEntry {
                    user: 0,
                    session: "u0-s0".into(),
                    request: "req".into(),
                    params: params
                        .iter()
                        .map(|(n, v)| (n.to_string(), v.clone()))
                        .collect(),
                    issued_ns: *t,
                })
                .collect(),
        }
    }

    #[test]
    fn pure_node_is_deterministic_per_input() {
        let app = one_request_app(
            leaf("m", Behavior::Pure, 100, &["x"]),
            vec![ParamDecl {
                name: "x".into(),
                domain: vec![serde_json::json!("2")],
            }],
        );
        let log = log_of(&[
            (0, &[("x", serde_json::json!("2"))]),
            (10_000, &[("x", serde_json::json!("2"))]),
        ]);
        let records = execute_synthetic(&app, &log, &policy(), 1).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].inputs[0].render(), "2");
        assert_eq!(records[0].output, records[1].output);
    }

    #[test]
    fn time_varying_flips_across_period() {
        let period = 10_000_000u64;
        let app = one_request_app(
            leaf(
                "m",
                Behavior::TimeVarying { period_ns: period },
                100,
                &["x"],
            ),
            vec![ParamDecl {
                name: "x".into(),
                domain: vec![serde_json::json!("1")],
            }],
        );
        let log = log_of(&[
            (0, &[("x", serde_json::json!("1"))]),
            (period, &[("x", serde_json::json!("1"))]),
        ]);
        let records = execute_synthetic(&app, &log, &policy(), 1).unwrap();
        assert_eq!(records[0].inputs, records[1].inputs);
        assert_ne!(records[0].output, records[1].output);
    }

    #[test]
    fn call_tree_nests_children_strictly() {
        let root = MethodNode {
            method: "root".into(),
            behavior: Behavior::Pure,
            cost_ns: 1_000,
            inputs: vec![],
            children: vec![
                leaf("a", Behavior::Pure, 500, &[]),
                leaf("b", Behavior::Pure, 500, &[]),
            ],
        };
        let app = one_request_app(root, vec![]);
        let log = log_of(&[(0, &[])]);
        let records = execute_synthetic(&app, &log, &policy(), 1).unwrap();
        assert_eq!(records.len(), 3);
        let root_rec = &records[0];
        assert_eq!(root_rec.depth, 0);
        for child in &records[1..] {
            assert_eq!(child.depth, 1);
            assert!(child.start_ns > root_rec.start_ns && child.end_ns < root_rec.end_ns);
        }
        // Siblings do not overlap.
        assert!(records[1].end_ns <= records[2].start_ns);
    }

    #[test]
    fn unknown_request_is_an_error() {
        let app = SyntheticApp::empty();
        let log = log_of(&[(0, &[])]);
        assert!(matches!(
            execute_synthetic(&app, &log, &policy(), 1),
            Err(AppError::UnknownRequest { .. })
        ));
    }

    #[test]
    fn getter_with_inputs_is_rejected() {
        let err = SyntheticApp::build([(
            "req".to_string(),
            RequestSpec {
                params: vec![ParamDecl {
                    name: "x".into(),
                    domain: vec![serde_json::json!(1)],
                }],
                root: leaf("g", Behavior::Getter, 100, &["x"]),
            },
        )])
        .unwrap_err();
        assert!(matches!(err, AppError::InvalidNode { .. }));
    }

    #[test]
    fn manifest_covers_every_method() {
        let root = MethodNode {
            method: "root".into(),
            behavior: Behavior::SideEffecting {
                effect: SideEffect::DbWrite,
            },
            cost_ns: 1_000,
            inputs: vec![],
            children: vec![leaf("a", Behavior::Random, 500, &[])],
        };
        let app = one_request_app(root, vec![]);
        let manifest = app.manifest();
        assert_eq!(
            manifest.get("root").unwrap().category,
            MethodCategory::DbWrite
        );
        assert_eq!(manifest.get("a").unwrap().category, MethodCategory::Random);
    }

    #[test]
    fn pure_app_trace_has_single_output_per_input_group() {
        use crate::workload::{generate_workload, load_navigation, WorkloadConfig};
        use std::collections::{BTreeMap, BTreeSet};

        let nav = load_navigation(
            r#"{"vertices":[{"id":"a","kind":"read"},{"id":"b","kind":"write"}],
                "next":[["a","a"],["a","b"],["b","a"],["b","b"]],
                "requires":[],"entries":["a"]}"#,
        )
        .unwrap();
        let tree = |sig: &str| MethodNode {
            method: sig.into(),
            behavior: Behavior::Pure,
            cost_ns: 2_000,
            inputs: vec!["x".into()],
            children: vec![leaf(&format!("{sig}.inner"), Behavior::Pure, 500, &["x"])],
        };
        let params = vec![ParamDecl {
            name: "x".into(),
            domain: vec![serde_json::json!("1"), serde_json::json!("2")],
        }];
        let app = SyntheticApp::build([
            (
                "a".to_string(),
                RequestSpec {
                    params: params.clone(),
                    root: tree("ra"),
                },
            ),
            (
                "b".to_string(),
                RequestSpec {
                    params,
                    root: tree("rb"),
                },
            ),
        ])
        .unwrap();
        let log = generate_workload(&nav, &app, &WorkloadConfig::requests(5, 2, 400)).unwrap();
        let records = execute_synthetic(&app, &log, &policy(), 6).unwrap();

        // independent scan: every (method, inputs) class has one output
        let mut classes: BTreeMap<(String, Vec<String>), BTreeSet<String>> = BTreeMap::new();
        for r in &records {
            classes
                .entry((
                    r.method.clone(),
                    r.inputs.iter().map(|v| v.render()).collect(),
                ))
                .or_default()
                .insert(r.output.render());
        }
        assert!(!classes.is_empty());
        for ((method, inputs), outputs) in classes {
            assert_eq!(
                outputs.len(),
                1,
                "{method} with {inputs:?} produced {outputs:?}"
            );
        }
    }

    #[test]
    fn structured_params_canonicalize_in_source_order() {
        let app = one_request_app(
            leaf("m", Behavior::Pure, 100, &["f"]),
            vec![ParamDecl {
                name: "f".into(),
                domain: vec![serde_json::json!({"min": 1, "max": 9})],
            }],
        );
        let log = log_of(&[(0, &[("f", serde_json::json!({"min": 1, "max": 9}))])]);
        let records = execute_synthetic(&app, &log, &policy(), 1).unwrap();
        assert_eq!(records[0].inputs[0].render(), "{min:1,max:9}");
    }
}
