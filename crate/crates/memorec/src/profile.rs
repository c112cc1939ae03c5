//! Per-method aggregation of traces and the dynamic call graph.
//!
//! Nesting is validated from the interval structure: a record at depth d+1
//! must sit strictly inside an open depth-d record of the same session.
//! Self time is a record's duration minus the durations of its direct
//! children; total time is the whole subtree and is what the cost filters
//! and the replay model work with, since caching a method skips its subtree.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::trace::CallRecord;
use crate::value::{CanonicalValue, InputKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("nesting violation for {method} at {start_ns}ns (session {session}): {reason}")]
pub struct NestingError {
    pub method: String,
    pub session: String,
    pub start_ns: u64,
    pub reason: String,
}

/// One observed call inside an input group.
#[derive(Debug, Clone, PartialEq)]
pub struct Occurrence {
    pub output: CanonicalValue,
    pub start_ns: u64,
    pub total_ns: u64,
    pub session: String,
}

/// All calls of a method that share canonically equal inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputGroup {
    /// Representative input tuple (all members render identically).
    pub inputs: Vec<CanonicalValue>,
    /// In timestamp order.
    pub occurrences: Vec<Occurrence>,
}

impl InputGroup {
    pub fn len(&self) -> u64 {
        self.occurrences.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    /// True when every occurrence produced the same output.
    pub fn output_never_changes(&self) -> bool {
        let mut outputs = self.occurrences.iter().map(|o| o.output.render());
        match outputs.next() {
            None => true,
            Some(first) => outputs.all(|o| o == first),
        }
    }

    pub fn mean_total_ns(&self) -> f64 {
        if self.occurrences.is_empty() {
            return 0.0;
        }
        self.occurrences
            .iter()
            .map(|o| o.total_ns as f64)
            .sum::<f64>()
            / self.occurrences.len() as f64
    }
}

/// Per-method aggregate over a trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodProfile {
    pub method: String,
    /// Total (subtree) durations per call, in timestamp order.
    pub total_times: Vec<u64>,
    /// Durations minus direct children, same order.
    pub self_times: Vec<u64>,
    pub sessions: BTreeSet<String>,
    pub groups: BTreeMap<InputKey, InputGroup>,
}

impl MethodProfile {
    pub fn count(&self) -> u64 {
        self.total_times.len() as u64
    }

    pub fn mean_total_ns(&self) -> f64 {
        mean(&self.total_times)
    }

    /// Population standard deviation of total time.
    pub fn stddev_total_ns(&self) -> f64 {
        stddev(&self.total_times)
    }

    pub fn mean_self_ns(&self) -> f64 {
        mean(&self.self_times)
    }

    /// True when every observed call took zero inputs.
    pub fn is_getter(&self) -> bool {
        !self.groups.is_empty() && self.groups.keys().all(InputKey::is_empty)
    }

    /// All calls across groups in timestamp order, tagged with their group key.
    pub fn calls_in_order(&self) -> Vec<(&InputKey, &Occurrence)> {
        let mut calls: Vec<(&InputKey, &Occurrence)> = self
            .groups
            .iter()
            .flat_map(|(k, g)| g.occurrences.iter().map(move |o| (k, o)))
            .collect();
        calls.sort_by_key(|(_, o)| o.start_ns);
        calls
    }
}

fn mean(values: &[u64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| *v as f64).sum::<f64>() / values.len() as f64
}

fn stddev(values: &[u64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let var = values
        .iter()
        .map(|v| {
            let d = *v as f64 - m;
            d * d
        })
        .sum::<f64>()
        / values.len() as f64;
    var.sqrt()
}

/// Dynamic call graph: an edge (caller, callee, k) means the callee's
/// interval was directly nested in the caller's k times within one session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CallGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), u64>,
}

impl CallGraph {
    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.edges
            .iter()
            .map(|((p, c), k)| (p.as_str(), c.as_str(), *k))
    }

    pub fn edge_count(&self, caller: &str, callee: &str) -> u64 {
        self.edges
            .get(&(caller.to_string(), callee.to_string()))
            .copied()
            .unwrap_or(0)
    }
}

/// Per-record nesting result: the index of the direct parent record and the
/// summed duration of direct children.
struct NestingInfo {
    parent: Option<usize>,
    child_total_ns: u64,
}

/// Single stack walk per session over start-sorted records. Validates the
/// declared depths against interval nesting and recovers parent links.
fn nesting_pass(records: &[CallRecord]) -> Result<Vec<NestingInfo>, NestingError> {
    let mut info: Vec<NestingInfo> = records
        .iter()
        .map(|_| NestingInfo {
            parent: None,
            child_total_ns: 0,
        })
        .collect();

    let mut by_session: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_session.entry(r.session.as_str()).or_default().push(i);
    }

    for indices in by_session.values_mut() {
        indices.sort_by_key(|&i| (records[i].start_ns, std::cmp::Reverse(records[i].end_ns)));
        let mut stack: Vec<usize> = Vec::new();
        for &i in indices.iter() {
            let rec = &records[i];
            let fail = |reason: String| NestingError {
                method: rec.method.clone(),
                session: rec.session.clone(),
                start_ns: rec.start_ns,
                reason,
            };
            if rec.end_ns < rec.start_ns {
                return Err(fail("end precedes start".into()));
            }
            while let Some(&top) = stack.last() {
                if records[top].end_ns <= rec.start_ns {
                    stack.pop();
                } else {
                    break;
                }
            }
            if rec.depth as usize != stack.len() {
                return Err(fail(format!(
                    "declared depth {} but {} enclosing records are open",
                    rec.depth,
                    stack.len()
                )));
            }
            if let Some(&top) = stack.last() {
                let parent = &records[top];
                if !(rec.start_ns > parent.start_ns && rec.end_ns < parent.end_ns) {
                    return Err(fail(format!(
                        "interval [{}, {}] is not strictly inside parent {} [{}, {}]",
                        rec.start_ns, rec.end_ns, parent.method, parent.start_ns, parent.end_ns
                    )));
                }
                info[i].parent = Some(top);
                info[top].child_total_ns += rec.duration_ns();
            }
            stack.push(i);
        }
    }
    Ok(info)
}

/// Cross-check declared depths against interval nesting.
pub fn validate_nesting(records: &[CallRecord]) -> Result<(), NestingError> {
    nesting_pass(records).map(|_| ())
}

/// Aggregate a trace into per-method profiles. Fails on nesting violations.
/// The result is invariant under reordering of the input records.
pub fn build_profiles(
    records: &[CallRecord],
) -> Result<BTreeMap<String, MethodProfile>, NestingError> {
    let info = nesting_pass(records)?;

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| (records[i].start_ns, records[i].depth, i));

    let mut profiles: BTreeMap<String, MethodProfile> = BTreeMap::new();
    for i in order {
        let rec = &records[i];
        let duration = rec.duration_ns();
        let profile = profiles
            .entry(rec.method.clone())
            .or_insert_with(|| MethodProfile {
                method: rec.method.clone(),
                ..MethodProfile::default()
            });
        profile.total_times.push(duration);
        profile
            .self_times
            .push(duration.saturating_sub(info[i].child_total_ns));
        profile.sessions.insert(rec.session.clone());
        let key = InputKey::from_values(&rec.inputs);
        let group = profile.groups.entry(key).or_default();
        if group.inputs.is_empty() && !rec.inputs.is_empty() {
            group.inputs = rec.inputs.clone();
        }
        group.occurrences.push(Occurrence {
            output: rec.output.clone(),
            start_ns: rec.start_ns,
            total_ns: duration,
            session: rec.session.clone(),
        });
    }
    Ok(profiles)
}

/// Derive the dynamic call graph from interval nesting.
pub fn build_callgraph(records: &[CallRecord]) -> Result<CallGraph, NestingError> {
    let info = nesting_pass(records)?;
    let mut graph = CallGraph::default();
    for (i, rec) in records.iter().enumerate() {
        graph.nodes.insert(rec.method.clone());
        if let Some(p) = info[i].parent {
            *graph
                .edges
                .entry((records[p].method.clone(), rec.method.clone()))
                .or_insert(0) += 1;
        }
    }
    Ok(graph)
}

#[derive(Serialize)]
struct ProfileDumpRow<'a> {
    method: &'a str,
    count: u64,
    mean_total_ns: f64,
    stddev_total_ns: f64,
    mean_self_ns: f64,
    sessions: u64,
    groups: Vec<GroupDumpRow>,
}

#[derive(Serialize)]
struct GroupDumpRow {
    inputs: Vec<String>,
    calls: u64,
    distinct_outputs: u64,
}

/// Debug dump, one JSON object per method. Not consumed by other tools.
pub fn write_profile_dump<W: Write>(
    writer: &mut W,
    profiles: &BTreeMap<String, MethodProfile>,
) -> io::Result<()> {
    for (method, profile) in profiles {
        let row = ProfileDumpRow {
            method,
            count: profile.count(),
            mean_total_ns: profile.mean_total_ns(),
            stddev_total_ns: profile.stddev_total_ns(),
            mean_self_ns: profile.mean_self_ns(),
            sessions: profile.sessions.len() as u64,
            groups: profile
                .groups
                .iter()
                .map(|(key, group)| GroupDumpRow {
                    inputs: key.0.clone(),
                    calls: group.len(),
                    distinct_outputs: group
                        .occurrences
                        .iter()
                        .map(|o| o.output.render())
                        .collect::<BTreeSet<_>>()
                        .len() as u64,
                })
                .collect(),
        };
        writeln!(
            writer,
            "{}",
            serde_json::to_string(&row).expect("dump json")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::CanonicalValue as V;

    fn rec(
        session: &str,
        method: &str,
        input: &str,
        output: &str,
        start: u64,
        end: u64,
        depth: u32,
    ) -> CallRecord {
        CallRecord {
            session: session.into(),
            method: method.into(),
            inputs: vec![V::scalar(input)],
            output: V::scalar(output),
            start_ns: start,
            end_ns: end,
            depth,
        }
    }

    #[test]
    fn repeated_input_forms_one_group() {
        let records = vec![
            rec("s", "m", "1", "2", 0, 10, 0),
            rec("s", "m", "1", "2", 100, 112, 0),
        ];
        let profiles = build_profiles(&records).unwrap();
        let p = &profiles["m"];
        assert_eq!(p.count(), 2);
        assert_eq!(p.groups.len(), 1);
        let group = p.groups.values().next().unwrap();
        assert_eq!(group.len(), 2);
        assert!(group.output_never_changes());
        assert!((p.mean_total_ns() - 11.0).abs() < 1e-9);
    }

    #[test]
    fn distinct_outputs_stay_in_one_group() {
        let records = vec![
            rec("s", "m", "1", "2", 0, 10, 0),
            rec("s", "m", "1", "3", 100, 110, 0),
        ];
        let profiles = build_profiles(&records).unwrap();
        let group = profiles["m"].groups.values().next().unwrap();
        assert_eq!(group.len(), 2);
        assert!(!group.output_never_changes());
    }

    #[test]
    fn self_time_subtracts_direct_children() {
        let records = vec![
            rec("s", "parent", "1", "2", 0, 100, 0),
            rec("s", "child", "1", "2", 20, 60, 1),
        ];
        let profiles = build_profiles(&records).unwrap();
        assert_eq!(profiles["parent"].self_times, vec![60]);
        assert_eq!(profiles["parent"].total_times, vec![100]);
        assert_eq!(profiles["child"].self_times, vec![40]);
    }

    #[test]
    fn profiles_are_order_invariant() {
        let mut records = vec![
            rec("s1", "m", "1", "2", 0, 10, 0),
            rec("s1", "n", "1", "2", 2, 8, 1),
            rec("s2", "m", "3", "4", 50, 70, 0),
        ];
        let forward = build_profiles(&records).unwrap();
        records.reverse();
        let backward = build_profiles(&records).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn direct_nesting_only_in_callgraph() {
        let records = vec![
            rec("s", "root", "1", "2", 0, 100, 0),
            rec("s", "b", "1", "2", 10, 90, 1),
            rec("s", "a", "1", "2", 20, 80, 2),
        ];
        let graph = build_callgraph(&records).unwrap();
        assert_eq!(graph.edge_count("root", "b"), 1);
        assert_eq!(graph.edge_count("b", "a"), 1);
        assert_eq!(graph.edge_count("root", "a"), 0);
    }

    #[test]
    fn edges_accumulate_across_sessions() {
        let records = vec![
            rec("s1", "root", "1", "2", 0, 100, 0),
            rec("s1", "a", "1", "2", 10, 90, 1),
            rec("s2", "root", "1", "2", 200, 300, 0),
            rec("s2", "a", "1", "2", 210, 290, 1),
        ];
        let graph = build_callgraph(&records).unwrap();
        assert_eq!(graph.edge_count("root", "a"), 2);
    }

    #[test]
    fn sibling_trees_produce_sibling_edges() {
        let records = vec![
            rec("s", "root", "1", "2", 0, 100, 0),
            rec("s", "a", "1", "2", 10, 40, 1),
            rec("s", "b", "1", "2", 50, 90, 1),
        ];
        let graph = build_callgraph(&records).unwrap();
        assert_eq!(graph.edge_count("root", "a"), 1);
        assert_eq!(graph.edge_count("root", "b"), 1);
    }

    #[test]
    fn nesting_violation_names_the_record() {
        // child escapes its parent's interval
        let records = vec![
            rec("s", "parent", "1", "2", 0, 50, 0),
            rec("s", "child", "1", "2", 20, 80, 1),
        ];
        let err = build_profiles(&records).unwrap_err();
        assert_eq!(err.method, "child");
        assert_eq!(err.start_ns, 20);
    }

    #[test]
    fn depth_mismatch_is_a_violation() {
        let records = vec![rec("s", "m", "1", "2", 0, 10, 3)];
        assert!(validate_nesting(&records).is_err());
    }

    /// Naive oracle: count direct-nesting pairs by checking every record
    /// pair for strict containment with no record in between.
    fn naive_edges(records: &[CallRecord]) -> BTreeMap<(String, String), u64> {
        let contains = |outer: &CallRecord, inner: &CallRecord| {
            outer.session == inner.session
                && outer.start_ns < inner.start_ns
                && inner.end_ns < outer.end_ns
        };
        let mut edges = BTreeMap::new();
        for inner in records {
            let mut best: Option<&CallRecord> = None;
            for outer in records {
                if contains(outer, inner) {
                    best = match best {
                        None => Some(outer),
                        Some(cur) if contains(cur, outer) => Some(outer),
                        Some(cur) => Some(cur),
                    };
                }
            }
            if let Some(parent) = best {
                *edges
                    .entry((parent.method.clone(), inner.method.clone()))
                    .or_insert(0) += 1;
            }
        }
        edges
    }

    #[test]
    fn callgraph_matches_naive_containment_oracle() {
        let records = vec![
            rec("s1", "root", "1", "2", 0, 100, 0),
            rec("s1", "a", "1", "2", 5, 40, 1),
            rec("s1", "c", "1", "2", 10, 30, 2),
            rec("s1", "b", "1", "2", 50, 95, 1),
            rec("s2", "root", "1", "2", 0, 60, 0),
            rec("s2", "a", "1", "2", 10, 50, 1),
            rec("s2", "c", "1", "2", 20, 40, 2),
        ];
        let graph = build_callgraph(&records).unwrap();
        let expected = naive_edges(&records);
        let actual: BTreeMap<(String, String), u64> = graph
            .edges()
            .map(|(p, c, k)| ((p.to_string(), c.to_string()), k))
            .collect();
        assert_eq!(actual, expected);
    }
}
