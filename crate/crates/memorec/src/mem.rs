//! Input-output invariance recommender (MEM source tag).
//!
//! Pipeline: a cost/frequency filter, input-output profiling with an
//! exhaustive or iterative comparison kernel, call-graph clustering, and a
//! saved-time ranking with per-method implementation hints.
//!
//! The exhaustive kernel compares full canonical trees: a method survives
//! only if every full-equality input class maps to exactly one output. The
//! iterative kernel compares trees pruned at a depth that doubles from the
//! initial depth; pruned subtrees compare equal, so distinct inputs can
//! collapse into one class and a method gets discarded at the first depth
//! where such a class shows unequal (pruned) outputs. All candidates are
//! re-evaluated at every depth over the same fixed trace. Doubling stops at
//! the maximum depth, when no tree was actually pruned (the comparison is
//! complete, hence exact), or when the surviving set and class partitions
//! are stable across a doubling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::profile::{build_callgraph, build_profiles, CallGraph, MethodProfile, NestingError};
use crate::recommend::{
    CacheImplHint, CacheScope, CacheSize, Recommendation, RecommendationSet, Source,
};
use crate::trace::CallRecord;
use crate::value::InputKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Exhaustive,
    Iterative,
}

/// Which per-call duration the cost filter compares against the threshold.
/// Total time is the default: caching a call skips its whole subtree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostBasis {
    Total,
    SelfTime,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemConfig {
    /// Methods cheaper than this mean time are never considered.
    pub min_mean_time_ns: u64,
    pub kernel: Kernel,
    pub initial_depth: u32,
    /// `None` removes the depth cap.
    pub max_depth: Option<u32>,
    /// Per-entry penalty charged against the multi-entry replay when sizing
    /// the suggested cache.
    pub holding_penalty_ns: u64,
    pub cost_basis: CostBasis,
}

impl Default for MemConfig {
    fn default() -> Self {
        MemConfig {
            min_mean_time_ns: 5_000,
            kernel: Kernel::Exhaustive,
            initial_depth: 1,
            max_depth: Some(16),
            holding_penalty_ns: 0,
            cost_basis: CostBasis::Total,
        }
    }
}

impl MemConfig {
    fn validated(&self) -> MemConfig {
        let mut cfg = self.clone();
        cfg.initial_depth = cfg.initial_depth.max(1);
        if let Some(max) = cfg.max_depth {
            cfg.initial_depth = cfg.initial_depth.min(max.max(1));
        }
        cfg
    }
}

/// Step 1: discard methods called only once or too cheap to matter.
pub fn profile_filter(
    profiles: &BTreeMap<String, MethodProfile>,
    cfg: &MemConfig,
) -> BTreeSet<String> {
    profiles
        .values()
        .filter(|p| p.count() >= 2)
        .filter(|p| {
            let mean = match cfg.cost_basis {
                CostBasis::Total => p.mean_total_ns(),
                CostBasis::SelfTime => p.mean_self_ns(),
            };
            mean >= cfg.min_mean_time_ns as f64
        })
        .map(|p| p.method.clone())
        .collect()
}

/// Step 2: keep only methods whose observed outputs are invariant per input
/// class under the configured kernel.
pub fn io_profile(
    candidates: &BTreeSet<String>,
    profiles: &BTreeMap<String, MethodProfile>,
    cfg: &MemConfig,
) -> BTreeSet<String> {
    let cfg = cfg.validated();
    match cfg.kernel {
        Kernel::Exhaustive => exhaustive_kernel(candidates, profiles),
        Kernel::Iterative => iterative_kernel(candidates, profiles, &cfg),
    }
}

fn exhaustive_kernel(
    candidates: &BTreeSet<String>,
    profiles: &BTreeMap<String, MethodProfile>,
) -> BTreeSet<String> {
    candidates
        .iter()
        .filter(|m| {
            profiles[*m]
                .groups
                .values()
                .all(|g| g.output_never_changes())
        })
        .cloned()
        .collect()
}

/// Class partition per method: pruned input key -> the full-equality groups
/// merged into that class.
type Partition = BTreeMap<String, BTreeMap<Vec<String>, BTreeSet<InputKey>>>;

fn iterative_kernel(
    candidates: &BTreeSet<String>,
    profiles: &BTreeMap<String, MethodProfile>,
    cfg: &MemConfig,
) -> BTreeSet<String> {
    let mut depth = cfg.initial_depth;
    let mut previous: Option<(BTreeSet<String>, Partition)> = None;
    loop {
        let (surviving, partition, complete) = evaluate_at_depth(candidates, profiles, depth);
        let capped = cfg.max_depth.is_some_and(|max| depth >= max);
        if capped || complete {
            return surviving;
        }
        if let Some((prev_surviving, prev_partition)) = &previous {
            if *prev_surviving == surviving && *prev_partition == partition {
                return surviving;
            }
        }
        previous = Some((surviving, partition));
        depth = match cfg.max_depth {
            Some(max) => depth.saturating_mul(2).min(max),
            None => depth.saturating_mul(2),
        };
    }
}

fn evaluate_at_depth(
    candidates: &BTreeSet<String>,
    profiles: &BTreeMap<String, MethodProfile>,
    depth: u32,
) -> (BTreeSet<String>, Partition, bool) {
    let mut surviving = BTreeSet::new();
    let mut partition: Partition = BTreeMap::new();
    let mut complete = true;
    for method in candidates {
        let profile = &profiles[method];
        let mut classes: BTreeMap<Vec<String>, (BTreeSet<InputKey>, Option<String>, bool)> =
            BTreeMap::new();
        for (key, group) in &profile.groups {
            let mut pruned_inputs = Vec::with_capacity(group.inputs.len());
            for value in &group.inputs {
                let (text, cut) = value.render_pruned(depth);
                complete &= !cut;
                pruned_inputs.push(text);
            }
            // Zero-input groups have no representative trees; the key is
            // the empty tuple either way.
            let entry = classes
                .entry(pruned_inputs)
                .or_insert_with(|| (BTreeSet::new(), None, true));
            entry.0.insert(key.clone());
            for occ in &group.occurrences {
                let (out_text, cut) = occ.output.render_pruned(depth);
                complete &= !cut;
                match &entry.1 {
                    None => entry.1 = Some(out_text),
                    Some(first) if *first != out_text => entry.2 = false,
                    Some(_) => {}
                }
            }
        }
        let consistent = classes.values().all(|(_, _, ok)| *ok);
        if consistent {
            surviving.insert(method.clone());
        }
        partition.insert(
            method.clone(),
            classes
                .into_iter()
                .map(|(pruned, (members, _, _))| (pruned, members))
                .collect(),
        );
    }
    (surviving, partition, complete)
}

/// A ranked entry: the method, its potential saved time, and any callees
/// folded into it by clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedMethod {
    pub method: String,
    pub saved_ns: f64,
    pub subsumes: Vec<String>,
}

/// Step 3: rank by saved time and aggregate caller/callee chains.
///
/// saved(m) sums (len - 1) * mean total time over m's input groups. A
/// memoizable callee whose every traced call is directly nested in calls of
/// one memoizable caller is folded into the caller's entry.
pub fn cluster_and_rank(
    memoizable: &BTreeSet<String>,
    graph: &CallGraph,
    profiles: &BTreeMap<String, MethodProfile>,
) -> Vec<RankedMethod> {
    let saved: BTreeMap<&str, f64> = memoizable
        .iter()
        .map(|m| {
            let profile = &profiles[m];
            let total: f64 = profile
                .groups
                .values()
                .map(|g| (g.len().saturating_sub(1)) as f64 * g.mean_total_ns())
                .sum();
            (m.as_str(), total)
        })
        .collect();

    // callee -> caller when the caller's direct-nesting edge covers every
    // call of the callee. At most one caller can cover all of them.
    let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
    for (caller, callee, count) in graph.edges() {
        if caller != callee
            && memoizable.contains(caller)
            && memoizable.contains(callee)
            && count == profiles[callee].count()
        {
            parent.insert(callee, caller);
        }
    }

    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (callee, caller) in &parent {
        children.entry(caller).or_default().push(callee);
    }

    let mut ranked = Vec::new();
    for method in memoizable {
        if parent.contains_key(method.as_str()) {
            continue;
        }
        // Flatten the subsumption tree under this root.
        let mut subsumes = Vec::new();
        let mut queue: Vec<&str> = children.get(method.as_str()).cloned().unwrap_or_default();
        while let Some(m) = queue.pop() {
            subsumes.push(m.to_string());
            if let Some(more) = children.get(m) {
                queue.extend(more.iter().copied());
            }
        }
        subsumes.sort();
        ranked.push(RankedMethod {
            method: method.clone(),
            saved_ns: saved[method.as_str()],
            subsumes,
        });
    }
    ranked.sort_by(|a, b| {
        b.saved_ns
            .partial_cmp(&a.saved_ns)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.method.cmp(&b.method))
    });
    ranked
}

/// Step 4: suggest how to implement the cache for a memoizable method.
///
/// Scope is always global (traces carry no receiver identity, and instance
/// scope never won in practice). The size choice replays the method's own
/// call sequence under a single-entry and an unlimited cache and keeps the
/// single entry when it saves at least as much time as the multi-entry
/// variant minus the per-entry holding penalty.
pub fn suggest_implementation(profile: &MethodProfile, holding_penalty_ns: u64) -> CacheImplHint {
    if profile.is_getter() {
        return CacheImplHint {
            scope: CacheScope::Global,
            size: CacheSize::Single,
            getter: true,
        };
    }
    let calls = profile.calls_in_order();

    let mut single_saved: u64 = 0;
    let mut slot: Option<&InputKey> = None;
    for (key, occ) in &calls {
        if slot == Some(*key) {
            single_saved += occ.total_ns;
        } else {
            slot = Some(*key);
        }
    }

    let mut multi_saved: u64 = 0;
    let mut seen: BTreeSet<&InputKey> = BTreeSet::new();
    for (key, occ) in &calls {
        if !seen.insert(*key) {
            multi_saved += occ.total_ns;
        }
    }

    let entries = profile.groups.len() as i128;
    let multi_adjusted = multi_saved as i128 - holding_penalty_ns as i128 * entries;
    let size = if single_saved as i128 >= multi_adjusted {
        CacheSize::Single
    } else {
        CacheSize::Multi
    };
    CacheImplHint {
        scope: CacheScope::Global,
        size,
        getter: false,
    }
}

/// Full pipeline composition. No input whitelists: every call of a
/// recommended method goes through the cache.
pub fn recommend_mem(
    records: &[CallRecord],
    cfg: &MemConfig,
) -> Result<RecommendationSet, NestingError> {
    let profiles = build_profiles(records)?;
    let graph = build_callgraph(records)?;
    let candidates = profile_filter(&profiles, cfg);
    let memoizable = io_profile(&candidates, &profiles, cfg);
    let ranked = cluster_and_rank(&memoizable, &graph, &profiles);
    let recommendations = ranked
        .into_iter()
        .map(|r| {
            let hint = suggest_implementation(&profiles[&r.method], cfg.holding_penalty_ns);
            Recommendation {
                method: r.method,
                score: r.saved_ns,
                whitelist: None,
                hint: Some(hint),
                subsumes: r.subsumes,
            }
        })
        .collect();
    Ok(RecommendationSet::new(Source::Mem, recommendations))
}
