//! Deterministic cache replay of a trace under a caching plan.
//!
//! Capacity is unbounded; entries leave the cache only by TTL expiry. A call
//! whose lookup hits suppresses every record nested inside its interval,
//! modeling that the cached subtree is never executed. Unplanned methods are
//! accounted as plain misses with no cache operations.
//!
//! Cost model: a hit charges the hit lookup cost; a stored miss charges the
//! miss overhead (lookup plus store); under a whitelist every miss also
//! charges the whitelist check and a discarded miss charges only that.
//! Simulated time is the baseline (sum of top-level durations) minus the
//! durations of hit subtrees plus the charged costs; relative throughput is
//! baseline over simulated minus one.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{MethodCategory, PurityManifest};
use crate::recommend::{CacheSize, RecommendationSet, Source};
use crate::trace::CallRecord;
use crate::value::InputKey;

/// The four replay plans compared by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlanKind {
    NoCache,
    Dev,
    Apl,
    Mem,
}

impl std::fmt::Display for PlanKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlanKind::NoCache => "NOCACHE",
            PlanKind::Dev => "DEV",
            PlanKind::Apl => "APL",
            PlanKind::Mem => "MEM",
        })
    }
}

/// How calls of a planned method are admitted into the cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    /// Every miss stores its result.
    AllInputs,
    /// Only whitelisted inputs store; the rest are discarded.
    InputWhitelist(BTreeSet<InputKey>),
    /// One entry per method; a new input overwrites it.
    SingleInstance,
}

/// What to cache: per-method admission policies. Methods absent from the
/// plan are not cached at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachingPlan {
    pub kind: PlanKind,
    methods: BTreeMap<String, Admission>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("record {index} starts at {start_ns}ns, before its predecessor at {prev_ns}ns")]
    UnorderedRecords {
        index: usize,
        start_ns: u64,
        prev_ns: u64,
    },
    #[error("whitelist for {method} is empty")]
    EmptyWhitelist { method: String },
    #[error("metrics sets were built from different traces")]
    TraceMismatch,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dev plan is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl CachingPlan {
    pub fn none() -> Self {
        CachingPlan {
            kind: PlanKind::NoCache,
            methods: BTreeMap::new(),
        }
    }

    pub fn new(kind: PlanKind) -> Self {
        CachingPlan {
            kind,
            methods: BTreeMap::new(),
        }
    }

    pub fn with_method(mut self, method: impl Into<String>, admission: Admission) -> Self {
        self.methods.insert(method.into(), admission);
        self
    }

    pub fn admission(&self, method: &str) -> Option<&Admission> {
        self.methods.get(method)
    }

    pub fn methods(&self) -> impl Iterator<Item = (&str, &Admission)> {
        self.methods.iter().map(|(m, a)| (m.as_str(), a))
    }

    pub fn contains(&self, method: &str) -> bool {
        self.methods.contains_key(method)
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    /// Turn a recommendation set into a plan. APL whitelists become
    /// whitelist admissions; MEM single-instance hints become single-entry
    /// admissions and everything else caches all inputs. Subsumed callees
    /// are covered by their caller's entry and are not separately cached.
    pub fn from_recommendations(set: &RecommendationSet) -> Result<Self, ReplayError> {
        let kind = match set.source {
            Source::Apl => PlanKind::Apl,
            Source::Mem => PlanKind::Mem,
            Source::Dev => PlanKind::Dev,
        };
        let mut plan = CachingPlan::new(kind);
        for rec in &set.recommendations {
            let admission = match (&rec.whitelist, &rec.hint) {
                (Some(whitelist), _) => {
                    if whitelist.is_empty() {
                        return Err(ReplayError::EmptyWhitelist {
                            method: rec.method.clone(),
                        });
                    }
                    Admission::InputWhitelist(whitelist.clone())
                }
                (None, Some(hint)) if hint.size == CacheSize::Single => Admission::SingleInstance,
                _ => Admission::AllInputs,
            };
            plan.methods.insert(rec.method.clone(), admission);
        }
        Ok(plan)
    }
}

/// Developer caching decisions: methods plus the TTLs they configured.
#[derive(Debug, Clone, PartialEq)]
pub struct DevPlan {
    pub plan: CachingPlan,
    pub ttl_ns: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DevPlanFile {
    methods: Vec<DevPlanEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DevPlanEntry {
    method: String,
    ttl_ns: u64,
}

impl DevPlan {
    pub fn empty() -> Self {
        DevPlan {
            plan: CachingPlan::new(PlanKind::Dev),
            ttl_ns: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ReplayError> {
        let file: DevPlanFile = serde_json::from_str(text)?;
        let mut plan = CachingPlan::new(PlanKind::Dev);
        let mut ttl_ns = BTreeMap::new();
        for entry in file.methods {
            plan.methods
                .insert(entry.method.clone(), Admission::AllInputs);
            ttl_ns.insert(entry.method, entry.ttl_ns);
        }
        Ok(DevPlan { plan, ttl_ns })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn methods(&self) -> BTreeSet<&str> {
        self.plan.methods().map(|(m, _)| m).collect()
    }
}

/// TTLs and the cache operation cost model. The default TTL is effectively
/// unlimited; cost defaults are calibration knobs, not measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheConfig {
    pub default_ttl_ns: u64,
    pub ttl_ns: BTreeMap<String, u64>,
    pub hit_lookup_ns: u64,
    pub miss_overhead_ns: u64,
    pub whitelist_check_ns: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            default_ttl_ns: u64::MAX,
            ttl_ns: BTreeMap::new(),
            hit_lookup_ns: 500,
            miss_overhead_ns: 1_500,
            whitelist_check_ns: 200,
        }
    }
}

impl CacheConfig {
    /// All operation costs zero, TTL unlimited. Useful for pure accounting.
    pub fn zero_cost() -> Self {
        CacheConfig {
            default_ttl_ns: u64::MAX,
            ttl_ns: BTreeMap::new(),
            hit_lookup_ns: 0,
            miss_overhead_ns: 0,
            whitelist_check_ns: 0,
        }
    }

    pub fn ttl_for(&self, method: &str) -> u64 {
        self.ttl_ns
            .get(method)
            .copied()
            .unwrap_or(self.default_ttl_ns)
    }
}

/// Per-method replay counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MethodMetrics {
    pub hits: u64,
    pub misses: u64,
    pub additions: u64,
    pub discards: u64,
    /// Sum of the durations of hit subtrees on this method.
    pub saved_ns: u64,
    /// Hits served after the labeled output would have changed; diagnostic
    /// only, requires a ground-truth manifest.
    pub stale_hits: u64,
}

impl MethodMetrics {
    fn add(&mut self, other: &MethodMetrics) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.additions += other.additions;
        self.discards += other.discards;
        self.saved_ns += other.saved_ns;
        self.stale_hits += other.stale_hits;
    }
}

/// Replay outcome: counters per method and aggregate, plus the modeled
/// times. Identity fields tie the metrics back to the replayed trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayMetrics {
    pub plan: PlanKind,
    pub per_method: BTreeMap<String, MethodMetrics>,
    pub totals: MethodMetrics,
    pub baseline_total_ns: u64,
    pub simulated_total_ns: u64,
    pub record_count: u64,
}

impl ReplayMetrics {
    /// baseline/simulated - 1; zero for an empty trace.
    pub fn relative_throughput(&self) -> f64 {
        if self.simulated_total_ns == 0 {
            return 0.0;
        }
        self.baseline_total_ns as f64 / self.simulated_total_ns as f64 - 1.0
    }
}

/// Replay a trace under a plan. Records must be in start-timestamp order.
pub fn replay(
    records: &[CallRecord],
    plan: &CachingPlan,
    config: &CacheConfig,
) -> Result<ReplayMetrics, ReplayError> {
    replay_with_manifest(records, plan, config, None)
}

enum Store {
    Map(BTreeMap<InputKey, u64>),
    Slot(Option<(InputKey, u64)>),
}

/// Replay with an optional ground-truth manifest enabling the stale-hit
/// diagnostic.
pub fn replay_with_manifest(
    records: &[CallRecord],
    plan: &CachingPlan,
    config: &CacheConfig,
    manifest: Option<&PurityManifest>,
) -> Result<ReplayMetrics, ReplayError> {
    check_order(records)?;

    let mut per_method: BTreeMap<String, MethodMetrics> = BTreeMap::new();
    for (method, _) in plan.methods() {
        per_method.insert(method.to_string(), MethodMetrics::default());
    }

    let mut stores: BTreeMap<&str, Store> = BTreeMap::new();
    let mut suppressed_until: BTreeMap<&str, u64> = BTreeMap::new();
    let mut baseline: u64 = 0;
    let mut saved: u64 = 0;
    let mut costs: u64 = 0;

    for record in records {
        if record.depth == 0 {
            baseline += record.duration_ns();
        }
        if let Some(&until) = suppressed_until.get(record.session.as_str()) {
            if record.start_ns < until {
                continue;
            }
            suppressed_until.remove(record.session.as_str());
        }

        let metrics = per_method.entry(record.method.clone()).or_default();
        let Some(admission) = plan.admission(&record.method) else {
            metrics.misses += 1;
            continue;
        };

        let key = InputKey::from_values(&record.inputs);
        let ttl = config.ttl_for(&record.method);
        let store = stores
            .entry(record.method.as_str())
            .or_insert_with(|| match admission {
                Admission::SingleInstance => Store::Slot(None),
                _ => Store::Map(BTreeMap::new()),
            });

        let stored_at = match store {
            Store::Map(map) => map.get(&key).copied(),
            Store::Slot(slot) => slot.as_ref().and_then(|(k, at)| (*k == key).then_some(*at)),
        };
        let fresh = stored_at.is_some_and(|at| record.start_ns.saturating_sub(at) < ttl);

        if fresh {
            metrics.hits += 1;
            metrics.saved_ns += record.duration_ns();
            saved += record.duration_ns();
            costs += config.hit_lookup_ns;
            suppressed_until.insert(record.session.as_str(), record.end_ns);
            if let Some(manifest) = manifest {
                if is_stale(
                    manifest,
                    &record.method,
                    stored_at.unwrap(),
                    record.start_ns,
                ) {
                    metrics.stale_hits += 1;
                }
            }
            continue;
        }

        metrics.misses += 1;
        match (admission, store) {
            (Admission::AllInputs, Store::Map(map)) => {
                map.insert(key, record.start_ns);
                metrics.additions += 1;
                costs += config.miss_overhead_ns;
            }
            (Admission::SingleInstance, Store::Slot(slot)) => {
                *slot = Some((key, record.start_ns));
                metrics.additions += 1;
                costs += config.miss_overhead_ns;
            }
            (Admission::InputWhitelist(whitelist), Store::Map(map)) => {
                costs += config.whitelist_check_ns;
                if whitelist.contains(&key) {
                    map.insert(key, record.start_ns);
                    metrics.additions += 1;
                    costs += config.miss_overhead_ns;
                } else {
                    metrics.discards += 1;
                }
            }
            // store shape always matches the admission it was created from
            _ => unreachable!("store shape mismatch"),
        }
    }

    let mut totals = MethodMetrics::default();
    for m in per_method.values() {
        totals.add(m);
    }
    Ok(ReplayMetrics {
        plan: plan.kind,
        per_method,
        totals,
        baseline_total_ns: baseline,
        simulated_total_ns: baseline - saved + costs,
        record_count: records.len() as u64,
    })
}

fn check_order(records: &[CallRecord]) -> Result<(), ReplayError> {
    for (index, pair) in records.windows(2).enumerate() {
        if pair[1].start_ns < pair[0].start_ns {
            return Err(ReplayError::UnorderedRecords {
                index: index + 1,
                start_ns: pair[1].start_ns,
                prev_ns: pair[0].start_ns,
            });
        }
    }
    Ok(())
}

fn is_stale(manifest: &PurityManifest, method: &str, stored_at: u64, served_at: u64) -> bool {
    match manifest.get(method) {
        Some(entry) => match entry.category {
            MethodCategory::Random => true,
            MethodCategory::TimeVarying => match entry.period_ns {
                Some(period) if period > 0 => stored_at / period != served_at / period,
                _ => false,
            },
            _ => false,
        },
        None => false,
    }
}

/// Independent oracle with the same contract as [`replay`], written as the
/// most naive walk possible: linear-scan caches, quadratic suppression
/// checks, no shared code with the efficient path.
pub fn brute_force_oracle(
    records: &[CallRecord],
    plan: &CachingPlan,
    config: &CacheConfig,
) -> Result<ReplayMetrics, ReplayError> {
    for i in 1..records.len() {
        if records[i].start_ns < records[i - 1].start_ns {
            return Err(ReplayError::UnorderedRecords {
                index: i,
                start_ns: records[i].start_ns,
                prev_ns: records[i - 1].start_ns,
            });
        }
    }

    struct Entry {
        method: String,
        inputs: Vec<String>,
        stored_at: u64,
    }
    let mut cache: Vec<Entry> = Vec::new();
    let mut hit_intervals: Vec<(String, u64, u64)> = Vec::new();
    let mut per_method: BTreeMap<String, MethodMetrics> = BTreeMap::new();
    for (method, _) in plan.methods() {
        per_method.insert(method.to_string(), MethodMetrics::default());
    }
    let mut baseline = 0u64;
    let mut saved = 0u64;
    let mut costs = 0u64;

    for record in records {
        if record.depth == 0 {
            baseline += record.end_ns - record.start_ns;
        }
        let inside_hit = hit_intervals.iter().any(|(session, start, end)| {
            *session == record.session && record.start_ns > *start && record.end_ns <= *end
        });
        if inside_hit {
            continue;
        }
        let m = per_method.entry(record.method.clone()).or_default();
        let admission = match plan.admission(&record.method) {
            None => {
                m.misses += 1;
                continue;
            }
            Some(a) => a,
        };
        let rendered: Vec<String> = record.inputs.iter().map(|v| v.render()).collect();
        let ttl = config.ttl_for(&record.method);

        let mut found: Option<u64> = None;
        for entry in &cache {
            if entry.method == record.method && entry.inputs == rendered {
                found = Some(entry.stored_at);
            }
        }
        let live = matches!(found, Some(at) if record.start_ns >= at && record.start_ns - at < ttl);
        if live {
            m.hits += 1;
            m.saved_ns += record.end_ns - record.start_ns;
            saved += record.end_ns - record.start_ns;
            costs += config.hit_lookup_ns;
            hit_intervals.push((record.session.clone(), record.start_ns, record.end_ns));
            continue;
        }
        m.misses += 1;
        match admission {
            Admission::AllInputs => {
                cache.retain(|e| !(e.method == record.method && e.inputs == rendered));
                cache.push(Entry {
                    method: record.method.clone(),
                    inputs: rendered,
                    stored_at: record.start_ns,
                });
                m.additions += 1;
                costs += config.miss_overhead_ns;
            }
            Admission::SingleInstance => {
                cache.retain(|e| e.method != record.method);
                cache.push(Entry {
                    method: record.method.clone(),
                    inputs: rendered,
                    stored_at: record.start_ns,
                });
                m.additions += 1;
                costs += config.miss_overhead_ns;
            }
            Admission::InputWhitelist(whitelist) => {
                costs += config.whitelist_check_ns;
                let admitted = whitelist.iter().any(|k| k.0 == rendered);
                if admitted {
                    cache.retain(|e| !(e.method == record.method && e.inputs == rendered));
                    cache.push(Entry {
                        method: record.method.clone(),
                        inputs: rendered,
                        stored_at: record.start_ns,
                    });
                    m.additions += 1;
                    costs += config.miss_overhead_ns;
                } else {
                    m.discards += 1;
                }
            }
        }
    }

    let mut totals = MethodMetrics::default();
    for m in per_method.values() {
        totals.add(m);
    }
    Ok(ReplayMetrics {
        plan: plan.kind,
        per_method,
        totals,
        baseline_total_ns: baseline,
        simulated_total_ns: baseline - saved + costs,
        record_count: records.len() as u64,
    })
}

/// One row of the plan comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputRow {
    pub plan: PlanKind,
    pub relative_throughput: f64,
    pub baseline_ns: u64,
    pub simulated_ns: u64,
    pub hits: u64,
    pub misses: u64,
    pub saved_ns: u64,
}

/// Compare plans replayed over the same trace. Errors when the metrics were
/// not built from one trace (identity is record count plus baseline time).
pub fn simulate_throughput(metrics: &[&ReplayMetrics]) -> Result<Vec<ThroughputRow>, ReplayError> {
    if let Some(first) = metrics.first() {
        for m in metrics.iter().skip(1) {
            if m.record_count != first.record_count
                || m.baseline_total_ns != first.baseline_total_ns
            {
                return Err(ReplayError::TraceMismatch);
            }
        }
    }
    Ok(metrics
        .iter()
        .map(|m| ThroughputRow {
            plan: m.plan,
            relative_throughput: m.relative_throughput(),
            baseline_ns: m.baseline_total_ns,
            simulated_ns: m.simulated_total_ns,
            hits: m.totals.hits,
            misses: m.totals.misses,
            saved_ns: m.totals.saved_ns,
        })
        .collect())
}
