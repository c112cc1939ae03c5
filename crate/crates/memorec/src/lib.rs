//! Trace-driven discovery and evaluation of application-level caching at the
//! method level.
//!
//! The toolkit covers both phases of a recommend-then-replay protocol:
//!
//! 1. generate a deterministic workload over a navigation spec, execute a
//!    synthetic application into a labeled trace, and run two rival
//!    recommenders over it: a cacheability-metric recommender (APL) that
//!    selects methods and per-method input whitelists, and an input-output
//!    invariance recommender (MEM) with exhaustive and iterative kernels,
//!    saved-time ranking and implementation hints;
//! 2. replay a fresh testing trace under the resulting caching plans with a
//!    TTL cache of unlimited capacity, count hits, misses, additions and
//!    discards, model throughput against the uncached baseline, classify
//!    recommendations against ground truth, and emit comparison reports.

pub mod apl;
pub mod evaluate;
pub mod manifest;
pub mod mem;
pub mod profile;
pub mod recommend;
pub mod replay;
pub mod study;
pub mod trace;
pub mod value;
pub mod workload;

pub use apl::{recommend_apl, AplConfig, AplMetrics};
pub use evaluate::{
    classifications_csv, classify, compare, emit_report, metrics_csv, overlap_csv, summary_csv,
    throughput_csv, Classification, Label, ReportFormat,
};
pub use manifest::{ManifestEntry, MethodCategory, PurityManifest};
pub use mem::{recommend_mem, Kernel, MemConfig};
pub use profile::{build_callgraph, build_profiles, validate_nesting, CallGraph, MethodProfile};
pub use recommend::{
    CacheImplHint, CacheScope, CacheSize, Recommendation, RecommendationSet, Source,
};
pub use replay::{
    brute_force_oracle, replay, replay_with_manifest, simulate_throughput, Admission, CacheConfig,
    CachingPlan, DevPlan, PlanKind, ReplayMetrics,
};
pub use study::{run_study, StudyConfig, StudyOutcome};
pub use trace::{read_trace, trace_digest, write_trace, CallRecord, Trace, TraceDigest};
pub use value::{canonicalize, CanonicalValue, InputKey, RawGraph, TruncationPolicy};
pub use workload::{
    execute_synthetic, generate_workload, load_navigation, NavigationSpec, RequestKind, RequestLog,
    SyntheticApp, WorkloadConfig,
};
