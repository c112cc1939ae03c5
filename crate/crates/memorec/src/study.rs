//! End-to-end two-phase pipeline.
//!
//! Phase 1 generates a learning workload, executes the synthetic app into a
//! trace and runs both recommenders on it. Phase 2 generates a testing
//! workload from the same navigation probabilities under a distinct derived
//! seed, replays the four plans (no caching, developers, both recommenders)
//! over the testing trace and emits the comparison reports. Everything is
//! deterministic in the master seed.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::apl::{recommend_apl, AplConfig};
use crate::evaluate::{
    classify, compare, emit_report, Classification, EvalError, OverlapReport, ReportFormat,
};
use crate::manifest::PurityManifest;
use crate::mem::{recommend_mem, MemConfig};
use crate::profile::NestingError;
use crate::recommend::RecommendationSet;
use crate::replay::{
    replay_with_manifest, CacheConfig, CachingPlan, DevPlan, ReplayError, ReplayMetrics,
};
use crate::trace::{write_trace, Trace, TraceError};
use crate::value::TruncationPolicy;
use crate::workload::{
    derive_seed, execute_synthetic, generate_workload, AppError, GenError, NavigationSpec,
    SyntheticApp, WorkloadConfig,
};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Workload(#[from] GenError),
    #[error(transparent)]
    App(#[from] AppError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Nesting(#[from] NestingError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub seed: u64,
    pub users: u32,
    pub requests: u64,
    pub read_fraction: f64,
    pub close_probability: f64,
    pub apl: AplConfig,
    pub mem: MemConfig,
    pub cache: CacheConfig,
    pub policy: TruncationPolicy,
    pub format: ReportFormat,
}

impl StudyConfig {
    pub fn new(seed: u64) -> Self {
        StudyConfig {
            seed,
            users: 1,
            requests: 1_000,
            read_fraction: 0.80,
            close_probability: 0.05,
            apl: AplConfig::default(),
            mem: MemConfig::default(),
            cache: CacheConfig::default(),
            policy: TruncationPolicy::application_only(["app"]),
            format: ReportFormat::Csv,
        }
    }
}

/// In-memory outcome of a study run, alongside the files written to the
/// output directory.
#[derive(Debug)]
pub struct StudyOutcome {
    pub apl_recs: RecommendationSet,
    pub mem_recs: RecommendationSet,
    pub apl_classification: Classification,
    pub mem_classification: Classification,
    pub overlap: OverlapReport,
    pub metrics: Vec<ReplayMetrics>,
    pub manifest: PurityManifest,
    pub written: Vec<PathBuf>,
}

const STREAM_LEARNING: u64 = 0x11;
const STREAM_LEARNING_EXEC: u64 = 0x12;
const STREAM_TESTING: u64 = 0x21;
const STREAM_TESTING_EXEC: u64 = 0x22;

struct Phase {
    seed_stream: u64,
    exec_stream: u64,
    log_name: &'static str,
    trace_name: &'static str,
}

const LEARNING: Phase = Phase {
    seed_stream: STREAM_LEARNING,
    exec_stream: STREAM_LEARNING_EXEC,
    log_name: "learning_log.jsonl",
    trace_name: "learning_trace.jsonl",
};

const TESTING: Phase = Phase {
    seed_stream: STREAM_TESTING,
    exec_stream: STREAM_TESTING_EXEC,
    log_name: "testing_log.jsonl",
    trace_name: "testing_trace.jsonl",
};

fn phase_trace(
    nav: &NavigationSpec,
    app: &SyntheticApp,
    cfg: &StudyConfig,
    phase: &Phase,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<Trace, StudyError> {
    let workload = WorkloadConfig {
        seed: derive_seed(cfg.seed, phase.seed_stream),
        users: cfg.users,
        budget: crate::workload::Budget::Requests(cfg.requests),
        read_fraction: cfg.read_fraction,
        close_probability: cfg.close_probability,
    };
    let log = generate_workload(nav, app, &workload)?;
    let records = execute_synthetic(
        app,
        &log,
        &cfg.policy,
        derive_seed(cfg.seed, phase.exec_stream),
    )?;
    let trace = Trace::new(records);

    let log_path = out_dir.join(phase.log_name);
    log.save(&log_path)?;
    written.push(log_path);
    let trace_path = out_dir.join(phase.trace_name);
    let file = File::create(&trace_path)?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, &trace)?;
    w.flush().map_err(TraceError::Io)?;
    written.push(trace_path);
    Ok(trace)
}

/// Run the whole two-phase study into `out_dir`. With a fixed seed the
/// produced directory is byte-identical across runs.
pub fn run_study(
    nav: &NavigationSpec,
    app: &SyntheticApp,
    dev: Option<&DevPlan>,
    cfg: &StudyConfig,
    out_dir: impl AsRef<Path>,
) -> Result<StudyOutcome, StudyError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    // Phase 1: learning trace and recommendations.
    let learning = phase_trace(nav, app, cfg, &LEARNING, out_dir, &mut written)?;
    let manifest = app.manifest();
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    written.push(manifest_path);

    let apl_recs = recommend_apl(&learning.records, &cfg.apl)?;
    let mem_recs = recommend_mem(&learning.records, &cfg.mem)?;
    let apl_path = out_dir.join("rec_apl.json");
    apl_recs.save(&apl_path)?;
    written.push(apl_path);
    let mem_path = out_dir.join("rec_mem.json");
    mem_recs.save(&mem_path)?;
    written.push(mem_path);

    // Phase 2: testing trace, replay of the four plans, reports.
    let testing = phase_trace(nav, app, cfg, &TESTING, out_dir, &mut written)?;

    let empty_dev = DevPlan::empty();
    let dev = dev.unwrap_or(&empty_dev);
    let mut dev_cache = cfg.cache.clone();
    dev_cache.ttl_ns.extend(dev.ttl_ns.clone());

    let nocache_plan = CachingPlan::none();
    let apl_plan = CachingPlan::from_recommendations(&apl_recs)?;
    let mem_plan = CachingPlan::from_recommendations(&mem_recs)?;

    let m_nocache =
        replay_with_manifest(&testing.records, &nocache_plan, &cfg.cache, Some(&manifest))?;
    let m_dev = replay_with_manifest(&testing.records, &dev.plan, &dev_cache, Some(&manifest))?;
    let m_apl = replay_with_manifest(&testing.records, &apl_plan, &cfg.cache, Some(&manifest))?;
    let m_mem = replay_with_manifest(&testing.records, &mem_plan, &cfg.cache, Some(&manifest))?;

    let apl_classification = classify(&apl_recs, &dev.plan, &manifest, &m_apl)?;
    let mem_classification = classify(&mem_recs, &dev.plan, &manifest, &m_mem)?;
    let overlap = compare(&apl_recs, &mem_recs);

    let classifications = [apl_classification.clone(), mem_classification.clone()];
    let overlaps = [overlap.clone()];
    let metric_refs = [&m_nocache, &m_dev, &m_apl, &m_mem];
    written.extend(emit_report(
        &classifications,
        &overlaps,
        &metric_refs,
        out_dir,
        cfg.format,
    )?);

    Ok(StudyOutcome {
        apl_recs,
        mem_recs,
        apl_classification,
        mem_classification,
        overlap,
        metrics: vec![m_nocache, m_dev, m_apl, m_mem],
        manifest,
        written,
    })
}

/// Seeds advertised to subcommands that need an explicit phase split.
pub fn learning_seed(master: u64) -> u64 {
    derive_seed(master, STREAM_LEARNING)
}

pub fn testing_seed(master: u64) -> u64 {
    derive_seed(master, STREAM_TESTING)
}

/// Methods a plan covers, for warning about plan entries absent from a trace.
pub fn plan_methods_missing_from(plan: &CachingPlan, trace: &Trace) -> BTreeSet<String> {
    let observed: BTreeSet<&str> = trace.records.iter().map(|r| r.method.as_str()).collect();
    plan.methods()
        .map(|(m, _)| m)
        .filter(|m| !observed.contains(m))
        .map(|m| m.to_string())
        .collect()
}
