//! Command-line front end wiring the toolkit into the two-phase study
//! protocol: workload generation, trace profiling, both recommenders, cache
//! replay and report emission. Every subcommand echoes its effective
//! configuration to stderr so runs can be reproduced from logs alone.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use memorec::evaluate::{
    classifications_csv, classify, compare, emit_report, metrics_csv, overlap_csv, summary_csv,
    ReportFormat,
};
use memorec::mem::{CostBasis, Kernel};
use memorec::profile::{build_profiles, write_profile_dump};
use memorec::replay::{replay_with_manifest, CacheConfig, CachingPlan, DevPlan};
use memorec::study::plan_methods_missing_from;
use memorec::trace::{write_trace, Trace};
use memorec::value::TruncationPolicy;
use memorec::workload::{execute_synthetic, generate_workload, Budget, WorkloadConfig};
use memorec::{
    recommend_apl, recommend_mem, run_study, AplConfig, MemConfig, NavigationSpec, PurityManifest,
    RecommendationSet, StudyConfig, SyntheticApp,
};

#[derive(Parser)]
#[command(
    name = "memorec",
    version,
    about = "Recommend cacheable methods from execution traces and evaluate them by cache replay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a workload, execute the synthetic app and write the trace,
    /// request log and ground-truth manifest.
    TraceGen(TraceGenArgs),
    /// Print a trace digest; optionally dump per-method profiles.
    Profile(ProfileArgs),
    /// Metric-threshold recommender (APL) over a trace.
    RecommendApl(RecommendAplArgs),
    /// Input-output invariance recommender (MEM) over a trace.
    RecommendMem(RecommendMemArgs),
    /// Replay a trace under one caching plan and write the metrics CSV.
    Replay(ReplayArgs),
    /// Compare two recommendation files.
    Compare(CompareArgs),
    /// Replay all four plans over a testing trace and emit report CSVs.
    Report(ReportArgs),
    /// Full two-phase pipeline: learning trace, both recommenders, testing
    /// trace, replay of NOCACHE/DEV/APL/MEM and reports.
    Study(StudyArgs),
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    /// Master seed; all derived streams are deterministic in it.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    users: u32,
    /// Total request count across users.
    #[arg(long, default_value_t = 1000, conflicts_with = "duration_ns")]
    requests: u64,
    /// Simulated duration per user instead of a request count.
    #[arg(long)]
    duration_ns: Option<u64>,
    #[arg(long, default_value_t = 0.80)]
    read_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    close_probability: f64,
}

impl WorkloadArgs {
    fn config(&self) -> WorkloadConfig {
        WorkloadConfig {
            seed: self.seed,
            users: self.users,
            budget: match self.duration_ns {
                Some(d) => Budget::DurationNs(d),
                None => Budget::Requests(self.requests),
            },
            read_fraction: self.read_fraction,
            close_probability: self.close_probability,
        }
    }
}

#[derive(Args, Clone)]
struct AplArgs {
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long, default_value_t = 0.1)]
    changeability_ceiling: f64,
    #[arg(long, default_value_t = 2)]
    min_input_occurrences: u64,
}

impl AplArgs {
    fn config(&self) -> AplConfig {
        AplConfig {
            k: self.k,
            changeability_ceiling: self.changeability_ceiling,
            min_input_occurrences: self.min_input_occurrences,
        }
    }
}

#[derive(Args, Clone)]
struct MemArgs {
    /// exhaustive or iterative
    #[arg(long, default_value = "exhaustive")]
    kernel: String,
    #[arg(long, default_value_t = 5000)]
    min_mean_time_ns: u64,
    #[arg(long, default_value_t = 1)]
    initial_depth: u32,
    /// 0 removes the depth cap.
    #[arg(long, default_value_t = 16)]
    max_depth: u32,
    #[arg(long, default_value_t = 0)]
    holding_penalty_ns: u64,
    /// Filter on self time instead of total time.
    #[arg(long, default_value_t = false)]
    self_time_cost: bool,
}

impl MemArgs {
    fn config(&self) -> Result<MemConfig> {
        let kernel = match self.kernel.as_str() {
            "exhaustive" => Kernel::Exhaustive,
            "iterative" => Kernel::Iterative,
            other => bail!("unknown kernel {other:?} (expected exhaustive or iterative)"),
        };
        Ok(MemConfig {
            min_mean_time_ns: self.min_mean_time_ns,
            kernel,
            initial_depth: self.initial_depth,
            max_depth: (self.max_depth > 0).then_some(self.max_depth),
            holding_penalty_ns: self.holding_penalty_ns,
            cost_basis: if self.self_time_cost {
                CostBasis::SelfTime
            } else {
                CostBasis::Total
            },
        })
    }
}

#[derive(Args, Clone)]
struct CacheArgs {
    /// Default TTL; 0 means unlimited.
    #[arg(long, default_value_t = 0)]
    default_ttl_ns: u64,
    #[arg(long, default_value_t = 500)]
    hit_lookup_ns: u64,
    #[arg(long, default_value_t = 1500)]
    miss_overhead_ns: u64,
    #[arg(long, default_value_t = 200)]
    whitelist_check_ns: u64,
}

impl CacheArgs {
    fn config(&self) -> CacheConfig {
        CacheConfig {
            default_ttl_ns: if self.default_ttl_ns == 0 {
                u64::MAX
            } else {
                self.default_ttl_ns
            },
            ttl_ns: Default::default(),
            hit_lookup_ns: self.hit_lookup_ns,
            miss_overhead_ns: self.miss_overhead_ns,
            whitelist_check_ns: self.whitelist_check_ns,
        }
    }
}

#[derive(Args)]
struct TraceGenArgs {
    #[arg(long)]
    nav: PathBuf,
    #[arg(long)]
    app: PathBuf,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Application package prefixes kept during serialization.
    #[arg(long, default_value = "app")]
    app_packages: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Write per-method profile objects (JSON lines) here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendAplArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    apl: AplArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecommendMemArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    mem: MemArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Recommendation file to replay.
    #[arg(long, conflicts_with_all = ["dev", "nocache"])]
    rec: Option<PathBuf>,
    /// Developer plan file to replay.
    #[arg(long, conflicts_with = "nocache")]
    dev: Option<PathBuf>,
    /// Replay without any caching (baseline).
    #[arg(long, default_value_t = false)]
    nocache: bool,
    /// Ground-truth manifest enabling the stale-hit diagnostic.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    cache: CacheArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Write the overlap CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Testing trace all four plans are replayed over.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    apl: PathBuf,
    #[arg(long)]
    mem: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[command(flatten)]
    cache: CacheArgs,
    /// csv or md summary rendering.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    nav: PathBuf,
    #[arg(long)]
    app: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    apl: AplArgs,
    #[command(flatten)]
    mem: MemArgs,
    #[command(flatten)]
    cache: CacheArgs,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_format(text: &str) -> Result<ReportFormat> {
    match text {
        "csv" => Ok(ReportFormat::Csv),
        "md" => Ok(ReportFormat::Md),
        other => bail!("unknown format {other:?} (expected csv or md)"),
    }
}

fn echo_config(subcommand: &str, value: &impl serde::Serialize) {
    eprintln!(
        "config: {{\"subcommand\":\"{subcommand}\",\"effective\":{}}}",
        serde_json::to_string(value).unwrap_or_else(|_| "null".into())
    );
}

fn load_trace(path: &PathBuf) -> Result<Trace> {
    Trace::load(path).with_context(|| format!("reading trace {}", path.display()))
}

fn run_trace_gen(args: TraceGenArgs) -> Result<()> {
    let workload = args.workload.config();
    echo_config("trace-gen", &workload);
    let nav = NavigationSpec::load(&args.nav)
        .with_context(|| format!("loading navigation spec {}", args.nav.display()))?;
    let app = SyntheticApp::load(&args.app)
        .with_context(|| format!("loading app spec {}", args.app.display()))?;
    let policy = TruncationPolicy::application_only(args.app_packages.split(',').map(str::trim));

    let log = generate_workload(&nav, &app, &workload)?;
    let records = execute_synthetic(&app, &log, &policy, workload.seed)?;
    let trace = Trace::new(records);

    fs::create_dir_all(&args.out)?;
    log.save(args.out.join("request_log.jsonl"))?;
    let file = File::create(args.out.join("trace.jsonl"))?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, &trace)?;
    w.flush()?;
    app.manifest().save(args.out.join("manifest.json"))?;
    println!(
        "wrote {} requests, {} records to {}",
        log.len(),
        trace.records.len(),
        args.out.display()
    );
    Ok(())
}

fn run_profile(args: ProfileArgs) -> Result<()> {
    echo_config("profile", &args.trace.display().to_string());
    let trace = load_trace(&args.trace)?;
    let digest = trace.digest();
    println!("records: {}", digest.records);
    println!("methods: {}", digest.methods);
    println!("sessions: {}", digest.sessions);
    match digest.span_ns {
        Some((lo, hi)) => println!("span_ns: [{lo}, {hi}]"),
        None => println!("span_ns: empty"),
    }
    if let Some(dump) = args.dump {
        let profiles = build_profiles(&trace.records)?;
        let file = File::create(&dump)?;
        let mut w = BufWriter::new(file);
        write_profile_dump(&mut w, &profiles)?;
        w.flush()?;
        println!(
            "profiles: {} (dumped to {})",
            profiles.len(),
            dump.display()
        );
    }
    Ok(())
}

fn run_recommend_apl(args: RecommendAplArgs) -> Result<()> {
    let cfg = args.apl.config();
    echo_config("recommend-apl", &cfg);
    let trace = load_trace(&args.trace)?;
    let set = recommend_apl(&trace.records, &cfg)?;
    set.save(&args.out)?;
    println!(
        "{} recommendations written to {}",
        set.len(),
        args.out.display()
    );
    Ok(())
}

fn run_recommend_mem(args: RecommendMemArgs) -> Result<()> {
    let cfg = args.mem.config()?;
    echo_config("recommend-mem", &cfg);
    let trace = load_trace(&args.trace)?;
    let set = recommend_mem(&trace.records, &cfg)?;
    set.save(&args.out)?;
    println!(
        "{} recommendations written to {}",
        set.len(),
        args.out.display()
    );
    Ok(())
}

fn run_replay(args: ReplayArgs) -> Result<()> {
    let mut cache = args.cache.config();
    echo_config("replay", &cache);
    let trace = load_trace(&args.trace)?;
    let plan = if let Some(rec) = &args.rec {
        let set = RecommendationSet::load(rec)?;
        CachingPlan::from_recommendations(&set)?
    } else if let Some(dev) = &args.dev {
        let dev = DevPlan::load(dev)?;
        cache.ttl_ns.extend(dev.ttl_ns.clone());
        dev.plan
    } else if args.nocache {
        CachingPlan::none()
    } else {
        bail!("one of --rec, --dev or --nocache is required");
    };
    let missing = plan_methods_missing_from(&plan, &trace);
    for method in &missing {
        eprintln!("warning: planned method {method} never appears in the trace");
    }
    let manifest = match &args.manifest {
        Some(path) => Some(PurityManifest::load(path)?),
        None => None,
    };
    let metrics = replay_with_manifest(&trace.records, &plan, &cache, manifest.as_ref())?;
    fs::write(&args.out, metrics_csv(&metrics))?;
    println!(
        "{}: hits {} misses {} additions {} discards {} relative_throughput {:+.4}",
        metrics.plan,
        metrics.totals.hits,
        metrics.totals.misses,
        metrics.totals.additions,
        metrics.totals.discards,
        metrics.relative_throughput()
    );
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<()> {
    echo_config(
        "compare",
        &(args.a.display().to_string(), args.b.display().to_string()),
    );
    let a = RecommendationSet::load(&args.a)?;
    let b = RecommendationSet::load(&args.b)?;
    let overlap = compare(&a, &b);
    let csv = overlap_csv(std::slice::from_ref(&overlap));
    match args.out {
        Some(path) => {
            fs::write(&path, csv)?;
            println!(
                "{} shared, {} only {}, {} only {} (written to {})",
                overlap.shared.len(),
                overlap.only_a.len(),
                overlap.source_a,
                overlap.only_b.len(),
                overlap.source_b,
                path.display()
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<()> {
    let cache = args.cache.config();
    let format = parse_format(&args.format)?;
    echo_config("report", &cache);
    let trace = load_trace(&args.trace)?;
    let manifest = PurityManifest::load(&args.manifest)?;
    let apl = RecommendationSet::load(&args.apl)?;
    let mem = RecommendationSet::load(&args.mem)?;
    let dev = match &args.dev {
        Some(path) => DevPlan::load(path)?,
        None => DevPlan::empty(),
    };
    let mut dev_cache = cache.clone();
    dev_cache.ttl_ns.extend(dev.ttl_ns.clone());

    let apl_plan = CachingPlan::from_recommendations(&apl)?;
    let mem_plan = CachingPlan::from_recommendations(&mem)?;
    let m_nocache = replay_with_manifest(
        &trace.records,
        &CachingPlan::none(),
        &cache,
        Some(&manifest),
    )?;
    let m_dev = replay_with_manifest(&trace.records, &dev.plan, &dev_cache, Some(&manifest))?;
    let m_apl = replay_with_manifest(&trace.records, &apl_plan, &cache, Some(&manifest))?;
    let m_mem = replay_with_manifest(&trace.records, &mem_plan, &cache, Some(&manifest))?;

    let classifications = [
        classify(&apl, &dev.plan, &manifest, &m_apl)?,
        classify(&mem, &dev.plan, &manifest, &m_mem)?,
    ];
    let overlaps = [compare(&apl, &mem)];
    let written = emit_report(
        &classifications,
        &overlaps,
        &[&m_nocache, &m_dev, &m_apl, &m_mem],
        &args.out,
        format,
    )?;
    println!(
        "wrote {} report files to {}",
        written.len(),
        args.out.display()
    );
    print!("{}", summary_csv(&classifications));
    Ok(())
}

fn run_study_cmd(args: StudyArgs) -> Result<()> {
    let cfg = StudyConfig {
        seed: args.workload.seed,
        users: args.workload.users,
        requests: args.workload.requests,
        read_fraction: args.workload.read_fraction,
        close_probability: args.workload.close_probability,
        apl: args.apl.config(),
        mem: args.mem.config()?,
        cache: args.cache.config(),
        policy: TruncationPolicy::application_only(["app"]),
        format: parse_format(&args.format)?,
    };
    echo_config("study", &cfg);
    let nav = NavigationSpec::load(&args.nav)?;
    let app = SyntheticApp::load(&args.app)?;
    let dev = match &args.dev {
        Some(path) => Some(DevPlan::load(path)?),
        None => None,
    };
    let outcome = run_study(&nav, &app, dev.as_ref(), &cfg, &args.out)?;
    println!(
        "wrote {} files to {}",
        outcome.written.len(),
        args.out.display()
    );
    print!(
        "{}",
        classifications_csv(&[
            outcome.apl_classification.clone(),
            outcome.mem_classification.clone()
        ])
    );
    for m in &outcome.metrics {
        println!(
            "{}: relative throughput {:+.4}",
            m.plan,
            m.relative_throughput()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TraceGen(args) => run_trace_gen(args),
        Command::Profile(args) => run_profile(args),
        Command::RecommendApl(args) => run_recommend_apl(args),
        Command::RecommendMem(args) => run_recommend_mem(args),
        Command::Replay(args) => run_replay(args),
        Command::Compare(args) => run_compare(args),
        Command::Report(args) => run_report(args),
        Command::Study(args) => run_study_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
