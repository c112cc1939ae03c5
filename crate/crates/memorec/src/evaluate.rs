//! Recommendation classification and report emission.
//!
//! A recommendation is invalid when the ground-truth manifest marks its
//! method with a forbidden category (the write-style side effects or random
//! output); otherwise it is existing when developers already cached the
//! method and novel when they did not. A valid recommendation is useful when
//! its replay produced at least one hit. The usefulness rate divides useful
//! recommendations by the valid (novel plus existing) count.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::manifest::PurityManifest;
use crate::recommend::{RecommendationSet, Source};
use crate::replay::{simulate_throughput, CachingPlan, PlanKind, ReplayError, ReplayMetrics};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("methods missing from the purity manifest: {0:?}")]
    UnknownSignatures(Vec<String>),
    #[error("metrics for plan {metrics} do not match recommendations from {recs}")]
    PlanMismatch { metrics: PlanKind, recs: Source },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Novel,
    Existing,
    Invalid,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Novel => "novel",
            Label::Existing => "existing",
            Label::Invalid => "invalid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationRow {
    pub method: String,
    pub label: Label,
    pub useful: bool,
    pub hits: u64,
}

/// Per-set classification in recommendation rank order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub source: Source,
    pub rows: Vec<ClassificationRow>,
    pub novel: u64,
    pub existing: u64,
    pub invalid: u64,
    pub useful: u64,
    /// Absent when there are no valid recommendations to rate.
    pub usefulness_rate: Option<f64>,
}

impl Classification {
    pub fn total(&self) -> u64 {
        self.rows.len() as u64
    }

    pub fn invalid_methods(&self) -> BTreeSet<&str> {
        self.rows
            .iter()
            .filter(|r| r.label == Label::Invalid)
            .map(|r| r.method.as_str())
            .collect()
    }
}

/// Classify a recommendation set against developer decisions, the manifest
/// and the replay of its own plan. Every recommended method must appear in
/// the manifest; there is no silent pure default.
pub fn classify(
    recs: &RecommendationSet,
    dev: &CachingPlan,
    manifest: &PurityManifest,
    metrics: &ReplayMetrics,
) -> Result<Classification, EvalError> {
    let expected_plan = match recs.source {
        Source::Apl => PlanKind::Apl,
        Source::Mem => PlanKind::Mem,
        Source::Dev => PlanKind::Dev,
    };
    if metrics.plan != expected_plan {
        return Err(EvalError::PlanMismatch {
            metrics: metrics.plan,
            recs: recs.source,
        });
    }

    let unknown: Vec<String> = recs
        .recommendations
        .iter()
        .filter(|r| manifest.get(&r.method).is_none())
        .map(|r| r.method.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(EvalError::UnknownSignatures(unknown));
    }

    let mut rows = Vec::with_capacity(recs.len());
    let (mut novel, mut existing, mut invalid, mut useful) = (0u64, 0u64, 0u64, 0u64);
    for rec in &recs.recommendations {
        let category = manifest.get(&rec.method).unwrap().category;
        let label = if category.forbids_caching() {
            Label::Invalid
        } else if dev.contains(&rec.method) {
            Label::Existing
        } else {
            Label::Novel
        };
        let hits = metrics
            .per_method
            .get(&rec.method)
            .map(|m| m.hits)
            .unwrap_or(0);
        let is_useful = label != Label::Invalid && hits > 0;
        match label {
            Label::Novel => novel += 1,
            Label::Existing => existing += 1,
            Label::Invalid => invalid += 1,
        }
        if is_useful {
            useful += 1;
        }
        rows.push(ClassificationRow {
            method: rec.method.clone(),
            label,
            useful: is_useful,
            hits,
        });
    }
    let valid = novel + existing;
    let usefulness_rate = (valid > 0).then(|| useful as f64 / valid as f64);
    Ok(Classification {
        source: recs.source,
        rows,
        novel,
        existing,
        invalid,
        useful,
        usefulness_rate,
    })
}

/// Set arithmetic over two recommendation sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub source_a: Source,
    pub source_b: Source,
    pub shared: Vec<String>,
    pub only_a: Vec<String>,
    pub only_b: Vec<String>,
    /// Total whitelisted input tuples per set (zero when a set caches all
    /// inputs).
    pub whitelist_inputs_a: u64,
    pub whitelist_inputs_b: u64,
}

pub fn compare(a: &RecommendationSet, b: &RecommendationSet) -> OverlapReport {
    let set_a = a.methods();
    let set_b = b.methods();
    let whitelist_size = |s: &RecommendationSet| {
        s.recommendations
            .iter()
            .filter_map(|r| r.whitelist.as_ref())
            .map(|w| w.len() as u64)
            .sum()
    };
    OverlapReport {
        source_a: a.source,
        source_b: b.source,
        shared: set_a.intersection(&set_b).map(|m| m.to_string()).collect(),
        only_a: set_a.difference(&set_b).map(|m| m.to_string()).collect(),
        only_b: set_b.difference(&set_a).map(|m| m.to_string()).collect(),
        whitelist_inputs_a: whitelist_size(a),
        whitelist_inputs_b: whitelist_size(b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Md,
}

fn csv_field(text: &str) -> Cow<'_, str> {
    if text.contains(',') || text.contains('"') || text.contains('\n') {
        Cow::Owned(format!("\"{}\"", text.replace('"', "\"\"")))
    } else {
        Cow::Borrowed(text)
    }
}

fn csv_row(out: &mut String, fields: &[&str]) {
    for (i, field) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&csv_field(field));
    }
    out.push('\n');
}

fn rate_str(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{r:.4}"),
        None => String::new(),
    }
}

/// Classification rows across all sets, one CSV document.
pub fn classifications_csv(classifications: &[Classification]) -> String {
    let mut out = String::new();
    csv_row(&mut out, &["approach", "method", "label", "useful", "hits"]);
    for c in classifications {
        for row in &c.rows {
            csv_row(
                &mut out,
                &[
                    &c.source.to_string(),
                    &row.method,
                    &row.label.to_string(),
                    if row.useful { "true" } else { "false" },
                    &row.hits.to_string(),
                ],
            );
        }
    }
    out
}

/// Per-approach summary counts: novel, existing, invalid, useful, rate.
pub fn summary_csv(classifications: &[Classification]) -> String {
    let mut out = String::new();
    csv_row(
        &mut out,
        &[
            "approach",
            "novel",
            "existing",
            "invalid",
            "useful",
            "usefulness_rate",
            "total",
        ],
    );
    for c in classifications {
        csv_row(
            &mut out,
            &[
                &c.source.to_string(),
                &c.novel.to_string(),
                &c.existing.to_string(),
                &c.invalid.to_string(),
                &c.useful.to_string(),
                &rate_str(c.usefulness_rate),
                &c.total().to_string(),
            ],
        );
    }
    out
}

pub fn overlap_csv(overlaps: &[OverlapReport]) -> String {
    let mut out = String::new();
    csv_row(&mut out, &["a", "b", "relation", "method"]);
    for o in overlaps {
        let a = o.source_a.to_string();
        let b = o.source_b.to_string();
        for m in &o.shared {
            csv_row(&mut out, &[&a, &b, "shared", m]);
        }
        for m in &o.only_a {
            csv_row(&mut out, &[&a, &b, "only_a", m]);
        }
        for m in &o.only_b {
            csv_row(&mut out, &[&a, &b, "only_b", m]);
        }
    }
    out
}

/// Per-method replay counters for one plan, with a trailing ALL row.
pub fn metrics_csv(m: &ReplayMetrics) -> String {
    let rel = format!("{:.6}", m.relative_throughput());
    let plan = m.plan.to_string();
    let mut out = String::new();
    csv_row(
        &mut out,
        &[
            "plan",
            "method",
            "hits",
            "misses",
            "additions",
            "discards",
            "saved_ns",
            "relative_throughput",
        ],
    );
    for (method, mm) in &m.per_method {
        csv_row(
            &mut out,
            &[
                &plan,
                method,
                &mm.hits.to_string(),
                &mm.misses.to_string(),
                &mm.additions.to_string(),
                &mm.discards.to_string(),
                &mm.saved_ns.to_string(),
                &rel,
            ],
        );
    }
    csv_row(
        &mut out,
        &[
            &plan,
            "ALL",
            &m.totals.hits.to_string(),
            &m.totals.misses.to_string(),
            &m.totals.additions.to_string(),
            &m.totals.discards.to_string(),
            &m.totals.saved_ns.to_string(),
            &rel,
        ],
    );
    out
}

/// Plan comparison table; all metrics must come from the same trace.
pub fn throughput_csv(metrics: &[&ReplayMetrics]) -> Result<String, EvalError> {
    let mut out = String::new();
    csv_row(
        &mut out,
        &[
            "plan",
            "relative_throughput",
            "baseline_ns",
            "simulated_ns",
            "hits",
            "misses",
            "saved_ns",
        ],
    );
    if !metrics.is_empty() {
        for row in simulate_throughput(metrics)? {
            csv_row(
                &mut out,
                &[
                    &row.plan.to_string(),
                    &format!("{:.6}", row.relative_throughput),
                    &row.baseline_ns.to_string(),
                    &row.simulated_ns.to_string(),
                    &row.hits.to_string(),
                    &row.misses.to_string(),
                    &row.saved_ns.to_string(),
                ],
            );
        }
    }
    Ok(out)
}

/// Write the comparison report files: classification rows and a summary
/// shaped like the recommendation analysis table, the per-method replay
/// metrics per plan, a plan-level throughput table, the overlap listing,
/// and a human-readable summary. Byte-deterministic for identical inputs.
pub fn emit_report(
    classifications: &[Classification],
    overlaps: &[OverlapReport],
    metrics: &[&ReplayMetrics],
    destination: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, EvalError> {
    let destination = destination.as_ref();
    fs::create_dir_all(destination)?;
    let mut written = Vec::new();
    let mut write = |name: &str, content: String| -> Result<(), EvalError> {
        let path = destination.join(name);
        fs::write(&path, content)?;
        written.push(path);
        Ok(())
    };

    write("classifications.csv", classifications_csv(classifications))?;
    write("summary.csv", summary_csv(classifications))?;
    write("overlap.csv", overlap_csv(overlaps))?;
    for m in metrics {
        write(
            &format!("metrics_{}.csv", m.plan.to_string().to_lowercase()),
            metrics_csv(m),
        )?;
    }
    write("throughput.csv", throughput_csv(metrics)?)?;

    // human-readable summary
    let summary = render_summary(classifications, overlaps, metrics, format);
    match format {
        ReportFormat::Csv => write("summary.txt", summary)?,
        ReportFormat::Md => write("summary.md", summary)?,
    }

    Ok(written)
}

fn render_summary(
    classifications: &[Classification],
    overlaps: &[OverlapReport],
    metrics: &[&ReplayMetrics],
    format: ReportFormat,
) -> String {
    let mut out = String::new();
    let heading = |out: &mut String, text: &str| match format {
        ReportFormat::Md => out.push_str(&format!("## {text}\n\n")),
        ReportFormat::Csv => out.push_str(&format!("== {text} ==\n")),
    };

    heading(&mut out, "Recommendations");
    for c in classifications {
        out.push_str(&format!(
            "{}: {} total ({} novel, {} existing, {} invalid), {} useful, usefulness rate {}\n",
            c.source,
            c.total(),
            c.novel,
            c.existing,
            c.invalid,
            c.useful,
            rate_str(c.usefulness_rate)
        ));
    }
    out.push('\n');

    heading(&mut out, "Overlap");
    for o in overlaps {
        out.push_str(&format!(
            "{} vs {}: {} shared, {} only {}, {} only {} (whitelisted inputs: {} vs {})\n",
            o.source_a,
            o.source_b,
            o.shared.len(),
            o.only_a.len(),
            o.source_a,
            o.only_b.len(),
            o.source_b,
            o.whitelist_inputs_a,
            o.whitelist_inputs_b
        ));
    }
    out.push('\n');

    heading(&mut out, "Replay");
    for m in metrics {
        out.push_str(&format!(
            "{}: relative throughput {:+.4}, hits {}, misses {}, additions {}, discards {}, stale hits {}\n",
            m.plan,
            m.relative_throughput(),
            m.totals.hits,
            m.totals.misses,
            m.totals.additions,
            m.totals.discards,
            m.totals.stale_hits
        ));
    }
    out
}
