//! Deterministic request-sequence generation over a navigation spec.
//!
//! Each simulated user owns an independent seeded stream; per-user sequences
//! are merged by simulated issue timestamps, so the same seed always yields
//! the same log bytes. The read/write mix is enforced by biased sampling over
//! the kinds of the currently eligible requests: when only one kind is
//! eligible the constraint yields, so the mix converges in expectation rather
//! than per step.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::derive_seed;
use super::nav::{NavigationSpec, RequestKind};
use super::synth::SyntheticApp;

/// A request parameter with a finite value domain. Input recurrence rates are
/// controlled by domain sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub domain: Vec<serde_json::Value>,
}

/// Generation budget: either a total request count across all users or a
/// simulated duration per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Budget {
    Requests(u64),
    DurationNs(u64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub users: u32,
    pub budget: Budget,
    pub read_fraction: f64,
    pub close_probability: f64,
}

impl WorkloadConfig {
    /// Request-count budget with the default 80/20 read mix and a 0.05
    /// session-close probability.
    pub fn requests(seed: u64, users: u32, count: u64) -> Self {
        WorkloadConfig {
            seed,
            users,
            budget: Budget::Requests(count),
            read_fraction: 0.80,
            close_probability: 0.05,
        }
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.users == 0 {
            return Err(GenError::Config("users must be positive".into()));
        }
        match self.budget {
            Budget::Requests(0) | Budget::DurationNs(0) => {
                return Err(GenError::Config("budget must be positive".into()))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(GenError::Config("read_fraction must be in [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.close_probability) {
            return Err(GenError::Config(
                "close_probability must be in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEntry {
    pub user: u32,
    pub session: String,
    pub request: String,
    /// Parameter name/value pairs in declaration order.
    pub params: Vec<(String, serde_json::Value)>,
    pub issued_ns: u64,
}

/// Ordered request sequence; within a session every prerequisite appears
/// before its dependent request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequestLog {
    pub entries: Vec<RequestEntry>,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("workload config: {0}")]
    Config(String),
    #[error("mixed workload needs both read and write requests, spec has only {only} requests")]
    MixUnsatisfiable { only: &'static str },
    #[error("dead end in session {session}: no eligible request after {after:?}")]
    DeadEnd {
        session: String,
        after: Option<String>,
    },
    #[error("session {session}: {request} issued before prerequisite {prerequisite}")]
    PrerequisiteViolation {
        session: String,
        request: String,
        prerequisite: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("request log line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

impl RequestLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fraction of entries whose request is read-tagged.
    pub fn observed_read_fraction(&self, nav: &NavigationSpec) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let reads = self
            .entries
            .iter()
            .filter(|e| nav.kind(&e.request) == Some(RequestKind::Read))
            .count();
        reads as f64 / self.entries.len() as f64
    }

    /// Check the prerequisite invariant by replaying sessions.
    pub fn verify_prerequisites(&self, nav: &NavigationSpec) -> Result<(), GenError> {
        let mut seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for e in &self.entries {
            let done = seen.entry(e.session.as_str()).or_default();
            for prereq in nav.prerequisites(&e.request) {
                if !done.contains(prereq) {
                    return Err(GenError::PrerequisiteViolation {
                        session: e.session.clone(),
                        request: e.request.clone(),
                        prerequisite: prereq.to_string(),
                    });
                }
            }
            done.insert(e.request.as_str());
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GenError> {
        let mut out = Vec::new();
        for e in &self.entries {
            writeln!(out, "{}", serde_json::to_string(e).expect("entry json"))?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenError> {
        let file = fs::File::open(path)?;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| GenError::Malformed {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(RequestLog { entries })
    }
}

const STREAM_USER: u64 = 0x57_4c_01;

/// Generate a deterministic request log. Parameter values are drawn from the
/// per-request domains declared in the synthetic app model; requests without
/// a declaration get no parameters.
pub fn generate_workload(
    nav: &NavigationSpec,
    app: &SyntheticApp,
    cfg: &WorkloadConfig,
) -> Result<RequestLog, GenError> {
    cfg.validate()?;
    if cfg.read_fraction > 0.0 && cfg.read_fraction < 1.0 {
        if !nav.has_kind(RequestKind::Read) {
            return Err(GenError::MixUnsatisfiable { only: "write" });
        }
        if !nav.has_kind(RequestKind::Write) {
            return Err(GenError::MixUnsatisfiable { only: "read" });
        }
    }

    let entries_pool: Vec<&str> = nav.entries().collect();
    let mut all = Vec::new();
    for user in 0..cfg.users {
        let quota = match cfg.budget {
            Budget::Requests(total) => {
                let base = total / cfg.users as u64;
                let extra = u64::from((user as u64) < total % cfg.users as u64);
                Some(base + extra)
            }
            Budget::DurationNs(_) => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_USER + user as u64));
        // Stagger users so their streams interleave instead of stacking.
        let mut clock: u64 = user as u64 * 131_071;
        let mut session_idx = 0u64;
        let mut session = format!("u{user}-s{session_idx}");
        let mut executed: BTreeSet<String> = BTreeSet::new();
        let mut prev: Option<String> = None;
        let mut produced = 0u64;

        loop {
            match cfg.budget {
                Budget::Requests(_) => {
                    if produced >= quota.unwrap() {
                        break;
                    }
                }
                Budget::DurationNs(limit) => {
                    if clock >= user as u64 * 131_071 + limit {
                        break;
                    }
                }
            }

            let candidates: Vec<&str> = match &prev {
                None => entries_pool.clone(),
                Some(p) => nav
                    .successors(p)
                    .filter(|c| nav.prerequisites(c).all(|pr| executed.contains(pr)))
                    .collect(),
            };
            if candidates.is_empty() {
                return Err(GenError::DeadEnd {
                    session,
                    after: prev,
                });
            }

            let reads: Vec<&str> = candidates
                .iter()
                .copied()
                .filter(|c| nav.kind(c) == Some(RequestKind::Read))
                .collect();
            let writes: Vec<&str> = candidates
                .iter()
                .copied()
                .filter(|c| nav.kind(c) == Some(RequestKind::Write))
                .collect();
            let use_reads = if reads.is_empty() {
                false
            } else if writes.is_empty() {
                true
            } else {
                rng.gen_bool(cfg.read_fraction)
            };
            let pool = if use_reads { &reads } else { &writes };
            let request = pool[rng.gen_range(0..pool.len())];

            let params: Vec<(String, serde_json::Value)> = app
                .params_for(request)
                .iter()
                .map(|decl| {
                    let value = decl.domain[rng.gen_range(0..decl.domain.len())].clone();
                    (decl.name.clone(), value)
                })
                .collect();

            all.push(RequestEntry {
                user,
                session: session.clone(),
                request: request.to_string(),
                params,
                issued_ns: clock,
            });
            produced += 1;
            executed.insert(request.to_string());
            prev = Some(request.to_string());
            clock += rng.gen_range(600_000..=1_400_000);

            if rng.gen_bool(cfg.close_probability) {
                session_idx += 1;
                session = format!("u{user}-s{session_idx}");
                executed.clear();
                prev = None;
                clock += rng.gen_range(1_000_000..=5_000_000);
            }
        }
    }

    // Stable merge keeps per-user order for equal timestamps.
    all.sort_by_key(|e| (e.issued_ns, e.user));
    Ok(RequestLog { entries: all })
}
