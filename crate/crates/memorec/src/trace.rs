//! Trace records and the line-delimited trace file format.
//!
//! A trace file is UTF-8 JSON lines. The first line is a header object
//! `{"format":"memorec-trace","version":1,"epoch_ns":<int>}`; every following
//! line is one call record with fields in fixed order: session, method,
//! inputs, output, start_ns, end_ns, depth. Values are canonical renderings.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::CanonicalValue;

pub const TRACE_FORMAT: &str = "memorec-trace";
pub const TRACE_VERSION: u32 = 1;

/// One observed method invocation. Timestamps are nanoseconds relative to
/// the per-file epoch; `depth` is the call-nesting level inside the session
/// (0 for request handlers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub session: String,
    pub method: String,
    pub inputs: Vec<CanonicalValue>,
    pub output: CanonicalValue,
    pub start_ns: u64,
    pub end_ns: u64,
    pub depth: u32,
}

impl CallRecord {
    pub fn duration_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    format: String,
    version: u32,
    epoch_ns: i64,
}

/// A parsed trace: epoch plus records in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub epoch_ns: i64,
    pub records: Vec<CallRecord>,
}

impl Trace {
    pub fn new(records: Vec<CallRecord>) -> Self {
        Trace {
            epoch_ns: 0,
            records,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let file = File::open(path)?;
        read_trace(BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        write_trace(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn digest(&self) -> TraceDigest {
        trace_digest(&self.records)
    }

    /// Deepest canonical value tree appearing anywhere in the trace.
    pub fn max_value_depth(&self) -> u32 {
        self.records
            .iter()
            .flat_map(|r| r.inputs.iter().chain(std::iter::once(&r.output)))
            .map(CanonicalValue::depth)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line 1: missing or malformed trace header: {0}")]
    BadHeader(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: end_ns {end_ns} precedes start_ns {start_ns}")]
    NegativeSpan {
        line: usize,
        start_ns: u64,
        end_ns: u64,
    },
}

/// How ingestion reacts to a malformed record line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnMalformed {
    /// Stop with an error naming the line (default).
    #[default]
    Abort,
    /// Skip the line and keep a count of skipped lines.
    Skip,
}

/// Read a trace, aborting on the first malformed line.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Trace, TraceError> {
    read_trace_with(reader, OnMalformed::Abort).map(|(t, _)| t)
}

/// Read a trace under the given malformed-line policy, returning the trace
/// and the number of skipped lines. Line numbers count from 1 and include
/// the header line. An entirely empty stream yields an empty trace.
pub fn read_trace_with<R: BufRead>(
    reader: R,
    policy: OnMalformed,
) -> Result<(Trace, u64), TraceError> {
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        None => return Ok((Trace::default(), 0)),
        Some(line) => line?,
    };
    let header: TraceHeader =
        serde_json::from_str(&header_line).map_err(|e| TraceError::BadHeader(e.to_string()))?;
    if header.format != TRACE_FORMAT {
        return Err(TraceError::BadHeader(format!(
            "unexpected format {:?}",
            header.format
        )));
    }
    if header.version != TRACE_VERSION {
        return Err(TraceError::BadHeader(format!(
            "unsupported version {}",
            header.version
        )));
    }

    let mut records = Vec::new();
    let mut skipped = 0u64;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record_line(&line, line_no) {
            Ok(record) => records.push(record),
            Err(err) => match policy {
                OnMalformed::Abort => return Err(err),
                OnMalformed::Skip => skipped += 1,
            },
        }
    }
    Ok((
        Trace {
            epoch_ns: header.epoch_ns,
            records,
        },
        skipped,
    ))
}

fn parse_record_line(line: &str, line_no: usize) -> Result<CallRecord, TraceError> {
    let record: CallRecord = serde_json::from_str(line).map_err(|e| TraceError::Malformed {
        line: line_no,
        reason: e.to_string(),
    })?;
    if record.end_ns < record.start_ns {
        return Err(TraceError::NegativeSpan {
            line: line_no,
            start_ns: record.start_ns,
            end_ns: record.end_ns,
        });
    }
    Ok(record)
}

/// Write a trace in the normalized line format. Byte-deterministic for a
/// given trace value.
pub fn write_trace<W: Write>(writer: &mut W, trace: &Trace) -> Result<(), TraceError> {
    let header = TraceHeader {
        format: TRACE_FORMAT.to_string(),
        version: TRACE_VERSION,
        epoch_ns: trace.epoch_ns,
    };
    writeln!(
        writer,
        "{}",
        serde_json::to_string(&header).expect("header json")
    )?;
    for record in &trace.records {
        writeln!(
            writer,
            "{}",
            serde_json::to_string(record).expect("record json")
        )?;
    }
    Ok(())
}

/// Order-insensitive trace summary with exact counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceDigest {
    pub records: u64,
    pub methods: u64,
    pub sessions: u64,
    /// `[min start, max end]`, absent for an empty trace.
    pub span_ns: Option<(u64, u64)>,
}

pub fn trace_digest(records: &[CallRecord]) -> TraceDigest {
    let mut methods = BTreeSet::new();
    let mut sessions = BTreeSet::new();
    let mut span: Option<(u64, u64)> = None;
    for r in records {
        methods.insert(r.method.as_str());
        sessions.insert(r.session.as_str());
        span = Some(match span {
            None => (r.start_ns, r.end_ns),
            Some((lo, hi)) => (lo.min(r.start_ns), hi.max(r.end_ns)),
        });
    }
    TraceDigest {
        records: records.len() as u64,
        methods: methods.len() as u64,
        sessions: sessions.len() as u64,
        span_ns: span,
    }
}
