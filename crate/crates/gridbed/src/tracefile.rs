//! JSON-lines trace files.
//!
//! Line 1 is a header carrying the schema version and the fully resolved
//! scenario. Then one [`TraceEvent`] per line. The last line is an end marker
//! with the event count; a file without it is treated as truncated.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use gridbed_core::trace::TraceEvent;

use crate::scenario::ScenarioSpec;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
enum Marker {
    Header { schema_version: u32, scenario: Box<ScenarioSpec> },
    End { events: u64, dispatch_digest: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedTrace {
    pub scenario: ScenarioSpec,
    pub events: Vec<TraceEvent>,
    pub dispatch_digest: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("truncated trace")]
    Truncated,
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported trace schema version {0}")]
    Version(u32),
}

pub fn write_trace<W: Write>(
    mut w: W,
    scenario: &ScenarioSpec,
    events: &[TraceEvent],
    dispatch_digest: u64,
) -> io::Result<()> {
    let header = Marker::Header { schema_version: TRACE_SCHEMA_VERSION, scenario: Box::new(scenario.clone()) };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    let end = Marker::End { events: events.len() as u64, dispatch_digest: format!("{dispatch_digest:016x}") };
    serde_json::to_writer(&mut w, &end)?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn parse_trace(text: &str) -> Result<ParsedTrace, TraceError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(TraceError::Truncated)?;
    let scenario = match serde_json::from_str::<Marker>(first) {
        Ok(Marker::Header { schema_version, scenario }) => {
            if schema_version != TRACE_SCHEMA_VERSION {
                return Err(TraceError::Version(schema_version));
            }
            *scenario
        }
        Ok(Marker::End { .. }) => return Err(TraceError::Truncated),
        Err(e) => return Err(TraceError::Malformed { line: 1, message: e.to_string() }),
    };
    let mut events = Vec::new();
    for (i, line) in lines {
        if line.contains("\"record\"") {
            if let Ok(Marker::End { events: n, dispatch_digest }) = serde_json::from_str::<Marker>(line) {
                if n as usize != events.len() {
                    return Err(TraceError::Truncated);
                }
                return Ok(ParsedTrace { scenario, events, dispatch_digest });
            }
        }
        let e: TraceEvent =
            serde_json::from_str(line).map_err(|e| TraceError::Malformed { line: i + 1, message: e.to_string() })?;
        events.push(e);
    }
    Err(TraceError::Truncated)
}
