//! Streamable rollout traces: one JSON header line, then one line per frame
//! holding `[id, x, y, group]` for each active agent.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Frame, ScenarioError};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format_version: u32,
    pub policy: String,
    pub seed: u64,
    pub horizon: usize,
    pub radius: f64,
    pub bounds: [f64; 2],
    pub frames: usize,
}

pub fn write_trace<W: Write>(mut out: W, header: &TraceHeader, frames: &[Frame]) -> Result<(), ScenarioError> {
    let io = |e: std::io::Error| ScenarioError::Io(e.to_string());
    let line = serde_json::to_string(header).expect("header serializes");
    writeln!(out, "{line}").map_err(io)?;
    for f in frames {
        let line = serde_json::to_string(f).expect("frame serializes");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Parses a trace written by [`write_trace`], rejecting unknown versions.
pub fn read_trace<R: std::io::BufRead>(input: R) -> Result<(TraceHeader, Vec<Frame>), ScenarioError> {
    let mut lines = input.lines();
    let bad = |m: String| ScenarioError::Malformed(m);
    let first = lines.next().ok_or_else(|| bad("empty trace".into()))?.map_err(|e| ScenarioError::Io(e.to_string()))?;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| bad(e.to_string()))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != TRACE_FORMAT_VERSION {
        return Err(ScenarioError::UnknownVersion(version));
    }
    let header: TraceHeader = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
    let mut frames = Vec::new();
    for line in lines {
        let line = line.map_err(|e| ScenarioError::Io(e.to_string()))?;
        frames.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
    }
    Ok((header, frames))
}
