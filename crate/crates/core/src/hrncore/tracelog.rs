//! Line-delimited JSON trace log: one record per routed sample.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::route::{RouteEnd, RouteTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub unit: usize,
    pub residue_norm: f64,
    pub projection_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sample: u64,
    /// Free-form tag such as `train` or `eval`.
    pub phase: String,
    pub task: usize,
    pub epoch: usize,
    pub levels: Vec<LevelRecord>,
    pub stopped_early: bool,
    pub end: RouteEnd,
}

impl TraceRecord {
    pub fn from_trace(trace: &RouteTrace, sample: u64, phase: &str, task: usize, epoch: usize) -> Self {
        Self {
            sample,
            phase: phase.to_string(),
            task,
            epoch,
            levels: trace
                .levels
                .iter()
                .map(|l| LevelRecord {
                    unit: l.unit,
                    residue_norm: l.residue_norm,
                    projection_norm: l.projection_norm,
                })
                .collect(),
            stopped_early: trace.stopped_early(),
            end: trace.end,
        }
    }

    pub fn unit_ids(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.unit).collect()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLogError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

/// Parses every line; bad lines are collected rather than aborting.
pub fn parse_trace_log<R: BufRead>(reader: R) -> std::io::Result<(Vec<TraceRecord>, Vec<TraceLogError>)> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => errors.push(TraceLogError { line: i + 1, message: e.to_string() }),
        }
    }
    Ok((records, errors))
}
