//! Whole-scenario runs.

use thiserror::Error;

use super::metrics::{MetricsRecord, Summary};
use super::scenario::{Scenario, ScenarioError};
use super::trace::TraceHash;
use crate::world::WorldError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunError {
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
    #[error(transparent)]
    Abort(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace_hash: TraceHash,
    pub metrics: Vec<MetricsRecord>,
    pub summary: Summary,
}

impl RunOutput {
    /// One JSON record per tick, then `{"summary": ...}` on the last line.
    pub fn metrics_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
            out.push('\n');
        }
        let tail = serde_json::json!({ "summary": self.summary });
        out.push_str(&tail.to_string());
        out.push('\n');
        out
    }
}

/// Executes exactly `horizon` ticks of `s`.
pub fn run(s: &Scenario) -> Result<RunOutput, RunError> {
    let mut world = s.build()?;
    world.run(s.horizon)?;
    Ok(RunOutput {
        trace_hash: world.trace_hash(),
        metrics: world.metrics().to_vec(),
        summary: world.summary(),
    })
}
