//! Response documents built from stored sessions.

use promptloom_core::session::Session;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Outcome of an optimization, read off the session's versions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResponse {
    pub session_id: String,
    pub best_prompt_text: String,
    pub baseline_score: f64,
    pub best_score: f64,
    pub prompt_length: usize,
    pub dataset_size: usize,
    pub trials_run: usize,
}

impl OptimizeResponse {
    /// Version 0 is the baseline and the last version the current best.
    pub fn of(session: &Session) -> Self {
        let baseline = session.versions.first().expect("sessions hold a baseline version");
        let best = session.latest().expect("sessions hold a baseline version");
        Self {
            session_id: session.id.clone(),
            best_prompt_text: best.prompt_text.clone(),
            baseline_score: baseline.evaluation.combined,
            best_score: best.evaluation.combined,
            prompt_length: best.evaluation.prompt_length,
            dataset_size: session.dataset.examples.len(),
            trials_run: session.runs.last().map_or(0, |r| r.trials.len()),
        }
    }
}

/// Full session state including the event log, which the store keeps
/// beside the state document.
pub fn session_document(session: &Session) -> Value {
    let mut doc = serde_json::to_value(session).expect("sessions serialize");
    doc["event_log"] = serde_json::to_value(&session.event_log).expect("events serialize");
    doc
}

pub fn dataset_document(session: &Session) -> Value {
    serde_json::json!({
        "session_id": session.id,
        "schema": session.dataset.schema,
        "examples": session.dataset.examples,
        "generation_log": session.dataset.generation_log,
        "split": {
            "train": session.split.train.iter().map(|e| &e.id).collect::<Vec<_>>(),
            "val": session.split.val.iter().map(|e| &e.id).collect::<Vec<_>>(),
        },
    })
}
