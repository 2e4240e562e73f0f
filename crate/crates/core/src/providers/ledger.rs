use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Cumulative usage for one model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub call_count: u64,
    pub wall_ms: u64,
}

/// Per-model call accounting shared by every client of a run.
#[derive(Debug, Default)]
pub struct UsageLedger {
    entries: Mutex<BTreeMap<String, ModelUsage>>,
}

impl UsageLedger {
    pub fn record(&self, key: &str, prompt_tokens: u64, completion_tokens: u64, wall_ms: u64) {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let usage = entries.entry(key.to_string()).or_default();
        usage.prompt_tokens += prompt_tokens;
        usage.completion_tokens += completion_tokens;
        usage.call_count += 1;
        usage.wall_ms += wall_ms;
    }

    pub fn get(&self, key: &str) -> Option<ModelUsage> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).get(key).copied()
    }

    /// Calls recorded under `key`, zero when absent.
    pub fn calls(&self, key: &str) -> u64 {
        self.get(key).map_or(0, |u| u.call_count)
    }

    pub fn snapshot(&self) -> BTreeMap<String, ModelUsage> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
