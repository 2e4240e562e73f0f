use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{estimate_tokens, AttemptError, Backend, CompletionRequest, CompletionResponse, ModelConfig, ProviderError};

/// One scripted `(match_text, response_text)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match")]
    pub match_text: String,
    pub response: String,
}

/// Computed reply hook consulted after the script table and before the hash
/// fallback. Returning `None` defers to the fallback.
pub type Responder = Arc<dyn Fn(&CompletionRequest) -> Option<String> + Send + Sync>;

/// Deterministic offline provider.
///
/// Lookup order on the request's `user_text`: exact match against the
/// script, then the first script entry (in script order) whose key is a
/// substring, then the optional responder, then a hash-derived fallback.
#[derive(Clone, Default)]
pub struct MockProvider {
    entries: Vec<MockEntry>,
    exact: HashMap<String, usize>,
    responder: Option<Responder>,
    log: Arc<Mutex<Vec<CompletionRequest>>>,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider")
            .field("entries", &self.entries.len())
            .field("responder", &self.responder.is_some())
            .finish()
    }
}

impl MockProvider {
    pub fn script<I, K, V>(pairs: I) -> Result<Self, ProviderError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let entries = pairs
            .into_iter()
            .map(|(k, v)| MockEntry { match_text: k.into(), response: v.into() })
            .collect();
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<MockEntry>) -> Result<Self, ProviderError> {
        let mut exact = HashMap::with_capacity(entries.len());
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.match_text.as_str()) {
                return Err(ProviderError::DuplicateKey(e.match_text.clone()));
            }
            exact.insert(e.match_text.clone(), i);
        }
        Ok(Self { entries, exact, responder: None, log: Arc::default() })
    }

    /// Load a JSON array of `{"match": ..., "response": ...}` objects.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::InvalidConfig(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        Self::from_json_str(&raw)
    }

    pub fn from_json_str(raw: &str) -> Result<Self, ProviderError> {
        let entries: Vec<MockEntry> = serde_json::from_str(raw)
            .map_err(|e| ProviderError::InvalidConfig(format!("bad mock script: {e}")))?;
        Self::from_entries(entries)
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Arc::new(f));
        self
    }

    /// Requests received so far, in arrival order. Clones share the log.
    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Reply text plus whether it came from the script or responder.
    pub fn respond(&self, request: &CompletionRequest) -> (String, bool) {
        let input = &request.user_text;
        if let Some(&i) = self.exact.get(input) {
            return (self.entries[i].response.clone(), true);
        }
        if let Some(e) = self.entries.iter().find(|e| input.contains(&e.match_text)) {
            return (e.response.clone(), true);
        }
        if let Some(text) = self.responder.as_ref().and_then(|f| f(request)) {
            return (text, true);
        }
        (fallback_text(input), false)
    }
}

fn fallback_text(input: &str) -> String {
    let digest = Sha256::digest(input.as_bytes());
    format!("mock-{}", hex::encode(&digest[..8]))
}

impl Backend for MockProvider {
    fn send(
        &self,
        _config: &ModelConfig,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, AttemptError> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(request.clone());
        let (text, scripted) = self.respond(request);
        let (prompt_tokens, completion_tokens) = if scripted {
            let system = request.system_text.as_deref().map_or(0, estimate_tokens);
            ((estimate_tokens(&request.user_text) + system) as u64, estimate_tokens(&text) as u64)
        } else {
            (0, 0)
        };
        Ok(CompletionResponse { text, prompt_tokens, completion_tokens, latency_ms: 0 })
    }

    /// Hashed character-trigram counts; deterministic and offline.
    fn embed(&self, _config: &ModelConfig, text: &str) -> Result<Vec<f64>, AttemptError> {
        const DIMS: usize = 256;
        let mut v = vec![0.0; DIMS];
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let grams: Vec<String> = if chars.len() < 3 {
            vec![chars.iter().collect()]
        } else {
            chars.windows(3).map(|w| w.iter().collect()).collect()
        };
        for g in grams {
            let d = Sha256::digest(g.as_bytes());
            let slot = u16::from_le_bytes([d[0], d[1]]) as usize % DIMS;
            v[slot] += 1.0;
        }
        Ok(v)
    }
}
