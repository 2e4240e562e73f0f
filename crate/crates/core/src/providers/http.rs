//! Remote chat-completion transports (OpenAI-style and Anthropic-style wire
//! formats).

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{AttemptError, Backend, CompletionRequest, CompletionResponse, ModelConfig, ProviderError, ProviderKind};

const ANTHROPIC_VERSION: &str = "2023-06-01";

pub struct HttpBackend {
    api_key: Option<String>,
    timeout: Duration,
    // Built lazily so construction never happens on an async executor thread.
    client: OnceLock<Result<Client, String>>,
}

impl HttpBackend {
    pub fn new(api_key: Option<String>) -> Result<Self, ProviderError> {
        Ok(Self { api_key, timeout: Duration::from_secs(120), client: OnceLock::new() })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn client(&self) -> Result<&Client, AttemptError> {
        self.client
            .get_or_init(|| {
                Client::builder().timeout(self.timeout).build().map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| {
                AttemptError::Fatal(ProviderError::Provider { status: None, message: e.clone() })
            })
    }

    fn post(&self, config: &ModelConfig, path: &str, body: &Value) -> Result<Value, AttemptError> {
        let url = format!("{}/{}", config.api_base.trim_end_matches('/'), path);
        let mut req = self.client()?.post(&url).json(body);
        match config.provider_id {
            ProviderKind::AnthropicCompatible => {
                req = req.header("anthropic-version", ANTHROPIC_VERSION);
                if let Some(key) = &self.api_key {
                    req = req.header("x-api-key", key);
                }
            }
            _ => {
                if let Some(key) = &self.api_key {
                    req = req.bearer_auth(key);
                }
            }
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Timeout
            } else {
                AttemptError::Transient { status: None, message: e.to_string() }
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| AttemptError::Transient {
            status: Some(status.as_u16()),
            message: e.to_string(),
        })?;
        classify_status(status, &text)?;
        serde_json::from_str(&text).map_err(|e| {
            AttemptError::Fatal(ProviderError::Provider {
                status: Some(status.as_u16()),
                message: format!("response is not JSON: {e}"),
            })
        })
    }
}

fn classify_status(status: StatusCode, body: &str) -> Result<(), AttemptError> {
    if status.is_success() {
        return Ok(());
    }
    let message = body.chars().take(300).collect::<String>();
    Err(match status.as_u16() {
        401 | 403 => AttemptError::Fatal(ProviderError::Auth(message)),
        408 => AttemptError::Timeout,
        429 => AttemptError::RateLimited,
        s if s >= 500 => AttemptError::Transient { status: Some(s), message },
        s => AttemptError::Fatal(ProviderError::Provider { status: Some(s), message }),
    })
}

fn malformed(what: &str) -> AttemptError {
    AttemptError::Fatal(ProviderError::Provider {
        status: None,
        message: format!("malformed response: missing {what}"),
    })
}

impl Backend for HttpBackend {
    fn send(
        &self,
        config: &ModelConfig,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, AttemptError> {
        let started = Instant::now();
        let temperature = request.temperature(config);
        let max_tokens = request.max_tokens(config);
        let (text, prompt_tokens, completion_tokens) = match config.provider_id {
            ProviderKind::AnthropicCompatible => {
                let mut body = json!({
                    "model": config.model_name,
                    "max_tokens": max_tokens,
                    "temperature": temperature,
                    "messages": [{"role": "user", "content": request.user_text}],
                });
                if let Some(system) = &request.system_text {
                    body["system"] = json!(system);
                }
                let v = self.post(config, "messages", &body)?;
                let blocks = v["content"].as_array().ok_or_else(|| malformed("content"))?;
                let text: String = blocks
                    .iter()
                    .filter(|b| b["type"] == "text")
                    .filter_map(|b| b["text"].as_str())
                    .collect();
                (
                    text,
                    v["usage"]["input_tokens"].as_u64().unwrap_or(0),
                    v["usage"]["output_tokens"].as_u64().unwrap_or(0),
                )
            }
            ProviderKind::OpenaiCompatible | ProviderKind::LocalEndpoint => {
                let mut messages = Vec::new();
                if let Some(system) = &request.system_text {
                    messages.push(json!({"role": "system", "content": system}));
                }
                messages.push(json!({"role": "user", "content": request.user_text}));
                let body = json!({
                    "model": config.model_name,
                    "messages": messages,
                    "temperature": temperature,
                    "max_tokens": max_tokens,
                });
                let v = self.post(config, "chat/completions", &body)?;
                let text = v["choices"][0]["message"]["content"]
                    .as_str()
                    .ok_or_else(|| malformed("choices[0].message.content"))?
                    .to_string();
                (
                    text,
                    v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
                    v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
                )
            }
            ProviderKind::Mock => {
                return Err(AttemptError::Fatal(ProviderError::InvalidConfig(
                    "mock provider routed to HTTP backend".into(),
                )))
            }
        };
        Ok(CompletionResponse {
            text,
            prompt_tokens,
            completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn embed(&self, config: &ModelConfig, text: &str) -> Result<Vec<f64>, AttemptError> {
        if config.provider_id == ProviderKind::AnthropicCompatible {
            return Err(AttemptError::Fatal(ProviderError::Provider {
                status: None,
                message: "anthropic-compatible providers expose no embedding endpoint".into(),
            }));
        }
        let model = config.embedding_model.as_deref().unwrap_or("text-embedding-3-small");
        let v = self.post(config, "embeddings", &json!({"model": model, "input": text}))?;
        v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| malformed("data[0].embedding"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| malformed("numeric embedding")))
            .collect()
    }
}
