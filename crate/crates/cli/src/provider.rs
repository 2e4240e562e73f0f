//! Turning command-line or request provider choices into an [`Engine`].

use std::path::PathBuf;
use std::sync::Arc;

use promptloom_core::providers::{LlmClient, MockProvider, ModelConfig, ModelRole, ProviderError, ProviderKind, UsageLedger};
use promptloom_core::Engine;
use serde::{Deserialize, Serialize};

/// Provider selection shared by both models. A mock script implies the mock
/// provider; teacher and student then answer from the same script.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderSettings {
    #[serde(default)]
    pub provider: Option<ProviderKind>,
    #[serde(default)]
    pub teacher_model: Option<String>,
    #[serde(default)]
    pub student_model: Option<String>,
    #[serde(default)]
    pub api_base: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
}

/// Per-request model names layered over the service's settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    #[serde(default)]
    pub teacher: Option<String>,
    #[serde(default)]
    pub student: Option<String>,
}

const DEFAULT_OPENAI_MODEL: &str = "gpt-4o-mini";
const DEFAULT_ANTHROPIC_MODEL: &str = "claude-3-5-haiku-latest";

impl ProviderSettings {
    pub fn mock(script: impl Into<PathBuf>) -> Self {
        Self { provider: Some(ProviderKind::Mock), mock_script: Some(script.into()), ..Self::default() }
    }

    pub fn kind(&self) -> ProviderKind {
        match (self.provider, &self.mock_script) {
            (Some(k), _) => k,
            (None, Some(_)) => ProviderKind::Mock,
            (None, None) => ProviderKind::OpenaiCompatible,
        }
    }

    pub fn with_overrides(&self, o: &ModelOverrides) -> Self {
        let mut s = self.clone();
        if let Some(m) = &o.teacher {
            s.teacher_model = Some(m.clone());
        }
        if let Some(m) = &o.student {
            s.student_model = Some(m.clone());
        }
        s
    }

    fn model_config(&self, role: ModelRole) -> ModelConfig {
        let name = match role {
            ModelRole::Teacher => self.teacher_model.clone(),
            ModelRole::Student => self.student_model.clone(),
        };
        let mut cfg = match self.kind() {
            ProviderKind::Mock => ModelConfig::mock(role),
            ProviderKind::AnthropicCompatible => ModelConfig::anthropic(DEFAULT_ANTHROPIC_MODEL, role),
            ProviderKind::OpenaiCompatible => ModelConfig::openai(DEFAULT_OPENAI_MODEL, role),
            ProviderKind::LocalEndpoint => {
                let mut c = ModelConfig::openai(DEFAULT_OPENAI_MODEL, role);
                c.provider_id = ProviderKind::LocalEndpoint;
                c.api_base = "http://localhost:8000/v1".into();
                c.api_key_ref = String::new();
                c
            }
        };
        if let Some(n) = name {
            cfg.model_name = n;
        }
        if let Some(b) = &self.api_base {
            cfg.api_base = b.clone();
        }
        if let Some(k) = &self.api_key_env {
            cfg.api_key_ref = k.clone();
        }
        cfg
    }

    pub fn build_engine(&self) -> Result<Engine, ProviderError> {
        let ledger = Arc::new(UsageLedger::default());
        let teacher_cfg = self.model_config(ModelRole::Teacher);
        let student_cfg = self.model_config(ModelRole::Student);
        let (teacher, student) = if self.kind() == ProviderKind::Mock {
            let mock = match &self.mock_script {
                Some(path) => MockProvider::from_json_file(path)?,
                None => MockProvider::default(),
            };
            (
                LlmClient::mock(teacher_cfg, mock.clone(), ledger.clone()),
                LlmClient::mock(student_cfg, mock, ledger),
            )
        } else {
            (LlmClient::remote(teacher_cfg, ledger.clone())?, LlmClient::remote(student_cfg, ledger)?)
        };
        Ok(Engine::new(teacher, student))
    }
}
