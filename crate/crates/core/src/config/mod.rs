//! Turning a raw task objective into a populated [`TaskSpec`].

mod infer;
mod markers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricKind, MetricSpec, SimilarityBackend};
use crate::providers::{estimate_tokens, ProviderError};

pub use infer::{
    classify_task, classify_by_rules, default_exemplars, infer_field_schema, infer_task_spec,
    load_exemplars, select_technique, InferOptions, TechniqueSelection, TechniqueSelectionExemplar,
};
pub use markers::{parse_structured_input, FewShotExample, MarkedInput, Marker, EXAMPLE_ARROW, PAIR_DELIMITER};

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("teacher reply for field extraction unparseable: {0}")]
    ExtractionParse(String),

    #[error("task classification failed: {0}")]
    Classification(String),

    #[error("field schema error: {0}")]
    Schema(String),

    #[error("technique selection failed: {0}")]
    Selection(String),

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl ConfigError {
    pub fn name(&self) -> &'static str {
        match self {
            ConfigError::ExtractionParse(_) => "ExtractionParseError",
            ConfigError::Classification(_) => "ClassificationError",
            ConfigError::Schema(_) => "SchemaError",
            ConfigError::Selection(_) => "SelectionError",
            ConfigError::Invalid(_) => "InvalidConfig",
            ConfigError::Provider(e) => e.name(),
        }
    }
}

/// Closed task taxonomy. `Other` carries a free-text label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TaskType {
    Classification,
    Qa,
    Generation,
    Summarization,
    Translation,
    MathReasoning,
    CodeGeneration,
    Other(String),
}

impl TaskType {
    /// The fixed members, `other` excluded.
    pub const NAMED: [TaskType; 7] = [
        TaskType::Classification,
        TaskType::Qa,
        TaskType::Generation,
        TaskType::Summarization,
        TaskType::Translation,
        TaskType::MathReasoning,
        TaskType::CodeGeneration,
    ];

    pub fn name(&self) -> &str {
        match self {
            TaskType::Classification => "classification",
            TaskType::Qa => "qa",
            TaskType::Generation => "generation",
            TaskType::Summarization => "summarization",
            TaskType::Translation => "translation",
            TaskType::MathReasoning => "math_reasoning",
            TaskType::CodeGeneration => "code_generation",
            TaskType::Other(_) => "other",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskType::Other(label) if !label.is_empty() => write!(f, "other:{label}"),
            t => f.write_str(t.name()),
        }
    }
}

impl FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(t) = TaskType::NAMED.iter().find(|t| t.name() == s) {
            return Ok(t.clone());
        }
        match s.split_once(':') {
            None if s == "other" => Ok(TaskType::Other(String::new())),
            Some(("other", label)) => Ok(TaskType::Other(label.trim().to_string())),
            _ => Err(format!("unknown task type {s:?}")),
        }
    }
}

impl From<TaskType> for String {
    fn from(t: TaskType) -> Self {
        t.to_string()
    }
}

impl TryFrom<String> for TaskType {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Simple,
    Moderate,
    Complex,
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Complexity::Simple => "simple",
            Complexity::Moderate => "moderate",
            Complexity::Complex => "complex",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptingTechnique {
    Predict,
    ChainOfThought,
    ProgramOfThought,
    React,
}

impl PromptingTechnique {
    pub const ALL: [PromptingTechnique; 4] = [
        PromptingTechnique::Predict,
        PromptingTechnique::ChainOfThought,
        PromptingTechnique::ProgramOfThought,
        PromptingTechnique::React,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptingTechnique::Predict => "predict",
            PromptingTechnique::ChainOfThought => "chain_of_thought",
            PromptingTechnique::ProgramOfThought => "program_of_thought",
            PromptingTechnique::React => "react",
        }
    }
}

impl fmt::Display for PromptingTechnique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptingTechnique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("{s:?} is not one of predict, chain_of_thought, program_of_thought, react"))
    }
}

/// Ordered input and output field names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSchema {
    pub input_fields: Vec<String>,
    pub output_fields: Vec<String>,
}

impl FieldSchema {
    pub fn new<I: Into<String>, O: Into<String>>(
        inputs: impl IntoIterator<Item = I>,
        outputs: impl IntoIterator<Item = O>,
    ) -> Result<Self, ConfigError> {
        let schema = Self {
            input_fields: inputs.into_iter().map(Into::into).collect(),
            output_fields: outputs.into_iter().map(Into::into).collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.input_fields.is_empty() || self.output_fields.is_empty() {
            return Err(ConfigError::Schema("input and output field lists must be non-empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in self.fields() {
            if f.trim().is_empty() {
                return Err(ConfigError::Schema("empty field name".into()));
            }
            if !seen.insert(f) {
                return Err(ConfigError::Schema(format!("field {f:?} appears twice")));
            }
        }
        Ok(())
    }

    /// Inputs then outputs.
    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.input_fields.iter().chain(&self.output_fields).map(String::as_str)
    }

    pub fn is_output(&self, name: &str) -> bool {
        self.output_fields.iter().any(|f| f == name)
    }
}

/// The parsed and inferred task objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub raw_input: String,
    pub task: String,
    pub instructions: String,
    pub rules: String,
    #[serde(default)]
    pub few_shot_examples: Vec<FewShotExample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<String>,
    #[serde(default)]
    pub task_type: Option<TaskType>,
    #[serde(default)]
    pub complexity: Option<Complexity>,
    #[serde(default)]
    pub schema: Option<FieldSchema>,
    #[serde(default)]
    pub technique: Option<PromptingTechnique>,
    /// Digest of the exemplar set the technique was chosen against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique_audit: Option<String>,
    /// Prompt feedback, injected into later meta and proposal prompts.
    #[serde(default)]
    pub feedback_notes: Vec<String>,
    /// Data feedback, injected into later generation prompts.
    #[serde(default)]
    pub avoid_notes: Vec<String>,
}

impl TaskSpec {
    /// Spec carrying only marker-derived fields.
    pub fn from_marked(raw: &str, marked: &MarkedInput) -> Self {
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let task = if marked.task.is_empty() && !marked.has_markers() {
            String::new()
        } else {
            marked.task.clone()
        };
        Self {
            raw_input: raw.to_string(),
            task,
            instructions: marked.instructions.clone(),
            rules: marked.rules.clone(),
            few_shot_examples: marked.few_shot_examples(),
            context: opt(&marked.context),
            question: opt(&marked.question),
            output_format: opt(&marked.output_format),
            tools: opt(&marked.tools),
            task_type: None,
            complexity: None,
            schema: None,
            technique: None,
            technique_audit: None,
            feedback_notes: Vec::new(),
            avoid_notes: Vec::new(),
        }
    }

    pub fn to_marked(&self) -> MarkedInput {
        MarkedInput {
            preamble: String::new(),
            task: self.task.clone(),
            instructions: self.instructions.clone(),
            rules: self.rules.clone(),
            few_shot_text: self
                .few_shot_examples
                .iter()
                .map(FewShotExample::to_line)
                .collect::<Vec<_>>()
                .join("\n"),
            context: self.context.clone().unwrap_or_default(),
            question: self.question.clone().unwrap_or_default(),
            output_format: self.output_format.clone().unwrap_or_default(),
            tools: self.tools.clone().unwrap_or_default(),
        }
    }

    pub fn to_marker_text(&self) -> String {
        self.to_marked().to_marker_text()
    }

    /// Task description text, falling back to the raw objective.
    pub fn task_text(&self) -> &str {
        if self.task.trim().is_empty() {
            self.raw_input.trim()
        } else {
            self.task.trim()
        }
    }

    /// The user's own instruction, before any optimization. Candidate 0 of
    /// every search.
    pub fn baseline_instruction(&self) -> String {
        let mut parts = vec![self.task_text().to_string()];
        if !self.instructions.trim().is_empty() {
            parts.push(self.instructions.trim().to_string());
        }
        if !self.rules.trim().is_empty() {
            parts.push(format!("Rules: {}", self.rules.trim()));
        }
        if let Some(f) = self.output_format.as_deref().filter(|f| !f.trim().is_empty()) {
            parts.push(format!("Output format: {}", f.trim()));
        }
        parts.join("\n")
    }

    /// Plain-text summary used inside teacher prompts.
    pub fn describe(&self) -> String {
        let mut out = format!("Task: {}\n", self.task_text());
        for (label, v) in [
            ("Instructions", Some(self.instructions.as_str())),
            ("Rules", Some(self.rules.as_str())),
            ("Context", self.context.as_deref()),
            ("Question", self.question.as_deref()),
            ("Output format", self.output_format.as_deref()),
            ("Tools", self.tools.as_deref()),
        ] {
            if let Some(v) = v.filter(|v| !v.trim().is_empty()) {
                out.push_str(&format!("{label}: {}\n", v.trim()));
            }
        }
        if let Some(t) = &self.task_type {
            out.push_str(&format!("Task type: {t}\n"));
        }
        out
    }

    /// Feedback section for meta/proposal prompts; empty when there is none.
    pub fn feedback_section(&self) -> String {
        if self.feedback_notes.is_empty() {
            return String::new();
        }
        let mut s = String::from("\nUser feedback to address:\n");
        for n in &self.feedback_notes {
            s.push_str("- ");
            s.push_str(n);
            s.push('\n');
        }
        s
    }
}

/// Complexity heuristic: complex when instructions plus rules run past 40
/// tokens or the task is math or code, simple otherwise.
pub fn assess_complexity(spec: &TaskSpec) -> Complexity {
    let long = estimate_tokens(&spec.instructions) + estimate_tokens(&spec.rules) > 40;
    let heavy = matches!(spec.task_type, Some(TaskType::MathReasoning | TaskType::CodeGeneration));
    if long || heavy {
        Complexity::Complex
    } else {
        Complexity::Simple
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    QuickSearch,
    ModerateSearch,
    HeavySearch,
}

impl FromStr for SearchStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quick_search" | "quick" => Ok(SearchStrategy::QuickSearch),
            "moderate_search" | "moderate" => Ok(SearchStrategy::ModerateSearch),
            "heavy_search" | "heavy" => Ok(SearchStrategy::HeavySearch),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerBackend {
    SimpleMetaPrompt,
    StructuredSearch,
}

impl FromStr for OptimizerBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple_meta_prompt" | "meta" => Ok(OptimizerBackend::SimpleMetaPrompt),
            "structured_search" | "search" => Ok(OptimizerBackend::StructuredSearch),
            _ => Err(format!("unknown backend {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub backend: OptimizerBackend,
    pub strategy: SearchStrategy,
    pub n_samples: usize,
    pub n_trials: usize,
    pub n_demos: usize,
    pub n_instruction_candidates: usize,
    pub minibatch_size: usize,
    pub train_ratio: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("n_samples", self.n_samples),
            ("n_trials", self.n_trials),
            ("n_instruction_candidates", self.n_instruction_candidates),
            ("minibatch_size", self.minibatch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{name} must be positive")));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "train_ratio {} outside (0, 1)",
                self.train_ratio
            )));
        }
        Ok(())
    }
}

pub fn strategy_defaults(strategy: SearchStrategy) -> OptimizerConfig {
    let (n_samples, n_trials) = match strategy {
        SearchStrategy::QuickSearch => (30, 10),
        SearchStrategy::ModerateSearch => (100, 15),
        SearchStrategy::HeavySearch => (300, 30),
    };
    OptimizerConfig {
        backend: OptimizerBackend::SimpleMetaPrompt,
        strategy,
        n_samples,
        n_trials,
        n_demos: 4,
        n_instruction_candidates: 5,
        minibatch_size: 5,
        train_ratio: 0.2,
    }
}

/// Task-type to metric mapping.
pub fn select_metric(task_type: &TaskType) -> MetricSpec {
    let spec = |kind, penalty, backend| MetricSpec {
        primary_metric: kind,
        length_penalty_enabled: penalty,
        similarity_backend: backend,
    };
    match task_type {
        TaskType::Classification => spec(MetricKind::MacroF1, true, SimilarityBackend::Lexical),
        TaskType::Qa => spec(MetricKind::SimilarityPlusExactMatch, false, SimilarityBackend::Lexical),
        TaskType::Summarization | TaskType::Generation => {
            spec(MetricKind::Similarity, false, SimilarityBackend::Lexical)
        }
        TaskType::Translation => spec(MetricKind::Similarity, false, SimilarityBackend::Embedding),
        TaskType::MathReasoning => spec(MetricKind::ExactMatch, false, SimilarityBackend::Lexical),
        TaskType::CodeGeneration => spec(MetricKind::TokenF1, false, SimilarityBackend::Lexical),
        TaskType::Other(label) => {
            tracing::warn!(label = %label, "no metric mapping for task type other; using token_f1");
            spec(MetricKind::TokenF1, false, SimilarityBackend::Lexical)
        }
    }
}
