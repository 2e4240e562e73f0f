//! End-to-end runs: configuration, synthetic data, optimization and session
//! creation, plus feedback-driven re-optimization.

use serde::{Deserialize, Serialize};

use crate::config::{
    assess_complexity, classify_task, default_exemplars, infer_field_schema, infer_task_spec,
    parse_structured_input, select_metric, select_technique, strategy_defaults, ConfigError, InferOptions,
    OptimizerBackend, OptimizerConfig, SearchStrategy, TaskSpec, TaskType, TechniqueSelectionExemplar,
};
use crate::error::Result;
use crate::metrics::{MetricSpec, ObjectiveConfig, StudentScorer, DEFAULT_LAMBDA};
use crate::optimizer::{optimize, OptimizationResult};
use crate::providers::LlmClient;
use crate::session::{self, PromptVersion, Session, SessionConfigs, SessionStore};
use crate::synthgen::{generate_dataset, split_dataset, DatasetSplit, SyntheticDataset};

/// Per-run choices layered over the strategy defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub strategy: SearchStrategy,
    #[serde(default)]
    pub backend: Option<OptimizerBackend>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub n_trials: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { strategy: SearchStrategy::QuickSearch, backend: None, lambda: None, seed: 0, n_samples: None, n_trials: None }
    }
}

impl RunOptions {
    pub fn optimizer_config(&self) -> OptimizerConfig {
        let mut cfg = strategy_defaults(self.strategy);
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(n) = self.n_samples {
            cfg.n_samples = n;
        }
        if let Some(n) = self.n_trials {
            cfg.n_trials = n;
        }
        cfg
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig::with_lambda(self.lambda.unwrap_or(DEFAULT_LAMBDA))
    }
}

/// Everything one optimization run produced, before it becomes a session.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub spec: TaskSpec,
    pub dataset: SyntheticDataset,
    pub split: DatasetSplit,
    pub result: OptimizationResult,
    pub configs: SessionConfigs,
}

/// Teacher and student clients plus the configuration inputs shared by runs.
#[derive(Clone)]
pub struct Engine {
    pub teacher: LlmClient,
    pub student: LlmClient,
    pub exemplars: Vec<TechniqueSelectionExemplar>,
    pub infer: InferOptions,
}

impl Engine {
    pub fn new(teacher: LlmClient, student: LlmClient) -> Self {
        Self { teacher, student, exemplars: default_exemplars(), infer: InferOptions::default() }
    }

    /// Marker parsing, teacher inference of missing fields, classification,
    /// complexity, field schema and technique.
    pub fn configure(&self, raw: &str) -> Result<TaskSpec> {
        if raw.trim().is_empty() {
            return Err(ConfigError::Invalid("raw_input must not be empty".into()).into());
        }
        let marked = parse_structured_input(raw);
        let mut spec = infer_task_spec(raw, &marked, &self.teacher, self.infer)?;
        classify_task(&mut spec, &self.teacher)?;
        spec.complexity = Some(assess_complexity(&spec));
        spec.schema = Some(infer_field_schema(&spec, &self.teacher)?);
        select_technique(&mut spec, &self.exemplars, &self.teacher)?;
        Ok(spec)
    }

    pub fn metric_for(spec: &TaskSpec) -> MetricSpec {
        select_metric(spec.task_type.as_ref().unwrap_or(&TaskType::Other(String::new())))
    }

    /// Classification splits are stratified on the first output field.
    pub fn split(spec: &TaskSpec, dataset: &SyntheticDataset, cfg: &OptimizerConfig, seed: u64) -> Result<DatasetSplit> {
        let stratify = match spec.task_type {
            Some(TaskType::Classification) => dataset.schema.output_fields.first().map(String::as_str),
            _ => None,
        };
        Ok(split_dataset(dataset, cfg.train_ratio, stratify, seed)?)
    }

    pub fn run(&self, raw: &str, opts: &RunOptions) -> Result<RunOutput> {
        let cfg = opts.optimizer_config();
        cfg.validate()?;
        let obj = opts.objective();
        obj.validate().map_err(ConfigError::Invalid)?;

        let spec = self.configure(raw)?;
        let schema = spec.schema.clone().expect("configure assigns a schema");
        let budget = self.teacher.config().max_tokens as usize;
        let dataset = generate_dataset(&spec, &schema, cfg.n_samples, &self.teacher, budget)?;
        let split = Self::split(&spec, &dataset, &cfg, opts.seed)?;
        let metric = Self::metric_for(&spec);
        let scorer = StudentScorer::new(self.student.clone(), metric);
        let result = optimize(&spec, &split, &cfg, &obj, &self.teacher, &scorer, opts.seed)?;
        let configs = SessionConfigs {
            optimizer: cfg,
            objective: obj,
            teacher: self.teacher.config().clone(),
            student: self.student.config().clone(),
            metric,
            seed: opts.seed,
        };
        Ok(RunOutput { spec, dataset, split, result, configs })
    }

    /// Runs and stores a session under `id` (a fresh UUID when `None`).
    pub fn run_session(&self, raw: &str, opts: &RunOptions, store: &SessionStore, id: Option<String>) -> Result<Session> {
        let out = self.run(raw, opts)?;
        let id = id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let session = Session::new(id, out.spec, out.dataset, out.split, &out.result, out.configs);
        store.persist(&session)?;
        Ok(session)
    }

    /// Integrates any unresolved feedback, then re-optimizes.
    pub fn reoptimize(&self, store: &SessionStore, session: &mut Session) -> Result<PromptVersion> {
        if session.unresolved_count() > 0 {
            session::integrate_feedback(store, session)?;
        }
        let scorer = StudentScorer::new(self.student.clone(), session.configs.metric);
        Ok(session::reoptimize(store, session, &self.teacher, &scorer)?)
    }
}
