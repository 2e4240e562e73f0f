//! Versioned optimization sessions and the feedback loop.
//!
//! A session holds the task spec, dataset, split, a chain of prompt versions
//! and offset-anchored feedback. Feedback is integrated into the spec
//! (prompt notes and data-avoidance notes) and re-optimization appends a new
//! version whose parent is the previous one.

mod store;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{OptimizerBackend, OptimizerConfig, TaskSpec};
use crate::metrics::{EvaluationResult, ExampleScorer, MetricSpec, ObjectiveConfig};
use crate::optimizer::{optimize, CandidatePrompt, OptimizationResult, OptimizerError, TrialRecord};
use crate::providers::{LlmClient, ModelConfig, ProviderError};
use crate::reply::{ask_parsed, first_fenced, Asked};
use crate::synthgen::{split_dataset, DatasetSplit, SynthError, SyntheticDataset};

pub use store::{SessionStore, SessionSummary, DATASET_FILE, EVENTS_FILE, SESSION_FILE};

/// On-disk format version of `session.json`.
pub const SCHEMA_VERSION: u32 = 1;
/// Per-example scores below this count as failures for auto feedback.
pub const LOW_SCORE: f64 = 0.5;
/// Worst per-example records shown to the judge.
pub const JUDGE_RECORDS: usize = 5;

#[derive(Error, Debug)]
pub enum SessionError {
    #[error("session {0:?} not found")]
    NotFound(String),

    #[error("storage failure: {0}")]
    Storage(String),

    #[error("session file has schema version {found:?}, expected {expected}")]
    SchemaVersionMismatch { found: Option<u64>, expected: u32 },

    #[error("offsets [{start}, {end}) invalid for a target of {len} characters")]
    OffsetOutOfRange { start: usize, end: usize, len: usize },

    #[error("unknown feedback target {0:?}")]
    UnknownTarget(String),

    #[error("selected text {selected:?} does not match the target text {actual:?} at those offsets")]
    SelectionMismatch { selected: String, actual: String },

    #[error("no unresolved feedback to integrate")]
    NoUnresolvedFeedback,

    #[error("no integrated feedback since the last optimization")]
    ReoptimizationNotRequired,

    #[error("auto feedback needs a low-scoring example or an error log")]
    NothingToJudge,

    #[error("judge reply had no usable fenced block: {0}")]
    JudgeParse(String),

    #[error(transparent)]
    Synth(#[from] SynthError),

    #[error(transparent)]
    Optimizer(#[from] OptimizerError),

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl SessionError {
    pub fn name(&self) -> &'static str {
        match self {
            SessionError::NotFound(_) => "NotFound",
            SessionError::Storage(_) => "StorageError",
            SessionError::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            SessionError::OffsetOutOfRange { .. } => "OffsetOutOfRange",
            SessionError::UnknownTarget(_) => "UnknownTarget",
            SessionError::SelectionMismatch { .. } => "SelectionMismatch",
            SessionError::NoUnresolvedFeedback => "NoUnresolvedFeedback",
            SessionError::ReoptimizationNotRequired => "ReoptimizationNotRequired",
            SessionError::NothingToJudge => "NothingToJudge",
            SessionError::JudgeParse(_) => "JudgeParseError",
            SessionError::Synth(e) => e.name(),
            SessionError::Optimizer(e) => e.name(),
            SessionError::Provider(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub index: usize,
    pub prompt: CandidatePrompt,
    /// Rendered prompt text; feedback offsets index into this string.
    pub prompt_text: String,
    pub evaluation: EvaluationResult,
    pub parent: Option<usize>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackTarget {
    PromptVersion,
    SyntheticExample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    User,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub id: String,
    pub target: FeedbackTarget,
    /// Version index (as text) or example id.
    pub target_ref: String,
    pub selected_text: String,
    pub start_offset: usize,
    pub end_offset: usize,
    pub comment: String,
    pub source: FeedbackSource,
    pub resolved: bool,
    pub created_at: DateTime<Utc>,
}

/// Feedback as submitted, before validation against its target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackDraft {
    pub target: FeedbackTarget,
    pub target_ref: String,
    pub start_offset: usize,
    pub end_offset: usize,
    pub comment: String,
    /// When given, must equal the target substring at the offsets.
    #[serde(default)]
    pub selected_text: Option<String>,
    #[serde(default = "user_source")]
    pub source: FeedbackSource,
}

fn user_source() -> FeedbackSource {
    FeedbackSource::User
}

impl FeedbackDraft {
    pub fn on_version(version: usize, start: usize, end: usize, comment: impl Into<String>) -> Self {
        Self {
            target: FeedbackTarget::PromptVersion,
            target_ref: version.to_string(),
            start_offset: start,
            end_offset: end,
            comment: comment.into(),
            selected_text: None,
            source: FeedbackSource::User,
        }
    }

    pub fn on_example(id: impl Into<String>, start: usize, end: usize, comment: impl Into<String>) -> Self {
        Self {
            target: FeedbackTarget::SyntheticExample,
            target_ref: id.into(),
            ..Self::on_version(0, start, end, comment)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfigs {
    pub optimizer: OptimizerConfig,
    pub objective: ObjectiveConfig,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub metric: MetricSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at: DateTime<Utc>,
    pub kind: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

/// Trials of one optimization run, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub backend: OptimizerBackend,
    pub produced_version: usize,
    pub instructions: Vec<String>,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: u32,
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub spec: TaskSpec,
    pub dataset: SyntheticDataset,
    pub split: DatasetSplit,
    pub versions: Vec<PromptVersion>,
    pub feedback: Vec<FeedbackItem>,
    pub configs: SessionConfigs,
    #[serde(default)]
    pub runs: Vec<RunRecord>,
    /// Set by feedback integration, cleared by re-optimization.
    #[serde(default)]
    pub needs_reoptimization: bool,
    /// Stored in `events.jsonl`.
    #[serde(skip)]
    pub event_log: Vec<Event>,
}

impl Session {
    /// Builds a session from a finished optimization: version 0 is the
    /// baseline, version 1 the best prompt when it differs.
    pub fn new(
        id: impl Into<String>,
        spec: TaskSpec,
        dataset: SyntheticDataset,
        split: DatasetSplit,
        result: &OptimizationResult,
        configs: SessionConfigs,
    ) -> Self {
        let now = Utc::now();
        let mut s = Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            created_at: now,
            updated_at: now,
            spec,
            dataset,
            split,
            versions: Vec::new(),
            feedback: Vec::new(),
            configs,
            runs: Vec::new(),
            needs_reoptimization: false,
            event_log: Vec::new(),
        };
        s.push_version(result.baseline.clone(), result.baseline_eval.clone(), None, now);
        if !result.best_is_baseline() {
            s.push_version(result.best.clone(), result.best_eval.clone(), Some(0), now);
        }
        s.runs.push(RunRecord {
            backend: result.backend,
            produced_version: s.versions.len() - 1,
            instructions: result.instructions.clone(),
            trials: result.trials.clone(),
        });
        s.log(
            "created",
            serde_json::json!({ "versions": s.versions.len(), "dataset_size": s.dataset.examples.len() }),
        );
        s
    }

    fn push_version(&mut self, prompt: CandidatePrompt, evaluation: EvaluationResult, parent: Option<usize>, at: DateTime<Utc>) {
        let index = self.versions.len();
        self.versions.push(PromptVersion { index, prompt_text: prompt.prompt_text(), prompt, evaluation, parent, created_at: at });
    }

    fn log(&mut self, kind: &str, detail: serde_json::Value) {
        let now = Utc::now().max(self.updated_at);
        self.updated_at = now;
        self.event_log.push(Event { at: now, kind: kind.to_string(), detail });
    }

    pub fn latest(&self) -> Option<&PromptVersion> {
        self.versions.last()
    }

    pub fn unresolved_count(&self) -> usize {
        self.feedback.iter().filter(|f| !f.resolved).count()
    }

    /// Text that offsets of a feedback target refer to.
    pub fn target_text(&self, target: FeedbackTarget, target_ref: &str) -> Result<String, SessionError> {
        let unknown = || SessionError::UnknownTarget(target_ref.to_string());
        match target {
            FeedbackTarget::PromptVersion => {
                let idx: usize = target_ref.trim().parse().map_err(|_| unknown())?;
                self.versions.get(idx).map(|v| v.prompt_text.clone()).ok_or_else(unknown)
            }
            FeedbackTarget::SyntheticExample => self
                .dataset
                .find(target_ref)
                .map(|e| e.to_record_line(&self.dataset.schema))
                .ok_or_else(unknown),
        }
    }

    fn set_flag(&mut self, example_id: &str) {
        let split = &mut self.split;
        for e in self.dataset.examples.iter_mut().chain(split.train.iter_mut()).chain(split.val.iter_mut()) {
            if e.id == example_id {
                e.flagged = true;
            }
        }
    }

    /// Validates a draft against its target and appends it unresolved.
    pub fn add_feedback(&mut self, draft: FeedbackDraft) -> Result<FeedbackItem, SessionError> {
        let text = self.target_text(draft.target, &draft.target_ref)?;
        let chars: Vec<char> = text.chars().collect();
        let (start, end) = (draft.start_offset, draft.end_offset);
        if start >= end || end > chars.len() {
            return Err(SessionError::OffsetOutOfRange { start, end, len: chars.len() });
        }
        let selected: String = chars[start..end].iter().collect();
        if let Some(claimed) = &draft.selected_text {
            if *claimed != selected {
                return Err(SessionError::SelectionMismatch { selected: claimed.clone(), actual: selected });
            }
        }
        let item = FeedbackItem {
            id: uuid::Uuid::new_v4().to_string(),
            target: draft.target,
            target_ref: draft.target_ref.trim().to_string(),
            selected_text: selected,
            start_offset: start,
            end_offset: end,
            comment: draft.comment,
            source: draft.source,
            resolved: false,
            created_at: Utc::now(),
        };
        if item.target == FeedbackTarget::SyntheticExample {
            self.set_flag(&item.target_ref);
        }
        self.feedback.push(item.clone());
        self.log(
            "feedback_recorded",
            serde_json::json!({ "feedback_id": item.id, "target": item.target, "target_ref": item.target_ref }),
        );
        Ok(item)
    }

    /// Folds unresolved feedback into the spec and marks it resolved.
    pub fn integrate(&mut self) -> Result<TaskSpec, SessionError> {
        let pending: Vec<usize> = (0..self.feedback.len()).filter(|&i| !self.feedback[i].resolved).collect();
        if pending.is_empty() {
            return Err(SessionError::NoUnresolvedFeedback);
        }
        for &i in &pending {
            let f = self.feedback[i].clone();
            match f.target {
                FeedbackTarget::PromptVersion => {
                    self.spec.feedback_notes.push(format!("On '{}': {}", f.selected_text, f.comment));
                }
                FeedbackTarget::SyntheticExample => {
                    self.set_flag(&f.target_ref);
                    let line = self.target_text(f.target, &f.target_ref).unwrap_or_default();
                    self.spec.avoid_notes.push(format!("records like '{line}' ({})", f.comment));
                }
            }
            self.feedback[i].resolved = true;
        }
        self.needs_reoptimization = true;
        self.log("feedback_integrated", serde_json::json!({ "items": pending.len() }));
        Ok(self.spec.clone())
    }
}

fn new_session_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

pub fn create_session(
    store: &SessionStore,
    spec: TaskSpec,
    dataset: SyntheticDataset,
    split: DatasetSplit,
    result: &OptimizationResult,
    configs: SessionConfigs,
) -> Result<Session, SessionError> {
    let session = Session::new(new_session_id(), spec, dataset, split, result, configs);
    store.persist(&session)?;
    Ok(session)
}

pub fn record_feedback(
    store: &SessionStore,
    session: &mut Session,
    draft: FeedbackDraft,
) -> Result<FeedbackItem, SessionError> {
    let mut next = session.clone();
    let item = next.add_feedback(draft)?;
    store.persist(&next)?;
    *session = next;
    Ok(item)
}

pub fn integrate_feedback(store: &SessionStore, session: &mut Session) -> Result<TaskSpec, SessionError> {
    let mut next = session.clone();
    let spec = next.integrate()?;
    store.persist(&next)?;
    *session = next;
    Ok(spec)
}

/// Re-runs optimization with the feedback-updated spec and appends one
/// version. Flagged examples are replaced first when the usable dataset has
/// dropped below the configured sample count.
pub fn reoptimize(
    store: &SessionStore,
    session: &mut Session,
    teacher: &LlmClient,
    scorer: &dyn ExampleScorer,
) -> Result<PromptVersion, SessionError> {
    if !session.needs_reoptimization {
        return Err(SessionError::ReoptimizationNotRequired);
    }
    let mut next = session.clone();
    let cfg = next.configs.optimizer.clone();
    let active = next.dataset.active().count();
    let mut replaced = 0;
    if active < cfg.n_samples {
        let wanted = cfg.n_samples - active;
        let start = next.dataset.next_id();
        let start_n: usize = start.trim_start_matches("ex-").parse().unwrap_or(next.dataset.examples.len());
        let schema = next.dataset.schema.clone();
        let fresh = crate::synthgen::generate_from(
            &next.spec,
            &schema,
            wanted,
            teacher,
            teacher.config().max_tokens as usize,
            start_n,
            &next.dataset.examples,
        )?;
        replaced = fresh.examples.len();
        next.dataset.examples.extend(fresh.examples);
        next.dataset.generation_log.extend(fresh.generation_log);
    }
    next.split = split_dataset(
        &next.dataset,
        next.split.train_ratio,
        next.split.stratify_field.as_deref(),
        next.configs.seed,
    )?;
    let result = optimize(&next.spec, &next.split, &cfg, &next.configs.objective, teacher, scorer, next.configs.seed)?;

    let parent = next.versions.len().checked_sub(1);
    let now = Utc::now().max(next.updated_at);
    next.push_version(result.best.clone(), result.best_eval.clone(), parent, now);
    let index = next.versions.len() - 1;
    next.runs.push(RunRecord {
        backend: result.backend,
        produced_version: index,
        instructions: result.instructions.clone(),
        trials: result.trials.clone(),
    });
    next.needs_reoptimization = false;
    next.log(
        "reoptimized",
        serde_json::json!({ "version": index, "parent": parent, "replacements": replaced, "combined": result.best_eval.combined }),
    );
    store.persist(&next)?;
    *session = next;
    Ok(session.versions[index].clone())
}

pub fn build_judge_prompt(session: &Session, version: &PromptVersion, error_log: &[String]) -> String {
    let mut worst: Vec<_> = version.evaluation.per_example.iter().filter(|r| r.score < LOW_SCORE).collect();
    worst.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.example_id.cmp(&b.example_id)));
    let mut p = format!(
        "You are a reviewer diagnosing why a prompt fails. Identify the failure points and \
         recommend concrete refinements.\n\nTask: {}\n\nPrompt under review:\n<<<\n{}\n>>>\n",
        session.spec.task_text(),
        version.prompt_text
    );
    if !worst.is_empty() {
        p.push_str("\nLowest-scoring examples:\n");
        for r in worst.into_iter().take(JUDGE_RECORDS) {
            let record = session
                .dataset
                .find(&r.example_id)
                .map(|e| e.to_record_line(&session.dataset.schema))
                .unwrap_or_default();
            p.push_str(&format!("- {} (score {:.3}): {record}\n", r.example_id, r.score));
        }
    }
    if !error_log.is_empty() {
        p.push_str("\nErrors observed:\n");
        for e in error_log {
            p.push_str(&format!("- {e}\n"));
        }
    }
    p.push_str("\nReply with your diagnosis and recommendations inside one fenced block (```).");
    p
}

/// Asks the judge to review the latest version and stores its verdict as
/// whole-prompt feedback with source `auto`.
pub fn generate_auto_feedback(
    store: &SessionStore,
    session: &mut Session,
    error_log: &[String],
    judge: &LlmClient,
) -> Result<FeedbackItem, SessionError> {
    let version = session.latest().cloned().ok_or_else(|| SessionError::UnknownTarget("latest version".into()))?;
    let any_low = version.evaluation.per_example.iter().any(|r| r.score < LOW_SCORE);
    if !any_low && error_log.is_empty() {
        return Err(SessionError::NothingToJudge);
    }
    let parse = |reply: &str| {
        first_fenced(reply)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| "no non-empty fenced block".to_string())
    };
    let comment = match ask_parsed(judge, &build_judge_prompt(session, &version, error_log), parse)? {
        Asked::Parsed(c) => c,
        Asked::Failed(why) => return Err(SessionError::JudgeParse(why)),
    };
    let draft = FeedbackDraft {
        target: FeedbackTarget::PromptVersion,
        target_ref: version.index.to_string(),
        start_offset: 0,
        end_offset: version.prompt_text.chars().count(),
        comment,
        selected_text: None,
        source: FeedbackSource::Auto,
    };
    record_feedback(store, session, draft)
}
