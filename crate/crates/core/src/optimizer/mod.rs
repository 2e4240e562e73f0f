//! Produces the optimized prompt.
//!
//! Two backends: a single meta-prompt rewrite by the teacher (the default),
//! and a structured search over proposed instructions and bootstrapped demo
//! subsets scored on seeded validation minibatches.

mod prompt;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{FewShotExample, OptimizerBackend, OptimizerConfig, TaskSpec};
use crate::metrics::{evaluate, EvaluationResult, ExampleScorer, MetricError, ObjectiveConfig};
use crate::providers::{LlmClient, ProviderError};
use crate::reply::{ask_parsed, first_fenced, Asked};
use crate::synthgen::{DatasetSplit, SyntheticExample};

pub use prompt::{parse_student_outputs, technique_directive, CandidatePrompt};
pub use search::{search, search_with, DemoSubset, PairChooser, UniformChooser, PAIR_ENUMERATION_LIMIT, TOP_K_FULL_EVAL};

/// Bootstrap admission threshold used by [`optimize`].
pub const BOOTSTRAP_THRESHOLD: f64 = 0.9;
/// Train examples shown to the teacher when proposing instructions.
pub const PROPOSAL_EXAMPLES: usize = 3;

#[derive(Error, Debug)]
pub enum OptimizerError {
    #[error("meta prompt reply had no usable fenced instruction: {0}")]
    MetaParse(String),

    #[error("instruction proposal reply was unusable: {0}")]
    ProposalParse(String),

    #[error("validation set is empty")]
    EmptyValidationSet,

    #[error("invalid optimizer input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl OptimizerError {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerError::MetaParse(_) => "MetaParseError",
            OptimizerError::ProposalParse(_) => "ProposalParseError",
            OptimizerError::EmptyValidationSet => "EmptyValidationSet",
            OptimizerError::Invalid(_) => "InvalidConfig",
            OptimizerError::Metric(e) => e.name(),
            OptimizerError::Provider(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub instruction_index: usize,
    pub demo_indices: Vec<usize>,
    pub demo_set_digest: String,
    pub minibatch_ids: Vec<String>,
    pub minibatch_score: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: CandidatePrompt,
    pub best_eval: EvaluationResult,
    pub baseline: CandidatePrompt,
    pub baseline_eval: EvaluationResult,
    pub trials: Vec<TrialRecord>,
    pub backend: OptimizerBackend,
    /// Instruction pool searched over; index 0 is the baseline.
    #[serde(default)]
    pub instructions: Vec<String>,
}

impl OptimizationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("optimization result serializes")
    }

    pub fn best_is_baseline(&self) -> bool {
        self.best.instruction == self.baseline.instruction && self.best.demos == self.baseline.demos
    }
}

fn require_complete(spec: &TaskSpec) -> Result<CandidatePrompt, OptimizerError> {
    let (Some(technique), Some(schema)) = (spec.technique, spec.schema.clone()) else {
        return Err(OptimizerError::Invalid("task spec needs a technique and a field schema".into()));
    };
    Ok(CandidatePrompt::new(spec.baseline_instruction(), technique, schema).with_tag("baseline"))
}

/// The user's own instruction with no demos; version 0 of every session.
pub fn baseline_prompt(spec: &TaskSpec) -> Result<CandidatePrompt, OptimizerError> {
    require_complete(spec)
}

const GUIDELINES: &str = "\
- Open with the task and the expected output.
- Be specific about format and constraints and drop filler.
- Keep only the rules the model needs, in short direct sentences.
- Do not include worked examples; they are attached separately.";

pub fn build_meta_prompt(spec: &TaskSpec) -> String {
    let technique = spec.technique.unwrap_or(crate::config::PromptingTechnique::Predict);
    let directive = technique_directive(technique).unwrap_or("answer directly");
    format!(
        "You are an expert prompt engineer. Rewrite the task below as one clear instruction \
         for a smaller model.\n\n{}Prompting technique: {technique} ({directive})\n\
         Guidelines:\n{GUIDELINES}\n{}\nReply with the improved instruction inside one fenced \
         block (```).",
        spec.describe(),
        spec.feedback_section(),
    )
}

/// One teacher rewrite of the task into an instruction. Demos are the
/// spec's own schema-conformant few-shot examples, up to `n_demos`.
pub fn meta_prompt_optimize(
    spec: &TaskSpec,
    teacher: &LlmClient,
    n_demos: usize,
) -> Result<CandidatePrompt, OptimizerError> {
    let base = require_complete(spec)?;
    let parse = |reply: &str| {
        first_fenced(reply)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| "no non-empty fenced block".to_string())
    };
    let instruction = match ask_parsed(teacher, &build_meta_prompt(spec), parse)? {
        Asked::Parsed(i) => i,
        Asked::Failed(why) => return Err(OptimizerError::MetaParse(why)),
    };
    let demos: Vec<FewShotExample> =
        spec.few_shot_examples.iter().filter(|d| base.demo_conforms(d)).take(n_demos).cloned().collect();
    Ok(CandidatePrompt { instruction, demos, version_tag: "meta".into(), ..base })
}

pub fn build_proposal_prompt(spec: &TaskSpec, train: &[SyntheticExample], k: usize) -> String {
    let mut p = format!(
        "You are an expert prompt engineer. Write exactly {k} different instructions for the task \
         below. Vary emphasis, structure and length.\n\n{}",
        spec.describe()
    );
    if let Some(schema) = &spec.schema {
        let shown: Vec<String> =
            train.iter().take(PROPOSAL_EXAMPLES).map(|e| format!("- {}", e.to_record_line(schema))).collect();
        if !shown.is_empty() {
            p.push_str(&format!("\nSample records:\n{}\n", shown.join("\n")));
        }
    }
    p.push_str(&spec.feedback_section());
    p.push_str("\nReply with one fenced block (```) holding a numbered list, one instruction per line:\n1. <instruction>\n2. <instruction>");
    p
}

fn numbered_items(block: &str) -> Vec<String> {
    block
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            if digits == 0 {
                return None;
            }
            let rest = l[digits..].strip_prefix(['.', ')'])?.trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .collect()
}

/// Baseline instruction followed by up to `k` teacher variants.
pub fn propose_instructions(
    spec: &TaskSpec,
    train: &[SyntheticExample],
    k: usize,
    teacher: &LlmClient,
) -> Result<Vec<String>, OptimizerError> {
    if k == 0 {
        return Err(OptimizerError::Invalid("k must be at least 1".into()));
    }
    let parse = |reply: &str| {
        let items = first_fenced(reply).map(|b| numbered_items(&b)).unwrap_or_default();
        if items.len() < 2 {
            Err(format!("found {} numbered instructions, need at least 2", items.len()))
        } else {
            Ok(items)
        }
    };
    let variants = match ask_parsed(teacher, &build_proposal_prompt(spec, train, k), parse)? {
        Asked::Parsed(v) => v,
        Asked::Failed(why) => return Err(OptimizerError::ProposalParse(why)),
    };
    let mut pool = vec![spec.baseline_instruction()];
    pool.extend(variants.into_iter().take(k));
    Ok(pool)
}

/// Train examples the bare prompt already gets right, as gold demos.
pub fn bootstrap_demos(
    prompt: &CandidatePrompt,
    train: &[SyntheticExample],
    max_demos: usize,
    threshold: f64,
    scorer: &dyn ExampleScorer,
) -> Result<Vec<FewShotExample>, OptimizerError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(OptimizerError::Invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    let bare = CandidatePrompt { demos: Vec::new(), ..prompt.clone() };
    let gold = |e: &SyntheticExample| FewShotExample { inputs: e.inputs.clone(), outputs: e.outputs.clone() };
    if threshold <= 0.0 {
        return Ok(train.iter().take(max_demos).map(gold).collect());
    }
    let mut demos = Vec::new();
    for ex in train {
        if demos.len() == max_demos {
            break;
        }
        if scorer.score_example(&bare, ex)?.score >= threshold {
            demos.push(gold(ex));
        }
    }
    Ok(demos)
}

/// Runs the configured backend and always evaluates the baseline alongside.
pub fn optimize(
    spec: &TaskSpec,
    split: &DatasetSplit,
    cfg: &OptimizerConfig,
    obj: &ObjectiveConfig,
    teacher: &LlmClient,
    scorer: &dyn ExampleScorer,
    seed: u64,
) -> Result<OptimizationResult, OptimizerError> {
    cfg.validate().map_err(|e| OptimizerError::Invalid(e.to_string()))?;
    obj.validate().map_err(OptimizerError::Invalid)?;
    if split.val.is_empty() {
        return Err(OptimizerError::EmptyValidationSet);
    }
    let baseline = require_complete(spec)?;
    match cfg.backend {
        OptimizerBackend::SimpleMetaPrompt => {
            let candidate = meta_prompt_optimize(spec, teacher, cfg.n_demos)?;
            let baseline_eval = evaluate(&baseline, &split.val, scorer, obj)?;
            let cand_eval = evaluate(&candidate, &split.val, scorer, obj)?;
            let (best, best_eval) = if cand_eval.combined > baseline_eval.combined {
                (candidate.clone(), cand_eval)
            } else {
                (baseline.clone(), baseline_eval.clone())
            };
            Ok(OptimizationResult {
                best,
                best_eval,
                baseline,
                baseline_eval,
                trials: Vec::new(),
                backend: cfg.backend,
                instructions: vec![spec.baseline_instruction(), candidate.instruction],
            })
        }
        OptimizerBackend::StructuredSearch => {
            let instructions = propose_instructions(spec, &split.train, cfg.n_instruction_candidates, teacher)?;
            let demo_pool = bootstrap_demos(&baseline, &split.train, cfg.n_demos, BOOTSTRAP_THRESHOLD, scorer)?;
            search(&instructions, &demo_pool, split, &baseline, scorer, cfg, obj, seed)
        }
    }
}
