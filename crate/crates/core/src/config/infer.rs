//! Teacher-assisted inference: missing fields, task type, field schema and
//! prompting technique.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ConfigError, Complexity, FieldSchema, MarkedInput, Marker, PromptingTechnique, TaskSpec, TaskType,
};
use crate::providers::{CompletionRequest, LlmClient};
use crate::reply::{ask_parsed, enum_token, first_fenced, key_values, Asked};

/// Fields the teacher is asked to fill when markers leave them empty.
const INFERRED: [Marker; 4] = [Marker::Task, Marker::Instructions, Marker::Rules, Marker::OutputFormat];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferOptions {
    /// Run one refinement call per teacher-filled field.
    pub enhance: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { enhance: true }
    }
}

fn extraction_prompt(raw: &str, partial: &MarkedInput, missing: &[Marker]) -> String {
    let mut p = String::from(
        "You are configuring an automatic prompt optimizer. Read the task objective \
         below and extract the missing components of its specification.\n\n",
    );
    p.push_str("Task objective:\n<<<\n");
    p.push_str(raw.trim());
    p.push_str("\n>>>\n\n");
    let given: Vec<_> = INFERRED.iter().filter(|m| !partial.get(**m).is_empty()).collect();
    if !given.is_empty() {
        p.push_str("Already provided (do not repeat):\n");
        for m in given {
            p.push_str(&format!("{}: {}\n", m.key(), partial.get(*m)));
        }
        p.push('\n');
    }
    p.push_str(
        "Reply with exactly one fenced block (```) and nothing else. Inside it write one \
         line per field in the form FIELD: value, for these fields:\n",
    );
    for m in missing {
        p.push_str(m.key());
        p.push('\n');
    }
    p.push_str("Write NONE as the value when the objective gives no basis for a field.\n");
    p
}

fn parse_extraction(reply: &str, missing: &[Marker]) -> Result<Vec<(Marker, String)>, String> {
    let block = first_fenced(reply).ok_or("no fenced block")?;
    let pairs = key_values(&block);
    missing
        .iter()
        .map(|m| {
            let v = pairs
                .iter()
                .rev()
                .find(|(k, _)| k == m.key())
                .map(|(_, v)| v.clone())
                .ok_or_else(|| format!("missing {} line", m.key()))?;
            let v = if v.eq_ignore_ascii_case("none") { String::new() } else { v };
            Ok((*m, v))
        })
        .collect()
}

fn refine(teacher: &LlmClient, raw: &str, field: Marker, value: &str) -> Result<String, ConfigError> {
    let prompt = format!(
        "Improve the {} of a task specification so it is clear, specific and unambiguous. \
         Keep its meaning.\n\nTask objective:\n<<<\n{}\n>>>\n\nCurrent {}:\n{}\n\n\
         Reply with exactly one fenced block (```) containing only the refined text.",
        field.key(),
        raw.trim(),
        field.key(),
        value
    );
    let reply = teacher.complete(&CompletionRequest::user(prompt))?;
    match first_fenced(&reply.text).map(|s| s.trim().to_string()).filter(|s| !s.is_empty()) {
        Some(refined) => Ok(refined),
        None => {
            tracing::warn!(field = field.key(), "refinement reply unparseable; keeping extracted value");
            Ok(value.to_string())
        }
    }
}

/// Fills the fields markers left empty. Marker-supplied fields are never
/// touched; with nothing missing and `enhance` off no teacher call is made.
pub fn infer_task_spec(
    raw: &str,
    partial: &MarkedInput,
    teacher: &LlmClient,
    opts: InferOptions,
) -> Result<TaskSpec, ConfigError> {
    if raw.trim().is_empty() {
        return Err(ConfigError::Invalid("task objective is empty".into()));
    }
    let mut spec = TaskSpec::from_marked(raw, partial);
    let missing: Vec<Marker> = INFERRED.iter().copied().filter(|m| partial.get(*m).is_empty()).collect();
    if missing.is_empty() {
        return Ok(spec);
    }

    let prompt = extraction_prompt(raw, partial, &missing);
    let filled = match ask_parsed(teacher, &prompt, |r| parse_extraction(r, &missing))? {
        Asked::Parsed(v) => v,
        Asked::Failed(why) => return Err(ConfigError::ExtractionParse(why)),
    };

    for (field, mut value) in filled {
        if value.is_empty() {
            continue;
        }
        if opts.enhance {
            value = refine(teacher, raw, field, &value)?;
        }
        match field {
            Marker::Task => spec.task = value,
            Marker::Instructions => spec.instructions = value,
            Marker::Rules => spec.rules = value,
            Marker::OutputFormat => spec.output_format = Some(value),
            _ => unreachable!("only INFERRED fields are requested"),
        }
    }
    Ok(spec)
}

/// Keyword stems and the task type they indicate.
type Rule = (&'static [&'static str], fn() -> TaskType);

const RULES: &[Rule] = &[
    (&["translat"], || TaskType::Translation),
    (&["summar"], || TaskType::Summarization),
    (&["solve", "compute", "math", "calculat", "arithmetic"], || TaskType::MathReasoning),
    (&["code", "coding", "sql", "python", "javascript"], || TaskType::CodeGeneration),
    (&["classif", "label", "categori"], || TaskType::Classification),
    (&["answer", "question"], || TaskType::Qa),
];

/// Stage one of classification: keyword prefixes over the task words.
pub fn classify_by_rules(text: &str) -> Option<TaskType> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    RULES
        .iter()
        .find(|(prefixes, _)| words.iter().any(|w| prefixes.iter().any(|p| w.starts_with(p))))
        .map(|(_, make)| make())
}

/// Keyword rules first; the teacher only sees inputs no rule recognizes.
pub fn classify_task(spec: &mut TaskSpec, teacher: &LlmClient) -> Result<TaskType, ConfigError> {
    let text = spec.task_text().to_string();
    if text.is_empty() {
        return Err(ConfigError::Classification("no task text to classify".into()));
    }
    if let Some(t) = classify_by_rules(&text) {
        spec.task_type = Some(t.clone());
        return Ok(t);
    }
    let names: Vec<&str> =
        TaskType::NAMED.iter().map(TaskType::name).chain(std::iter::once("other")).collect();
    let prompt = format!(
        "Classify the task below into exactly one category.\nCategories: {}\n\n\
         Task: {text}\n\nReply with only the category name.",
        names.join(", ")
    );
    let t = match ask_parsed(teacher, &prompt, |r| {
        let token = enum_token(r);
        if let Some(label) = token.strip_prefix("other:") {
            return Ok(TaskType::Other(label.trim_matches('_').replace('_', " ")));
        }
        token.parse::<TaskType>()
    })? {
        Asked::Parsed(t) => t,
        Asked::Failed(why) => return Err(ConfigError::Classification(why)),
    };
    spec.task_type = Some(t.clone());
    Ok(t)
}

fn default_schema(t: &TaskType) -> Option<FieldSchema> {
    let (i, o): (&[&str], &[&str]) = match t {
        TaskType::Classification => (&["text"], &["label"]),
        TaskType::Qa => (&["question", "context"], &["answer"]),
        TaskType::Summarization => (&["document"], &["summary"]),
        TaskType::Generation => (&["concepts"], &["text"]),
        TaskType::MathReasoning => (&["question"], &["answer"]),
        _ => return None,
    };
    FieldSchema::new(i.iter().copied(), o.iter().copied()).ok()
}

fn field_names(list: &str) -> Vec<String> {
    list.split(',')
        .map(|f| {
            f.trim()
                .to_lowercase()
                .chars()
                .map(|c| if c.is_alphanumeric() { c } else { '_' })
                .collect::<String>()
                .trim_matches('_')
                .to_string()
        })
        .filter(|f| !f.is_empty())
        .collect()
}

/// Example keys when examples exist, else the per-type table, else the
/// teacher.
pub fn infer_field_schema(spec: &TaskSpec, teacher: &LlmClient) -> Result<FieldSchema, ConfigError> {
    let task_type = spec
        .task_type
        .as_ref()
        .ok_or_else(|| ConfigError::Schema("task type must be assigned first".into()))?;

    if let Some(first) = spec.few_shot_examples.first() {
        for (i, ex) in spec.few_shot_examples.iter().enumerate().skip(1) {
            if ex.inputs.keys().ne(first.inputs.keys()) || ex.outputs.keys().ne(first.outputs.keys()) {
                return Err(ConfigError::Schema(format!(
                    "few-shot example {i} has keys inconsistent with example 0"
                )));
            }
        }
        return FieldSchema::new(first.inputs.keys().cloned(), first.outputs.keys().cloned());
    }

    if let Some(s) = default_schema(task_type) {
        return Ok(s);
    }

    let prompt = format!(
        "Decide the input and output fields for the task below.\n\n{}\n\
         Reply with exactly one fenced block (```) containing two lines:\n\
         INPUTS: comma-separated snake_case field names\n\
         OUTPUTS: comma-separated snake_case field names",
        spec.describe()
    );
    let parsed = ask_parsed(teacher, &prompt, |r| {
        let block = first_fenced(r).ok_or("no fenced block")?;
        let kv = key_values(&block);
        let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| field_names(v));
        let (i, o) = (get("INPUTS").ok_or("missing INPUTS")?, get("OUTPUTS").ok_or("missing OUTPUTS")?);
        FieldSchema::new(i, o).map_err(|e| e.to_string())
    })?;
    match parsed {
        Asked::Parsed(s) => Ok(s),
        Asked::Failed(why) => Err(ConfigError::Schema(format!("teacher schema reply unusable: {why}"))),
    }
}

/// A demonstration shown to the teacher when choosing a technique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueSelectionExemplar {
    pub task_type: TaskType,
    pub complexity: Complexity,
    pub chosen: PromptingTechnique,
    pub rationale: String,
}

/// Curated exemplar set; covers every task type.
pub fn default_exemplars() -> Vec<TechniqueSelectionExemplar> {
    use Complexity::*;
    use PromptingTechnique::*;
    let ex = |t: TaskType, c, m, why: &str| TechniqueSelectionExemplar {
        task_type: t,
        complexity: c,
        chosen: m,
        rationale: why.into(),
    };
    vec![
        ex(TaskType::Classification, Simple, Predict, "label is a direct mapping from the text"),
        ex(TaskType::Classification, Complex, ChainOfThought, "many interacting rules benefit from explicit reasoning"),
        ex(TaskType::Qa, Simple, Predict, "answer is extracted directly from the context"),
        ex(TaskType::Qa, Complex, ChainOfThought, "multi-hop questions need intermediate steps"),
        ex(TaskType::Generation, Simple, Predict, "free-form output with no derivation"),
        ex(TaskType::Summarization, Simple, Predict, "condensing text needs no explicit derivation"),
        ex(TaskType::Summarization, Complex, ChainOfThought, "long constrained summaries benefit from planning"),
        ex(TaskType::Translation, Simple, Predict, "direct transfer between languages"),
        ex(TaskType::MathReasoning, Simple, ChainOfThought, "arithmetic word problems need step-by-step work"),
        ex(TaskType::MathReasoning, Complex, ProgramOfThought, "multi-step computation is safer as a program"),
        ex(TaskType::CodeGeneration, Complex, ProgramOfThought, "output is itself a program"),
        ex(TaskType::Other(String::new()), Moderate, ChainOfThought, "unknown structure; reasoning is a safe default"),
        ex(TaskType::Other("tool use".into()), Complex, React, "task needs tools and observations"),
    ]
}

pub fn load_exemplars(path: impl AsRef<Path>) -> Result<Vec<TechniqueSelectionExemplar>, ConfigError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| ConfigError::Invalid(format!("bad exemplar file: {e}")))
}

/// Chosen technique plus the digest of the exemplars it was chosen against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueSelection {
    pub technique: PromptingTechnique,
    pub exemplar_digest: String,
}

fn exemplar_digest(exemplars: &[TechniqueSelectionExemplar]) -> String {
    let json = serde_json::to_vec(exemplars).expect("exemplars serialize");
    hex::encode(&Sha256::digest(&json)[..8])
}

pub fn select_technique(
    spec: &mut TaskSpec,
    exemplars: &[TechniqueSelectionExemplar],
    teacher: &LlmClient,
) -> Result<TechniqueSelection, ConfigError> {
    let (task_type, complexity) = match (&spec.task_type, spec.complexity) {
        (Some(t), Some(c)) => (t.clone(), c),
        _ => return Err(ConfigError::Selection("task type and complexity must be assigned".into())),
    };
    if exemplars.is_empty() {
        return Err(ConfigError::Selection("exemplar set is empty".into()));
    }

    let mut prompt = String::from(
        "Choose the prompting technique most likely to perform best for a new task. \
         Available techniques: predict, chain_of_thought, program_of_thought, react.\n\n\
         Demonstrations:\n",
    );
    for e in exemplars {
        prompt.push_str(&format!(
            "- task_type={} complexity={} -> {} ({})\n",
            e.task_type, e.complexity, e.chosen, e.rationale
        ));
    }
    prompt.push_str(&format!(
        "\nNew task: task_type={task_type} complexity={complexity}\nTask: {}\n\n\
         Reply with only the technique name.",
        spec.task_text()
    ));

    let technique = match ask_parsed(teacher, &prompt, |r| enum_token(r).parse::<PromptingTechnique>())? {
        Asked::Parsed(t) => t,
        Asked::Failed(why) => return Err(ConfigError::Selection(why)),
    };
    let selection = TechniqueSelection { technique, exemplar_digest: exemplar_digest(exemplars) };
    tracing::info!(%technique, digest = %selection.exemplar_digest, "technique selected");
    spec.technique = Some(technique);
    spec.technique_audit = Some(selection.exemplar_digest.clone());
    Ok(selection)
}
