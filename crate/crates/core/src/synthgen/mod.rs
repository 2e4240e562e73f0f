//! Synthetic dataset generation.
//!
//! Four stages: template extraction from whatever samples exist, batch
//! sizing against a token budget, diversity-directed batch prompts, and
//! record validation. Batches run sequentially because each prompt carries
//! digests of what was already generated.

mod io;
mod split;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{FieldSchema, TaskSpec, PAIR_DELIMITER};
use crate::providers::{estimate_tokens, CompletionRequest, LlmClient, ProviderError};
use crate::reply::fenced_blocks;

pub use io::{dataset_from_jsonl, examples_to_jsonl, generation_log_csv};
pub use split::{split_dataset, DatasetSplit};

/// Upper clamp on records requested per teacher call.
pub const MAX_BATCH: usize = 20;
/// Fixed per-record token overhead added to the exemplar estimate.
pub const RECORD_OVERHEAD_TOKENS: usize = 8;
/// Calls allowed per planned batch before generation gives up.
pub const ATTEMPT_MULTIPLIER: usize = 3;
/// Digests of earlier records embedded in each generation prompt.
pub const MAX_DIGESTS: usize = 10;

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("token budget {budget} is below the per-record estimate {per_record}")]
    BudgetTooSmall { budget: usize, per_record: usize },

    #[error("generation stalled with {} of {wanted} examples after {calls} calls", partial.examples.len())]
    GenerationStalled { wanted: usize, calls: usize, partial: Box<SyntheticDataset> },

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl SynthError {
    pub fn name(&self) -> &'static str {
        match self {
            SynthError::Schema(_) => "SchemaError",
            SynthError::BudgetTooSmall { .. } => "BudgetTooSmall",
            SynthError::GenerationStalled { .. } => "GenerationStalled",
            SynthError::Split(_) => "SplitError",
            SynthError::Format(_) => "DatasetFormatError",
            SynthError::Provider(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticExample {
    #[serde(default)]
    pub id: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
    #[serde(default)]
    pub flagged: bool,
}

fn default_provenance() -> Provenance {
    Provenance::Generated
}

impl SyntheticExample {
    /// Key sets equal the schema and no value is empty.
    pub fn validate(&self, schema: &FieldSchema) -> Result<(), String> {
        for (side, map, fields) in [
            ("input", &self.inputs, &schema.input_fields),
            ("output", &self.outputs, &schema.output_fields),
        ] {
            for f in fields {
                match map.get(f) {
                    None => return Err(format!("missing {side} field {f:?}")),
                    Some(v) if v.trim().is_empty() => return Err(format!("empty {side} field {f:?}")),
                    _ => {}
                }
            }
            if let Some(extra) = map.keys().find(|k| !fields.contains(k)) {
                return Err(format!("unknown {side} field {extra:?}"));
            }
        }
        Ok(())
    }

    /// Record-line form, fields in schema order.
    pub fn to_record_line(&self, schema: &FieldSchema) -> String {
        schema
            .fields()
            .map(|f| {
                let v = self.inputs.get(f).or_else(|| self.outputs.get(f)).map_or("", String::as_str);
                format!("{f}={v}")
            })
            .collect::<Vec<_>>()
            .join(&format!(" {PAIR_DELIMITER} "))
    }

    /// Short input-side summary shown to the teacher to discourage repeats.
    pub fn digest(&self) -> String {
        let s = self.inputs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("; ");
        if s.chars().count() > 120 {
            s.chars().take(117).collect::<String>() + "..."
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchLog {
    pub batch_index: usize,
    pub requested: usize,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub examples: Vec<SyntheticExample>,
    pub schema: FieldSchema,
    #[serde(default)]
    pub generation_log: Vec<BatchLog>,
}

impl SyntheticDataset {
    pub fn active(&self) -> impl Iterator<Item = &SyntheticExample> {
        self.examples.iter().filter(|e| !e.flagged)
    }

    pub fn find(&self, id: &str) -> Option<&SyntheticExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Next unused `ex-NNNN` id.
    pub fn next_id(&self) -> String {
        let max = self
            .examples
            .iter()
            .filter_map(|e| e.id.strip_prefix("ex-")?.parse::<usize>().ok())
            .max();
        example_id(max.map_or(0, |m| m + 1))
    }
}

pub fn example_id(n: usize) -> String {
    format!("ex-{n:04}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Numeric,
    Label,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateField {
    pub name: String,
    pub is_output: bool,
    pub example: String,
    pub kind: ValueKind,
    /// Distinct sample values, kept for label fields.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observed_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataTemplate {
    pub fields: Vec<TemplateField>,
    pub style_notes: String,
}

impl DataTemplate {
    /// One record line built from the exemplar values.
    pub fn exemplar_record(&self) -> String {
        self.fields
            .iter()
            .map(|f| format!("{}={}", f.name, f.example))
            .collect::<Vec<_>>()
            .join(&format!(" {PAIR_DELIMITER} "))
    }

    pub fn tokens_per_record(&self) -> usize {
        estimate_tokens(&self.exemplar_record()) + RECORD_OVERHEAD_TOKENS
    }
}

/// Largest distinct-value count still treated as a label set.
const LABEL_MAX_DISTINCT: usize = 10;

pub fn extract_template(
    samples: &[SyntheticExample],
    schema: &FieldSchema,
) -> Result<DataTemplate, SynthError> {
    schema.validate().map_err(|e| SynthError::Schema(e.to_string()))?;
    for (i, s) in samples.iter().enumerate() {
        s.validate(schema).map_err(|why| SynthError::Schema(format!("sample {i}: {why}")))?;
    }

    let fields = schema
        .fields()
        .map(|name| {
            let is_output = schema.is_output(name);
            let values: Vec<&str> = samples
                .iter()
                .filter_map(|s| s.inputs.get(name).or_else(|| s.outputs.get(name)))
                .map(String::as_str)
                .collect();
            if values.is_empty() {
                return TemplateField {
                    name: name.to_string(),
                    is_output,
                    example: format!("<{name}>"),
                    kind: ValueKind::FreeText,
                    observed_values: Vec::new(),
                };
            }
            let distinct: BTreeSet<&str> = values.iter().copied().collect();
            let kind = if values.iter().all(|v| v.trim().parse::<f64>().is_ok()) {
                ValueKind::Numeric
            } else if distinct.len() <= LABEL_MAX_DISTINCT {
                ValueKind::Label
            } else {
                ValueKind::FreeText
            };
            TemplateField {
                name: name.to_string(),
                is_output,
                example: values[0].to_string(),
                kind,
                observed_values: if kind == ValueKind::Label {
                    distinct.into_iter().map(str::to_string).collect()
                } else {
                    Vec::new()
                },
            }
        })
        .collect();

    let style_notes = if samples.is_empty() {
        "No samples supplied; infer realistic values from the task description.".to_string()
    } else {
        format!("Match the register and level of detail of the {} supplied sample(s).", samples.len())
    };
    Ok(DataTemplate { fields, style_notes })
}

/// `clamp(floor(budget / per_record), 1, MAX_BATCH)`.
pub fn batch_size_for(per_record: usize, token_budget: usize) -> Result<usize, SynthError> {
    if per_record == 0 || token_budget < per_record {
        return Err(SynthError::BudgetTooSmall { budget: token_budget, per_record });
    }
    Ok((token_budget / per_record).clamp(1, MAX_BATCH))
}

pub fn optimal_batch_size(template: &DataTemplate, token_budget: usize) -> Result<usize, SynthError> {
    batch_size_for(template.tokens_per_record(), token_budget)
}

pub fn build_generation_prompt(
    spec: &TaskSpec,
    template: &DataTemplate,
    batch_size: usize,
    seen_digests: &[String],
) -> String {
    let mut p = String::from("You are generating synthetic training data for the task below.\n\n");
    p.push_str(&spec.describe());
    p.push_str("\nFields:\n");
    for f in &template.fields {
        let kind = match f.kind {
            ValueKind::Numeric => "numeric",
            ValueKind::Label => "label",
            ValueKind::FreeText => "free text",
        };
        p.push_str(&format!(
            "- {} ({}, {kind}), e.g. {}\n",
            f.name,
            if f.is_output { "output" } else { "input" },
            f.example
        ));
        if !f.observed_values.is_empty() {
            p.push_str(&format!("  known values: {}\n", f.observed_values.join(", ")));
        }
    }
    p.push_str(&format!("{}\n\n", template.style_notes));
    p.push_str(&format!("Generate exactly {batch_size} new records. Requirements:\n"));
    p.push_str(
        "- Spread the records across complexity levels, from simple to hard.\n\
         - Include edge cases and unusual but valid inputs.\n\
         - Vary style, tone, length and phrasing between records.\n\
         - Every output must be correct for its inputs.\n",
    );
    for note in &spec.avoid_notes {
        p.push_str(&format!("- Avoid: {note}\n"));
    }
    p.push_str(&format!(
        "\nReply with one fenced block (```), one record per line. Write the fields in this \
         order as name=value, separated by {PAIR_DELIMITER}:\n"
    ));
    let layout: Vec<String> = template.fields.iter().map(|f| format!("{}=<value>", f.name)).collect();
    p.push_str(&layout.join(&format!(" {PAIR_DELIMITER} ")));
    p.push_str(&format!("\nValues must fit on one line and must not contain {PAIR_DELIMITER}.\n"));
    if !seen_digests.is_empty() {
        p.push_str("\nAlready generated; do not repeat or paraphrase these:\n");
        for d in seen_digests.iter().rev().take(MAX_DIGESTS).rev() {
            p.push_str(&format!("- {d}\n"));
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    UnknownField,
    DuplicateField,
    MissingField,
    EmptyValue,
    DuplicateRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedBatch {
    pub kept: Vec<SyntheticExample>,
    pub rejected: Vec<Rejection>,
}

fn parse_record(line: &str, schema: &FieldSchema) -> Result<SyntheticExample, RejectReason> {
    let mut ex = SyntheticExample {
        id: String::new(),
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
        provenance: Provenance::Generated,
        flagged: false,
    };
    for part in line.split(PAIR_DELIMITER) {
        let (k, v) = part.split_once('=').ok_or(RejectReason::Malformed)?;
        let (k, v) = (k.trim(), v.trim());
        let side = if schema.input_fields.iter().any(|f| f == k) {
            &mut ex.inputs
        } else if schema.is_output(k) {
            &mut ex.outputs
        } else {
            return Err(RejectReason::UnknownField);
        };
        if v.is_empty() {
            return Err(RejectReason::EmptyValue);
        }
        if side.insert(k.to_string(), v.to_string()).is_some() {
            return Err(RejectReason::DuplicateField);
        }
    }
    if ex.inputs.len() != schema.input_fields.len() || ex.outputs.len() != schema.output_fields.len() {
        return Err(RejectReason::MissingField);
    }
    Ok(ex)
}

/// Parses fenced record lines, keeping schema-exact records and dropping
/// in-batch duplicates (equal input maps).
pub fn parse_and_validate(raw: &str, schema: &FieldSchema) -> ParsedBatch {
    let mut out = ParsedBatch::default();
    for block in fenced_blocks(raw) {
        for line in block.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match parse_record(line, schema) {
                Ok(ex) if out.kept.iter().any(|k| k.inputs == ex.inputs) => out
                    .rejected
                    .push(Rejection { line: line.to_string(), reason: RejectReason::DuplicateRecord }),
                Ok(ex) => out.kept.push(ex),
                Err(reason) => out.rejected.push(Rejection { line: line.to_string(), reason }),
            }
        }
    }
    for r in &out.rejected {
        tracing::debug!(reason = ?r.reason, line = %r.line, "record rejected");
    }
    out
}

/// Supplied few-shot demonstrations as user-provided examples.
pub fn samples_from_spec(spec: &TaskSpec) -> Vec<SyntheticExample> {
    spec.few_shot_examples
        .iter()
        .enumerate()
        .map(|(i, ex)| SyntheticExample {
            id: format!("user-{i:04}"),
            inputs: ex.inputs.clone(),
            outputs: ex.outputs.clone(),
            provenance: Provenance::UserSupplied,
            flagged: false,
        })
        .collect()
}

/// Generates exactly `n` validated examples, or fails with
/// [`SynthError::GenerationStalled`] carrying what was accepted.
pub fn generate_dataset(
    spec: &TaskSpec,
    schema: &FieldSchema,
    n: usize,
    teacher: &LlmClient,
    token_budget: usize,
) -> Result<SyntheticDataset, SynthError> {
    generate_from(spec, schema, n, teacher, token_budget, 0, &[])
}

/// As [`generate_dataset`], numbering ids from `first_id` and treating
/// `existing` as already generated for digest purposes.
pub(crate) fn generate_from(
    spec: &TaskSpec,
    schema: &FieldSchema,
    n: usize,
    teacher: &LlmClient,
    token_budget: usize,
    first_id: usize,
    existing: &[SyntheticExample],
) -> Result<SyntheticDataset, SynthError> {
    if n == 0 {
        return Err(SynthError::Schema("requested dataset size must be at least 1".into()));
    }
    let samples = samples_from_spec(spec);
    let template = extract_template(&samples, schema)?;
    let batch_size = optimal_batch_size(&template, token_budget)?;
    let max_attempts = ATTEMPT_MULTIPLIER * n.div_ceil(batch_size);

    let mut digests: Vec<String> = existing.iter().map(SyntheticExample::digest).collect();
    let mut dataset = SyntheticDataset { examples: Vec::with_capacity(n), schema: schema.clone(), generation_log: Vec::new() };
    let mut calls = 0;
    while dataset.examples.len() < n {
        if calls == max_attempts {
            return Err(SynthError::GenerationStalled { wanted: n, calls, partial: Box::new(dataset) });
        }
        let remaining = n - dataset.examples.len();
        let requested = batch_size.min(remaining);
        let prompt = build_generation_prompt(spec, &template, requested, &digests);
        let reply = teacher.complete(&CompletionRequest::user(prompt))?;
        let parsed = parse_and_validate(&reply.text, schema);
        let accepted: Vec<_> = parsed.kept.into_iter().take(remaining).collect();
        dataset.generation_log.push(BatchLog {
            batch_index: calls,
            requested,
            accepted: accepted.len(),
            rejected: parsed.rejected.len(),
        });
        for mut ex in accepted {
            ex.id = example_id(first_id + dataset.examples.len());
            digests.push(ex.digest());
            dataset.examples.push(ex);
        }
        calls += 1;
    }
    Ok(dataset)
}
