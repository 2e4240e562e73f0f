use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{FewShotExample, FieldSchema, PromptingTechnique};

/// Technique directive appended after the instruction, if any.
pub fn technique_directive(technique: PromptingTechnique) -> Option<&'static str> {
    match technique {
        PromptingTechnique::Predict => None,
        PromptingTechnique::ChainOfThought => Some("Think step by step before giving the answer."),
        PromptingTechnique::ProgramOfThought => {
            Some("First write the derivation as a short program, then give the answer it computes.")
        }
        PromptingTechnique::React => {
            Some("Work in Thought, Action and Observation steps, then give the final answer.")
        }
    }
}

/// Extra output slot that precedes the answer fields.
fn reasoning_slot(technique: PromptingTechnique) -> Option<&'static str> {
    match technique {
        PromptingTechnique::Predict => None,
        PromptingTechnique::ChainOfThought => Some("reasoning"),
        PromptingTechnique::ProgramOfThought => Some("program"),
        PromptingTechnique::React => Some("thought"),
    }
}

/// An instruction plus attached demonstrations; the unit of optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePrompt {
    pub instruction: String,
    #[serde(default)]
    pub demos: Vec<FewShotExample>,
    pub technique: PromptingTechnique,
    pub render_schema: FieldSchema,
    #[serde(default)]
    pub version_tag: String,
}

impl CandidatePrompt {
    pub fn new(instruction: impl Into<String>, technique: PromptingTechnique, schema: FieldSchema) -> Self {
        Self {
            instruction: instruction.into(),
            demos: Vec::new(),
            technique,
            render_schema: schema,
            version_tag: String::new(),
        }
    }

    pub fn with_demos(mut self, demos: Vec<FewShotExample>) -> Self {
        self.demos = demos;
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.version_tag = tag.into();
        self
    }

    /// Whether a demo carries exactly the schema's fields.
    pub fn demo_conforms(&self, demo: &FewShotExample) -> bool {
        let s = &self.render_schema;
        demo.inputs.len() == s.input_fields.len()
            && demo.outputs.len() == s.output_fields.len()
            && s.input_fields.iter().all(|f| demo.inputs.contains_key(f))
            && s.output_fields.iter().all(|f| demo.outputs.contains_key(f))
    }

    fn field_lines(&self, inputs: &BTreeMap<String, String>, outputs: Option<&BTreeMap<String, String>>) -> String {
        let mut lines = Vec::new();
        for f in &self.render_schema.input_fields {
            lines.push(format!("{f}: {}", inputs.get(f).map_or("", String::as_str)));
        }
        if let Some(outputs) = outputs {
            for f in &self.render_schema.output_fields {
                lines.push(format!("{f}: {}", outputs.get(f).map_or("", String::as_str)));
            }
        }
        lines.join("\n")
    }

    /// The prompt the user sees and annotates: instruction, technique
    /// directive and demonstrations. Lengths and feedback offsets refer to
    /// this text.
    pub fn prompt_text(&self) -> String {
        let mut out = self.instruction.trim().to_string();
        if let Some(d) = technique_directive(self.technique) {
            out.push('\n');
            out.push_str(d);
        }
        if !self.demos.is_empty() {
            out.push_str("\n\nExamples:");
            for demo in &self.demos {
                out.push_str("\n\n");
                out.push_str(&self.field_lines(&demo.inputs, Some(&demo.outputs)));
            }
        }
        out
    }

    /// Full student prompt for one input record.
    pub fn render(&self, inputs: &BTreeMap<String, String>) -> String {
        let mut out = self.prompt_text();
        out.push_str("\n\n");
        out.push_str(&self.field_lines(inputs, None));
        out.push_str("\n\nReply with one line per field:");
        if let Some(slot) = reasoning_slot(self.technique) {
            out.push_str(&format!("\n{slot}: <{slot}>"));
        }
        for f in &self.render_schema.output_fields {
            out.push_str(&format!("\n{f}: <{f}>"));
        }
        out
    }
}

/// Pulls `field: value` lines for each output field out of a student reply.
/// The last labelled line wins. A single-field schema with no labelled line
/// falls back to the last non-empty line.
pub fn parse_student_outputs(reply: &str, schema: &FieldSchema) -> BTreeMap<String, String> {
    let mut found = BTreeMap::new();
    for line in reply.lines().map(str::trim) {
        let Some((k, v)) = line.split_once(':') else { continue };
        let key = k.trim().trim_matches(|c| c == '*' || c == '`').to_lowercase();
        if let Some(f) = schema.output_fields.iter().find(|f| f.to_lowercase() == key) {
            found.insert(f.clone(), v.trim().to_string());
        }
    }
    if found.is_empty() && schema.output_fields.len() == 1 {
        if let Some(last) = reply.lines().map(str::trim).rfind(|l| !l.is_empty()) {
            found.insert(schema.output_fields[0].clone(), last.to_string());
        }
    }
    found
}
