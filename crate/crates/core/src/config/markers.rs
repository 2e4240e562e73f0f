//! Bracket-marker grammar for structured task input.
//!
//! `[TASK] classify sentiment [RULES] one word` splits into fields at each of
//! the eight recognized markers. Text before the first marker is kept as the
//! preamble. A repeated marker overrides the earlier occurrence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Marker {
    Task,
    Instructions,
    Rules,
    FewShotExamples,
    Context,
    Question,
    OutputFormat,
    Tools,
}

impl Marker {
    pub const ALL: [Marker; 8] = [
        Marker::Task,
        Marker::Instructions,
        Marker::Rules,
        Marker::FewShotExamples,
        Marker::Context,
        Marker::Question,
        Marker::OutputFormat,
        Marker::Tools,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Marker::Task => "[TASK]",
            Marker::Instructions => "[INSTRUCTIONS]",
            Marker::Rules => "[RULES]",
            Marker::FewShotExamples => "[FEW_SHOT_EXAMPLES]",
            Marker::Context => "[CONTEXT]",
            Marker::Question => "[QUESTION]",
            Marker::OutputFormat => "[OUTPUT_FORMAT]",
            Marker::Tools => "[TOOLS]",
        }
    }

    /// Field name used in teacher key/value replies.
    pub fn key(self) -> &'static str {
        let t = self.token();
        &t[1..t.len() - 1]
    }
}

/// Separator between the input and output sides of a few-shot line.
pub const EXAMPLE_ARROW: &str = " -> ";
/// Separator between `name=value` pairs.
pub const PAIR_DELIMITER: &str = "|||";

/// One few-shot demonstration supplied by the user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl FewShotExample {
    /// `a=1 ||| b=2 -> label=x`
    pub fn to_line(&self) -> String {
        format!("{}{EXAMPLE_ARROW}{}", pairs_to_text(&self.inputs), pairs_to_text(&self.outputs))
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let (lhs, rhs) = line.split_once(EXAMPLE_ARROW.trim())?;
        Some(Self { inputs: parse_pairs(lhs)?, outputs: parse_pairs(rhs)? })
    }
}

pub(crate) fn pairs_to_text(map: &BTreeMap<String, String>) -> String {
    map.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(&format!(" {PAIR_DELIMITER} "))
}

fn parse_pairs(text: &str) -> Option<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for part in text.split(PAIR_DELIMITER) {
        let (k, v) = part.split_once('=')?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() || out.insert(k.to_string(), v.to_string()).is_some() {
            return None;
        }
    }
    (!out.is_empty()).then_some(out)
}

/// Fields recovered from marker syntax. Empty strings mean "absent".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedInput {
    pub preamble: String,
    pub task: String,
    pub instructions: String,
    pub rules: String,
    pub few_shot_text: String,
    pub context: String,
    pub question: String,
    pub output_format: String,
    pub tools: String,
}

impl MarkedInput {
    pub fn get(&self, m: Marker) -> &str {
        match m {
            Marker::Task => &self.task,
            Marker::Instructions => &self.instructions,
            Marker::Rules => &self.rules,
            Marker::FewShotExamples => &self.few_shot_text,
            Marker::Context => &self.context,
            Marker::Question => &self.question,
            Marker::OutputFormat => &self.output_format,
            Marker::Tools => &self.tools,
        }
    }

    pub fn set(&mut self, m: Marker, value: String) {
        let slot = match m {
            Marker::Task => &mut self.task,
            Marker::Instructions => &mut self.instructions,
            Marker::Rules => &mut self.rules,
            Marker::FewShotExamples => &mut self.few_shot_text,
            Marker::Context => &mut self.context,
            Marker::Question => &mut self.question,
            Marker::OutputFormat => &mut self.output_format,
            Marker::Tools => &mut self.tools,
        };
        *slot = value;
    }

    /// Parsed few-shot lines; lines that do not follow the
    /// `name=value ||| ... -> name=value` shape are skipped.
    pub fn few_shot_examples(&self) -> Vec<FewShotExample> {
        self.few_shot_text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .filter_map(|l| {
                let ex = FewShotExample::parse_line(l);
                if ex.is_none() {
                    tracing::warn!(line = l, "ignoring malformed few-shot line");
                }
                ex
            })
            .collect()
    }

    pub fn has_markers(&self) -> bool {
        Marker::ALL.iter().any(|&m| !self.get(m).is_empty())
    }

    /// Marker-format text; the preamble (if any) comes first.
    pub fn to_marker_text(&self) -> String {
        let mut out = String::new();
        if !self.preamble.is_empty() {
            out.push_str(&self.preamble);
            out.push('\n');
        }
        for m in Marker::ALL {
            let v = self.get(m);
            if !v.is_empty() {
                out.push_str(m.token());
                out.push('\n');
                out.push_str(v);
                out.push('\n');
            }
        }
        out
    }
}

/// Splits raw input at marker tokens. Total: anything that is not an exact
/// marker token stays text.
pub fn parse_structured_input(raw: &str) -> MarkedInput {
    let mut hits: Vec<(usize, Marker)> = Vec::new();
    for (pos, _) in raw.match_indices('[') {
        let rest = &raw[pos..];
        if let Some(&m) = Marker::ALL.iter().find(|m| rest.starts_with(m.token())) {
            hits.push((pos, m));
        }
    }

    let mut out = MarkedInput::default();
    let first = hits.first().map_or(raw.len(), |h| h.0);
    out.preamble = raw[..first].trim().to_string();
    for (i, &(pos, m)) in hits.iter().enumerate() {
        let start = pos + m.token().len();
        let end = hits.get(i + 1).map_or(raw.len(), |h| h.0);
        out.set(m, raw[start..end].trim().to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_markers() {
        let p = parse_structured_input("[TASK] classify sentiment [RULES] one word");
        assert_eq!(p.task, "classify sentiment");
        assert_eq!(p.rules, "one word");
        assert!(p.instructions.is_empty() && p.context.is_empty() && p.preamble.is_empty());
    }

    #[test]
    fn no_markers_is_preamble() {
        let p = parse_structured_input("just summarize my emails");
        assert_eq!(p.preamble, "just summarize my emails");
        assert!(!p.has_markers());
    }

    #[test]
    fn last_duplicate_wins() {
        assert_eq!(parse_structured_input("[TASK] a [TASK] b").task, "b");
    }

    #[test]
    fn malformed_markers_are_text() {
        let p = parse_structured_input("intro [TASK do it [task] lower [RULES]x");
        assert_eq!(p.preamble, "intro [TASK do it [task] lower");
        assert_eq!(p.rules, "x");
    }

    #[test]
    fn few_shot_lines() {
        let p = parse_structured_input(
            "[FEW_SHOT_EXAMPLES]\ntext=great movie -> label=positive\ngarbage line\ntext=awful ||| topic=film -> label=negative",
        );
        let ex = p.few_shot_examples();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].outputs["label"], "positive");
        assert_eq!(ex[1].inputs.len(), 2);
        assert_eq!(FewShotExample::parse_line(&ex[1].to_line()).unwrap(), ex[1]);
    }

    fn field() -> impl Strategy<Value = String> {
        // Printable text without brackets cannot contain a marker literal.
        "[a-zA-Z0-9 ,.:;!?'\\-\n]{0,40}".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn parse_is_total(s in ".{0,200}") {
            let _ = parse_structured_input(&s);
        }

        #[test]
        fn marker_round_trip(fields in proptest::collection::vec(field(), 8), pre in field()) {
            let mut m = MarkedInput { preamble: pre, ..Default::default() };
            for (marker, v) in Marker::ALL.iter().zip(fields) {
                m.set(*marker, v);
            }
            let parsed = parse_structured_input(&m.to_marker_text());
            prop_assert_eq!(&parsed, &m);
            // Idempotent on its own serialization.
            prop_assert_eq!(parse_structured_input(&parsed.to_marker_text()), parsed);
        }
    }
}
