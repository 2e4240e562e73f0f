use crate::config::FieldSchema;

use super::{example_id, BatchLog, SynthError, SyntheticDataset, SyntheticExample};

/// One JSON object per line.
pub fn examples_to_jsonl(examples: &[SyntheticExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("example serializes"));
        out.push('\n');
    }
    out
}

/// Reads JSONL examples and checks each against `schema`. Lines without an
/// id are numbered by position.
pub fn dataset_from_jsonl(raw: &str, schema: &FieldSchema) -> Result<SyntheticDataset, SynthError> {
    let mut examples = Vec::new();
    for (lineno, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut e: SyntheticExample = serde_json::from_str(line)
            .map_err(|err| SynthError::Format(format!("line {}: {err}", lineno + 1)))?;
        e.validate(schema).map_err(|why| SynthError::Schema(format!("line {}: {why}", lineno + 1)))?;
        if e.id.is_empty() {
            e.id = example_id(examples.len());
        }
        examples.push(e);
    }
    Ok(SyntheticDataset { examples, schema: schema.clone(), generation_log: Vec::new() })
}

pub fn generation_log_csv(log: &[BatchLog]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["batch_index", "requested", "accepted", "rejected"]).expect("in-memory csv");
    for b in log {
        w.write_record([b.batch_index, b.requested, b.accepted, b.rejected].map(|v| v.to_string()))
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}
