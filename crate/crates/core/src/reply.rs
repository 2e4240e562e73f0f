//! Parsing of structured teacher replies.

use crate::providers::{CompletionRequest, LlmClient, ProviderError};

/// Re-asks allowed after the first unparseable reply.
pub const REASKS: usize = 2;

/// Contents of every fenced block in `text`, in order. An unterminated final
/// fence runs to the end of the text.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    blocks
}

pub fn first_fenced(text: &str) -> Option<String> {
    fenced_blocks(text).into_iter().next()
}

/// Parses `KEY: value` lines. Keys are upper-cased; later duplicates win.
pub fn key_values(block: &str) -> Vec<(String, String)> {
    block
        .lines()
        .filter_map(|line| {
            let (k, v) = line.split_once(':')?;
            let key = k.trim().to_ascii_uppercase().replace([' ', '-'], "_");
            if key.is_empty() || key.contains(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
                return None;
            }
            Some((key, v.trim().to_string()))
        })
        .collect()
}

/// Normalizes a one-token enumeration answer: trims quotes, backticks and
/// trailing punctuation, lowercases, and maps `-`/space to `_`.
pub fn enum_token(reply: &str) -> String {
    let body = first_fenced(reply).unwrap_or_else(|| reply.to_string());
    body.trim()
        .trim_end_matches(['.', '!'])
        .trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '*'))
        .trim()
        .to_lowercase()
        .replace(['-', ' '], "_")
}

/// Outcome of a parse-with-re-asks exchange.
pub enum Asked<T> {
    Parsed(T),
    /// Every attempt failed to parse; carries the last failure reason.
    Failed(String),
}

/// Sends `prompt`, and on a parse failure re-sends it with a corrective note,
/// up to [`REASKS`] more times.
pub fn ask_parsed<T>(
    client: &LlmClient,
    prompt: &str,
    mut parse: impl FnMut(&str) -> Result<T, String>,
) -> Result<Asked<T>, ProviderError> {
    let mut reason = String::new();
    for attempt in 0..=REASKS {
        let text = if attempt == 0 {
            prompt.to_string()
        } else {
            format!(
                "{prompt}\n\nYour previous reply could not be used ({reason}). \
                 Follow the reply format exactly."
            )
        };
        let reply = client.complete(&CompletionRequest::user(text))?;
        match parse(&reply.text) {
            Ok(v) => return Ok(Asked::Parsed(v)),
            Err(why) => {
                tracing::debug!(attempt, %why, "unparseable teacher reply");
                reason = why;
            }
        }
    }
    Ok(Asked::Failed(reason))
}
