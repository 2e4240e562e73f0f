use std::collections::{BTreeSet, HashMap, HashSet};

use super::MetricError;

/// Trim, lowercase, collapse internal whitespace, drop trailing periods.
pub fn normalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches('.').trim_end().to_string()
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize(pred) == normalize(gold) {
        1.0
    } else {
        0.0
    }
}

fn counts(tokens: &[&str]) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry((*t).to_string()).or_insert(0) += 1;
    }
    m
}

/// Multiset token F1 over normalized whitespace tokens.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (normalize(pred), normalize(gold));
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    match (pt.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let gc = counts(&gt);
    let common: usize = counts(&pt).iter().map(|(t, n)| (*n).min(gc.get(t).copied().unwrap_or(0))).sum();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Unweighted mean of per-label F1 over the labels present in `golds`.
pub fn macro_f1<P: AsRef<str>, G: AsRef<str>>(preds: &[P], golds: &[G]) -> Result<f64, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if golds.is_empty() {
        return Err(MetricError::EmptyExampleSet);
    }
    let p: Vec<String> = preds.iter().map(|x| normalize(x.as_ref())).collect();
    let g: Vec<String> = golds.iter().map(|x| normalize(x.as_ref())).collect();
    let labels: BTreeSet<&str> = g.iter().map(String::as_str).collect();
    let total: f64 = labels
        .iter()
        .map(|&l| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (pi, gi) in p.iter().zip(&g) {
                match (pi == l, gi == l) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
            2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
        })
        .sum();
    Ok(total / labels.len() as f64)
}

fn trigram_counts(text: &str) -> HashMap<String, u64> {
    let chars: Vec<char> = normalize(text).chars().collect();
    let mut m = HashMap::new();
    if chars.is_empty() {
        return m;
    }
    if chars.len() < 3 {
        m.insert(chars.iter().collect(), 1);
        return m;
    }
    for w in chars.windows(3) {
        *m.entry(w.iter().collect()).or_insert(0) += 1;
    }
    m
}

/// Cosine similarity of character-trigram count vectors. Texts shorter than
/// three characters count as a single gram.
pub fn lexical_similarity(a: &str, b: &str) -> f64 {
    let (ca, cb) = (trigram_counts(a), trigram_counts(b));
    match (ca.is_empty(), cb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let dot: u64 = ca.iter().map(|(k, v)| v * cb.get(k).copied().unwrap_or(0)).sum();
    let na: u64 = ca.values().map(|v| v * v).sum();
    let nb: u64 = cb.values().map(|v| v * v).sum();
    (dot as f64 / ((na as f64) * (nb as f64)).sqrt()).clamp(0.0, 1.0)
}

/// Distinct lowercase tokens over total tokens; 0 for empty text.
pub fn complexity_term(prompt: &str) -> f64 {
    let tokens: Vec<String> = prompt.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<&String> = tokens.iter().collect();
    distinct.len() as f64 / tokens.len() as f64
}
