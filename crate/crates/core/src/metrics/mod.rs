//! Task metrics and the cost-aware objective.
//!
//! The objective is a score to maximize:
//!
//! ```text
//! combined = alpha * performance
//!          + beta  * exp(-lambda * prompt_length)
//!          + gamma * unique_tokens / total_tokens
//! ```
//!
//! With `alpha = 1, beta = lambda, gamma = 0` it reduces to
//! `performance + lambda * exp(-lambda * prompt_length)`, a shortness bonus
//! that grows with `lambda`.

mod evaluate;
mod text;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{estimate_tokens, ProviderError};

pub use evaluate::{evaluate, similarity, ExampleOutcome, ExampleScorer, StudentScorer, OUTPUT_LENGTH_LAMBDA};
pub use text::{
    complexity_term, exact_match, lexical_similarity, macro_f1, normalize, token_f1,
};

pub const DEFAULT_LAMBDA: f64 = 0.005;

#[derive(Error, Debug)]
pub enum MetricError {
    #[error("prediction and gold lists differ in length ({preds} vs {golds})")]
    LengthMismatch { preds: usize, golds: usize },

    #[error("evaluation needs at least one example")]
    EmptyExampleSet,

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl MetricError {
    pub fn name(&self) -> &'static str {
        match self {
            MetricError::LengthMismatch { .. } => "LengthMismatch",
            MetricError::EmptyExampleSet => "EmptyExampleSet",
            MetricError::Provider(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ExactMatch,
    TokenF1,
    MacroF1,
    Similarity,
    SimilarityPlusExactMatch,
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact_match" => Ok(MetricKind::ExactMatch),
            "token_f1" => Ok(MetricKind::TokenF1),
            "macro_f1" => Ok(MetricKind::MacroF1),
            "similarity" => Ok(MetricKind::Similarity),
            "similarity_plus_exact_match" => Ok(MetricKind::SimilarityPlusExactMatch),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityBackend {
    Embedding,
    Lexical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricSpec {
    pub primary_metric: MetricKind,
    pub length_penalty_enabled: bool,
    pub similarity_backend: SimilarityBackend,
}

impl MetricSpec {
    pub fn plain(kind: MetricKind) -> Self {
        Self {
            primary_metric: kind,
            length_penalty_enabled: false,
            similarity_backend: SimilarityBackend::Lexical,
        }
    }
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ObjectiveConfig {
    /// `alpha = 1`, `beta = lambda`, `gamma = 0`.
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, alpha: 1.0, beta: lambda, gamma: 0.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        Ok(())
    }
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self::with_lambda(DEFAULT_LAMBDA)
    }
}

/// `exp(-lambda * prompt_length)`.
pub fn cost_term(lambda: f64, prompt_length: usize) -> f64 {
    (-lambda * prompt_length as f64).exp()
}

pub fn combined_objective(performance: f64, prompt: &str, cfg: &ObjectiveConfig) -> f64 {
    combine(performance, estimate_tokens(prompt), complexity_term(prompt), cfg)
}

pub(crate) fn combine(performance: f64, length: usize, complexity: f64, cfg: &ObjectiveConfig) -> f64 {
    cfg.alpha * performance + cfg.beta * cost_term(cfg.lambda, length) + cfg.gamma * complexity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScoreRecord {
    pub example_id: String,
    pub score: f64,
}

/// Outcome of scoring one prompt on a set of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub performance: f64,
    pub prompt_length: usize,
    pub length_term: f64,
    pub complexity_term: f64,
    pub combined: f64,
    pub per_example: Vec<ExampleScoreRecord>,
    pub metric: MetricSpec,
    /// Set-level score for metrics that are not per-example means
    /// (macro-F1 over the first output field).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_score: Option<f64>,
}

impl EvaluationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("evaluation serializes")
    }

    /// `example_id,score` rows with a header.
    pub fn per_example_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["example_id", "score"]).expect("in-memory csv");
        for r in &self.per_example {
            w.write_record([r.example_id.as_str(), &r.score.to_string()]).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_term_values() {
        assert_eq!(cost_term(0.0, 0), 1.0);
        assert_eq!(cost_term(0.0, 12345), 1.0);
        assert!((cost_term(0.005, 11) - 0.946485).abs() < 1e-6);
        assert!((cost_term(0.05, 11) - 0.576950).abs() < 1e-6);
        for len in 0..200 {
            assert!(cost_term(0.01, len + 1) < cost_term(0.01, len));
        }
    }

    #[test]
    fn combined_values() {
        let eleven = "w ".repeat(11);
        assert_eq!(combined_objective(0.9, &eleven, &ObjectiveConfig::with_lambda(0.0)), 0.9);
        let c = combined_objective(0.9, &eleven, &ObjectiveConfig::with_lambda(0.05));
        assert!((c - 0.928848).abs() < 1e-6, "{c}");
        let cfg = ObjectiveConfig::with_lambda(0.01);
        assert!(combined_objective(0.7, "a b", &cfg) > combined_objective(0.7, "a b c", &cfg));
    }

    #[test]
    fn gamma_penalizes_repetition() {
        let cfg = ObjectiveConfig { lambda: 0.0, alpha: 1.0, beta: 0.0, gamma: 0.5 };
        let varied = combined_objective(0.5, "a b c d", &cfg);
        let padded = combined_objective(0.5, "a a a a", &cfg);
        assert!(varied > padded);
        assert!((padded - 0.625).abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let r = EvaluationResult {
            performance: 0.5,
            prompt_length: 2,
            length_term: 1.0,
            complexity_term: 1.0,
            combined: 0.5,
            per_example: vec![
                ExampleScoreRecord { example_id: "ex-0000".into(), score: 1.0 },
                ExampleScoreRecord { example_id: "ex-0001".into(), score: 0.0 },
            ],
            metric: MetricSpec::plain(MetricKind::ExactMatch),
            corpus_score: None,
        };
        assert_eq!(r.per_example_csv(), "example_id,score\nex-0000,1\nex-0001,0\n");
        let back: EvaluationResult = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
