use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{
    combine, complexity_term, cost_term, exact_match, lexical_similarity, macro_f1, token_f1,
    EvaluationResult, ExampleScoreRecord, MetricError, MetricKind, MetricSpec, ObjectiveConfig,
    SimilarityBackend,
};
use crate::optimizer::{parse_student_outputs, CandidatePrompt};
use crate::providers::{estimate_tokens, CompletionRequest, LlmClient};
use crate::synthgen::SyntheticExample;

/// Coefficient of the output-length penalty applied when a metric enables it.
pub const OUTPUT_LENGTH_LAMBDA: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleOutcome {
    pub score: f64,
    /// Prediction for the first output field, used by set-level metrics.
    pub prediction: Option<String>,
}

/// Scores one example under a candidate prompt.
pub trait ExampleScorer: Sync {
    fn metric(&self) -> MetricSpec;

    fn score_example(
        &self,
        prompt: &CandidatePrompt,
        example: &SyntheticExample,
    ) -> Result<ExampleOutcome, MetricError>;

    /// Examples scored concurrently by [`evaluate`].
    fn parallelism(&self) -> usize {
        1
    }
}

/// Runs the student model and scores its outputs against gold.
#[derive(Debug, Clone)]
pub struct StudentScorer {
    student: LlmClient,
    metric: MetricSpec,
}

impl StudentScorer {
    pub fn new(student: LlmClient, metric: MetricSpec) -> Self {
        Self { student, metric }
    }

    pub fn score_text(&self, pred: &str, gold: &str) -> Result<f64, MetricError> {
        Ok(match self.metric.primary_metric {
            // Per example, macro-F1 reduces to label agreement; the set-level
            // value is reported separately as the corpus score.
            MetricKind::ExactMatch | MetricKind::MacroF1 => exact_match(pred, gold),
            MetricKind::TokenF1 => token_f1(pred, gold),
            MetricKind::Similarity => {
                similarity(pred, gold, self.metric.similarity_backend, Some(&self.student))?
            }
            MetricKind::SimilarityPlusExactMatch => exact_match(pred, gold).max(similarity(
                pred,
                gold,
                self.metric.similarity_backend,
                Some(&self.student),
            )?),
        })
    }
}

impl ExampleScorer for StudentScorer {
    fn metric(&self) -> MetricSpec {
        self.metric
    }

    fn score_example(
        &self,
        prompt: &CandidatePrompt,
        example: &SyntheticExample,
    ) -> Result<ExampleOutcome, MetricError> {
        let request = CompletionRequest::user(prompt.render(&example.inputs));
        let reply = self.student.complete(&request)?;
        let predicted = parse_student_outputs(&reply.text, &prompt.render_schema);
        let fields = &prompt.render_schema.output_fields;
        let mut total = 0.0;
        for f in fields {
            let pred = predicted.get(f).map(String::as_str).unwrap_or("");
            let gold = example.outputs.get(f).map(String::as_str).unwrap_or("");
            total += self.score_text(pred, gold)?;
        }
        let mut score = total / fields.len().max(1) as f64;
        if self.metric.length_penalty_enabled {
            score *= cost_term(OUTPUT_LENGTH_LAMBDA, estimate_tokens(&reply.text));
        }
        Ok(ExampleOutcome {
            score,
            prediction: fields.first().map(|f| predicted.get(f).cloned().unwrap_or_default()),
        })
    }

    fn parallelism(&self) -> usize {
        self.student.parallelism()
    }
}

/// Similarity in `[0, 1]`. The embedding backend maps cosine from `[-1, 1]`.
pub fn similarity(
    pred: &str,
    gold: &str,
    backend: SimilarityBackend,
    embedder: Option<&LlmClient>,
) -> Result<f64, MetricError> {
    match (backend, embedder) {
        (SimilarityBackend::Lexical, _) => Ok(lexical_similarity(pred, gold)),
        (SimilarityBackend::Embedding, None) => Err(MetricError::Provider(
            crate::providers::ProviderError::InvalidConfig("embedding similarity needs a client".into()),
        )),
        (SimilarityBackend::Embedding, Some(client)) => {
            let (a, b) = (client.embed(pred)?, client.embed(gold)?);
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Ok(if pred == gold { 1.0 } else { 0.0 });
            }
            Ok(((dot / (na * nb) + 1.0) / 2.0).clamp(0.0, 1.0))
        }
    }
}

/// Scores `prompt` on every example and fills the objective terms.
pub fn evaluate(
    prompt: &CandidatePrompt,
    examples: &[SyntheticExample],
    scorer: &dyn ExampleScorer,
    cfg: &ObjectiveConfig,
) -> Result<EvaluationResult, MetricError> {
    if examples.is_empty() {
        return Err(MetricError::EmptyExampleSet);
    }
    let outcomes = score_all(prompt, examples, scorer)?;

    let per_example: Vec<ExampleScoreRecord> = examples
        .iter()
        .zip(&outcomes)
        .map(|(ex, o)| ExampleScoreRecord { example_id: ex.id.clone(), score: o.score })
        .collect();
    let performance = per_example.iter().map(|r| r.score).sum::<f64>() / per_example.len() as f64;

    let metric = scorer.metric();
    let corpus_score = match (metric.primary_metric, prompt.render_schema.output_fields.first()) {
        (MetricKind::MacroF1, Some(field)) => {
            let preds: Vec<String> =
                outcomes.iter().map(|o| o.prediction.clone().unwrap_or_default()).collect();
            let golds: Vec<String> =
                examples.iter().map(|e| e.outputs.get(field).cloned().unwrap_or_default()).collect();
            Some(macro_f1(&preds, &golds)?)
        }
        _ => None,
    };

    let text = prompt.prompt_text();
    let prompt_length = estimate_tokens(&text);
    let complexity = complexity_term(&text);
    Ok(EvaluationResult {
        performance,
        prompt_length,
        length_term: cost_term(cfg.lambda, prompt_length),
        complexity_term: complexity,
        combined: combine(performance, prompt_length, complexity, cfg),
        per_example,
        metric,
        corpus_score,
    })
}

fn score_all(
    prompt: &CandidatePrompt,
    examples: &[SyntheticExample],
    scorer: &dyn ExampleScorer,
) -> Result<Vec<ExampleOutcome>, MetricError> {
    let workers = scorer.parallelism().clamp(1, examples.len());
    if workers == 1 {
        return examples.iter().map(|ex| scorer.score_example(prompt, ex)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ExampleOutcome, MetricError>>>> =
        Mutex::new((0..examples.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(ex) = examples.get(i) else { break };
                let r = scorer.score_example(prompt, ex);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
