//! Acceptance suite. Each criterion prints one PASS or FAIL line; the test
//! fails if any criterion does.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use common::*;
use promptloom::cli::run;
use promptloom::view::OptimizeResponse;
use promptloom_core::config::{
    parse_structured_input, strategy_defaults, FieldSchema, MarkedInput, Marker, OptimizerBackend, OptimizerConfig,
    PromptingTechnique, SearchStrategy, TaskSpec,
};
use promptloom_core::metrics::{
    cost_term, exact_match, macro_f1, token_f1, ExampleOutcome, ExampleScorer, MetricError, MetricKind, MetricSpec,
    ObjectiveConfig,
};
use promptloom_core::optimizer::{search, CandidatePrompt};
use promptloom_core::providers::{estimate_tokens, LlmClient, MockProvider, ModelConfig, ModelRole, UsageLedger};
use promptloom_core::session::{self, FeedbackDraft, SessionStore};
use promptloom_core::synthgen::{
    extract_template, generate_dataset, optimal_batch_size, samples_from_spec, split_dataset, Provenance,
    SyntheticDataset, SyntheticExample,
};
use promptloom_core::RunOptions;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. Strategy parameters.
fn strategy_parameters() -> Outcome {
    for (s, want) in [
        (SearchStrategy::QuickSearch, (30, 10)),
        (SearchStrategy::ModerateSearch, (100, 15)),
        (SearchStrategy::HeavySearch, (300, 30)),
    ] {
        let c = strategy_defaults(s);
        ensure((c.n_samples, c.n_trials) == want, || format!("{s:?}: got ({}, {})", c.n_samples, c.n_trials))?;
    }
    Ok(())
}

fn example(i: usize, label: &str) -> SyntheticExample {
    SyntheticExample {
        id: format!("ex-{i:04}"),
        inputs: BTreeMap::from([("text".to_string(), format!("review number {i}"))]),
        outputs: BTreeMap::from([("label".to_string(), label.to_string())]),
        provenance: Provenance::Generated,
        flagged: false,
    }
}

fn dataset(n: usize) -> SyntheticDataset {
    let labels = ["positive", "negative"];
    SyntheticDataset {
        examples: (0..n).map(|i| example(i, labels[i % 2])).collect(),
        schema: FieldSchema::new(["text"], ["label"]).unwrap(),
        generation_log: vec![],
    }
}

// 2. Split arithmetic.
fn split_arithmetic() -> Outcome {
    let d = dataset(30);
    for stratify in [None, Some("label")] {
        let s = split_dataset(&d, 0.2, stratify, 3).map_err(|e| e.to_string())?;
        ensure(s.train.len() == 6 && s.val.len() == 24, || {
            format!("stratify {stratify:?}: train {} val {}", s.train.len(), s.val.len())
        })?;
    }
    Ok(())
}

/// exp(-x) by Taylor series with compensated summation, independent of libm.
fn exp_neg_series(x: f64) -> f64 {
    let (mut sum, mut comp, mut term) = (1.0f64, 0.0f64, 1.0f64);
    for k in 1..200 {
        term *= -x / k as f64;
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if term.abs() < 1e-30 {
            break;
        }
    }
    sum
}

// 3. Cost term values.
fn cost_terms() -> Outcome {
    for l in [0, 1, 11, 29, 1000, 1_000_000] {
        ensure(cost_term(0.0, l) == 1.0, || format!("cost_term(0, {l}) = {}", cost_term(0.0, l)))?;
    }
    for (lambda, want) in [(0.005, 0.946485), (0.05, 0.576950)] {
        let got = cost_term(lambda, 11);
        ensure((got - want).abs() <= 1e-6, || format!("cost_term({lambda}, 11) = {got}, want {want}"))?;
        let oracle = exp_neg_series(lambda * 11.0);
        ensure((got - oracle).abs() <= 1e-12, || format!("cost_term({lambda}, 11) = {got}, series oracle {oracle}"))?;
    }
    Ok(())
}

struct LengthScorer;

impl ExampleScorer for LengthScorer {
    fn metric(&self) -> MetricSpec {
        MetricSpec::plain(MetricKind::ExactMatch)
    }

    // Rises concavely with prompt length, flat at the 11-token baseline.
    fn score_example(&self, p: &CandidatePrompt, _: &SyntheticExample) -> Result<ExampleOutcome, MetricError> {
        let l = estimate_tokens(&p.prompt_text()) as f64;
        Ok(ExampleOutcome { score: 0.80 + 0.002 * (1.0 - (-(l - 11.0) / 2.0).exp()), prediction: None })
    }
}

// 4. Length trend across lambda.
fn lambda_trend() -> Outcome {
    let words = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
    let pool = vec![words(11), words(16), words(22), words(29)];
    let schema = FieldSchema::new(["text"], ["label"]).unwrap();
    let template = CandidatePrompt::new("", PromptingTechnique::Predict, schema);
    let baseline_len = estimate_tokens(&pool[0]);
    let split = split_dataset(&dataset(30), 0.2, None, 1).map_err(|e| e.to_string())?;
    let cfg = OptimizerConfig { backend: OptimizerBackend::StructuredSearch, ..strategy_defaults(SearchStrategy::QuickSearch) };
    let mut lengths = Vec::new();
    for lambda in [0.0, 0.005, 0.05] {
        let obj = ObjectiveConfig::with_lambda(lambda);
        let r = search(&pool, &[], &split, &template, &LengthScorer, &cfg, &obj, 7).map_err(|e| e.to_string())?;
        lengths.push(r.best_eval.prompt_length);
    }
    ensure(lengths.windows(2).all(|w| w[0] >= w[1]), || format!("lengths not non-increasing: {lengths:?}"))?;
    ensure(lengths[2] == baseline_len, || format!("lambda 0.05 picked length {}, baseline is {baseline_len}", lengths[2]))?;
    ensure(lengths[0] > lengths[2], || format!("no trend: {lengths:?}"))
}

const VOCAB: &[&str] = &["the", "The", "cat", "CAT", "sat", "on", "mat", "a", "dog", "ran"];

fn random_text(rng: &mut StdRng) -> String {
    let n = rng.random_range(0..7);
    let mut words: Vec<String> = (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string()).collect();
    if rng.random_bool(0.2) {
        if let Some(last) = words.last_mut() {
            last.push('.');
        }
    }
    let sep = if rng.random_bool(0.3) { "  \t" } else { " " };
    let pad = if rng.random_bool(0.2) { " " } else { "" };
    format!("{pad}{}{pad}", words.join(sep))
}

fn oracle_tokens(s: &str) -> Vec<String> {
    let joined = s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ");
    joined.trim_end_matches('.').split_whitespace().map(String::from).collect()
}

/// Multiset overlap by removing each matched gold token once.
fn oracle_token_f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (oracle_tokens(pred), oracle_tokens(gold));
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut remaining = g.clone();
    let mut overlap = 0usize;
    for t in &p {
        if let Some(i) = remaining.iter().position(|x| x == t) {
            remaining.remove(i);
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let (precision, recall) = (overlap as f64 / p.len() as f64, overlap as f64 / g.len() as f64);
    2.0 * precision * recall / (precision + recall)
}

/// Per-label precision and recall from a full confusion matrix.
fn oracle_macro_f1(preds: &[String], golds: &[String]) -> f64 {
    let norm = |s: &String| oracle_tokens(s).join(" ");
    let p: Vec<String> = preds.iter().map(norm).collect();
    let g: Vec<String> = golds.iter().map(norm).collect();
    let mut labels: Vec<String> = p.iter().chain(&g).cloned().collect();
    labels.sort();
    labels.dedup();
    let idx = |l: &String| labels.iter().position(|x| x == l).unwrap();
    let mut matrix = vec![vec![0usize; labels.len()]; labels.len()];
    for (pi, gi) in p.iter().zip(&g) {
        matrix[idx(gi)][idx(pi)] += 1;
    }
    let mut gold_labels: Vec<&String> = g.iter().collect();
    gold_labels.sort();
    gold_labels.dedup();
    let mut total = 0.0;
    for l in &gold_labels {
        let k = idx(l);
        let tp = matrix[k][k] as f64;
        let predicted: usize = (0..labels.len()).map(|r| matrix[r][k]).sum();
        let actual: usize = matrix[k].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / actual as f64;
        total += if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    }
    total / gold_labels.len() as f64
}

// 5. Metric oracles.
fn metric_oracles() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2024);
    for case in 0..2000 {
        let (a, b) = (random_text(&mut rng), random_text(&mut rng));
        let (got, want) = (token_f1(&a, &b), oracle_token_f1(&a, &b));
        ensure((got - want).abs() <= 1e-12, || format!("token_f1 case {case} ({a:?}, {b:?}): {got} vs {want}"))?;
    }
    let labels = ["pos", "neg", "Neutral", "neutral.", "mixed"];
    for case in 0..2000 {
        let n = rng.random_range(1..25);
        let pick = |rng: &mut StdRng| labels[rng.random_range(0..labels.len())].to_string();
        let golds: Vec<String> = (0..n).map(|_| pick(&mut rng)).collect();
        let preds: Vec<String> = (0..n).map(|_| pick(&mut rng)).collect();
        let got = macro_f1(&preds, &golds).map_err(|e| e.to_string())?;
        let want = oracle_macro_f1(&preds, &golds);
        ensure((got - want).abs() <= 1e-12, || format!("macro_f1 case {case}: {got} vs {want}"))?;
    }
    let table = [
        ("Paris", "paris", 1.0),
        ("42.", "42", 1.0),
        ("41", "42", 0.0),
        ("  New   York ", "new york", 1.0),
        ("Yes.", "yes", 1.0),
        ("yes", "no", 0.0),
        ("", "", 1.0),
    ];
    for (p, g, want) in table {
        ensure(exact_match(p, g) == want, || format!("exact_match({p:?}, {g:?}) != {want}"))?;
    }
    ensure(macro_f1(&["a"], &["a", "b"]).is_err(), || "length mismatch accepted".into())
}

fn random_field(rng: &mut StdRng) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ,.:;!?'-\n";
    let n = rng.random_range(0..40);
    let s: String = (0..n).map(|_| CHARS[rng.random_range(0..CHARS.len())] as char).collect();
    s.trim().to_string()
}

// 6. Marker round trip.
fn marker_round_trip() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    for case in 0..100 {
        let mut m = MarkedInput { preamble: random_field(&mut rng), ..Default::default() };
        for marker in Marker::ALL {
            if rng.random_bool(0.8) {
                m.set(marker, random_field(&mut rng));
            }
        }
        let text = m.to_marker_text();
        let parsed = parse_structured_input(&text);
        ensure(parsed == m, || format!("case {case}: {text:?} parsed to {parsed:?}"))?;
        let spec = TaskSpec::from_marked(&text, &parsed);
        ensure(spec.task == m.task && spec.rules == m.rules, || format!("case {case}: spec fields drifted"))?;
    }
    Ok(())
}

// 7. Synthetic data contract.
fn synthgen_contract() -> Outcome {
    let (engine, _) = fixture_engine();
    let spec = engine.configure(TASK).map_err(|e| e.to_string())?;
    let schema = spec.schema.clone().ok_or("no schema")?;
    let template = extract_template(&samples_from_spec(&spec), &schema).map_err(|e| e.to_string())?;
    // A budget that fits exactly ten records per call.
    let budget = template.tokens_per_record() * 10;
    let batch = optimal_batch_size(&template, budget).map_err(|e| e.to_string())?;

    let counter = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let c = counter.clone();
    let mock = MockProvider::default().with_responder(move |r| {
        let n: usize = r.user_text.split("Generate exactly ").nth(1)?.split_whitespace().next()?.parse().ok()?;
        let lines: Vec<String> = (0..n)
            .map(|_| {
                let k = c.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let label = if k.is_multiple_of(2) { "positive" } else { "negative" };
                format!("text=review {k} ||| label={label}")
            })
            .collect();
        Some(format!("```\n{}\n```", lines.join("\n")))
    });
    let teacher = LlmClient::mock(ModelConfig::mock(ModelRole::Teacher), mock, std::sync::Arc::new(UsageLedger::default()));
    let d = generate_dataset(&spec, &schema, 30, &teacher, budget).map_err(|e| e.to_string())?;
    let calls = teacher.ledger().calls("teacher:mock-teacher") as usize;
    ensure(d.examples.len() == 30, || format!("{} examples", d.examples.len()))?;
    ensure(d.examples.iter().all(|e| e.validate(&schema).is_ok()), || "schema-invalid example".into())?;
    ensure(calls == 30usize.div_ceil(batch), || format!("{calls} calls for batch {batch}"))?;
    ensure(batch == 10, || format!("batch {batch}"))?;

    let junk = MockProvider::script([("Generate exactly", "```\nnot a record\nlabel=only\n```")]).map_err(|e| e.to_string())?;
    let teacher = LlmClient::mock(ModelConfig::mock(ModelRole::Teacher), junk, std::sync::Arc::new(UsageLedger::default()));
    match generate_dataset(&spec, &schema, 30, &teacher, budget) {
        Err(e) if e.name() == "GenerationStalled" => Ok(()),
        Err(e) => Err(format!("expected GenerationStalled, got {}", e.name())),
        Ok(_) => Err("always-invalid mock produced a dataset".into()),
    }
}

fn cli_optimize(store: &std::path::Path, seed: &str) -> Result<OptimizeResponse, String> {
    let args = [
        "promptloom", "--store-dir", store.to_str().unwrap(), "--json", "optimize", "--input", TASK,
        "--mock-script", FIXTURE, "--seed", seed, "--backend", "structured_search",
    ];
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(args, &mut out, &mut err);
    ensure(code == 0, || format!("exit {code}: {}", String::from_utf8_lossy(&err)))?;
    serde_json::from_slice(&out).map_err(|e| e.to_string())
}

// 8. End-to-end determinism.
fn e2e_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = cli_optimize(dir.path(), "7")?;
    let b = cli_optimize(dir.path(), "7")?;
    ensure(a.best_prompt_text == b.best_prompt_text, || "best prompt differs between runs".into())?;
    let store = SessionStore::open(dir.path()).map_err(|e| e.to_string())?;
    let (sa, sb) = (store.load(&a.session_id).map_err(|e| e.to_string())?, store.load(&b.session_id).map_err(|e| e.to_string())?);
    ensure(!sa.runs[0].trials.is_empty(), || "no trials recorded".into())?;
    ensure(sa.runs == sb.runs, || "trial logs differ between runs".into())?;
    ensure(OptimizeResponse::of(&sa) == a, || "stored session disagrees with CLI output".into())?;

    let (engine, _) = fixture_engine();
    let s = engine
        .run_session(TASK, &RunOptions { seed: 7, ..Default::default() }, &store, None)
        .map_err(|e| e.to_string())?;
    let loaded = store.load(&s.id).map_err(|e| e.to_string())?;
    ensure(loaded == s, || "session did not reload losslessly".into())
}

// 9. Feedback loop.
fn feedback_loop() -> Outcome {
    for backend in [OptimizerBackend::SimpleMetaPrompt, OptimizerBackend::StructuredSearch] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = SessionStore::open(dir.path()).map_err(|e| e.to_string())?;
        let (engine, mock) = fixture_engine();
        let opts = RunOptions { seed: 3, backend: Some(backend), ..Default::default() };
        let mut s = engine.run_session(TASK, &opts, &store, None).map_err(|e| e.to_string())?;
        let latest = s.latest().unwrap().clone();
        let chars: Vec<char> = latest.prompt_text.chars().collect();

        let len = chars.len();
        for (start, end) in [(10, 5), (0, len + 1), (len + 2, len + 3)] {
            let bad = session::record_feedback(&store, &mut s, FeedbackDraft::on_version(latest.index, start, end, "x"));
            match bad {
                Err(e) if e.name() == "OffsetOutOfRange" => {}
                other => return Err(format!("offsets ({start}, {end}) gave {other:?}")),
            }
        }

        let comment = "Tell the model how to treat mixed reviews";
        let (start, end) = (0, len.min(8));
        let item = session::record_feedback(&store, &mut s, FeedbackDraft::on_version(latest.index, start, end, comment))
            .map_err(|e| e.to_string())?;
        let expected: String = chars[start..end].iter().collect();
        ensure(item.selected_text == expected, || format!("selected {:?}, prompt has {expected:?}", item.selected_text))?;

        let versions = s.versions.len();
        let before = mock.calls().len();
        session::integrate_feedback(&store, &mut s).map_err(|e| e.to_string())?;
        engine.reoptimize(&store, &mut s).map_err(|e| e.to_string())?;
        ensure(s.versions.len() == versions + 1, || format!("{backend:?}: {} versions after reoptimize", s.versions.len()))?;
        let key = match backend {
            OptimizerBackend::SimpleMetaPrompt => "Rewrite the task",
            OptimizerBackend::StructuredSearch => "Write exactly",
        };
        let proposal = mock.calls()[before..].iter().find(|r| r.user_text.contains(key)).map(|r| r.user_text.clone());
        ensure(proposal.as_deref().is_some_and(|p| p.contains(comment)), || {
            format!("{backend:?}: proposal prompt lacks the feedback comment")
        })?;
        let reloaded = store.load(&s.id).map_err(|e| e.to_string())?;
        ensure(reloaded == s, || "session after reoptimize did not persist".into())?;
    }
    Ok(())
}

// 10. Baseline safety.
fn baseline_safety() -> Outcome {
    let (engine, _) = fixture_engine();
    for seed in 0..20u64 {
        let backend = if seed % 2 == 0 { OptimizerBackend::StructuredSearch } else { OptimizerBackend::SimpleMetaPrompt };
        let lambda = [0.0, 0.005, 0.05][seed as usize % 3];
        let opts = RunOptions { seed, backend: Some(backend), lambda: Some(lambda), ..Default::default() };
        let out = engine.run(TASK, &opts).map_err(|e| e.to_string())?;
        let (best, base) = (out.result.best_eval.combined, out.result.baseline_eval.combined);
        ensure(best >= base, || format!("seed {seed} {backend:?}: best {best} < baseline {base}"))?;
    }
    Ok(())
}

// 11. Service contract.
fn service_contract() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = SessionStore::open(dir.path()).map_err(|e| e.to_string())?;
        let (engine, _) = fixture_engine();
        let id = engine
            .run_session(TASK, &RunOptions { seed: 7, ..Default::default() }, &store, Some("fixture".into()))
            .map_err(|e| e.to_string())?
            .id;
        let gate = Gate::default();
        let app = app(&store, gated_factory(gate.clone()));
        let expect = |what: &str, got: (StatusCode, String), code: StatusCode, name: Option<&str>| -> Outcome {
            ensure(got.0 == code, || format!("{what}: status {} body {}", got.0, got.1))?;
            if let Some(name) = name {
                let v: serde_json::Value = serde_json::from_str(&got.1).map_err(|e| format!("{what}: {e}"))?;
                ensure(v["error"] == name && v["detail"].is_string(), || format!("{what}: body {}", got.1))?;
            }
            Ok(())
        };
        let draft = |start: usize, end: usize| {
            format!(r#"{{"target":"prompt_version","target_ref":"1","start_offset":{start},"end_offset":{end},"comment":"c"}}"#)
        };

        let health = call(&app, "GET", "/healthz", None).await;
        ensure(health == (StatusCode::OK, "ok".into()), || format!("healthz {health:?}"))?;
        expect("list", call(&app, "GET", "/v1/sessions", None).await, StatusCode::OK, None)?;
        expect("get", call(&app, "GET", "/v1/sessions/fixture", None).await, StatusCode::OK, None)?;
        expect("dataset", call(&app, "GET", "/v1/sessions/fixture/dataset", None).await, StatusCode::OK, None)?;
        expect("status", call(&app, "GET", "/v1/sessions/fixture/status", None).await, StatusCode::OK, None)?;
        expect("unknown", call(&app, "GET", "/v1/sessions/ghost", None).await, StatusCode::NOT_FOUND, Some("NotFound"))?;
        let fb = "/v1/sessions/fixture/feedback";
        expect("bad offsets", call(&app, "POST", fb, Some(&draft(10, 5))).await, StatusCode::BAD_REQUEST, Some("OffsetOutOfRange"))?;
        expect(
            "unknown field",
            call(&app, "POST", "/v1/optimize", Some(r#"{"raw_input":"x","extra":1}"#)).await,
            StatusCode::BAD_REQUEST,
            Some("InvalidRequest"),
        )?;
        let reopt = "/v1/sessions/fixture/reoptimize";
        expect("nothing to do", call(&app, "POST", reopt, None).await, StatusCode::CONFLICT, Some("ReoptimizationNotRequired"))?;
        expect("feedback", call(&app, "POST", fb, Some(&draft(0, 8))).await, StatusCode::CREATED, None)?;
        expect("reoptimize", call(&app, "POST", reopt, None).await, StatusCode::ACCEPTED, None)?;
        expect("in flight", call(&app, "POST", reopt, None).await, StatusCode::CONFLICT, Some("JobInFlight"))?;

        let (code, body) = call(&app, "POST", "/v1/optimize", Some(&format!(r#"{{"raw_input":"{TASK}","seed":7}}"#))).await;
        ensure(code == StatusCode::ACCEPTED, || format!("optimize {code} {body}"))?;
        let new_id = json(&body)["session_id"].as_str().unwrap_or_default().to_string();
        let first = status_of(&app, &new_id).await;
        ensure(first == "pending", || format!("queued job reported {first}"))?;
        gate.open();
        for job in [&id, &new_id] {
            let s = settle(&app, job).await;
            ensure(s["status"] == "done", || format!("{job}: {s}"))?;
        }

        let uris = [
            "/v1/sessions".to_string(),
            format!("/v1/sessions/{id}"),
            format!("/v1/sessions/{id}/dataset"),
            format!("/v1/sessions/{new_id}"),
            format!("/v1/sessions/{new_id}/status"),
        ];
        let mut before = Vec::new();
        for u in &uris {
            before.push(call(&app, "GET", u, None).await);
        }
        drop(app);
        let restarted = common::app(&SessionStore::open(dir.path()).map_err(|e| e.to_string())?, open_factory());
        for (u, b) in uris.iter().zip(&before) {
            let after = call(&restarted, "GET", u, None).await;
            ensure(&after == b, || format!("{u} changed across restart"))?;
        }
        Ok(())
    })
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(u8, &str, Check, Duration); 11] = [
        (1, "strategy parameters", strategy_parameters, Duration::from_millis(1)),
        (2, "split arithmetic", split_arithmetic, Duration::from_millis(1)),
        (3, "cost term values", cost_terms, Duration::from_millis(1)),
        (4, "length trend across lambda", lambda_trend, Duration::from_secs(5)),
        (5, "metric oracles", metric_oracles, Duration::from_secs(5)),
        (6, "marker round trip", marker_round_trip, Duration::from_secs(1)),
        (7, "synthetic data contract", synthgen_contract, Duration::from_secs(5)),
        (8, "end-to-end determinism", e2e_determinism, Duration::from_secs(10)),
        (9, "feedback loop", feedback_loop, Duration::from_secs(10)),
        (10, "baseline safety", baseline_safety, Duration::from_secs(30)),
        (11, "service contract", service_contract, Duration::from_secs(10)),
    ];
    let mut failed = Vec::new();
    for (n, name, check, budget) in criteria {
        // Millisecond budgets are judged on the fastest of several runs so
        // one cold cache miss does not decide the outcome.
        let attempts = if budget <= Duration::from_millis(1) { 5 } else { 1 };
        let mut elapsed = Duration::MAX;
        let mut result = Ok(());
        for _ in 0..attempts {
            let start = Instant::now();
            result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
                Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
            });
            elapsed = elapsed.min(start.elapsed());
            if result.is_err() {
                break;
            }
        }
        let result = result.and_then(|()| {
            ensure(elapsed <= budget, || format!("took {elapsed:?}, budget {budget:?}"))
        });
        match result {
            Ok(()) => println!("PASS criterion {n:>2}: {name} ({elapsed:.2?})"),
            Err(why) => {
                println!("FAIL criterion {n:>2}: {name} ({elapsed:.2?}): {why}");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
