use std::sync::Arc;

use promptloom_core::providers::{LlmClient, MockProvider, ModelConfig, ModelRole, UsageLedger};
use promptloom_core::session::{record_feedback, FeedbackDraft, SessionStore};
use promptloom_core::{Engine, RunOptions};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../cli/tests/fixtures/sentiment_mock.json");
const TASK: &str = "[TASK] classify sentiment of product reviews";

fn engine() -> Engine {
    let mock = MockProvider::from_json_file(FIXTURE).unwrap();
    let ledger = Arc::new(UsageLedger::default());
    let teacher = LlmClient::mock(ModelConfig::mock(ModelRole::Teacher), mock.clone(), ledger.clone());
    let student = LlmClient::mock(ModelConfig::mock(ModelRole::Student), mock, ledger);
    Engine::new(teacher, student)
}

#[test]
fn run_is_deterministic_per_seed() {
    let opts = RunOptions { seed: 3, ..RunOptions::default() };
    let a = engine().run(TASK, &opts).unwrap();
    let b = engine().run(TASK, &opts).unwrap();
    assert_eq!(a.result.best.prompt_text(), b.result.best.prompt_text());
    assert_eq!(a.split, b.split);
    assert_eq!(a.dataset.examples.len(), 30);
    assert!(a.result.best_eval.combined >= a.result.baseline_eval.combined);
}

#[test]
fn stored_session_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let s = engine().run_session(TASK, &RunOptions::default(), &store, Some("fixed".into())).unwrap();
    let loaded = store.load("fixed").unwrap();
    assert_eq!(loaded.versions, s.versions);
    assert_eq!(loaded.dataset, s.dataset);
    assert_eq!(store.ids().unwrap(), vec!["fixed".to_string()]);
}

#[test]
fn feedback_then_reoptimize_adds_child_version() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let e = engine();
    let mut s = e.run_session(TASK, &RunOptions::default(), &store, None).unwrap();
    let parent = s.versions.len() - 1;
    record_feedback(&store, &mut s, FeedbackDraft::on_version(parent, 0, 5, "be terse")).unwrap();
    assert_eq!(s.unresolved_count(), 1);

    let v = e.reoptimize(&store, &mut s).unwrap();
    assert_eq!(v.index, parent + 1);
    assert_eq!(v.parent, Some(parent));
    assert_eq!(s.unresolved_count(), 0);
    assert_eq!(store.load(&s.id).unwrap().versions.len(), parent + 2);
}

#[test]
fn empty_objective_is_rejected() {
    let err = engine().run("  \n", &RunOptions::default()).unwrap_err();
    assert_eq!(err.name(), "InvalidConfig");
}
