use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use triage_core::collector::{ExpansionLexicon, SearchEngineSpec};
use triage_core::corpus::{self, stratified_split, Layout, Snippet};
use triage_core::fixtures;
use triage_core::pipeline::{self, train_classifier};
use triage_core::triage::Thresholds;
use triage_service::config::TrainingSettings;
use triage_service::http::ResultsBody;
use triage_service::{router, App, ServiceConfig};

const LEXICON: &str = "dopalacze\tmefedron,amfetamina\nTEMPLATE\tsprzedam ⟨slot⟩\n";

struct Workspace {
    dir: tempfile::TempDir,
    serp: Vec<Snippet>,
}

/// Trains a model on a planted corpus and writes a complete service setup.
fn workspace(with_model: bool, retrain_threshold: usize) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = fixtures::planted_corpus(1200, 0.05, 21);
    let split = stratified_split(&data, [0.7, 0.1, 0.2], 21).unwrap();
    corpus::write_dataset(&split.train, &root.join("train.tsv"), Layout::SingleFileLabeled).unwrap();
    corpus::write_dataset(&split.validation, &root.join("valid.tsv"), Layout::SingleFileLabeled).unwrap();
    if with_model {
        let t = TrainingSettings::default();
        let (clf, _) =
            train_classifier(&split.train, &split.validation, t.vocabulary(), &t.training(), &t.optimizer()).unwrap();
        clf.save(&root.join("model")).unwrap();
    }
    let serp: Vec<Snippet> = split.test.iter().map(|r| r.snippet.clone()).collect();
    std::fs::write(root.join("serp-a.tsv"), fixtures::serp_fixture_tsv(&serp[..120], 10)).unwrap();
    std::fs::write(root.join("serp-b.tsv"), fixtures::serp_fixture_tsv(&serp[100..], 10)).unwrap();
    std::fs::write(root.join("lexicon.txt"), LEXICON).unwrap();
    let config = format!(
        r#"
model_path = "model"
journal_path = "feedback.tsv"
lexicon_path = "lexicon.txt"
training_data = "train.tsv"
validation_data = "valid.tsv"
retrain_threshold = {retrain_threshold}
pages_per_query = 4

[[engines]]
name = "alpha"
fixture = "serp-a.tsv"
rate_limit = 0

[[engines]]
name = "beta"
fixture = "serp-b.tsv"
rate_limit = 0

[training]
seed = 5
"#
    );
    std::fs::write(root.join("service.toml"), config).unwrap();
    Workspace { dir, serp }
}

impl Workspace {
    fn config(&self) -> ServiceConfig {
        ServiceConfig::load(&self.dir.path().join("service.toml")).unwrap()
    }

    fn app(&self) -> (Arc<App>, Router) {
        let app = App::from_config(self.config()).unwrap();
        (app.clone(), router(app))
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }
}

async fn call(router: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let body = body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty);
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn raw_body(router: &Router, uri: &str) -> Vec<u8> {
    let req = Request::builder().uri(uri).body(Body::empty()).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    resp.into_body().collect().await.unwrap().to_bytes().to_vec()
}

async fn submit(router: &Router, text: &str) -> u64 {
    let (status, body) = call(router, "POST", "/inquiries", Some(json!({ "text": text }))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    body["id"].as_u64().unwrap()
}

async fn wait_classified(router: &Router, id: u64) -> ResultsBody {
    for _ in 0..500 {
        let (status, body) = call(router, "GET", &format!("/inquiries/{id}/results"), None).await;
        assert_eq!(status, StatusCode::OK);
        let body: ResultsBody = serde_json::from_value(body).unwrap();
        match body.status.as_str() {
            "classified" => return body,
            "failed" => panic!("inquiry failed: {:?}", body.error),
            _ => tokio::time::sleep(Duration::from_millis(10)).await,
        }
    }
    panic!("inquiry {id} did not finish");
}

async fn wait_retrains(router: &Router, n: u64) -> Value {
    for _ in 0..1000 {
        let (_, health) = call(router, "GET", "/health", None).await;
        if health["retrains_completed"].as_u64() == Some(n) && health["retrain_in_progress"] == false {
            return health;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("retrain did not finish");
}

fn offline(ws: &Workspace, inquiry: &str) -> Vec<(String, f64, String)> {
    let cfg = ws.config();
    let lexicon = ExpansionLexicon::load(&ws.path("lexicon.txt")).unwrap();
    let engines: Vec<SearchEngineSpec> = cfg
        .engines
        .iter()
        .map(|e| {
            let engine = triage_core::collector::FixtureEngine::load(&e.fixture).unwrap();
            SearchEngineSpec::new(e.name.clone(), Arc::new(engine)).with_rate_limit(None)
        })
        .collect();
    let clf = pipeline::Classifier::load(&ws.path("model")).unwrap();
    let outcome =
        pipeline::run_inquiry(inquiry, &lexicon, &engines, cfg.pages_per_query, &clf, &Thresholds::default()).unwrap();
    outcome.results.iter().map(|r| (r.snippet.id.clone(), r.probability, r.verdict.to_string())).collect()
}

#[tokio::test]
async fn health_reports_model() {
    let ws = workspace(true, 500);
    let (app, router) = ws.app();
    let (status, body) = call(&router, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model_version"].as_str(), app.model_version().as_deref());
}

#[tokio::test]
async fn empty_inquiry_is_unprocessable() {
    let ws = workspace(true, 500);
    let (_, router) = ws.app();
    for body in [None, Some(json!({ "text": "" })), Some(json!({ "text": "   " })), Some(json!({ "other": 1 }))] {
        let (status, _) = call(&router, "POST", "/inquiries", body).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    }
}

#[tokio::test]
async fn missing_model_is_unavailable() {
    let ws = workspace(false, 500);
    let (_, router) = ws.app();
    let (status, body) = call(&router, "POST", "/inquiries", Some(json!({ "text": "dopalacze" }))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    let (_, health) = call(&router, "GET", "/health", None).await;
    assert_eq!(health["model_version"], Value::Null);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let ws = workspace(true, 500);
    let (_, router) = ws.app();
    assert_eq!(call(&router, "GET", "/inquiries/99/results", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&router, "GET", "/inquiries/abc/results", None).await.0, StatusCode::NOT_FOUND);
    let fb = json!({ "snippet_id": "nope", "label": "criminal", "operator_id": "op" });
    assert_eq!(call(&router, "POST", "/feedback", Some(fb)).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn results_match_offline_pipeline() {
    let ws = workspace(true, 500);
    let (app, router) = ws.app();
    let id = submit(&router, "tanie dopalacze").await;
    let body = wait_classified(&router, id).await;
    let items = body.items.clone().unwrap();
    assert!(!items.is_empty());
    assert_eq!(body.model_version.as_deref(), app.model_version().as_deref());
    assert_eq!(body.queries[0], "tanie dopalacze");
    assert!(items.iter().all(|i| Some(&i.model_version) == body.model_version.as_ref()));

    let served: Vec<(String, f64, String)> = items.iter().map(|i| (i.id.clone(), i.p, i.verdict.clone())).collect();
    assert_eq!(served, offline(&ws, "tanie dopalacze"));
    let rank = |v: &str| match v {
        "red" => 0,
        "yellow" => 1,
        _ => 2,
    };
    assert!(items
        .windows(2)
        .all(|w| rank(&w[0].verdict) < rank(&w[1].verdict) || (w[0].verdict == w[1].verdict && w[0].p >= w[1].p)));

    let first = raw_body(&router, &format!("/inquiries/{id}/results")).await;
    let second = raw_body(&router, &format!("/inquiries/{id}/results")).await;
    assert_eq!(first, second);

    let again = wait_classified(&router, submit(&router, "tanie dopalacze").await).await;
    assert_eq!(again.items, body.items);
    assert!(ws.serp.iter().any(|s| s.url == items[0].url));
}

#[tokio::test]
async fn feedback_counts_down_and_retrains_once() {
    let ws = workspace(true, 6);
    let (app, router) = ws.app();
    let before = app.model_version().unwrap();
    let id = submit(&router, "dopalacze").await;
    let items = wait_classified(&router, id).await.items.unwrap();
    assert!(items.len() >= 8);

    let mut started = Vec::new();
    for (k, item) in items.iter().take(8).enumerate() {
        let label = if item.verdict == "green" { "criminal" } else { "non_criminal" };
        let (status, body) = call(
            &router,
            "POST",
            "/feedback",
            Some(json!({ "snippet_id": item.id, "label": label, "operator_id": "op-1" })),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        if k == 0 {
            assert_eq!(body["remaining"], 5);
        }
        if k == 5 {
            assert_eq!(body["remaining"], 0);
        }
        started.push(body["retrain_started"].as_bool().unwrap());
    }
    assert_eq!(started.iter().filter(|&&s| s).count(), 1);
    assert!(started[5]);

    let health = wait_retrains(&router, 1).await;
    let after = health["model_version"].as_str().unwrap().to_string();
    assert_ne!(after, before);
    assert_eq!(health["decisions_since_retrain"], 2);
    assert!(ws.path("feedback.tsv.retrain").exists());
    assert_eq!(std::fs::read_to_string(ws.path("feedback.tsv")).unwrap().lines().count(), 8);

    let body = wait_classified(&router, submit(&router, "dopalacze").await).await;
    assert_eq!(body.model_version.as_deref(), Some(after.as_str()));
    assert!(body.items.unwrap().iter().all(|i| i.model_version == after));

    let restarted = App::from_config(ws.config()).unwrap();
    assert_eq!(restarted.model_version().as_deref(), Some(after.as_str()));
    assert_eq!(restarted.retrain_status().decisions_since_retrain, 2);
}

#[tokio::test]
async fn malformed_feedback_is_rejected() {
    let ws = workspace(true, 500);
    let (_, router) = ws.app();
    let items = wait_classified(&router, submit(&router, "dopalacze").await).await.items.unwrap();
    let bad_label = json!({ "snippet_id": items[0].id, "label": "maybe", "operator_id": "op" });
    assert_eq!(call(&router, "POST", "/feedback", Some(bad_label)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let ts = "2026-01-01T00:00:00Z";
    let fb = json!({ "snippet_id": items[0].id, "label": "criminal", "operator_id": "op", "timestamp": ts });
    assert_eq!(call(&router, "POST", "/feedback", Some(fb.clone())).await.0, StatusCode::OK);
    assert_eq!(call(&router, "POST", "/feedback", Some(fb)).await.0, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn hundred_concurrent_inquiries() {
    let ws = workspace(true, 500);
    let (_, router) = ws.app();
    let mut handles = Vec::new();
    for k in 0..100 {
        let router = router.clone();
        handles.push(tokio::spawn(async move {
            let text = if k % 2 == 0 { "dopalacze" } else { "tanie dopalacze" };
            let id = submit(&router, text).await;
            (k, wait_classified(&router, id).await)
        }));
    }
    let mut even: Option<Vec<String>> = None;
    for h in handles {
        let (k, body) = h.await.unwrap();
        let ids: Vec<String> = body.items.unwrap().iter().map(|i| i.id.clone()).collect();
        if k % 2 == 0 {
            match &even {
                Some(first) => assert_eq!(&ids, first),
                None => even = Some(ids),
            }
        }
    }
}

#[test]
fn config_paths_must_exist() {
    let ws = workspace(true, 500);
    std::fs::remove_file(ws.path("lexicon.txt")).unwrap();
    assert!(App::from_config(ws.config()).is_err());
    assert!(!Path::new(&ws.path("feedback.tsv")).exists());
}
