mod common;

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use common::*;
use quorum_core::baselines::MethodId;
use quorum_pipeline::client::{ChatBackend, ChatMessage, ChatRequest, EmbeddingBackend, HttpBackend, RetryPolicy};
use quorum_pipeline::mock::{Simulator, SimulatorConfig};
use quorum_pipeline::pipeline::{load_questions, run_with_backends, Backends};
use quorum_pipeline::PipelineError;
use serde_json::{json, Value};

/// OpenAI-compatible test server. Statuses queued in `script` are answered
/// first, one per request; after that replies come from the simulator, or
/// a fixed answer when there is none.
#[derive(Default)]
struct Server {
    sim: Option<Simulator>,
    script: Mutex<VecDeque<u16>>,
    seen: Mutex<Vec<Value>>,
}

type Shared = Arc<Server>;

fn scripted(shared: &Shared, body: &Value) -> Option<(StatusCode, Json<Value>)> {
    shared.seen.lock().unwrap().push(body.clone());
    let status = shared.script.lock().unwrap().pop_front()?;
    Some((StatusCode::from_u16(status).unwrap(), Json(json!({ "error": { "message": "scripted" } }))))
}

async fn chat(State(shared): State<Shared>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if let Some(r) = scripted(&shared, &body) {
        return r;
    }
    let content = match &shared.sim {
        Some(sim) => {
            let request: ChatRequest = serde_json::from_value(body).unwrap();
            sim.complete(&request).await.unwrap().content
        }
        None => "Answer: yes".to_string(),
    };
    let reply = json!({
        "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }],
        "usage": { "prompt_tokens": 11, "completion_tokens": 3 },
    });
    (StatusCode::OK, Json(reply))
}

/// Items come back in reverse order; the client must place them by index.
async fn embeddings(State(shared): State<Shared>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if let Some(r) = scripted(&shared, &body) {
        return r;
    }
    let texts: Vec<String> = serde_json::from_value(body["input"].clone()).unwrap();
    let vectors = match &shared.sim {
        Some(sim) => sim.embed("e", &texts).await.unwrap(),
        None => texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect(),
    };
    let data: Vec<Value> = vectors
        .into_iter()
        .enumerate()
        .rev()
        .map(|(i, v)| json!({ "object": "embedding", "index": i, "embedding": v }))
        .collect();
    (StatusCode::OK, Json(json!({ "data": data })))
}

async fn serve(server: Server) -> (String, Shared) {
    let shared = Arc::new(server);
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .with_state(shared.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (url, shared)
}

fn backend(url: &str) -> HttpBackend {
    let retry = RetryPolicy {
        max_attempts: 3,
        initial_backoff_ms: 1,
    };
    HttpBackend::new(url, Some("test-key".into()), retry, Duration::from_secs(10)).unwrap()
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "m".into(),
        messages: vec![ChatMessage::system("s"), ChatMessage::user("Question: q")],
        temperature: 0.7,
        max_tokens: 10,
    }
}

fn with_script(statuses: &[u16]) -> Server {
    Server {
        script: Mutex::new(statuses.iter().copied().collect()),
        ..Server::default()
    }
}

#[tokio::test]
async fn transient_errors_are_retried() {
    let (url, shared) = serve(with_script(&[500, 500])).await;
    let reply = backend(&url).complete(&request()).await.unwrap();
    assert_eq!(reply.content, "Answer: yes");
    assert_eq!(reply.tokens(), 14);
    assert_eq!(shared.seen.lock().unwrap().len(), 3);
}

#[tokio::test]
async fn rejected_credentials_fail_at_once() {
    let (url, shared) = serve(with_script(&[401])).await;
    match backend(&url).complete(&request()).await {
        Err(PipelineError::Auth { status: 401, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(shared.seen.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn persistent_errors_exhaust_the_retries() {
    let (url, shared) = serve(with_script(&[500, 503, 500, 500])).await;
    match backend(&url).complete(&request()).await {
        Err(PipelineError::Exhausted { attempts: 3, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(shared.seen.lock().unwrap().len(), 3);
}

#[tokio::test]
async fn other_client_errors_are_not_retried() {
    let (url, shared) = serve(with_script(&[400])).await;
    assert!(matches!(backend(&url).complete(&request()).await, Err(PipelineError::Protocol(_))));
    assert_eq!(shared.seen.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn request_body_is_openai_shaped() {
    let (url, shared) = serve(Server::default()).await;
    backend(&url).complete(&request()).await.unwrap();
    let body = shared.seen.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "m");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["max_tokens"], 10);
    assert_eq!(body["messages"][1], json!({ "role": "user", "content": "Question: q" }));
}

#[tokio::test]
async fn embeddings_are_placed_by_index() {
    let (url, _) = serve(Server::default()).await;
    let texts: Vec<String> = ["a", "bbb", "cc"].iter().map(|s| s.to_string()).collect();
    let vectors = backend(&url).embed("e", &texts).await.unwrap();
    assert_eq!(vectors, vec![vec![1.0, 1.0], vec![3.0, 1.0], vec![2.0, 1.0]]);
}

#[tokio::test]
async fn full_run_over_http() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_questions(data.path(), 30);
    let team = r#"
[team]
model = "model-a"
analysis_model = "judge"
agents = [
  { role = "Analytical Reasoner" },
  { role = "Devil's Advocate", model = "model-b" },
  { role = "Knowledge-Focused" },
  { role = "Intuitive Responder", model = "model-b" },
  { role = "Systematic Verifier" },
]
"#;
    let mut cfg = mock_config(data.path(), out.path(), &format!("{FAST_ANALYSES}\n{team}"));
    cfg.mock_dir = None;
    let questions = load_questions(&cfg).unwrap();
    let sim = Simulator::new(SimulatorConfig::default(), &questions);
    cfg.embedding.dim = Some(sim.config().embedding_dim);
    let (url, shared) = serve(Server {
        sim: Some(sim),
        ..Server::default()
    })
    .await;
    cfg.team.endpoint.base_url = url;
    cfg.team.retry = RetryPolicy {
        max_attempts: 2,
        initial_backoff_ms: 1,
    };

    let first = run_with_backends(&cfg, questions.clone(), Backends::http(&cfg).unwrap()).await.unwrap();
    let seen = shared.seen.lock().unwrap().clone();
    let chats: Vec<&Value> = seen.iter().filter(|b| b.get("messages").is_some()).collect();
    assert_eq!(chats.len() as u64, first.stats.chat_calls);
    assert_eq!((seen.len() - chats.len()) as u64, first.stats.embedding_calls);
    assert!(first.stats.embedding_calls > 0);

    // Agents answer at the sampling temperature on their own models; every
    // follow-up is deterministic.
    let mut agent_models = BTreeSet::new();
    let mut judge_calls = 0;
    for body in &chats {
        let model = body["model"].as_str().unwrap();
        let temperature = body["temperature"].as_f64().unwrap();
        if model == "judge" {
            assert_eq!(temperature, 0.0);
            judge_calls += 1;
        } else if body["messages"].as_array().unwrap().len() == 2 {
            assert_eq!(temperature, 0.7);
            agent_models.insert(model.to_string());
        } else {
            // Confidence follow-up, on the agent's own model.
            assert_eq!(temperature, 0.0, "{model}");
        }
    }
    assert_eq!(agent_models, BTreeSet::from(["model-a".to_string(), "model-b".to_string()]));
    assert!(judge_calls as usize >= first.records.len());
    for r in &first.records {
        let models: Vec<&str> = r.record.transcripts.iter().map(|t| t.model_id.as_str()).collect();
        assert_eq!(models, ["model-a", "model-b", "model-a", "model-b", "model-a"]);
    }
    for m in MethodId::ALL {
        let pooled = &first.report.pooled;
        assert!(pooled.metrics.contains_key(&m) || pooled.skipped.contains_key(&m), "{m}");
    }

    // A second run is served entirely from the cache.
    let before = shared.seen.lock().unwrap().len();
    let second = run_with_backends(&cfg, questions, Backends::http(&cfg).unwrap()).await.unwrap();
    assert_eq!(shared.seen.lock().unwrap().len(), before);
    assert_eq!(second.stats.chat_calls + second.stats.embedding_calls, 0);
    assert_eq!(second.report, first.report);
}
