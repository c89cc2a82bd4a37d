mod common;

use std::sync::Arc;

use penwise_service::http::{app, AppState, Health, ModelsInfo};
use penwise_service::{Engine, ErrorBody, Kind, SuggestRequest, SuggestResponse};
use reqwest::blocking::Client;
use serde_json::{json, Value};

fn post(client: &Client, url: &str, body: &Value) -> (u16, String) {
    let r = client.post(url).json(body).send().unwrap();
    (r.status().as_u16(), r.text().unwrap())
}

fn error_of(text: &str) -> ErrorBody {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn strip_latency(mut r: SuggestResponse) -> SuggestResponse {
    r.latency_ms = 0;
    r
}

/// Serves `state` on an ephemeral port until the runtime is dropped.
fn serve_state(state: Arc<AppState>) -> (tokio::runtime::Runtime, String) {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(1)
        .enable_all()
        .build()
        .unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, app(state)).await });
    (rt, base)
}

#[test]
fn loading_state_answers_503_then_ready() {
    let world = common::build_world("http-loading");
    let state = AppState::loading(world.config.service.max_body_bytes);
    let (_rt, base) = serve_state(state.clone());
    let client = Client::new();

    let r = client.get(format!("{base}/v1/health")).send().unwrap();
    assert_eq!(r.status(), 503);
    let h: Health = r.json().unwrap();
    assert_eq!(h.status, "loading");
    assert_eq!(client.get(format!("{base}/v1/models")).send().unwrap().status(), 503);
    let (code, text) = post(&client, &format!("{base}/v1/suggest"), &json!({"kind": "retrieve", "text": "cat"}));
    assert_eq!(code, 503);
    assert!(error_of(&text).error.contains("loading"));

    state.set(Engine::load(&world.config).unwrap());
    let h: Health = client.get(format!("{base}/v1/health")).send().unwrap().json().unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.models, ["lm", "crf", "null", "infill", "expand", "embeddings", "corpus"]);
    let m: ModelsInfo = client.get(format!("{base}/v1/models")).send().unwrap().json().unwrap();
    assert_eq!(m.kinds, Kind::ALL);
    assert_eq!(m.model_version.len(), 16);
}

#[test]
fn bad_requests_name_the_field() {
    let world = common::build_world("http-errors");
    let mut server = common::Server::start(world.config.clone());
    server.wait_ready();
    let client = Client::new();
    let url = server.url("/v1/suggest");
    let cases = [
        (json!({"kind": "summarize", "text": "x"}), Some("kind")),
        (json!({"kind": "complete", "text": "the cat", "n": 0}), Some("n")),
        (json!({"kind": "complete", "text": "the cat", "n": 9}), Some("n")),
        (json!({"kind": "complete", "text": "the cat", "extra": 1}), None),
        (json!({"kind": "complete", "text": "the cat", "decoder": {"alpha": 1.5}}), Some("decoder")),
        (json!({"kind": "complete", "text": "the cat", "decoder": {"beta": 1}}), Some("decoder")),
        (json!({"kind": "complete", "text": "the cat", "n": "three"}), Some("n")),
        (json!({"kind": "polish", "text": "the small cat"}), Some("span")),
        (json!({"kind": "polish", "text": "the small cat", "span": [2, 5]}), Some("span")),
        (json!({"kind": "infill", "text": ""}), Some("keywords")),
        (json!({"kind": "infill", "keywords": [" "]}), Some("keywords")),
        (json!({"kind": "complete", "text": ""}), Some("text")),
        (json!({"kind": "complete", "text": "the zebra"}), None),
    ];
    for (body, path) in cases {
        let (code, text) = post(&client, &url, &body);
        assert_eq!(code, 400, "{body}: {text}");
        let e = error_of(&text);
        assert!(!e.error.is_empty());
        if let Some(p) = path {
            let got = e.path.clone().unwrap_or_default();
            assert!(got.starts_with(p), "{body}: path {got:?}, want {p}");
        }
    }
    let r = client
        .post(&url)
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(r.status(), 400);
    let big = "cat ".repeat(world.config.service.max_body_bytes);
    let (code, _) = post(&client, &url, &json!({"kind": "retrieve", "text": big}));
    assert_eq!(code, 413);
    server.stop().unwrap();
}

#[test]
fn unconfigured_kind_is_rejected() {
    let world = common::build_world("http-partial");
    let mut config = world.config.clone();
    config.service.models.lm = None;
    config.service.models.corpus = None;
    let engine = Engine::load(&config).unwrap();
    assert_eq!(engine.enabled_kinds(), [Kind::Polish, Kind::Correct, Kind::Infill, Kind::Expand]);
    let e = engine
        .suggest(&SuggestRequest::new(Kind::Complete, "the cat"))
        .unwrap_err();
    assert_eq!(e.status(), 400);
    assert_eq!(e.body().path.as_deref(), Some("kind"));
}

#[test]
fn missing_model_file_stops_the_server() {
    let world = common::build_world("http-missing");
    let mut config = world.config.clone();
    config.service.models.lm = Some(world.dir.join("absent.efd"));
    let server = common::Server::start(config);
    let err = server.stop_when_done().unwrap_err();
    assert!(err.contains("absent.efd"), "{err}");
}

#[test]
fn concurrent_requests_match_serial_answers() {
    let world = common::build_world("http-concurrent");
    let mut server = common::Server::start(world.config.clone());
    server.wait_ready();
    let bodies: Vec<Value> = (0..32)
        .map(|i| match i % 6 {
            0 => json!({"kind": "complete", "text": "the cat", "seed": i}),
            1 => json!({"kind": "complete", "text": "the dog", "n": 2, "seed": i,
                        "decoder": {"strategy": "nucleus"}}),
            2 => json!({"kind": "polish", "text": "the small cat sat", "span": [1, 1]}),
            3 => json!({"kind": "correct", "text": "teh dgo ran in the prak"}),
            4 => json!({"kind": "infill", "keywords": ["dog", "park"], "seed": i}),
            _ => json!({"kind": "retrieve", "text": "the bird", "n": 2}),
        })
        .collect();
    let client = Client::new();
    let url = server.url("/v1/suggest");
    let serial: Vec<SuggestResponse> = bodies
        .iter()
        .map(|b| {
            let (code, text) = post(&client, &url, b);
            assert_eq!(code, 200, "{text}");
            strip_latency(serde_json::from_str(&text).unwrap())
        })
        .collect();
    let parallel: Vec<SuggestResponse> = std::thread::scope(|s| {
        let handles: Vec<_> = bodies
            .iter()
            .map(|b| {
                let (client, url) = (client.clone(), url.clone());
                s.spawn(move || {
                    let (code, text) = post(&client, &url, b);
                    assert_eq!(code, 200, "{text}");
                    strip_latency(serde_json::from_str(&text).unwrap())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for ((b, x), y) in bodies.iter().zip(&serial).zip(&parallel) {
        let req: SuggestRequest = serde_json::from_value(b.clone()).unwrap();
        x.check(&req).unwrap();
        assert_eq!(x, y, "{b}");
    }
    server.stop().unwrap();
}

#[test]
fn derived_seed_is_stable_and_explicit_seed_wins() {
    let world = common::build_world("http-seed");
    let engine = Engine::load(&world.config).unwrap();
    let mut req: SuggestRequest = serde_json::from_value(json!({"kind": "complete", "text": "the cat"})).unwrap();
    let a = engine.request_seed(&req);
    assert_eq!(a, engine.request_seed(&req.clone()));
    req.text = "the dog".into();
    assert_ne!(a, engine.request_seed(&req));
    req.seed = Some(5);
    assert_eq!(engine.request_seed(&req), 5);
}
