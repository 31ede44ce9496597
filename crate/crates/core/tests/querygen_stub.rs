//! Query generation against the stub chat server.

use serde_json::json;
use zeal_core::backends::http::EndpointConfig;
use zeal_core::domain::LabelSpace;
use zeal_core::querygen::{generate_queries, humanize_class_name, validate_triple, HttpChat, QueryCache, QueryGenConfig};
use zeal_core::stub::{request_text, text_reply, StubReply, StubServer};
use zeal_core::synth::class_names;

fn canned(class: &str) -> serde_json::Value {
    if class == "CliffDiving" {
        return json!({
            "q_start": "Is the person standing on the edge of a cliff above water?",
            "q_end": "Is the person submerged in or breaking the surface of the water?",
            "q_desc": "A person jumps from a cliff into water.",
        });
    }
    let w = humanize_class_name(class);
    json!({
        "q_start": format!("Is the athlete getting ready for {w}?"),
        "q_end": format!("Is the athlete done with {w}?"),
        "q_desc": format!("An athlete does {w}."),
    })
}

fn class_in_prompt(body: &serde_json::Value) -> String {
    let text = request_text(body);
    let rest = text.split("the action \"").nth(1).expect("class in prompt");
    rest.split('"').next().unwrap().to_owned()
}

fn start_stub() -> StubServer {
    StubServer::start(|_, body| {
        assert_eq!(body["temperature"], json!(0));
        let class = class_in_prompt(body);
        // answer inside a code fence, as chat models often do
        StubReply::ok(text_reply(&format!("```json\n{}\n```", canned(&class))))
    })
    .unwrap()
}

fn config(url: String, cache: std::path::PathBuf) -> QueryGenConfig {
    QueryGenConfig {
        endpoint: EndpointConfig {
            url,
            model: "stub-llm".into(),
            api_key_env: None,
            retry_backoff_ms: 1,
            ..EndpointConfig::default()
        },
        cache_path: cache,
        ..QueryGenConfig::default()
    }
}

#[test]
fn twenty_classes_then_warm_cache() {
    let dir = tempfile::tempdir().unwrap();
    let labels = LabelSpace::new(&class_names(20)).unwrap();
    let server = start_stub();
    let cfg = config(server.url("/v1/chat/completions"), dir.path().join("cache.json"));
    let chat = HttpChat::new(cfg.endpoint.clone());

    let triples = generate_queries(labels.classes(), &cfg, &chat).unwrap();
    assert_eq!(triples.len(), 20);
    assert_eq!(server.hits(), 20);
    for (t, c) in triples.iter().zip(labels.classes()) {
        assert_eq!(t.class_id, c.class_id);
        assert!(validate_triple(t).is_ok());
    }
    let cliff = &triples[labels.id_of("CliffDiving").unwrap()];
    assert_eq!(cliff.q_desc, "A person jumps from a cliff into water.");

    let cache: QueryCache = serde_json::from_str(&std::fs::read_to_string(&cfg.cache_path).unwrap()).unwrap();
    assert_eq!(cache.entries.len(), 20);
    assert_eq!(cache.provenance.model, "stub-llm");
    assert_eq!(cache.provenance.template_hash, cfg.template_hash());

    let again = generate_queries(labels.classes(), &cfg, &chat).unwrap();
    assert_eq!(again, triples);
    assert_eq!(server.hits(), 20, "warm cache must not hit the network");
}

#[test]
fn only_missing_classes_are_requested() {
    let dir = tempfile::tempdir().unwrap();
    let labels = LabelSpace::new(&class_names(6)).unwrap();
    let server = start_stub();
    let cfg = config(server.url("/v1/chat/completions"), dir.path().join("cache.json"));
    let chat = HttpChat::new(cfg.endpoint.clone());
    generate_queries(&labels.classes()[..4], &cfg, &chat).unwrap();
    assert_eq!(server.hits(), 4);
    let all = generate_queries(labels.classes(), &cfg, &chat).unwrap();
    assert_eq!(all.len(), 6);
    assert_eq!(server.hits(), 6);
}

#[test]
fn endpoint_failure_names_the_class() {
    let dir = tempfile::tempdir().unwrap();
    let labels = LabelSpace::new(&["Billiards"]).unwrap();
    let server = StubServer::start(|_, _| StubReply::status(502)).unwrap();
    let mut cfg = config(server.url("/v1/chat/completions"), dir.path().join("cache.json"));
    cfg.endpoint.max_retries = 1;
    let err = generate_queries(labels.classes(), &cfg, &HttpChat::new(cfg.endpoint.clone())).unwrap_err();
    assert!(err.is_backend());
    assert!(err.to_string().contains("Billiards"), "{err}");
    assert!(!cfg.cache_path.exists());
}
