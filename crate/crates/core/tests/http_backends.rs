use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use rand::SeedableRng;
use serde_json::{json, Value};

use proofstar::annotate::{ChatMessage, HttpOracle, OracleClient};
use proofstar::generator::{GenError, GenRequest, GenRng, Generator, HttpGenerator, HttpGeneratorConfig, Mode};

/// Serves `handler(call_index, request_json) -> (status, body)` on a local
/// port and records (path, body, authorization) of every request.
fn serve<F>(handler: F) -> (String, Arc<Mutex<Vec<(String, Value, Option<String>)>>>)
where
    F: Fn(usize, &Value) -> (u16, String) + Send + 'static,
{
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let count = AtomicUsize::new(0);
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let value: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
            let auth = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Authorization"))
                .map(|h| h.value.to_string());
            log.lock().unwrap().push((req.url().to_string(), value.clone(), auth));
            let (status, text) = handler(count.fetch_add(1, Ordering::SeqCst), &value);
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status).with_header(header));
        }
    });
    (url, seen)
}

fn generator(url: String, retries: u32) -> HttpGenerator {
    HttpGenerator::new(HttpGeneratorConfig {
        url,
        retries,
        retry_backoff_ms: 1,
        timeout_ms: 5000,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn generate_round_trip() {
    let (url, seen) = serve(|_, _| {
        (
            200,
            json!({"completions": [
                {"text": "Cancel the pair.\n### Tactic\n```\nr1\n```", "avg_logprob": -0.5},
                {"text": "no marker here", "avg_logprob": -0.1},
                {"text": "Swap first.\n### Tactic\n```lean4\nr3\n```", "token_logprobs": [-1.0, -0.5, 0.0]}
            ]})
            .to_string(),
        )
    });
    let gen = generator(url, 0);
    let mut req = GenRequest::new("abab", 3, 0.7).with_mode(Mode::ThoughtAugmented);
    req.max_tokens = 64;
    let out = gen.generate(&req, &mut GenRng::seed_from_u64(0)).unwrap();
    assert_eq!(out.len(), 3);
    let first = out[0].as_ref().unwrap();
    assert_eq!(first.tactic.as_str(), "r1");
    assert_eq!(first.thought.as_ref().unwrap().as_str(), "Cancel the pair.");
    assert_eq!(first.avg_logprob, -0.5);
    assert_eq!(out[1].as_ref().unwrap_err().reason, "missing tactic marker");
    assert_eq!(out[2].as_ref().unwrap().avg_logprob, -0.5);

    let seen = seen.lock().unwrap();
    let (path, body, _) = &seen[0];
    assert_eq!(path, "/generate");
    assert_eq!(body["prompt"], "### State\nabab\n### Reasoning\n");
    assert_eq!((body["n"].as_u64(), body["max_tokens"].as_u64()), (Some(3), Some(64)));
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["decode"], "sample");
    assert_eq!(body["logprob_scope"], "completion");
}

#[test]
fn retries_then_succeeds() {
    let (url, seen) = serve(|i, _| {
        if i < 2 {
            (503, "busy".into())
        } else {
            (200, json!({"completions": [{"text": "r1", "avg_logprob": -0.1}]}).to_string())
        }
    });
    let out = generator(url, 2)
        .generate(&GenRequest::new("ab", 1, 0.0), &mut GenRng::seed_from_u64(0))
        .unwrap();
    assert_eq!(out[0].as_ref().unwrap().tactic.as_str(), "r1");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn exhausted_retries_are_backend_unavailable() {
    let (url, seen) = serve(|_, _| (500, "down".into()));
    let err = generator(url, 1)
        .generate(&GenRequest::new("ab", 1, 0.0), &mut GenRng::seed_from_u64(0))
        .unwrap_err();
    assert!(matches!(err, GenError::BackendUnavailable(_)));
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn positive_logprob_is_malformed() {
    let (url, _) = serve(|_, _| (200, json!({"completions": [{"text": "r1", "avg_logprob": 0.3}]}).to_string()));
    let out = generator(url, 0)
        .generate(&GenRequest::new("ab", 1, 0.0), &mut GenRng::seed_from_u64(0))
        .unwrap();
    assert!(out[0].is_err());
}

#[test]
fn oracle_sends_bearer_token() {
    let (url, seen) = serve(|_, body| {
        let last = body["messages"].as_array().unwrap().last().unwrap()["content"].as_str().unwrap().to_string();
        (200, json!({"content": format!("echo: {last}")}).to_string())
    });
    let oracle = HttpOracle::new(url, Some("k3y".into()), std::time::Duration::from_secs(5)).unwrap();
    let messages = [ChatMessage {
        role: "user".into(),
        content: "hello".into(),
    }];
    assert_eq!(oracle.chat(&messages, 0.0).unwrap(), "echo: hello");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].0, "/chat");
    assert_eq!(seen[0].2.as_deref(), Some("Bearer k3y"));
    assert_eq!(seen[0].1["temperature"], 0.0);
}

#[test]
fn oracle_http_error_is_transport_failure() {
    let (url, _) = serve(|_, _| (502, "bad gateway".into()));
    let oracle = HttpOracle::new(url, None, std::time::Duration::from_secs(5)).unwrap();
    assert!(oracle.chat(&[], 0.0).is_err());
}
