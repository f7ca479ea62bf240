//! Remote backend against a local fake server speaking just enough HTTP/1.1.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use faultline::gateway::{BackendConfig, ChatMessage, Gateway, GatewayError, RemoteConfig};

struct Seen {
    auth: String,
    body: serde_json::Value,
}

/// Serves one scripted response per connection, then stops.
fn fake_server(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut auth = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { auth, body: serde_json::from_slice(&buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string()
}

fn remote(url: &str, key_env: &str, max_retries: u32) -> Gateway {
    let mut cfg = RemoteConfig::new(url);
    cfg.api_key_env = key_env.into();
    cfg.max_retries = max_retries;
    cfg.backoff_base = Duration::from_millis(5);
    cfg.timeout = Duration::from_secs(5);
    Gateway::new(BackendConfig::Remote(cfg)).unwrap().with_model("test-model").with_seed(42)
}

fn set_key(name: &str) {
    // each test uses its own variable name
    std::env::set_var(name, "sk-test");
}

#[test]
fn retries_rate_limits_then_succeeds() {
    set_key("FAULTLINE_TEST_KEY_RETRY");
    let (url, seen, handle) = fake_server(vec![
        (429, "{}".into()),
        (429, "{}".into()),
        (200, ok_body("answer: 4")),
    ]);
    let gw = remote(&url, "FAULTLINE_TEST_KEY_RETRY", 3);
    let req = gw.request(vec![ChatMessage::system("s"), ChatMessage::user("2+2?")], 0.0);
    assert_eq!(gw.complete(&req).unwrap(), "answer: 4");
    handle.join().unwrap();

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0].auth, "Bearer sk-test");
    assert_eq!(seen[2].body["model"], "test-model");
    assert_eq!(seen[2].body["seed"], 42);
    assert_eq!(seen[2].body["temperature"], 0.0);
    assert_eq!(seen[2].body["messages"][1]["content"], "2+2?");
}

#[test]
fn gives_up_after_max_retries() {
    set_key("FAULTLINE_TEST_KEY_EXHAUST");
    let (url, seen, handle) = fake_server(vec![(503, "busy".into()), (503, "busy".into()), (503, "busy".into())]);
    let gw = remote(&url, "FAULTLINE_TEST_KEY_EXHAUST", 2);
    let req = gw.request(vec![ChatMessage::user("q")], 0.0);
    match gw.complete(&req) {
        Err(GatewayError::ExhaustedRetries { attempts, last_status, .. }) => {
            assert_eq!(attempts, 3);
            assert_eq!(last_status, Some(503));
        }
        other => panic!("expected exhausted retries, got {other:?}"),
    }
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    set_key("FAULTLINE_TEST_KEY_400");
    let (url, seen, handle) = fake_server(vec![(400, "bad request".into())]);
    let gw = remote(&url, "FAULTLINE_TEST_KEY_400", 3);
    let req = gw.request(vec![ChatMessage::user("q")], 0.0);
    assert!(matches!(gw.complete(&req), Err(GatewayError::Http { status: 400, .. })));
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_success_body_is_reported() {
    set_key("FAULTLINE_TEST_KEY_BODY");
    let (url, _, handle) = fake_server(vec![(200, r#"{"choices": []}"#.into())]);
    let gw = remote(&url, "FAULTLINE_TEST_KEY_BODY", 0);
    let req = gw.request(vec![ChatMessage::user("q")], 0.0);
    assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidResponse(_))));
    handle.join().unwrap();
}

#[test]
fn missing_credential_fails_before_any_request() {
    let gw = remote("http://127.0.0.1:9", "FAULTLINE_TEST_KEY_UNSET", 3);
    let req = gw.request(vec![ChatMessage::user("q")], 0.0);
    match gw.complete(&req) {
        Err(GatewayError::MissingCredential(name)) => assert_eq!(name, "FAULTLINE_TEST_KEY_UNSET"),
        other => panic!("expected missing credential, got {other:?}"),
    }
}
