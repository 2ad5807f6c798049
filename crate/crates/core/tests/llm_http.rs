//! Chat-completion client against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use leed::demo::{ChatEndpoint, EndpointConfig, LlmError, TextModel};
use serde_json::Value;

struct Request {
    headers: Vec<String>,
    body: Value,
}

/// Serve one canned `(status, body)` per connection, in order, and report
/// what each request carried.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<Request>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Request { headers, body: serde_json::from_slice(&buf).unwrap() }).unwrap();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn config(url: &str) -> EndpointConfig {
    let mut c = EndpointConfig::new(url, "test-model");
    c.api_key = Some("sk-test".into());
    c.backoff = Duration::from_millis(1);
    c.timeout = Duration::from_secs(5);
    c
}

fn ok_body(content: &str, tokens: Option<u64>) -> String {
    let mut v = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
    if let Some(t) = tokens {
        v["usage"] = serde_json::json!({"total_tokens": t});
    }
    v.to_string()
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, rx) = serve(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, ok_body("{\"0\": [0, 1, 2]}", Some(42))),
    ]);
    let mut model = ChatEndpoint::new(config(&url));
    let c = model.complete("route please").unwrap();
    assert_eq!(c.text, "{\"0\": [0, 1, 2]}");
    assert_eq!(c.tokens, 42);

    let requests: Vec<Request> = rx.iter().take(3).collect();
    for r in &requests {
        assert!(r.headers[0].starts_with("POST /v1/chat/completions"), "{}", r.headers[0]);
        assert!(r.headers.iter().any(|h| h == "authorization: Bearer sk-test" || h == "Authorization: Bearer sk-test"));
        assert_eq!(r.body["model"], "test-model");
        assert_eq!(r.body["messages"][0]["role"], "user");
        assert_eq!(r.body["messages"][0]["content"], "route please");
    }
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, _rx) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
    let mut model = ChatEndpoint::new(config(&url));
    match model.complete("x") {
        Err(LlmError::Exhausted { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected exhaustion, got {other:?}"),
    }
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, rx) = serve(vec![(401, "{}".into()), (200, ok_body("late", None))]);
    let mut model = ChatEndpoint::new(config(&url));
    assert!(matches!(model.complete("x"), Err(LlmError::Auth(401))));
    assert_eq!(rx.recv_timeout(Duration::from_secs(2)).unwrap().body["model"], "test-model");
    assert!(rx.recv_timeout(Duration::from_millis(200)).is_err());
}

#[test]
fn missing_usage_counts_whitespace_tokens() {
    let (url, _rx) = serve(vec![(200, ok_body("a b c", None))]);
    let mut model = ChatEndpoint::new(config(&url));
    let c = model.complete("one two").unwrap();
    assert_eq!(c.tokens, 5);
}
