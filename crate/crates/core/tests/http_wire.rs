use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use serde_json::Value;
use srvf_core::llm::{HttpBackend, HttpConfig, LlmBackend, LlmError, RetryPolicy};

struct Seen {
    request_line: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order, and reports
/// what each request looked like.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let (mut length, mut authorization) = (0usize, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            tx.send(Seen {
                request_line: request_line.trim_end().to_string(),
                authorization,
                body: serde_json::from_slice(&body).unwrap(),
            })
            .unwrap();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn config(base_url: String) -> HttpConfig {
    HttpConfig {
        base_url,
        model: "test-model".into(),
        temperature: 0.0,
        retry: RetryPolicy {
            max_retries: 2,
            initial_backoff_ms: 1,
            max_backoff_ms: 2,
        },
        ..HttpConfig::default()
    }
}

#[test]
fn server_errors_are_retried_and_the_request_is_well_formed() {
    let ok = r#"{"choices":[{"message":{"role":"assistant","content":"Prediction: \"Other\""}}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;
    let (url, seen) = serve(vec![(503, "{}".into()), (200, ok.into())]);
    let backend = HttpBackend::new(config(url), "secret").unwrap();
    let c = backend.complete("the prompt", 0).unwrap();
    assert_eq!(c.text, "Prediction: \"Other\"");
    assert_eq!((c.prompt_tokens, c.completion_tokens), (Some(7), Some(2)));

    for _ in 0..2 {
        let s = seen.recv().unwrap();
        assert_eq!(s.request_line, "POST /v1/chat/completions HTTP/1.1");
        assert_eq!(s.authorization.as_deref(), Some("Bearer secret"));
        assert_eq!(s.body["model"], "test-model");
        assert_eq!(s.body["temperature"], 0.0);
        assert_eq!(s.body["messages"][0]["content"], "the prompt");
    }
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
    let backend = HttpBackend::new(config(url), "secret").unwrap();
    match backend.complete("p", 0) {
        Err(LlmError::Status { status, body }) => {
            assert_eq!(status, 400);
            assert!(body.contains("bad"));
        }
        other => panic!("expected a status error, got {other:?}"),
    }
    assert!(seen.recv().is_ok());
    assert!(seen.recv().is_err(), "only one request was made");
}

#[test]
fn retries_stop_at_the_limit() {
    let (url, seen) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
    let backend = HttpBackend::new(config(url), "secret").unwrap();
    assert!(matches!(
        backend.complete("p", 0),
        Err(LlmError::Status { status: 500, .. })
    ));
    assert_eq!(seen.iter().count(), 3);
}
