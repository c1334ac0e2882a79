use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use corefline::backend::{HttpBackend, ReplayBackend};
use corefline_core::pipeline::{Completion, GenerationRequest, ModelBackend};

struct Seen {
    request_line: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves the given `(status, body)` answers in order, one per connection.
fn mock(answers: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in answers {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => length = v.trim().parse().unwrap(),
                    "authorization" => authorization = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            tx.send(Seen {
                request_line,
                authorization,
                body: serde_json::from_slice(&raw).unwrap(),
            })
            .unwrap();
            let mut stream = stream;
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

fn request<'a>(prompt: &'a str) -> GenerationRequest<'a> {
    GenerationRequest {
        doc_id: "d",
        window_index: 0,
        prompt,
        input: "a b",
    }
}

#[test]
fn sends_completion_request_with_bearer_token() {
    let (url, seen) = mock(vec![(
        200,
        r#"{"choices": [{"text": "a <ent0> b"}, {"text": "ignored"}]}"#.into(),
    )]);
    let backend = HttpBackend::new(
        url,
        "m-27b",
        Some("secret".into()),
        512,
        Duration::from_secs(10),
    );
    assert_eq!(backend.generate(&request("PROMPT")).unwrap(), "a <ent0> b");
    let seen = seen.recv().unwrap();
    assert!(seen.request_line.starts_with("POST /v1/completions"));
    assert_eq!(seen.authorization.as_deref(), Some("Bearer secret"));
    assert_eq!(
        seen.body,
        serde_json::json!({"model": "m-27b", "prompt": "PROMPT", "max_tokens": 512, "temperature": 0.0})
    );
}

#[test]
fn status_codes_decide_retries() {
    let (url, _seen) = mock(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (401, "{}".into()),
        (200, r#"{"choices": []}"#.into()),
    ]);
    let backend = HttpBackend::new(url, "m", None, 16, Duration::from_secs(10));
    assert!(backend.generate(&request("p")).unwrap_err().retryable);
    assert!(backend.generate(&request("p")).unwrap_err().retryable);
    assert!(!backend.generate(&request("p")).unwrap_err().retryable);
    assert!(!backend.generate(&request("p")).unwrap_err().retryable);
}

#[test]
fn unreachable_endpoint_is_transient() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let backend = HttpBackend::new(
        format!("http://127.0.0.1:{port}/x"),
        "m",
        None,
        16,
        Duration::from_secs(5),
    );
    assert!(backend.generate(&request("p")).unwrap_err().retryable);
}

#[test]
fn replay_serves_by_document_and_window() {
    let backend = ReplayBackend::new([Completion {
        doc_id: "d".into(),
        window_index: 0,
        completion: "a <ent0> b".into(),
    }]);
    assert_eq!(backend.generate(&request("p")).unwrap(), "a <ent0> b");
    let other = GenerationRequest {
        window_index: 1,
        ..request("p")
    };
    assert!(!backend.generate(&other).unwrap_err().retryable);
}
