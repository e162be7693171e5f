use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use cqr_core::annotation::{annotate, Annotator, HttpAnnotator, LabelCache, PromptRecord, RetryPolicy};

/// Serves one scripted `(status, body)` per connection and records request bodies.
struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<String>>>,
}

fn stub(script: Vec<(u16, &'static str)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = requests.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Stub { url, requests }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        initial_backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
    }
}

#[test]
fn label_equals_stub_body() {
    let s = stub(vec![(200, r#"{"content":"what is the climate of olvera"}"#)]);
    let client = HttpAnnotator::new(&s.url, Some("secret".into()), fast_retry());
    let c = client.complete("t_1", "PROMPT TEXT").unwrap();
    assert_eq!(c.text, "what is the climate of olvera");
    assert_eq!(c.retries, 0);
    let req: serde_json::Value = serde_json::from_str(&s.requests.lock().unwrap()[0]).unwrap();
    assert_eq!(req["messages"][0]["role"], "user");
    assert_eq!(req["messages"][0]["content"], "PROMPT TEXT");
    assert_eq!(req["temperature"], 0.1);
    assert_eq!(req["seed"], 42);
}

#[test]
fn two_server_errors_then_success() {
    let s = stub(vec![(500, "oops"), (500, "oops"), (200, r#"{"content":"ok"}"#)]);
    let client = HttpAnnotator::new(&s.url, None, fast_retry());
    let c = client.complete("t_1", "p").unwrap();
    assert_eq!(c.text, "ok");
    assert_eq!(c.retries, 2);
    assert_eq!(s.requests.lock().unwrap().len(), 3);
}

#[test]
fn exhausted_retries_are_recorded_per_item() {
    let s = stub(vec![(503, ""), (503, ""), (200, r#"{"content":"second"}"#)]);
    let retry = RetryPolicy {
        max_retries: 1,
        ..fast_retry()
    };
    let client = HttpAnnotator::new(&s.url, None, retry);
    let prompts = vec![
        PromptRecord {
            problem_id: "a".into(),
            prompt: "first".into(),
        },
        PromptRecord {
            problem_id: "b".into(),
            prompt: "second".into(),
        },
    ];
    let run = annotate(&client, &prompts, 1, None);
    assert_eq!(run.failures.len(), 1);
    assert_eq!(run.failures[0].0, "a");
    assert_eq!(run.labels.len(), 1);
    assert_eq!(run.labels[0].label, "second");
}

#[test]
fn client_errors_are_not_retried() {
    let s = stub(vec![(400, "bad request")]);
    let client = HttpAnnotator::new(&s.url, None, fast_retry());
    assert!(client.complete("x", "p").is_err());
    assert_eq!(s.requests.lock().unwrap().len(), 1);
}

#[test]
fn cached_prompts_skip_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let s = stub(vec![(200, r#"{"content":"from server"}"#)]);
    let client = HttpAnnotator::new(&s.url, None, fast_retry());
    let prompts = vec![PromptRecord {
        problem_id: "a".into(),
        prompt: "same prompt".into(),
    }];
    let cache = LabelCache::open(&dir.path().join("cache.jsonl")).unwrap();
    let first = annotate(&client, &prompts, 1, Some(&cache));
    assert!(!first.responses[0].cached);
    // reopened from disk; the stub would refuse a second connection
    let cache = LabelCache::open(&dir.path().join("cache.jsonl")).unwrap();
    let second = annotate(&client, &prompts, 1, Some(&cache));
    assert!(second.responses[0].cached);
    assert_eq!(second.labels, first.labels);
    assert_eq!(s.requests.lock().unwrap().len(), 1);
}
