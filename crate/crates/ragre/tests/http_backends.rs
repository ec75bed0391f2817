//! Wire-contract tests for the HTTP backends against a loopback stub server.
//! Skipped (with a notice) when the sandbox forbids binding local sockets.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;

use ragre::embedstore::{EmbeddingBackend, HttpEmbeddingBackend, HttpEmbeddingConfig};
use ragre::generation::{
    DecodeParams, GenRequest, GenerationBackend, HttpChatBackend, HttpChatConfig,
};

/// Accepts one connection, captures the request body, replies with `body`.
fn serve_one(listener: TcpListener, body: String, tx: mpsc::Sender<String>) {
    std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buffer = Vec::new();
        let mut chunk = [0u8; 4096];
        let request = loop {
            let n = stream.read(&mut chunk).unwrap();
            buffer.extend_from_slice(&chunk[..n]);
            let text = String::from_utf8_lossy(&buffer).to_string();
            if let Some(header_end) = text.find("\r\n\r\n") {
                let content_length = text
                    .lines()
                    .find_map(|l| {
                        l.to_ascii_lowercase()
                            .strip_prefix("content-length:")
                            .map(|v| v.trim().parse::<usize>().unwrap())
                    })
                    .unwrap_or(0);
                let body_start = header_end + 4;
                if buffer.len() >= body_start + content_length {
                    break text[body_start..body_start + content_length].to_string();
                }
            }
            if n == 0 {
                break text;
            }
        };
        tx.send(request).unwrap();
        let response = format!(
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            body.len(),
            body
        );
        stream.write_all(response.as_bytes()).unwrap();
        stream.flush().unwrap();
    });
}

fn loopback_listener() -> Option<TcpListener> {
    match TcpListener::bind("127.0.0.1:0") {
        Ok(listener) => Some(listener),
        Err(err) => {
            eprintln!("skipping http backend test: cannot bind loopback socket ({err})");
            None
        }
    }
}

#[test]
fn embedding_backend_speaks_the_batch_contract() {
    let Some(listener) = loopback_listener() else {
        return;
    };
    let port = listener.local_addr().unwrap().port();
    let (tx, rx) = mpsc::channel();
    serve_one(
        listener,
        r#"{"vectors": [[1.0, 0.0], [0.5, 0.5]]}"#.to_string(),
        tx,
    );

    let backend = HttpEmbeddingBackend::new(HttpEmbeddingConfig {
        endpoint: format!("http://127.0.0.1:{port}/embed"),
        model: "test-embedder".to_string(),
        dim: 2,
        auth_env: None,
        timeout_secs: 10,
        max_attempts: 1,
        backoff_ms: 1,
    })
    .unwrap();
    let vectors = backend
        .embed(&["first text".to_string(), "second text".to_string()])
        .unwrap();
    assert_eq!(vectors.len(), 2);
    assert_eq!(vectors[0].values(), &[1.0, 0.0]);

    let request: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
    assert_eq!(request["model"], "test-embedder");
    assert_eq!(request["texts"][0], "first text");
    assert_eq!(request["texts"][1], "second text");
}

#[test]
fn chat_backend_speaks_the_chat_completions_contract() {
    let Some(listener) = loopback_listener() else {
        return;
    };
    let port = listener.local_addr().unwrap().port();
    let (tx, rx) = mpsc::channel();
    serve_one(
        listener,
        r#"{"choices": [{"message": {"role": "assistant", "content": "org:founded"}}]}"#
            .to_string(),
        tx,
    );

    let backend = HttpChatBackend::new(HttpChatConfig {
        endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
        model: "test-llm".to_string(),
        auth_env: None,
        timeout_secs: 10,
    })
    .unwrap();
    let text = backend
        .complete(
            &GenRequest {
                prompt: "what is the relation?",
                example_gold: None,
            },
            &DecodeParams::default(),
        )
        .unwrap();
    assert_eq!(text, "org:founded");

    let request: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
    assert_eq!(request["model"], "test-llm");
    assert_eq!(request["messages"][0]["role"], "user");
    assert_eq!(request["messages"][0]["content"], "what is the relation?");
    assert_eq!(request["temperature"], 0.0);
    assert_eq!(request["max_tokens"], 32);
}

#[test]
fn chat_backend_reads_completion_style_text_field() {
    let Some(listener) = loopback_listener() else {
        return;
    };
    let port = listener.local_addr().unwrap().port();
    let (tx, _rx) = mpsc::channel();
    serve_one(
        listener,
        r#"{"choices": [{"text": "no relation"}]}"#.to_string(),
        tx,
    );
    let backend = HttpChatBackend::new(HttpChatConfig {
        endpoint: format!("http://127.0.0.1:{port}/v1/completions"),
        model: "test-llm".to_string(),
        auth_env: None,
        timeout_secs: 10,
    })
    .unwrap();
    let text = backend
        .complete(
            &GenRequest {
                prompt: "p",
                example_gold: None,
            },
            &DecodeParams::default(),
        )
        .unwrap();
    assert_eq!(text, "no relation");
}

#[test]
fn chat_backend_distinguishes_missing_content_from_empty_string() {
    let Some(listener) = loopback_listener() else {
        return;
    };
    let port = listener.local_addr().unwrap().port();
    let (tx, _rx) = mpsc::channel();
    serve_one(listener, r#"{"choices": []}"#.to_string(), tx);
    let backend = HttpChatBackend::new(HttpChatConfig {
        endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
        model: "test-llm".to_string(),
        auth_env: None,
        timeout_secs: 10,
    })
    .unwrap();
    let err = backend
        .complete(
            &GenRequest {
                prompt: "p",
                example_gold: None,
            },
            &DecodeParams::default(),
        )
        .unwrap_err();
    assert!(err.to_string().contains("empty response"), "{err}");

    // An explicit empty string is a valid response, not an error.
    let Some(listener) = loopback_listener() else {
        return;
    };
    let port = listener.local_addr().unwrap().port();
    let (tx, _rx) = mpsc::channel();
    serve_one(
        listener,
        r#"{"choices": [{"message": {"content": ""}}]}"#.to_string(),
        tx,
    );
    let backend = HttpChatBackend::new(HttpChatConfig {
        endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
        model: "test-llm".to_string(),
        auth_env: None,
        timeout_secs: 10,
    })
    .unwrap();
    let text = backend
        .complete(
            &GenRequest {
                prompt: "p",
                example_gold: None,
            },
            &DecodeParams::default(),
        )
        .unwrap();
    assert_eq!(text, "");
}
