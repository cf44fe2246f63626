use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use feedback_harness::llm::{
    ChatMessage, ChatModel, CompletionRequest, EndpointConfig, HttpChatClient, LlmError, Purpose, RequestTag,
    SamplingParams,
};

struct Reply {
    status: u16,
    body: String,
}

fn ok_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

/// Serves the given replies in order (repeating the last one) and records
/// request bodies and authorization headers.
struct TestServer {
    base_url: String,
    bodies: Arc<Mutex<Vec<String>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

fn serve(replies: Vec<Reply>) -> TestServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let (b, a) = (bodies.clone(), auth.clone());
    thread::spawn(move || {
        let mut served = 0usize;
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => length = value.trim().parse().unwrap_or(0),
                        "authorization" => authorization = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut body = vec![0u8; length];
            let _ = reader.read_exact(&mut body);
            b.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
            a.lock().unwrap().push(authorization);
            let reply = &replies[served.min(replies.len() - 1)];
            served += 1;
            let response = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.status,
                reply.body.len(),
                reply.body
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    TestServer { base_url, bodies, auth }
}

fn endpoint(base_url: &str) -> EndpointConfig {
    EndpointConfig {
        base_url: base_url.into(),
        model: "test-model".into(),
        api_key_env: None,
        timeout_secs: 5,
        max_retries: 3,
        backoff_base_ms: 10,
        backoff_max_ms: 25,
        max_in_flight: 2,
    }
}

fn request() -> CompletionRequest {
    CompletionRequest {
        messages: vec![
            ChatMessage::system("sys \u{9ac} {braces} \"quotes\"\n\ttab"),
            ChatMessage::user("Write a function.\n\nTest Cases:\nassert f(1) == 2"),
        ],
        params: SamplingParams::new(0.3, 768).unwrap(),
        tag: RequestTag {
            task_id: "t1".into(),
            attempt: 2,
            purpose: Purpose::Generate,
        },
    }
}

#[test]
fn successful_completion_returns_content() {
    let server = serve(vec![Reply { status: 200, body: ok_body("OK") }]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    assert_eq!(client.complete(&request()).unwrap(), "OK");
    assert_eq!(client.endpoint_url(), format!("{}/chat/completions", server.base_url));
}

#[test]
fn payload_carries_messages_verbatim_and_sampling_params() {
    let server = serve(vec![Reply { status: 200, body: ok_body("OK") }]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    let req = request();
    client.complete(&req).unwrap();
    let body = server.bodies.lock().unwrap()[0].clone();
    let sent: serde_json::Value = serde_json::from_str(&body).unwrap();
    let messages: Vec<ChatMessage> = serde_json::from_value(sent["messages"].clone()).unwrap();
    assert_eq!(messages, req.messages);
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["temperature"], 0.3);
    assert_eq!(sent["max_tokens"], 768);
    let raw = serde_json::to_string(&req.messages).unwrap();
    assert!(body.contains(&format!("\"messages\":{raw}")));
}

#[test]
fn bearer_token_comes_from_environment() {
    std::env::set_var("FH_TEST_API_KEY", "secret-token");
    let server = serve(vec![Reply { status: 200, body: ok_body("OK") }]);
    let mut cfg = endpoint(&server.base_url);
    cfg.api_key_env = Some("FH_TEST_API_KEY".into());
    let client = HttpChatClient::new(cfg).unwrap();
    client.complete(&request()).unwrap();
    assert_eq!(server.auth.lock().unwrap()[0].as_deref(), Some("Bearer secret-token"));

    let mut missing = endpoint(&server.base_url);
    missing.api_key_env = Some("FH_TEST_API_KEY_UNSET".into());
    assert!(matches!(HttpChatClient::new(missing), Err(LlmError::InvalidRequest(_))));
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let server = serve(vec![
        Reply { status: 500, body: "boom".into() },
        Reply { status: 429, body: "slow down".into() },
        Reply { status: 200, body: ok_body("OK") },
    ]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    assert_eq!(client.complete(&request()).unwrap(), "OK");
    let log = client.request_log();
    assert_eq!(log.len(), 3);
    assert_eq!(log[0].backoff_ms, Some(10));
    assert_eq!(log[1].backoff_ms, Some(20));
    assert_eq!(log[2].outcome, "ok");
    assert_eq!(log[2].backoff_ms, None);
    assert!(log.iter().all(|e| e.task_id == "t1"));
}

#[test]
fn client_errors_are_not_retried() {
    let server = serve(vec![Reply { status: 400, body: "bad request".into() }]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    match client.complete(&request()) {
        Err(LlmError::EndpointRejected { status, body }) => {
            assert_eq!(status, 400);
            assert!(body.contains("bad request"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.bodies.lock().unwrap().len(), 1);
}

#[test]
fn persistent_server_error_exhausts_retries() {
    let server = serve(vec![Reply { status: 503, body: "down".into() }]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    assert!(matches!(
        client.complete(&request()),
        Err(LlmError::EndpointRejected { status: 503, .. })
    ));
    assert_eq!(server.bodies.lock().unwrap().len(), 4);
}

#[test]
fn empty_content_is_reported() {
    let server = serve(vec![Reply { status: 200, body: ok_body("") }]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    assert!(matches!(client.complete(&request()), Err(LlmError::EmptyCompletion)));
    let server = serve(vec![Reply { status: 200, body: r#"{"choices": []}"#.into() }]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    assert!(matches!(client.complete(&request()), Err(LlmError::EmptyCompletion)));
}

#[test]
fn malformed_json_is_reported() {
    let server = serve(vec![Reply { status: 200, body: "not json".into() }]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    assert!(matches!(client.complete(&request()), Err(LlmError::MalformedResponse(_))));
}

#[test]
fn unreachable_endpoint_is_transport_error_after_backoff() {
    // Bind then drop to obtain a port that refuses connections.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = HttpChatClient::new(endpoint(&format!("http://127.0.0.1:{port}/v1"))).unwrap();
    let start = Instant::now();
    match client.complete(&request()) {
        Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("unexpected {other:?}"),
    }
    let log = client.request_log();
    let backoffs: Vec<Option<u64>> = log.iter().map(|e| e.backoff_ms).collect();
    assert_eq!(backoffs, vec![Some(10), Some(20), Some(25), None]);
    assert!(start.elapsed().as_millis() >= 55);
}

#[test]
fn invalid_requests_never_reach_the_wire() {
    let server = serve(vec![Reply { status: 200, body: ok_body("OK") }]);
    let client = HttpChatClient::new(endpoint(&server.base_url)).unwrap();
    let mut req = request();
    req.messages.clear();
    assert!(matches!(client.complete(&req), Err(LlmError::InvalidRequest(_))));
    assert!(SamplingParams::new(2.5, 10).is_err());
    assert!(SamplingParams::new(0.5, 0).is_err());
    assert!(server.bodies.lock().unwrap().is_empty());
}

#[test]
fn https_endpoints_are_supported() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = endpoint(&format!("https://127.0.0.1:{port}/v1"));
    cfg.max_retries = 0;
    let client = HttpChatClient::new(cfg).unwrap();
    assert!(matches!(client.complete(&request()), Err(LlmError::Transport { attempts: 1, .. })));
}
