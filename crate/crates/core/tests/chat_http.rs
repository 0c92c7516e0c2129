use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use meabench::agent::chat::{ChatBackendConfig, ChatClient, ChatError, ChatMessage, HttpChatClient, ReplayChatClient};

/// Minimal HTTP/1.1 server answering each request with the next scripted
/// `(status, body)`; the last entry repeats once the script runs out.
struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

fn reply_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn serve(mut stream: TcpStream, script: Arc<Mutex<VecDeque<(u16, String)>>>, hits: Arc<AtomicUsize>, auth: Arc<Mutex<Vec<Option<String>>>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let mut length = 0;
        let mut authorization = None;
        loop {
            let mut header = String::new();
            reader.read_line(&mut header).unwrap();
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            let (name, value) = header.split_once(':').unwrap();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap(),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        hits.fetch_add(1, Ordering::SeqCst);
        auth.lock().unwrap().push(authorization);
        let (status, text) = {
            let mut s = script.lock().unwrap();
            if s.len() > 1 {
                s.pop_front().unwrap()
            } else {
                s.front().cloned().unwrap()
            }
        };
        let response = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        );
        if stream.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}

impl MockServer {
    fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let script = Arc::new(Mutex::new(VecDeque::from(script)));
        let hits = Arc::new(AtomicUsize::new(0));
        let auth = Arc::new(Mutex::new(Vec::new()));
        let (h, a) = (Arc::clone(&hits), Arc::clone(&auth));
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (s, h, a) = (Arc::clone(&script), Arc::clone(&h), Arc::clone(&a));
                thread::spawn(move || serve(stream, s, h, a));
            }
        });
        MockServer { url, hits, auth }
    }

    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn config(url: &str, retries: u32) -> ChatBackendConfig {
    let mut cfg = ChatBackendConfig::new(url, "test-model");
    cfg.max_retries = retries;
    cfg.backoff_base_ms = 1;
    cfg.timeout_secs = 5;
    cfg
}

#[test]
fn returns_the_reply_text() {
    let server = MockServer::start(vec![(200, reply_body("2, 4"))]);
    let client = HttpChatClient::new(config(&server.url, 0)).unwrap();
    assert_eq!(client.complete(&[ChatMessage::user("pick")]).unwrap(), "2, 4");
    assert_eq!(server.hits(), 1);
    assert_eq!(server.auth.lock().unwrap()[0], None);
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let server = MockServer::start(vec![(429, "slow down".into()), (429, "slow down".into()), (200, reply_body("ok"))]);
    let client = HttpChatClient::new(config(&server.url, 3)).unwrap();
    assert_eq!(client.complete(&[ChatMessage::user("x")]).unwrap(), "ok");
    assert_eq!(server.hits(), 3);
}

#[test]
fn gives_up_with_the_status_when_retries_are_off() {
    let server = MockServer::start(vec![(500, "boom".into())]);
    let client = HttpChatClient::new(config(&server.url, 0)).unwrap();
    let err = client.complete(&[ChatMessage::user("x")]).unwrap_err();
    assert_eq!(err.status(), Some(500));
    assert!(matches!(err, ChatError::Exhausted { attempts: 1, .. }));
    assert_eq!(server.hits(), 1);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(vec![(400, "bad".into()), (200, reply_body("late"))]);
    let client = HttpChatClient::new(config(&server.url, 3)).unwrap();
    assert_eq!(client.complete(&[ChatMessage::user("x")]).unwrap_err().status(), Some(400));
    assert_eq!(server.hits(), 1);
}

#[test]
fn sends_the_bearer_token_from_the_environment() {
    std::env::set_var("MEABENCH_HTTP_TEST_KEY", "sk-test");
    let server = MockServer::start(vec![(200, reply_body("1"))]);
    let mut cfg = config(&server.url, 0);
    cfg.api_key_env = Some("MEABENCH_HTTP_TEST_KEY".into());
    HttpChatClient::new(cfg).unwrap().complete(&[ChatMessage::user("x")]).unwrap();
    assert_eq!(server.auth.lock().unwrap()[0].as_deref(), Some("Bearer sk-test"));
}

#[test]
fn transcripts_replay_offline() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("chat.jsonl");
    let server = MockServer::start(vec![(200, reply_body("first")), (200, reply_body("second"))]);
    let mut cfg = config(&server.url, 0);
    cfg.transcript = Some(transcript.clone());
    let live = HttpChatClient::new(cfg.clone()).unwrap();
    let a = live.complete(&[ChatMessage::user("a")]).unwrap();
    let b = live.complete(&[ChatMessage::user("b")]).unwrap();

    let replay = ReplayChatClient::load(&transcript, cfg).unwrap();
    assert_eq!(replay.complete(&[ChatMessage::user("a")]).unwrap(), a);
    assert_eq!(replay.complete(&[ChatMessage::user("b")]).unwrap(), b);
    assert!(matches!(
        replay.complete(&[ChatMessage::user("c")]),
        Err(ChatError::NotInTranscript(_))
    ));
    assert_eq!(server.hits(), 2);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = HttpChatClient::new(config(&format!("http://127.0.0.1:{port}/"), 1)).unwrap();
    match client.complete(&[ChatMessage::user("x")]) {
        Err(ChatError::Exhausted { attempts: 2, last }) => assert!(matches!(*last, ChatError::Transport(_))),
        other => panic!("{other:?}"),
    }
}
