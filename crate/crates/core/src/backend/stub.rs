//! A tiny recording HTTP server that speaks enough of the chat-completions
//! protocol to test the client without a model.
//!
//! Fixtures are recorded request→response pairs:
//!
//! ```json
//! {"exchanges": [
//!   {"path": "/v1/chat/completions",
//!    "request": {"model": "qwen"},
//!    "response": {"status": 200, "delay_ms": 0, "body": {...}}}
//! ]}
//! ```
//!
//! `request` is matched as a subset of the incoming JSON body; the first
//! matching exchange answers. Unmatched requests get a 404, except
//! `GET /v1/models`, which always succeeds.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubResponse {
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default)]
    pub body: Value,
    #[serde(default)]
    pub delay_ms: u64,
}

impl StubResponse {
    /// A successful chat completion carrying `content`.
    pub fn completion(content: &str) -> StubResponse {
        StubResponse {
            status: 200,
            body: chat_completion_body(content, Some((12, 3))),
            delay_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubExchange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<Value>,
    pub response: StubResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubFixture {
    pub exchanges: Vec<StubExchange>,
}

impl StubFixture {
    pub fn load(path: &Path) -> Result<StubFixture> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A request as the stub saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl CapturedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> Option<Value> {
        serde_json::from_str(&self.body).ok()
    }
}

pub fn chat_completion_body(content: &str, usage: Option<(u64, u64)>) -> Value {
    let mut body = json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
    });
    if let Some((p, c)) = usage {
        body["usage"] = json!({"prompt_tokens": p, "completion_tokens": c, "total_tokens": p + c});
    }
    body
}

/// `expected` is contained in `actual`: objects recursively by key, all
/// other values by equality.
fn is_subset(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Object(e), Value::Object(a)) => e.iter().all(|(k, v)| a.get(k).is_some_and(|av| is_subset(v, av))),
        _ => expected == actual,
    }
}

type Responder = dyn Fn(&CapturedRequest) -> StubResponse + Send + Sync;

struct Shared {
    responder: Box<Responder>,
    captured: Mutex<Vec<CapturedRequest>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    stop: AtomicBool,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Serve responses computed by `responder`.
    pub fn start(responder: impl Fn(&CapturedRequest) -> StubResponse + Send + Sync + 'static) -> Result<StubServer> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| Error::io("127.0.0.1:0", e))?;
        let addr = listener.local_addr().map_err(|e| Error::io("127.0.0.1:0", e))?;
        let shared = Arc::new(Shared {
            responder: Box::new(responder),
            captured: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            stop: AtomicBool::new(false),
        });
        let accept_shared = Arc::clone(&shared);
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let shared = Arc::clone(&accept_shared);
                thread::spawn(move || {
                    let _ = serve(stream, &shared);
                });
            }
        });
        Ok(StubServer {
            addr,
            shared,
            accept: Some(accept),
        })
    }

    /// Serve a recorded fixture.
    pub fn from_fixture(fixture: StubFixture) -> Result<StubServer> {
        StubServer::start(move |req| {
            let body = req.json().unwrap_or(Value::Null);
            fixture
                .exchanges
                .iter()
                .find(|x| {
                    x.path.as_deref().is_none_or(|p| p == req.path)
                        && x.request.as_ref().is_none_or(|r| is_subset(r, &body))
                })
                .map(|x| x.response.clone())
                .unwrap_or_else(|| unmatched(req))
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.shared.captured.lock().expect("capture lock").clone()
    }

    /// Highest number of requests being handled at the same moment.
    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }
}

fn unmatched(req: &CapturedRequest) -> StubResponse {
    if req.method == "GET" && req.path == "/v1/models" {
        return StubResponse {
            status: 200,
            body: json!({"object": "list", "data": []}),
            delay_ms: 0,
        };
    }
    StubResponse {
        status: 404,
        body: json!({"error": "no recorded exchange matches"}),
        delay_ms: 0,
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
    }
}

fn read_request(stream: &TcpStream) -> std::io::Result<CapturedRequest> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let length = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    Ok(CapturedRequest {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

fn serve(mut stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    if shared.stop.load(Ordering::SeqCst) {
        return Ok(());
    }
    let request = read_request(&stream)?;
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak.fetch_max(now, Ordering::SeqCst);
    shared.captured.lock().expect("capture lock").push(request.clone());
    let response = (shared.responder)(&request);
    if response.delay_ms > 0 {
        thread::sleep(Duration::from_millis(response.delay_ms));
    }
    let body = serde_json::to_string(&response.body).unwrap_or_default();
    let head = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        response.status,
        if response.status < 400 { "OK" } else { "Error" },
        body.len()
    );
    let written = stream.write_all(head.as_bytes()).and_then(|_| stream.write_all(body.as_bytes()));
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    written?;
    stream.flush()
}
