//! A minimal chat-completions server for tests and offline demos.
//!
//! It answers every POST with a response chosen by a handler closure, records
//! request bodies, and tracks how many requests were being served at once.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
    /// Held before answering.
    pub delay: Duration,
}

impl MockResponse {
    /// A 200 whose assistant message is `content`.
    pub fn chat(content: &str) -> Self {
        Self {
            status: 200,
            body: chat_response(content),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: &str) -> Self {
        Self {
            status,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// Chat-completions response body carrying `content`.
pub fn chat_response(content: &str) -> String {
    serde_json::json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

type Handler = dyn Fn(usize, &str) -> MockResponse + Send + Sync;

struct Shared {
    handler: Box<Handler>,
    requests: Mutex<Vec<String>>,
    served: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    stop: AtomicBool,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Serves `handler(request_index, body)` for each request, in arrival order.
    pub fn start(handler: impl Fn(usize, &str) -> MockResponse + Send + Sync + 'static) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            handler: Box::new(handler),
            requests: Mutex::new(Vec::new()),
            served: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            stop: AtomicBool::new(false),
        });
        let s = Arc::clone(&shared);
        let accept = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let s = Arc::clone(&s);
                std::thread::spawn(move || {
                    if let Err(e) = serve(stream, &s) {
                        log::debug!("mock connection failed: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            shared,
            accept: Some(accept),
        })
    }

    /// Replies with `script` in order, repeating the last entry once exhausted.
    pub fn scripted(script: Vec<MockResponse>) -> std::io::Result<Self> {
        assert!(!script.is_empty(), "script needs at least one response");
        Self::start(move |i, _| script[i.min(script.len() - 1)].clone())
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Bodies of the requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.shared.requests.lock().expect("mock lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.served.load(Ordering::SeqCst)
    }

    /// Largest number of requests that were being served at once.
    pub fn peak_concurrency(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, s: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut first = true;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let line = line.trim_end();
        if line.is_empty() && !first {
            break;
        }
        first = false;
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();

    let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    s.peak.fetch_max(now, Ordering::SeqCst);
    let index = {
        let mut reqs = s.requests.lock().expect("mock lock");
        reqs.push(body.clone());
        s.served.fetch_add(1, Ordering::SeqCst);
        reqs.len() - 1
    };
    let resp = (s.handler)(index, &body);
    std::thread::sleep(resp.delay);
    s.in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        resp.status,
        resp.body.len(),
        resp.body
    )?;
    stream.flush()
}
