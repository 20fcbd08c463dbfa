//! Minimal in-process scoring server for tests and offline runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::remote::ScoreRequest;

/// What the server sends back for one request.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Json { status: u16, body: String },
    /// Sleep, then reply.
    Delayed(Duration, Box<MockReply>),
    /// Close the connection without answering.
    Hangup,
}

impl MockReply {
    pub fn score(value: f64) -> Self {
        MockReply::Json {
            status: 200,
            body: serde_json::json!({ "score": value }).to_string(),
        }
    }

    pub fn raw(body: impl Into<String>) -> Self {
        MockReply::Json {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16) -> Self {
        MockReply::Json {
            status,
            body: r#"{"error": "unavailable"}"#.into(),
        }
    }
}

/// `(request, zero-based hit number) -> reply`.
pub type Handler = dyn Fn(&ScoreRequest, usize) -> MockReply + Send + Sync;

pub struct MockServer {
    addr: SocketAddr,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<ScoreRequest>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&ScoreRequest, usize) -> MockReply + Send + Sync + 'static) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = {
            let (hits, requests, stop) = (hits.clone(), requests.clone(), stop.clone());
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let (hits, requests, handler) = (hits.clone(), requests.clone(), handler.clone());
                    thread::spawn(move || {
                        let _ = serve(conn, handler.as_ref(), &hits, &requests);
                    });
                }
            })
        };
        Ok(MockServer {
            addr,
            hits,
            requests,
            stop,
            thread: Some(thread),
        })
    }

    /// Scores every request with the mean of its frame values.
    pub fn mean_scorer() -> std::io::Result<Self> {
        Self::start(|req, _| {
            let vals: Vec<f64> = req.frames.iter().flatten().copied().collect();
            MockReply::score(vals.iter().sum::<f64>() / vals.len().max(1) as f64)
        })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ScoreRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(
    conn: TcpStream,
    handler: &Handler,
    hits: &AtomicUsize,
    requests: &Mutex<Vec<ScoreRequest>>,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let path_ok = line.starts_with("POST ") && line.split_whitespace().nth(1) == Some("/score");
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    let hit = hits.fetch_add(1, Ordering::SeqCst);

    let reply = match (path_ok, serde_json::from_slice::<ScoreRequest>(&body)) {
        (true, Ok(req)) => {
            let r = handler(&req, hit);
            requests.lock().unwrap().push(req);
            r
        }
        (false, _) => MockReply::Json {
            status: 404,
            body: "{}".into(),
        },
        (true, Err(e)) => MockReply::Json {
            status: 400,
            body: serde_json::json!({ "error": e.to_string() }).to_string(),
        },
    };
    respond(conn, reply)
}

fn respond(mut conn: TcpStream, reply: MockReply) -> std::io::Result<()> {
    match reply {
        MockReply::Hangup => Ok(()),
        MockReply::Delayed(d, inner) => {
            thread::sleep(d);
            respond(conn, *inner)
        }
        MockReply::Json { status, body } => {
            let head = format!(
                "HTTP/1.1 {status} {}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                if status == 200 { "OK" } else { "Error" },
                body.len()
            );
            conn.write_all(head.as_bytes())?;
            conn.write_all(body.as_bytes())?;
            conn.flush()
        }
    }
}
