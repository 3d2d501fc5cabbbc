//! Newline-delimited JSON protocol over stdio pipes or TCP.
//!
//! The server speaks first with `{"handshake": {...}}`. Each request is
//! `{"id": n, "kind": "...", ...}` and each response `{"id": n, "result":
//! {...}}` or `{"id": n, "error": "..."}`. Responses may arrive in any order;
//! the client matches them to pending requests by id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Handshake, LogprobsRequest, MaskLogprobs, Token};
use crate::pseudoword::EmbeddingTable;
use crate::util::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestBody {
    Tokenize { surface: String },
    Logprobs(LogprobsRequest),
    Embeddings,
    Complete { prompt: String },
}

impl RequestBody {
    fn kind(&self) -> &'static str {
        match self {
            RequestBody::Tokenize { .. } => "tokenize",
            RequestBody::Logprobs(_) => "logprobs",
            RequestBody::Embeddings => "embeddings",
            RequestBody::Complete { .. } => "complete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    #[serde(flatten)]
    pub body: RequestBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseBody {
    Tokens(Vec<Token>),
    Logprobs(MaskLogprobs),
    Embeddings(EmbeddingTable),
    Completion(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResponseBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct HandshakeLine {
    handshake: Handshake,
}

/// Counting semaphore bounding requests in flight.
struct Window {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Window {
    fn acquire(&self) {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

type Pending = HashMap<u64, Sender<Result<ResponseBody, BackendError>>>;

struct Shared {
    pending: Mutex<Pending>,
    /// Set once the reader sees EOF or a broken stream.
    closed: Mutex<Option<String>>,
}

/// Client side of the protocol. Safe to share across threads; at most
/// `in_flight` requests are outstanding at once.
pub struct WireClient {
    handshake: Handshake,
    writer: Mutex<Box<dyn Write + Send>>,
    shared: Arc<Shared>,
    next_id: AtomicU64,
    window: Window,
    child: Option<Mutex<Child>>,
    tcp: Option<TcpStream>,
    reader: Option<JoinHandle<()>>,
}

impl WireClient {
    /// Reads the handshake from `reader`, then starts the response reader.
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
        in_flight: usize,
    ) -> Result<Self, BackendError> {
        let mut reader = reader;
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(BackendError::Transport("stream closed before handshake".into()));
        }
        let hs: HandshakeLine =
            serde_json::from_str(line.trim()).map_err(|e| BackendError::Protocol(format!("bad handshake: {e}")))?;

        let shared = Arc::new(Shared {
            pending: Mutex::new(HashMap::new()),
            closed: Mutex::new(None),
        });
        let reader_shared = Arc::clone(&shared);
        let handle = std::thread::spawn(move || read_loop(reader, &reader_shared));
        Ok(WireClient {
            handshake: hs.handshake,
            writer: Mutex::new(Box::new(writer)),
            shared,
            next_id: AtomicU64::new(1),
            window: Window {
                free: Mutex::new(in_flight.max(1)),
                cv: Condvar::new(),
            },
            child: None,
            tcp: None,
            reader: Some(handle),
        })
    }

    /// Spawns `command` through the shell and speaks over its stdio.
    pub fn spawn(command: &str, in_flight: usize) -> Result<Self, BackendError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Transport(format!("spawn `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = WireClient::from_streams(BufReader::new(stdout), stdin, in_flight)?;
        client.child = Some(Mutex::new(child));
        Ok(client)
    }

    pub fn connect_tcp(addr: &str, in_flight: usize) -> Result<Self, BackendError> {
        let stream = TcpStream::connect(addr).map_err(|e| BackendError::Transport(format!("connect {addr}: {e}")))?;
        let read = stream.try_clone().map_err(|e| BackendError::Transport(e.to_string()))?;
        let control = stream.try_clone().map_err(|e| BackendError::Transport(e.to_string()))?;
        let mut client = WireClient::from_streams(BufReader::new(read), stream, in_flight)?;
        client.tcp = Some(control);
        Ok(client)
    }

    /// `cmd:<shell command>` or `tcp:<host:port>`.
    pub fn connect(target: &str, in_flight: usize) -> Result<Self, BackendError> {
        if let Some(cmd) = target.strip_prefix("cmd:") {
            WireClient::spawn(cmd, in_flight)
        } else if let Some(addr) = target.strip_prefix("tcp:") {
            WireClient::connect_tcp(addr, in_flight)
        } else {
            Err(BackendError::Transport(format!(
                "backend target `{target}` must start with cmd: or tcp:"
            )))
        }
    }

    pub fn call(&self, body: RequestBody) -> Result<ResponseBody, BackendError> {
        self.window.acquire();
        let result = self.call_inner(body);
        self.window.release();
        result
    }

    fn call_inner(&self, body: RequestBody) -> Result<ResponseBody, BackendError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = channel();
        {
            // Lock order pending -> closed, shared with the reader.
            let mut pending = self.shared.pending.lock().unwrap();
            if let Some(reason) = self.shared.closed.lock().unwrap().clone() {
                return Err(BackendError::Transport(reason));
            }
            pending.insert(id, tx);
        }
        let line = serde_json::to_string(&Request { id, body }).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let sent = {
            let mut w = self.writer.lock().unwrap();
            w.write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush())
        };
        if let Err(e) = sent {
            self.shared.pending.lock().unwrap().remove(&id);
            return Err(BackendError::Transport(e.to_string()));
        }
        rx.recv()
            .unwrap_or_else(|_| Err(BackendError::Transport("reader stopped".into())))
    }
}

fn read_loop(mut reader: impl BufRead, shared: &Shared) {
    let mut line = String::new();
    let reason = loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break "backend closed the stream".to_string(),
            Err(e) => break e.to_string(),
            Ok(_) => {}
        }
        if line.trim().is_empty() {
            continue;
        }
        let resp: Response = match serde_json::from_str(line.trim()) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("dropping unparseable response line: {e}");
                continue;
            }
        };
        let Some(tx) = shared.pending.lock().unwrap().remove(&resp.id) else {
            log::warn!("response for unknown request id {}", resp.id);
            continue;
        };
        let outcome = match (resp.result, resp.error) {
            (_, Some(message)) => Err(BackendError::Remote { id: resp.id, message }),
            (Some(body), None) => Ok(body),
            (None, None) => Err(BackendError::Protocol(format!(
                "response {} has neither result nor error",
                resp.id
            ))),
        };
        let _ = tx.send(outcome);
    };
    let mut pending = shared.pending.lock().unwrap();
    *shared.closed.lock().unwrap() = Some(reason.clone());
    for (_, tx) in pending.drain() {
        let _ = tx.send(Err(BackendError::Transport(reason.clone())));
    }
}

impl Drop for WireClient {
    fn drop(&mut self) {
        // Closing stdin lets a child server exit; the reader then sees EOF.
        *self.writer.lock().unwrap() = Box::new(std::io::sink());
        if let Some(child) = &self.child {
            let mut child = child.lock().unwrap();
            if let Some(stdin) = child.stdin.take() {
                drop(stdin);
            }
            let _ = child.wait();
        }
        if let Some(tcp) = &self.tcp {
            let _ = tcp.shutdown(std::net::Shutdown::Both);
        }
        if let Some(h) = self.reader.take() {
            if self.child.is_some() || self.tcp.is_some() {
                let _ = h.join();
            }
        }
    }
}

fn unexpected(kind: &str) -> BackendError {
    BackendError::Protocol(format!("unexpected result type for `{kind}`"))
}

impl Backend for WireClient {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn tokenize(&self, surface: &str) -> Result<Vec<Token>, BackendError> {
        if surface.trim().is_empty() {
            return Err(BackendError::EmptySurface);
        }
        match self.call(RequestBody::Tokenize {
            surface: surface.to_string(),
        })? {
            ResponseBody::Tokens(t) => Ok(t),
            _ => Err(unexpected("tokenize")),
        }
    }

    fn logprobs(&self, request: &LogprobsRequest) -> Result<MaskLogprobs, BackendError> {
        request.validate(self.handshake.dimension)?;
        match self.call(RequestBody::Logprobs(request.clone()))? {
            ResponseBody::Logprobs(l) => {
                if l.len() != request.queries.len() {
                    return Err(BackendError::Protocol("logprobs arity mismatch".into()));
                }
                if l.iter().flat_map(|m| m.values()).any(|v| *v > 0.0 || v.is_nan()) {
                    return Err(BackendError::Protocol("backend returned a log-prob > 0".into()));
                }
                Ok(l)
            }
            _ => Err(unexpected("logprobs")),
        }
    }

    fn embeddings(&self) -> Result<EmbeddingTable, BackendError> {
        match self.call(RequestBody::Embeddings)? {
            ResponseBody::Embeddings(t) => Ok(t),
            _ => Err(unexpected("embeddings")),
        }
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        if !self.handshake.supports_complete {
            return Err(BackendError::Unsupported("complete"));
        }
        match self.call(RequestBody::Complete {
            prompt: prompt.to_string(),
        })? {
            ResponseBody::Completion(c) => Ok(c),
            _ => Err(unexpected("complete")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ServeOptions {
    /// Delay each response by a seeded random 0..max_ms, so responses
    /// leave in a different order than requests arrived.
    pub jitter: Option<(u64, u64)>,
}

fn handle(backend: &dyn Backend, body: RequestBody) -> Result<ResponseBody, BackendError> {
    Ok(match body {
        RequestBody::Tokenize { surface } => ResponseBody::Tokens(backend.tokenize(&surface)?),
        RequestBody::Logprobs(r) => ResponseBody::Logprobs(backend.logprobs(&r)?),
        RequestBody::Embeddings => ResponseBody::Embeddings(backend.embeddings()?),
        RequestBody::Complete { prompt } => ResponseBody::Completion(backend.complete(&prompt)?),
    })
}

/// Serves one session until the reader hits EOF. Malformed requests get an
/// error response and the session stays alive.
pub fn serve_connection(
    backend: &dyn Backend,
    reader: impl BufRead,
    writer: impl Write + Send,
    opts: ServeOptions,
) -> std::io::Result<()> {
    let writer = Mutex::new(writer);
    let send = |resp: &Response| -> std::io::Result<()> {
        let line = serde_json::to_string(resp).map_err(std::io::Error::other)?;
        let mut w = writer.lock().unwrap();
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()
    };
    {
        let line = serde_json::to_string(&HandshakeLine {
            handshake: backend.handshake().clone(),
        })
        .map_err(std::io::Error::other)?;
        let mut w = writer.lock().unwrap();
        writeln!(w, "{line}")?;
        w.flush()?;
    }
    let mut rng = opts.jitter.map(|(seed, _)| seeded_rng(seed, "serve/jitter"));
    std::thread::scope(|scope| -> std::io::Result<()> {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let req: Request = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    let id = serde_json::from_str::<serde_json::Value>(&line)
                        .ok()
                        .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                        .unwrap_or(0);
                    send(&Response {
                        id,
                        result: None,
                        error: Some(format!("malformed request: {e}")),
                    })?;
                    continue;
                }
            };
            let delay = match (&mut rng, opts.jitter) {
                (Some(rng), Some((_, max))) if max > 0 => rng.random_range(0..max),
                _ => 0,
            };
            let send = &send;
            scope.spawn(move || {
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
                let kind = req.body.kind();
                let resp = match handle(backend, req.body) {
                    Ok(body) => Response {
                        id: req.id,
                        result: Some(body),
                        error: None,
                    },
                    Err(e) => Response {
                        id: req.id,
                        result: None,
                        error: Some(format!("{kind}: {e}")),
                    },
                };
                if let Err(e) = send(&resp) {
                    log::warn!("failed to send response {}: {e}", req.id);
                }
            });
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Segment;

    #[test]
    fn request_wire_shape() {
        let r = Request {
            id: 7,
            body: RequestBody::Tokenize {
                surface: "sports team".into(),
            },
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"id":7,"kind":"tokenize","surface":"sports team"}"#);
        assert_eq!(serde_json::from_str::<Request>(&s).unwrap(), r);

        let r = Request {
            id: 8,
            body: RequestBody::Logprobs(LogprobsRequest {
                segments: vec![Segment::Pseudo("X".into()), Segment::text("is a"), Segment::Mask],
                pseudowords: [("X".to_string(), vec![0.5, -1.0])].into(),
                queries: vec![vec!["person".into()]],
            }),
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(
            s.starts_with(r#"{"id":8,"kind":"logprobs","segments":[{"pseudo":"X"},{"text":"is a"},"mask"]"#),
            "{s}"
        );
        assert_eq!(serde_json::from_str::<Request>(&s).unwrap(), r);

        let s = serde_json::to_string(&Request {
            id: 9,
            body: RequestBody::Embeddings,
        })
        .unwrap();
        assert_eq!(s, r#"{"id":9,"kind":"embeddings"}"#);
    }

    #[test]
    fn response_wire_shape() {
        let ok = Response {
            id: 1,
            result: Some(ResponseBody::Completion("(b)".into())),
            error: None,
        };
        assert_eq!(
            serde_json::to_string(&ok).unwrap(),
            r#"{"id":1,"result":{"completion":"(b)"}}"#
        );
        let err: Response = serde_json::from_str(r#"{"id":2,"error":"boom"}"#).unwrap();
        assert_eq!(err.error.as_deref(), Some("boom"));
        assert!(err.result.is_none());
    }
}
