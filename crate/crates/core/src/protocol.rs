//! Newline-delimited JSON wire protocol for external oracles, generators,
//! canonicalizers and link scorers.
//!
//! Requests:
//!
//! ```text
//! {"id":n,"op":"score","mol":s}
//! {"id":n,"op":"canon","mol":s}
//! {"id":n,"op":"link","a":s,"b":s}
//! {"id":n,"op":"gen","context":[s...],"edges":[[s,s]...],"n":k}
//! ```
//!
//! Responses carry the request id and either `"ok":true` with one of
//! `value`, `mol`, `prob`, `mols`, or `"ok":false` with an `error` string.
//! One request is in flight per connection.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    Malformed(String),
    #[error("peer error: {0}")]
    Peer(String),
    #[error("transport: {0}")]
    Io(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Transport {
    /// Spawn `program args...` and talk over its standard streams.
    Process { program: String, #[serde(default)] args: Vec<String> },
    /// Connect to `host:port`.
    Tcp { addr: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolEndpoint {
    pub transport: Transport,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    30_000
}

/// Typed request bodies; the id is attached by the client.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Score { mol: String },
    Canon { mol: String },
    Link { a: String, b: String },
    Gen { context: Vec<String>, edges: Vec<(String, String)>, n: usize },
}

impl Request {
    pub fn to_json(&self, id: u64) -> Value {
        match self {
            Request::Score { mol } => json!({"id": id, "op": "score", "mol": mol}),
            Request::Canon { mol } => json!({"id": id, "op": "canon", "mol": mol}),
            Request::Link { a, b } => json!({"id": id, "op": "link", "a": a, "b": b}),
            Request::Gen { context, edges, n } => {
                let edges: Vec<[&str; 2]> = edges.iter().map(|(a, b)| [a.as_str(), b.as_str()]).collect();
                json!({"id": id, "op": "gen", "context": context, "edges": edges, "n": n})
            }
        }
    }

    /// Parses a request line. Returns the id (when one could be read) along
    /// with the outcome so a server can still address its error reply.
    pub fn parse(line: &str) -> (Option<u64>, Result<Request, String>) {
        let v: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return (None, Err(format!("bad json: {e}"))),
        };
        let id = v.get("id").and_then(Value::as_u64);
        let Some(_) = id else {
            return (None, Err("missing id".into()));
        };
        let s = |k: &str| {
            v.get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| format!("missing string field {k:?}"))
        };
        let req = match v.get("op").and_then(Value::as_str) {
            Some("score") => s("mol").map(|mol| Request::Score { mol }),
            Some("canon") => s("mol").map(|mol| Request::Canon { mol }),
            Some("link") => s("a").and_then(|a| s("b").map(|b| Request::Link { a, b })),
            Some("gen") => parse_gen(&v),
            Some(op) => Err(format!("unknown op {op:?}")),
            None => Err("missing op".into()),
        };
        (id, req)
    }
}

fn parse_gen(v: &Value) -> Result<Request, String> {
    let strings = |x: &Value| -> Option<Vec<String>> {
        x.as_array()?.iter().map(|s| s.as_str().map(str::to_string)).collect()
    };
    let context = v.get("context").and_then(strings).ok_or("bad context")?;
    let edges = v
        .get("edges")
        .and_then(Value::as_array)
        .ok_or("bad edges")?
        .iter()
        .map(|e| match strings(e).as_deref() {
            Some([a, b]) => Ok((a.clone(), b.clone())),
            _ => Err("edge must be a pair of strings".to_string()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = v.get("n").and_then(Value::as_u64).ok_or("bad n")? as usize;
    Ok(Request::Gen { context, edges, n })
}

/// Successful response payloads.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Value(f64),
    Mol(String),
    Prob(f64),
    Mols(Vec<String>),
}

pub fn response_json(id: u64, outcome: &Result<Payload, String>) -> Value {
    match outcome {
        Ok(Payload::Value(x)) => json!({"id": id, "ok": true, "value": x}),
        Ok(Payload::Mol(s)) => json!({"id": id, "ok": true, "mol": s}),
        Ok(Payload::Prob(p)) => json!({"id": id, "ok": true, "prob": p}),
        Ok(Payload::Mols(m)) => json!({"id": id, "ok": true, "mols": m}),
        Err(e) => json!({"id": id, "ok": false, "error": e}),
    }
}

/// Parses a response line and checks it answers request `id`.
pub fn parse_response(line: &str, id: u64) -> Result<Payload, ProtocolError> {
    let bad = |m: &str| ProtocolError::Malformed(m.to_string());
    let v: Value = serde_json::from_str(line).map_err(|e| bad(&format!("bad json: {e}")))?;
    let got = v.get("id").and_then(Value::as_u64).ok_or_else(|| bad("missing id"))?;
    if got != id {
        return Err(bad(&format!("response id {got} does not match request id {id}")));
    }
    match v.get("ok").and_then(Value::as_bool) {
        Some(true) => {}
        Some(false) => {
            let msg = v.get("error").and_then(Value::as_str).unwrap_or("unspecified");
            return Err(ProtocolError::Peer(msg.to_string()));
        }
        None => return Err(bad("missing ok")),
    }
    if let Some(x) = v.get("value") {
        return x.as_f64().map(Payload::Value).ok_or_else(|| bad("value is not a number"));
    }
    if let Some(x) = v.get("prob") {
        return x.as_f64().map(Payload::Prob).ok_or_else(|| bad("prob is not a number"));
    }
    if let Some(x) = v.get("mol") {
        return x
            .as_str()
            .map(|s| Payload::Mol(s.to_string()))
            .ok_or_else(|| bad("mol is not a string"));
    }
    if let Some(x) = v.get("mols") {
        let list: Option<Vec<String>> = x
            .as_array()
            .and_then(|a| a.iter().map(|s| s.as_str().map(str::to_string)).collect());
        return list.map(Payload::Mols).ok_or_else(|| bad("mols is not a string list"));
    }
    Err(bad("no payload field"))
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    /// Held so the socket can be shut down while the reader thread blocks.
    socket: Option<TcpStream>,
}

impl Connection {
    fn open(transport: &Transport) -> Result<Self, ProtocolError> {
        match transport {
            Transport::Process { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                    socket: None,
                })
            }
            Transport::Tcp { addr } => {
                let stream = TcpStream::connect(addr)?;
                let reader = stream.try_clone()?;
                Ok(Connection {
                    writer: Box::new(stream.try_clone()?),
                    lines: spawn_reader(reader),
                    child: None,
                    socket: Some(stream),
                })
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
        if let Some(s) = self.socket.take() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

fn spawn_reader<R: std::io::Read + Send + 'static>(r: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(r);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

/// Client side of one protocol connection. The connection opens lazily and
/// is reopened once after a timeout.
pub struct ProtocolClient {
    endpoint: ProtocolEndpoint,
    conn: Option<Connection>,
    next_id: u64,
}

impl ProtocolClient {
    pub fn new(endpoint: ProtocolEndpoint) -> Self {
        ProtocolClient {
            endpoint,
            conn: None,
            next_id: 1,
        }
    }

    pub fn endpoint(&self) -> &ProtocolEndpoint {
        &self.endpoint
    }

    /// One request/response exchange, no retry.
    pub fn roundtrip(&mut self, req: &Request) -> Result<Payload, ProtocolError> {
        if self.conn.is_none() {
            self.conn = Some(Connection::open(&self.endpoint.transport)?);
        }
        let id = self.next_id;
        self.next_id += 1;
        let conn = self.conn.as_mut().expect("opened above");
        let mut line = serde_json::to_string(&req.to_json(id)).expect("json encodes");
        line.push('\n');
        let sent = conn.writer.write_all(line.as_bytes()).and_then(|_| conn.writer.flush());
        if let Err(e) = sent {
            self.conn = None;
            return Err(ProtocolError::Malformed(format!("peer closed stream: {e}")));
        }
        let timeout = Duration::from_millis(self.endpoint.timeout_ms);
        let reply = match conn.lines.recv_timeout(timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => {
                self.conn = None;
                return Err(ProtocolError::Malformed(format!("read failed: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.conn = None;
                return Err(ProtocolError::Timeout(self.endpoint.timeout_ms));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.conn = None;
                return Err(ProtocolError::Malformed("peer closed stream mid-response".into()));
            }
        };
        if !reply.ends_with('\n') {
            self.conn = None;
            return Err(ProtocolError::Malformed("peer closed stream mid-response".into()));
        }
        parse_response(reply.trim_end(), id)
    }

    /// Like [`roundtrip`](Self::roundtrip), restarting the peer once on timeout.
    pub fn call(&mut self, req: &Request) -> Result<Payload, ProtocolError> {
        match self.roundtrip(req) {
            Err(ProtocolError::Timeout(_)) => self.roundtrip(req),
            other => other,
        }
    }

    pub fn score(&mut self, mol: &str) -> Result<f64, ProtocolError> {
        match self.call(&Request::Score { mol: mol.to_string() })? {
            Payload::Value(x) => Ok(x),
            p => Err(unexpected("value", &p)),
        }
    }

    pub fn canon(&mut self, mol: &str) -> Result<String, ProtocolError> {
        match self.call(&Request::Canon { mol: mol.to_string() })? {
            Payload::Mol(s) => Ok(s),
            p => Err(unexpected("mol", &p)),
        }
    }

    pub fn link(&mut self, a: &str, b: &str) -> Result<f64, ProtocolError> {
        match self.call(&Request::Link { a: a.to_string(), b: b.to_string() })? {
            Payload::Prob(p) => Ok(p),
            p => Err(unexpected("prob", &p)),
        }
    }

    pub fn gen(
        &mut self,
        context: &[String],
        edges: &[(String, String)],
        n: usize,
    ) -> Result<Vec<String>, ProtocolError> {
        let req = Request::Gen {
            context: context.to_vec(),
            edges: edges.to_vec(),
            n,
        };
        match self.call(&req)? {
            Payload::Mols(m) => Ok(m),
            p => Err(unexpected("mols", &p)),
        }
    }
}

fn unexpected(want: &str, got: &Payload) -> ProtocolError {
    ProtocolError::Malformed(format!("expected {want} payload, got {got:?}"))
}

/// A conformance case: request line, and whether the reply must be `ok`.
pub struct ConformanceCase {
    pub request: Request,
    pub expect_ok: bool,
}

/// Request corpus any peer serving the synthetic default domain
/// (alphabet ABCD, length 8) must answer.
pub fn conformance_corpus() -> Vec<ConformanceCase> {
    let ok = |request| ConformanceCase { request, expect_ok: true };
    let fail = |request| ConformanceCase { request, expect_ok: false };
    vec![
        ok(Request::Score { mol: "AAAAAAAA".into() }),
        ok(Request::Canon { mol: "ABCDABCD".into() }),
        fail(Request::Canon { mol: "AB#DABCD".into() }),
        fail(Request::Score { mol: "AAA".into() }),
        ok(Request::Link { a: "AAAAAAAA".into(), b: "AAAAAABA".into() }),
        ok(Request::Link { a: "AAAAAAAA".into(), b: "AAAAAAAA".into() }),
        ok(Request::Gen {
            context: vec!["AAAAAAAA".into(), "ABAAAAAA".into()],
            edges: vec![("AAAAAAAA".into(), "ABAAAAAA".into())],
            n: 3,
        }),
    ]
}

/// Runs the conformance corpus against a client. Returns one line per
/// failing case; empty means conformant.
pub fn run_conformance(client: &mut ProtocolClient) -> Vec<String> {
    let mut failures = Vec::new();
    for (i, case) in conformance_corpus().into_iter().enumerate() {
        match (client.roundtrip(&case.request), case.expect_ok) {
            (Ok(p), true) => {
                let shape_ok = matches!(
                    (&case.request, &p),
                    (Request::Score { .. }, Payload::Value(_))
                        | (Request::Canon { .. }, Payload::Mol(_))
                        | (Request::Link { .. }, Payload::Prob(_))
                        | (Request::Gen { .. }, Payload::Mols(_))
                );
                if !shape_ok {
                    failures.push(format!("case {i}: wrong payload {p:?}"));
                }
            }
            (Err(ProtocolError::Peer(_)), false) => {}
            (r, _) => failures.push(format!("case {i}: unexpected outcome {r:?}")),
        }
    }
    failures
}
