//! Client side of the JSON-lines protocol, over a child process's stdio or
//! a TCP connection.
//!
//! Requests may be pipelined: a reader thread routes each response line to
//! the caller waiting on its id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::protocol::{HelloReply, Op, Request, ScoreReply, TokenizeReply};
use super::{
    check_score_request, check_score_result, Backend, BackendError, BackendInfo, ScoreResult,
    PROTOCOL_VERSION,
};

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub handshake_timeout: Duration,
    /// `None` waits indefinitely; long contexts on real models are slow.
    pub request_timeout: Option<Duration>,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions { handshake_timeout: Duration::from_secs(600), request_timeout: None }
    }
}

type Reply = Result<Value, BackendError>;
type Pending = Arc<Mutex<PendingState>>;

#[derive(Default)]
struct PendingState {
    waiters: HashMap<u64, Sender<Reply>>,
    closed: bool,
}

pub struct RemoteBackend {
    info: BackendInfo,
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Pending,
    next_id: AtomicU64,
    child: Option<Mutex<Child>>,
    options: RemoteOptions,
}

impl RemoteBackend {
    /// Launch `argv` and handshake over its stdin/stdout.
    pub fn spawn(argv: &[String], options: RemoteOptions) -> Result<Self, BackendError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| BackendError::Unavailable("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Self::handshake(Box::new(stdin), stdout, Some(child), options)
    }

    /// Connect to a backend listening on `addr` and handshake.
    pub fn connect(addr: &str, options: RemoteOptions) -> Result<Self, BackendError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::handshake(Box::new(stream), reader, None, options)
    }

    /// Handshake over an arbitrary duplex stream.
    pub fn from_streams<R: Read + Send + 'static>(
        writer: Box<dyn Write + Send>,
        reader: R,
        options: RemoteOptions,
    ) -> Result<Self, BackendError> {
        Self::handshake(writer, reader, None, options)
    }

    fn handshake<R: Read + Send + 'static>(
        writer: Box<dyn Write + Send>,
        reader: R,
        child: Option<Child>,
        options: RemoteOptions,
    ) -> Result<Self, BackendError> {
        let pending: Pending = Arc::default();
        spawn_reader(reader, Arc::clone(&pending));
        let mut backend = RemoteBackend {
            info: BackendInfo {
                name: String::new(),
                version: None,
                max_context: super::MaxContext::Unbounded,
                bos_id: None,
                eos_id: None,
                supports_logprob: false,
                supports_concurrent: false,
            },
            writer: Mutex::new(writer),
            pending,
            next_id: AtomicU64::new(1),
            child: child.map(Mutex::new),
            options,
        };
        let timeout = Some(backend.options.handshake_timeout);
        let raw = backend.call(Op::Hello { fcp: Some(PROTOCOL_VERSION.into()) }, timeout, "handshake")?;
        let reply: HelloReply = decode(raw)?;
        if reply.fcp != Some(u64::from(PROTOCOL_VERSION)) {
            return Err(BackendError::VersionMismatch { got: reply.fcp });
        }
        reply.info.validate()?;
        backend.info = reply.info;
        Ok(backend)
    }

    fn call(&self, op: Op, timeout: Option<Duration>, what: &'static str) -> Result<Value, BackendError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        {
            let mut state = self.pending.lock().expect("pending lock");
            if state.closed {
                return Err(BackendError::Closed);
            }
            state.waiters.insert(id, tx);
        }
        let mut line = serde_json::to_vec(&Request { id, op }).expect("request serializes");
        line.push(b'\n');
        {
            let mut w = self.writer.lock().expect("writer lock");
            if let Err(e) = w.write_all(&line).and_then(|()| w.flush()) {
                self.pending.lock().expect("pending lock").waiters.remove(&id);
                return Err(e.into());
            }
        }
        let reply = match timeout {
            Some(t) => rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => BackendError::Timeout(what),
                RecvTimeoutError::Disconnected => BackendError::Closed,
            }),
            None => rx.recv().map_err(|_| BackendError::Closed),
        };
        if reply.is_err() {
            self.pending.lock().expect("pending lock").waiters.remove(&id);
        }
        reply?
    }
}

impl Drop for RemoteBackend {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut child = child.lock().unwrap_or_else(|e| e.into_inner());
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn decode<T: serde::de::DeserializeOwned>(raw: Value) -> Result<T, BackendError> {
    serde_json::from_value(raw.clone()).map_err(|e| BackendError::Protocol {
        message: format!("unexpected reply shape: {e}"),
        raw: raw.to_string(),
    })
}

fn spawn_reader<R: Read + Send + 'static>(reader: R, pending: Pending) {
    thread::spawn(move || {
        let reader = BufReader::new(reader);
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            route(&pending, &line);
        }
        let mut state = pending.lock().expect("pending lock");
        state.closed = true;
        for (_, tx) in state.waiters.drain() {
            let _ = tx.send(Err(BackendError::Closed));
        }
    });
}

fn route(pending: &Pending, line: &str) {
    let protocol_error = |message: String| BackendError::Protocol { message, raw: line.to_string() };
    let mut state = pending.lock().expect("pending lock");
    let parsed: Result<Value, _> = serde_json::from_str(line);
    let id = parsed.as_ref().ok().and_then(|v| v.get("id")).and_then(Value::as_u64);
    let Some(tx) = id.and_then(|id| state.waiters.remove(&id)) else {
        // unroutable: every waiter learns the stream is corrupt
        for (_, tx) in state.waiters.drain() {
            let _ = tx.send(Err(protocol_error("unroutable reply".into())));
        }
        return;
    };
    let v = parsed.expect("id was extracted from a parsed value");
    let reply = match v.get("ok").and_then(Value::as_bool) {
        Some(true) => Ok(v),
        Some(false) => Err(BackendError::Remote(
            v.get("error").and_then(Value::as_str).unwrap_or("unspecified error").to_string(),
        )),
        None => Err(protocol_error("reply lacks a boolean \"ok\" field".into())),
    };
    let _ = tx.send(reply);
}

impl Backend for RemoteBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        let raw = self.call(Op::Tokenize { text: text.to_string() }, self.options.request_timeout, "tokenize")?;
        Ok(decode::<TokenizeReply>(raw)?.ids)
    }

    fn score(&self, ids: &[u32], positions: &[usize], want_logprob: bool) -> Result<ScoreResult, BackendError> {
        check_score_request(&self.info, ids, positions)?;
        let op = Op::Score {
            ids: ids.to_vec(),
            positions: positions.iter().map(|&p| p as u32).collect(),
            logprob: want_logprob,
        };
        let raw = self.call(op, self.options.request_timeout, "score")?;
        let reply: ScoreReply = decode(raw.clone())?;
        let result = reply
            .into_result()
            .map_err(|message| BackendError::Protocol { message, raw: raw.to_string() })?;
        check_score_result(&self.info, positions, want_logprob, &result)?;
        Ok(result)
    }
}
