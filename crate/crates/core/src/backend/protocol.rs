//! JSON-lines wire protocol (`fcp` version 1).
//!
//! One JSON object per line in each direction. Requests:
//!
//! ```text
//! {"id": 1, "op": "hello", "fcp": 1}
//! {"id": 2, "op": "tokenize", "text": "..."}
//! {"id": 3, "op": "score", "ids": [1, 5, 6], "positions": [1, 2], "logprob": false}
//! ```
//!
//! Responses echo the id and carry either `"ok": true` plus the payload
//! fields, or `"ok": false` and an `"error"` string.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{check_score_request, Backend, BackendInfo, ScoreResult, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fcp: Option<u64>,
    },
    Tokenize {
        text: String,
    },
    Score {
        ids: Vec<u32>,
        positions: Vec<u32>,
        #[serde(default)]
        logprob: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    #[serde(flatten)]
    pub op: Op,
}

/// Payload of a successful hello response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HelloReply {
    pub fcp: Option<u64>,
    #[serde(flatten)]
    pub info: BackendInfo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeReply {
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReply {
    pub correct: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<Vec<f64>>,
}

impl ScoreReply {
    pub fn into_result(self) -> Result<ScoreResult, String> {
        let correct = self
            .correct
            .into_iter()
            .map(|c| match c {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(format!("correct flag {other} is not 0 or 1")),
            })
            .collect::<Result<_, _>>()?;
        Ok(ScoreResult { correct, logprob: self.logprob })
    }
}

impl From<&ScoreResult> for ScoreReply {
    fn from(r: &ScoreResult) -> Self {
        ScoreReply { correct: r.correct.iter().map(|&c| u8::from(c)).collect(), logprob: r.logprob.clone() }
    }
}

fn ok_response(id: u64, payload: Value) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), json!(id));
    obj.insert("ok".into(), Value::Bool(true));
    if let Value::Object(fields) = payload {
        obj.extend(fields);
    }
    Value::Object(obj)
}

fn err_response(id: Option<u64>, error: impl Into<String>) -> Value {
    json!({ "id": id, "ok": false, "error": error.into() })
}

/// Answer a single request line.
pub fn handle_line<B: Backend + ?Sized>(backend: &B, line: &str) -> Value {
    let raw: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return err_response(None, format!("malformed request: {e}")),
    };
    let id = raw.get("id").and_then(Value::as_u64);
    let request: Request = match serde_json::from_value(raw) {
        Ok(r) => r,
        Err(e) => return err_response(id, format!("malformed request: {e}")),
    };
    let id = request.id;
    match request.op {
        Op::Hello { fcp } => {
            if let Some(v) = fcp.filter(|&v| v != u64::from(PROTOCOL_VERSION)) {
                return err_response(Some(id), format!("unsupported protocol version {v}"));
            }
            let reply = HelloReply { fcp: Some(PROTOCOL_VERSION.into()), info: backend.info().clone() };
            ok_response(id, serde_json::to_value(reply).expect("hello reply serializes"))
        }
        Op::Tokenize { text } => match backend.tokenize(&text) {
            Ok(ids) => ok_response(id, json!({ "ids": ids })),
            Err(e) => err_response(Some(id), e.to_string()),
        },
        Op::Score { ids, positions, logprob } => {
            let positions: Vec<usize> = positions.into_iter().map(|p| p as usize).collect();
            let result = check_score_request(backend.info(), &ids, &positions)
                .and_then(|()| backend.score(&ids, &positions, logprob));
            match result {
                Ok(r) => ok_response(
                    id,
                    serde_json::to_value(ScoreReply::from(&r)).expect("score reply serializes"),
                ),
                Err(e) => err_response(Some(id), e.to_string()),
            }
        }
    }
}

/// Serve `backend` over a line-oriented stream until end of input.
pub fn serve<B, R, W>(backend: &B, reader: R, mut writer: W) -> std::io::Result<()>
where
    B: Backend + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(backend, &line);
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let r = Request { id: 7, op: Op::Score { ids: vec![1, 2], positions: vec![1], logprob: true } };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v, json!({"id": 7, "op": "score", "ids": [1, 2], "positions": [1], "logprob": true}));
        let back: Request = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        let hello: Request = serde_json::from_str(r#"{"id":1,"op":"hello"}"#).unwrap();
        assert_eq!(hello.op, Op::Hello { fcp: None });
    }

    #[test]
    fn score_reply_rejects_non_binary_flags() {
        let reply = ScoreReply { correct: vec![0, 2], logprob: None };
        assert!(reply.into_result().is_err());
    }
}
