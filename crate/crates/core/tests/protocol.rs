//! Wire conformance of the JSON-lines backend protocol.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use forgetting_curve::backend::protocol::{handle_line, serve};
use forgetting_curve::backend::remote::{RemoteBackend, RemoteOptions};
use forgetting_curve::backend::{Backend, BackendError, MaxContext};
use forgetting_curve::synthetic::{OracleBackend, OracleSpec};
use serde_json::{json, Value};

fn oracle() -> OracleBackend {
    OracleBackend::new(OracleSpec::induction(64, 0.3).with_logprob(true)).unwrap()
}

/// Serve the oracle on a loopback port, one thread per connection.
fn oracle_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            thread::spawn(move || {
                let backend = oracle();
                let reader = BufReader::new(stream.try_clone().unwrap());
                let _ = serve(&backend, reader, stream);
            });
        }
    });
    addr
}

/// Answer every request line with `reply(id, request)`.
fn scripted_server(reply: impl Fn(u64, &Value) -> String + Send + 'static) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut writer = stream.try_clone().unwrap();
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            let req: Value = serde_json::from_str(&line).unwrap();
            let id = req["id"].as_u64().unwrap();
            let out = reply(id, &req);
            if writer.write_all(format!("{out}\n").as_bytes()).is_err() {
                break;
            }
        }
    });
    addr
}

fn hello_ok(id: u64) -> String {
    json!({"id": id, "ok": true, "fcp": 1, "name": "fake", "max_context": 64, "bos_id": 1, "eos_id": 2,
           "supports_logprob": false})
    .to_string()
}

fn connect(addr: &str) -> Result<RemoteBackend, BackendError> {
    RemoteBackend::connect(addr, RemoteOptions::default())
}

#[test]
fn remote_oracle_matches_in_process() {
    let remote = connect(&oracle_server()).unwrap();
    let local = oracle();
    assert_eq!(remote.info(), local.info());
    assert_eq!(remote.info().max_context, MaxContext::Unbounded);
    assert_eq!(remote.tokenize("héllo").unwrap(), local.tokenize("héllo").unwrap());

    let ids: Vec<u32> = [1, 5, 6, 7, 8, 9, 10, 11, 12, 13, 1, 5, 6, 7, 8, 9, 10, 11, 12, 13, 2].to_vec();
    let positions: Vec<usize> = (15..20).collect();
    let a = remote.score(&ids, &positions, true).unwrap();
    let b = local.score(&ids, &positions, true).unwrap();
    assert_eq!(a, b);
    // the first three positions have suffix matches shorter than m=8
    assert_eq!(a.correct[3..], [true, true]);
    assert!(a.logprob.unwrap().iter().all(|&l| l <= 0.0));
}

#[test]
fn concurrent_requests_are_routed_by_id() {
    let remote = connect(&oracle_server()).unwrap();
    let texts: Vec<String> = (0..32).map(|i| "x".repeat(i + 1)).collect();
    thread::scope(|s| {
        for t in &texts {
            let remote = &remote;
            s.spawn(move || assert_eq!(remote.tokenize(t).unwrap().len(), t.len()));
        }
    });
}

#[test]
fn handle_line_wire_shapes() {
    let b = oracle();
    let hello = handle_line(&b, r#"{"id":1,"op":"hello","fcp":1}"#);
    assert_eq!(hello["ok"], true);
    assert_eq!(hello["fcp"], 1);
    assert_eq!(hello["max_context"], "unbounded");
    assert_eq!(hello["bos_id"], 1);

    let score = handle_line(&b, r#"{"id":2,"op":"score","ids":[1,5,6,1,5,6,2],"positions":[5,6],"logprob":false}"#);
    assert_eq!(score["id"], 2);
    assert!(score["correct"].as_array().unwrap().iter().all(|v| v == 0 || v == 1));
    assert!(score.get("logprob").is_none_or(Value::is_null));

    let bad_version = handle_line(&b, r#"{"id":3,"op":"hello","fcp":9}"#);
    assert_eq!((bad_version["ok"].clone(), bad_version["id"].clone()), (json!(false), json!(3)));

    let garbage = handle_line(&b, "not json");
    assert_eq!(garbage["ok"], false);
    assert!(garbage["id"].is_null());

    let unknown = handle_line(&b, r#"{"id":4,"op":"generate"}"#);
    assert_eq!((unknown["ok"].clone(), unknown["id"].clone()), (json!(false), json!(4)));

    let pos0 = handle_line(&b, r#"{"id":5,"op":"score","ids":[1,5,6],"positions":[0],"logprob":false}"#);
    assert_eq!(pos0["ok"], false);
    let out_of_range = handle_line(&b, r#"{"id":6,"op":"score","ids":[1,5,6],"positions":[3],"logprob":false}"#);
    assert_eq!(out_of_range["ok"], false);
}

#[test]
fn version_mismatch_is_rejected() {
    let addr = scripted_server(|id, _| hello_ok(id).replace("\"fcp\":1", "\"fcp\":2"));
    assert!(matches!(connect(&addr), Err(BackendError::VersionMismatch { got: Some(2) })));
    let addr = scripted_server(|id, _| hello_ok(id).replace("\"fcp\":1,", ""));
    assert!(matches!(connect(&addr), Err(BackendError::VersionMismatch { got: None })));
}

#[test]
fn malformed_reply_carries_raw_payload() {
    let addr = scripted_server(|id, req| if req["op"] == "hello" { hello_ok(id) } else { "}{ oops".into() });
    let remote = connect(&addr).unwrap();
    match remote.tokenize("abc") {
        Err(BackendError::Protocol { raw, .. }) => assert_eq!(raw, "}{ oops"),
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn remote_errors_and_bad_results() {
    let addr = scripted_server(|id, req| match req["op"].as_str().unwrap() {
        "hello" => hello_ok(id),
        "tokenize" => json!({"id": id, "ok": false, "error": "CUDA out of memory"}).to_string(),
        // one flag for two requested positions
        _ => json!({"id": id, "ok": true, "correct": [1]}).to_string(),
    });
    let remote = connect(&addr).unwrap();
    assert_eq!(remote.info().max_context, MaxContext::Tokens(64));
    match remote.tokenize("abc") {
        Err(BackendError::Remote(msg)) => assert!(msg.contains("out of memory")),
        other => panic!("expected remote error, got {other:?}"),
    }
    assert!(matches!(remote.score(&[1, 5, 6, 7], &[2, 3], false), Err(BackendError::InvalidResult(_))));
    // preconditions are checked before anything is sent
    assert!(matches!(remote.score(&[1, 5, 6], &[0], false), Err(BackendError::Precondition(_))));
    assert!(matches!(remote.score(&[1; 65], &[3], false), Err(BackendError::ContextOverflow { len: 65, max: 64 })));
    // log-probabilities are simply absent from a backend that lacks them
    assert_eq!(remote.score(&[1, 5, 6, 7], &[2], true).unwrap().logprob, None);
}

#[test]
fn non_binary_flags_are_a_protocol_error() {
    let addr = scripted_server(|id, req| match req["op"].as_str().unwrap() {
        "hello" => hello_ok(id),
        _ => json!({"id": id, "ok": true, "correct": [1, 7]}).to_string(),
    });
    let remote = connect(&addr).unwrap();
    assert!(matches!(remote.score(&[1, 5, 6, 7], &[2, 3], false), Err(BackendError::Protocol { .. })));
}

#[test]
fn closed_stream_is_reported() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        drop(stream);
    });
    assert!(matches!(connect(&addr), Err(BackendError::Closed | BackendError::Io(_))));
}

#[test]
fn spawned_serve_binary_speaks_the_protocol() {
    let argv = vec![
        env!("CARGO_BIN_EXE_fc").to_string(),
        "serve".into(),
        "--oracle".into(),
        "pure_lm:p=1".into(),
    ];
    let remote = RemoteBackend::spawn(&argv, RemoteOptions::default()).unwrap();
    assert_eq!(remote.info().name, "pure_lm");
    let r = remote.score(&[1, 5, 6, 7, 8], &[2, 3, 4], false).unwrap();
    assert_eq!(r.correct, vec![true; 3]);

    let missing = RemoteBackend::spawn(&["/definitely/not/here".to_string()], RemoteOptions::default());
    assert!(matches!(missing, Err(BackendError::Io(_))));
}

#[test]
fn handshake_over_caller_supplied_streams() {
    let addr = oracle_server();
    let stream = TcpStream::connect(&addr).unwrap();
    let reader = stream.try_clone().unwrap();
    let remote = RemoteBackend::from_streams(Box::new(stream), reader, RemoteOptions::default()).unwrap();
    assert_eq!(remote.info().name, "induction");
}
