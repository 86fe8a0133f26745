//! End-to-end runs of the `fc` binary.

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FC: &str = env!("CARGO_BIN_EXE_fc");

fn fc(args: &[&str]) -> Output {
    Command::new(FC).args(args).env_remove("FC_BACKEND").output().unwrap()
}

fn measure(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["measure", "--random-pool", "20000", "--max-len", "512", "--points", "8", "--repeats", "3", "-q"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    fc(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn measure_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = measure(dir.path(), &["--oracle", "induction:w=64,p=0.3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["curve"]["points"].as_array().unwrap().len(), 8);
    let csv = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    let svg = fs::read_to_string(dir.path().join("curve.svg")).unwrap();
    roxmltree::Document::parse(&svg).unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("fine memory length"), "{stdout}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = measure(dir.path(), &["--oracle", "pure_lm:p=0.3", "--points", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = measure(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = measure(dir.path(), &["--backend-exec", "/no/such/backend --flag"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = fc(&["measure", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));

    let o = fc(&["analyze", dir.path().join("missing.json").to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"backend": "oracle:pure_lm:p=0.5", "random_pool": 20000, "max_len": 256, "points": 4, "repeats": 2, "seed": 3}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = fc(&["measure", "--config", config.to_str().unwrap(), "--points", "6", "-q", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["curve"]["points"].as_array().unwrap().len(), 6);
    assert_eq!(report["curve"]["config"]["repeats"], 2);

    fs::write(&config, r#"{"backend": "oracle:pure_lm:p=0.5", "bogus": 1}"#).unwrap();
    let o = fc(&["measure", "--config", config.to_str().unwrap(), "-q"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn backend_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(FC)
        .args(["measure", "--random-pool", "20000", "--max-len", "256", "--points", "4", "--repeats", "2", "-q", "--out"])
        .arg(dir.path())
        .env("FC_BACKEND", "oracle:pure_lm:p=1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.starts_with(|c: char| c.is_ascii_digit()) && l.contains(",1,0,1,0,")), "{csv}");
}

#[test]
fn analyze_and_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert!(measure(dir.path(), &["--oracle", "decay:w1=32,w2=160,p=0.3"]).status.success());
    let report = dir.path().join("report.json");

    let again = dir.path().join("again.json");
    let o = fc(&["analyze", report.to_str().unwrap(), "--fine-acc", "0.5", "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = read_json(&again);
    assert_eq!(a["analysis"]["thresholds"]["fine_acc"], 0.5);
    assert_eq!(a["curve"], read_json(&report)["curve"]);

    let svg = dir.path().join("plot.svg");
    let o = fc(&["plot", report.to_str().unwrap(), "--palette", "color-blind", "--title", "decay run", "--out", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert!(doc.descendants().any(|n| n.text() == Some("decay run")));
}

#[test]
fn compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(measure(&a, &["--oracle", "pure_lm:p=0.3"]).status.success());
    let o = fc(&["measure", "--oracle", "pure_lm:p=0.3", "--random-pool", "20000", "--max-len", "256", "-q", "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ra = a.join("report.json");
    let ra = ra.to_str().unwrap();

    let out = dir.path().join("cmp");
    let o = fc(&["compare", ra, ra, "--labels", "first,second", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats = read_json(&out.join("stats.json"));
    for row in stats["rows"].as_array().unwrap() {
        assert!((row["anova"]["p_value"].as_f64().unwrap() - 1.0).abs() < 1e-9, "{row}");
    }
    let overlay = fs::read_to_string(out.join("overlay.svg")).unwrap();
    assert!(overlay.contains("first") && overlay.contains("second"));

    let rb = b.join("report.json");
    let o = fc(&["compare", ra, rb.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = fc(&["compare", ra]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn serve_over_tcp() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut server = Command::new(FC).args(["serve", "--oracle", "pure_lm:p=1", "--listen", &addr]).spawn().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut result = None;
    for _ in 0..50 {
        let o = measure(dir.path(), &["--backend-tcp", &addr]);
        if o.status.code() != Some(2) {
            result = Some(o);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    server.kill().unwrap();
    server.wait().unwrap();
    let o = result.expect("server never came up");
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["curve"]["backend_info"]["name"], "pure_lm");
}

#[test]
fn selftest_reports_each_check() {
    let o = fc(&["selftest", "--in-process"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("step memory"), "{stdout}");
    assert!(stdout.contains("determinism"), "{stdout}");
}
