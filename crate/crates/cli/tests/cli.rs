// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output};
use std::time::{Duration, Instant};

fn cpd(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_cpd"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "cpd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_detect_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth, pred) = (
        dir.path().join("x.csv"),
        dir.path().join("t.csv"),
        dir.path().join("p.csv"),
    );
    cpd(&[
        "simulate",
        "--family",
        "pc",
        "--seed",
        "4",
        "--output",
        arg(&data),
        "--truth",
        arg(&truth),
    ]);
    let header = std::fs::read_to_string(&data).unwrap();
    assert!(header.starts_with("time,piecewise_constant-4\n"));

    let out = cpd(&[
        "detect",
        "--method",
        "pelt",
        "--cost",
        "l2",
        "--penalty",
        "50",
        "--input",
        arg(&data),
        "--output",
        arg(&pred),
        "--truth",
        arg(&truth),
    ]);
    let metrics: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(metrics["f1"].as_f64().unwrap() > 0.8);

    let out = cpd(&[
        "eval",
        "--truth",
        arg(&truth),
        "--pred",
        arg(&pred),
        "--margin-pct",
        "1",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report, metrics);
    assert_eq!(report["margin"], 14);

    let same = cpd(&["eval", "--truth", arg(&truth), "--pred", arg(&truth)]);
    let report: serde_json::Value = serde_json::from_slice(&same.stdout).unwrap();
    assert_eq!(report["f1"], 1.0);
    assert_eq!(report["ae"], 0);
}

#[test]
fn detect_writes_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("x.csv");
    cpd(&[
        "simulate",
        "--family",
        "ar",
        "--seed",
        "1",
        "--output",
        arg(&data),
    ]);
    let out = cpd(&[
        "detect",
        "--method",
        "win",
        "--cost",
        "ar",
        "--penalty",
        "20",
        "--input",
        arg(&data),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "index");
    assert_eq!(*lines.last().unwrap(), "1400");
}

#[test]
fn bayes_writes_points_and_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth, probs) = (
        dir.path().join("x.csv"),
        dir.path().join("t.csv"),
        dir.path().join("p.csv"),
    );
    cpd(&[
        "simulate",
        "--family",
        "piecewise_constant",
        "--seed",
        "2",
        "--output",
        arg(&data),
        "--truth",
        arg(&truth),
    ]);
    let out = cpd(&[
        "bayes",
        "--input",
        arg(&data),
        "--paa",
        "5",
        "--prior",
        "geometric",
        "--p",
        "0.05",
        "--probabilities",
        arg(&probs),
        "--truth",
        arg(&truth),
    ]);
    let metrics: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(metrics["ri"].as_f64().unwrap() > 0.9);
    let curve = std::fs::read_to_string(&probs).unwrap();
    assert!(curve.starts_with("index,probability\n"));
    assert_eq!(curve.lines().count(), 281);

    let bad = Command::new(env!("CARGO_BIN_EXE_cpd"))
        .args(["bayes", "--input", arg(&data), "--prior", "geometric"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn sweep_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    let out = dir.path().join("run");
    std::fs::write(
        &config,
        serde_json::json!({
            "dataset": {"source": "simulated", "family": "piecewise_linear", "seed": 3, "noise": 0.05},
            "method": "pelt",
            "cost": {"kind": "linreg"},
            "penalties": [0.5, 1.0, 5.0],
            "output": "ignored"
        })
        .to_string(),
    )
    .unwrap();
    let res = cpd(&["sweep", "--config", arg(&config), "--output", arg(&out)]);
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(summary["parameter"], "penalty");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["sweep"]["rows"].as_array().unwrap().len(), 3);
    assert!(out.join("detections.csv").exists());
}

#[test]
fn invalid_arguments_fail() {
    let out = Command::new(env!("CARGO_BIN_EXE_cpd"))
        .args(["simulate", "--family", "nonsense"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_cpd"))
        .args(["detect", "--input", "/does/not/exist.csv", "--penalty", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n"
    )
    .ok()?;
    let mut resp = String::new();
    stream.read_to_string(&mut resp).ok()?;
    Some(resp)
}

#[test]
fn serve_reads_port_from_environment() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let _server = Server(
        Command::new(env!("CARGO_BIN_EXE_cpd"))
            .arg("serve")
            .env("CPD_PORT", port.to_string())
            .spawn()
            .unwrap(),
    );
    let start = Instant::now();
    let resp = loop {
        if let Some(r) = get(port, "/datasets/missing") {
            break r;
        }
        assert!(
            start.elapsed() < Duration::from_secs(20),
            "server did not come up on {port}"
        );
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(resp.starts_with("HTTP/1.1 404"), "{resp}");
}
