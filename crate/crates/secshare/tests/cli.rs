use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command as Proc, Output};
use std::thread;

use serde_json::Value;

use secshare::config::{MaskSource, OtKind, RunConfig, WrapKind};
use secshare::run::{self, BenchSuite, Command};
use secshare::AppError;
use secshare_core::PartyId;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bin(args: &[&str]) -> Output {
    Proc::new(env!("CARGO_BIN_EXE_secshare")).args(args).current_dir(repo()).output().expect("binary runs")
}

fn reports(out: &Output) -> Vec<Value> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice::<Value>(&out.stdout).expect("json").as_array().expect("array").clone()
}

/// A quick Network-A configuration on a few hundred images.
fn small(dir: &Path) -> (RunConfig, PathBuf) {
    let mut cfg = RunConfig::load(&repo().join("configs/network-a.json")).unwrap();
    cfg.train.train_limit = Some(256);
    cfg.train.test_limit = Some(64);
    let path = dir.join("small.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    (cfg, path)
}

fn free_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

#[test]
fn dealer_pools_drive_the_benchmarks() {
    let dir = tempfile::tempdir().unwrap();
    let pools = dir.path().join("pools");
    let p = pools.to_str().unwrap();
    let out = bin(&["dealer-gen", "--config", "configs/dealer-small.json", "--pools", p]);
    let r = reports(&out);
    assert_eq!(r[0]["dealer"]["masks"], 100);
    assert!(pools.join("pool-p0.2pcp").exists() && pools.join("pool-p1.2pcp").exists());

    let r = reports(&bin(&["bench", "--config", "configs/dealer-small.json", "--suite", "checkzero", "--n", "20", "--pools", p]));
    for party in &r {
        assert_eq!(party["bench"]["rounds_per_op"], 3.0);
        assert!(party["bench"]["bytes_per_op"].as_f64().unwrap() <= 224.0);
    }
    let r = reports(&bin(&["bench", "--config", "configs/dealer-small.json", "--suite", "compare", "--n", "50", "--pools", p]));
    assert_eq!(r[0]["bench"]["rounds_per_op"], 4.0);
}

#[test]
fn exhausted_pool_exits_with_underrun() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().to_str().unwrap();
    assert!(bin(&["dealer-gen", "--config", "configs/dealer-small.json", "--pools", p]).status.success());
    let out = bin(&["bench", "--config", "configs/dealer-small.json", "--suite", "compare", "--n", "101", "--pools", p]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("underrun"));
}

#[test]
fn missing_files_and_bad_arguments() {
    assert_eq!(bin(&["train", "--config", "configs/nope.json"]).status.code(), Some(5));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"network":"A","seed":"1","extra":true}"#).unwrap();
    assert_eq!(bin(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(5));
    assert_eq!(bin(&["train", "--config", "configs/network-a.json", "--party", "0", "--transport", "mem"]).status.code(), Some(1));
    assert!(!bin(&["bench", "--config", "configs/network-a.json", "--suite", "nope"]).status.success());
}

#[test]
fn differing_configurations_fail_the_handshake() {
    let a = RunConfig::new("A", 1);
    let mut b = a.clone();
    b.train.exp_segments = 8;
    let err = run::run_both_with(&a, &b, &Command::Bench { suite: BenchSuite::Compare, n: 1 }, None).unwrap_err();
    assert!(matches!(err, AppError::ConfigMismatch { .. }), "{err}");
    assert_eq!(err.exit_code(), 6);
}

#[test]
fn tcp_and_memory_transports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = small(dir.path());
    let mem = run::run_both(&cfg, &Command::Train, None).unwrap();
    let addr = free_port();
    let (c1, a1) = (cfg.clone(), addr.clone());
    let h = thread::spawn(move || run::run_tcp(&c1, PartyId::P1, &Command::Train, None, &a1));
    let r0 = run::run_tcp(&cfg, PartyId::P0, &Command::Train, None, &addr).unwrap();
    let r1 = h.join().unwrap().unwrap();
    let digest = |r: &secshare::report::RunReport| r.train.as_ref().unwrap().weights_digest.clone();
    assert_eq!(digest(&r0), digest(&mem[0]));
    assert_eq!(digest(&r1), digest(&mem[1]));
    assert_eq!(r0.metrics, mem[0].metrics);
}

#[test]
fn trained_checkpoints_feed_inference() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, _) = small(dir.path());
    let stem = dir.path().join("model");
    cfg.train.checkpoint = Some(stem.clone());
    cfg.infer.checkpoint = Some(stem.clone());
    cfg.infer.images = 5;
    let trained = run::run_both(&cfg, &Command::Train, None).unwrap();
    assert!(trained[0].train.as_ref().unwrap().checkpoint.is_some());
    let inferred = run::run_both(&cfg, &Command::Infer, None).unwrap();
    let (a, b) = (inferred[0].inference.as_ref().unwrap(), inferred[1].inference.as_ref().unwrap());
    assert_eq!(a.labels.len(), 5);
    assert_eq!(a.labels, b.labels);
    assert!(a.bytes_stable);

    // A Network-A checkpoint does not load into Network-D.
    let mut d = cfg.clone();
    d.network = "D".into();
    let err = run::run_both(&d, &Command::Infer, None).unwrap_err();
    assert_eq!(err.exit_code(), 5, "{err}");
}

#[test]
fn interactive_masks_over_chou_orlandi() {
    let mut cfg = RunConfig::new("A", 9);
    cfg.providers.masks = MaskSource::Interactive;
    cfg.providers.ot = OtKind::ChouOrlandi;
    cfg.providers.wrap = WrapKind::Garbled;
    let r = run::run_both(&cfg, &Command::Bench { suite: BenchSuite::Compare, n: 3 }, None).unwrap();
    let bench = r[0].bench.as_ref().unwrap();
    assert_eq!(bench.rounds_per_op, 4.0);
    assert!(r[0].metrics.offline.bytes_sent > 0, "mask generation is metered offline");
}

#[test]
fn report_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = bin(&["bench", "--config", "configs/network-a.json", "--suite", "div", "--n", "2", "--report", report.to_str().unwrap(), "--seed", "0x10"]);
    let stdout = reports(&out);
    let file: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(Value::Array(stdout.clone()), file);
    assert_eq!(stdout[0]["seed"], "0000000000000010");
    assert_eq!(stdout[0]["config_hash"], stdout[1]["config_hash"]);
}
