use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use fspg::coordinator::CMode;
use fspg::harness::{preset_config, Algorithm, DataConfig, RunConfig, SocketClient, TransportConfig};
use fspg::PenaltyKind;

fn fspg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fspg")).args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn small(alg: Algorithm) -> RunConfig {
    let mut cfg = preset_config("desk", alg, PenaltyKind::Mcp, 0.55, 11).unwrap();
    cfg.max_iters = 60;
    cfg
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_is_deterministic_and_report_converts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &small(Algorithm::Fspg));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(fspg(&["run", "--config", s(&cfg), "--out", s(&a)]));
    ok(fspg(&["run", "--config", s(&cfg), "--out", s(&b)]));
    for f in ["metrics.jsonl", "final_model.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("manifest.json").is_file());

    ok(fspg(&["report", "--in", s(&a), "--format", "csv"]));
    let csv = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("k,mse_truth,mse_pred,support_accuracy,merit,dw_sq,kappa"));
    assert_eq!(csv.lines().count(), 62);
}

#[test]
fn batch_mode_writes_one_directory_per_config() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = write_config(dir.path(), "fspg.json", &small(Algorithm::Fspg));
    let c2 = write_config(dir.path(), "sub.json", &small(Algorithm::Sub));
    let c3 = write_config(dir.path(), "nc.json", &small(Algorithm::Nc));
    let out = dir.path().join("batch");
    ok(fspg(&[
        "run", "--config", s(&c1), "--config", s(&c2), "--config", s(&c3), "--out", s(&out), "--jobs", "2",
    ]));
    for name in ["fspg", "sub", "nc"] {
        assert!(out.join(name).join("metrics.jsonl").is_file(), "{name}");
    }
    // same results as a sequential single run
    let single = dir.path().join("single");
    ok(fspg(&["run", "--config", s(&c2), "--out", s(&single)]));
    assert_eq!(
        std::fs::read(single.join("metrics.jsonl")).unwrap(),
        std::fs::read(out.join("sub").join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn spectral_condition_failure_reports_lambda_max() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Algorithm::Fspg);
    cfg.schedule.relax_beta_c = false;
    cfg.schedule.c_mode = CMode::LambdaMaxFraction(0.125);
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out = fspg(&["run", "--config", s(&path), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lambda_max"), "{err}");
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.json");
    std::fs::write(&path, r#"{"algorithm":"FSPG","unknown":1}"#).unwrap();
    let out = fspg(&["run", "--config", s(&path), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
}

fn spawn_server(data: &Path) -> (std::process::Child, std::net::SocketAddr) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_fspg"))
        .args(["serve-client", "--data", s(data), "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().parse().unwrap();
    (child, addr)
}

#[test]
fn gen_data_then_socket_run_matches_inproc() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fspg::harness::preset_scenario("desk", 0.7, 5).unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let data_dir = dir.path().join("data");
    ok(fspg(&["gen-data", "--spec", s(&spec_path), "--out", s(&data_dir)]));
    let paths: Vec<PathBuf> = (0..spec.clients).map(|l| data_dir.join(format!("client{l}.csv"))).collect();
    assert!(paths.iter().all(|p| p.is_file()));
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data_dir.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["client_scales"].as_array().unwrap().len(), spec.clients);

    let mut cfg = small(Algorithm::Fspg);
    cfg.tau = 0.7;
    cfg.data = DataConfig::ClientFiles { paths: paths.clone() };
    let inproc_cfg = write_config(dir.path(), "inproc.json", &cfg);
    ok(fspg(&["run", "--config", s(&inproc_cfg), "--out", s(&dir.path().join("inproc"))]));

    let mut children = Vec::new();
    let mut clients = Vec::new();
    for (l, p) in paths.iter().enumerate() {
        let (child, addr) = spawn_server(p);
        children.push(child);
        clients.push(SocketClient { id: l as u32, addr });
    }
    cfg.transport = TransportConfig::Socket {
        clients,
        round_timeout_secs: 30.0,
    };
    let sock_cfg = write_config(dir.path(), "socket.json", &cfg);
    ok(fspg(&["run", "--config", s(&sock_cfg), "--out", s(&dir.path().join("socket"))]));
    for mut c in children {
        assert!(c.wait().unwrap().success());
    }
    assert_eq!(
        std::fs::read(dir.path().join("inproc/metrics.jsonl")).unwrap(),
        std::fs::read(dir.path().join("socket/metrics.jsonl")).unwrap()
    );
}

#[test]
fn documented_example_config_parses() {
    let doc = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../CONFIG.md")).unwrap();
    let start = doc.find("```json\n").unwrap() + 8;
    let end = start + doc[start..].find("```").unwrap();
    let cfg = RunConfig::from_json(&doc[start..end]).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg, preset_config("scenario1", Algorithm::Fspg, PenaltyKind::Mcp, 0.55, 0).unwrap());
}
