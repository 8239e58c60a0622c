mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use vehiclesdf::toycar::CorpusManifest;

fn vsdf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsdf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = vsdf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(vsdf(&[]).status.code(), Some(1));
    assert_eq!(vsdf(&["no-such-command"]).status.code(), Some(1));
    let out = vsdf(&["optimize", "--checkpoint", "x.vsdf", "--target", "1.0,0.28"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 7"));
    assert_eq!(
        vsdf(&[
            "optimize",
            "--checkpoint",
            "x.vsdf",
            "--target",
            "1,2,3,4,5,6,7",
            "--seeds",
            "0"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(vsdf(&["render", "--mesh", "a.obj"]).status.code(), Some(1));
    assert_eq!(vsdf(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.vsdf");
    let out = vsdf(&[
        "optimize",
        "--checkpoint",
        p(&missing),
        "--target",
        "1.0,0.28,0.43,0.037,0.6,0.2,0.2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let garbage = dir.path().join("garbage.obj");
    std::fs::write(&garbage, "v 1 2\nf 1 2 3\n").unwrap();
    assert_eq!(
        vsdf(&["extract", "--mesh", p(&garbage)]).status.code(),
        Some(2)
    );

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "prot = 1\n").unwrap();
    assert_eq!(vsdf(&["serve", "--config", p(&bad)]).status.code(), Some(2));
}

#[test]
fn corpus_meshes_extract_to_manifest_truth() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&[
        "gen-corpus",
        "--out",
        p(&corpus),
        "--count",
        "3",
        "--samples",
        "200",
        "--meshes",
        "--mesh-resolution",
        "96",
        "--seed",
        "7",
    ]);
    let manifest = CorpusManifest::read_jsonl(std::io::BufReader::new(
        std::fs::File::open(corpus.join("manifest.jsonl")).unwrap(),
    ))
    .unwrap();
    assert_eq!(manifest.len(), 3);
    assert!(corpus.join("samples.vsdf").is_file());
    let h: f64 = 1.9 / 95.0;
    for e in &manifest.entries {
        let mesh = corpus.join("meshes").join(format!("{}.obj", e.shape_id));
        let out = ok(&["extract", "--mesh", p(&mesh), "--resolution", "96"]);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        let got: Vec<f64> = serde_json::from_value(v["params"].clone()).unwrap();
        for (k, (a, b)) in got.iter().zip(e.true_params.0).enumerate() {
            assert!(
                (a - b).abs() <= (2.0 * h).max(0.01),
                "{} p{k}: {a} vs {b}",
                e.shape_id
            );
        }
    }
}

#[test]
fn optimize_writes_traces_meshes_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("tiny.vsdf");
    common::tiny_checkpoint().save(&ck).unwrap();
    let out = dir.path().join("opt");
    ok(&[
        "optimize",
        "--checkpoint",
        p(&ck),
        "--target",
        "1.0,0.28,0.43,0.037,0.6,0.2,0.2",
        "--seeds",
        "3",
        "--out",
        p(&out),
        "--resolution",
        "24",
        "--max-iters",
        "2000",
    ]);
    for k in 0..3 {
        let csv = std::fs::read_to_string(out.join(format!("trace_seed{k}.csv"))).unwrap();
        assert!(csv.starts_with("iter,p0,p1,p2,p3,p4,p5,p6,mse\n"));
        assert!(csv.lines().count() > 2);
        assert!(out.join(format!("mesh_seed{k}.obj")).is_file());
    }
    let summary: Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for r in runs {
        assert!(r["mse"].as_f64().unwrap() <= 1e-4);
    }
}

#[test]
fn render_and_drag_commands() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&[
        "gen-corpus",
        "--out",
        p(&corpus),
        "--count",
        "2",
        "--samples",
        "100",
        "--meshes",
        "--mesh-resolution",
        "48",
    ]);
    let mesh = corpus.join("meshes/car-00000.obj");
    let views = dir.path().join("views");
    let out = ok(&[
        "render",
        "--mesh",
        p(&mesh),
        "--out",
        p(&views),
        "--resolution",
        "64",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["edge_pixels"].as_u64().unwrap() > 0);
    for name in [
        "atlas",
        "top",
        "bottom",
        "left",
        "right",
        "front",
        "back",
        "side_depth",
        "side_canny",
    ] {
        let bytes = std::fs::read(views.join(format!("{name}.png"))).unwrap();
        assert_eq!(&bytes[1..4], b"PNG", "{name}");
    }

    let model = dir.path().join("drag.vsdf");
    let out = ok(&[
        "drag-train",
        "--out",
        p(&model),
        "--count",
        "13",
        "--mesh-resolution",
        "32",
        "--trees",
        "20",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["records"], 52);
    let out = ok(&["drag-predict", "--model", p(&model), "--mesh", p(&mesh)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let cd = v["cd"].as_f64().unwrap();
    assert!(cd > 0.0 && cd < 1.0, "{cd}");
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.0\r\nHost: localhost\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_answers_health_checks() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("tiny.vsdf");
    common::tiny_checkpoint().save(&ck).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_vsdf"))
        .args(["serve", "--checkpoint", p(&ck), "--seed", "1"])
        .env("VSDF_PORT", port.to_string())
        .env("VSDF_DATA_DIR", p(&dir.path().join("data")))
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = http_get(port, "/api/v1/health") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("service did not come up");
    assert!(
        reply.starts_with("HTTP/1.0 200") || reply.starts_with("HTTP/1.1 200"),
        "{reply}"
    );
    assert!(reply.contains("\"models_loaded\":true"));
    assert!(dir.path().join("data").is_dir());
}
