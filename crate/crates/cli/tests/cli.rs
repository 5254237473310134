use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedlasso"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn fedlasso");
    out
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "fedlasso {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small standardized-friendly federation: 300 subjects, 3 shards.
fn gen(dir: &Path, seed: &str) -> PathBuf {
    ok(&[
        "gen", "--out", s(dir), "--subjects", "300", "--snps", "200", "--support-size", "5", "--seed", seed,
    ]);
    dir.join("manifest.json")
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(rows: &[Vec<String>], header: &str, csv: &str) -> Vec<f64> {
    let head = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    let k = head.split(',').position(|h| h == header).unwrap();
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

#[test]
fn gen_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = ok(&["gen", "--out", s(&tmp.path().join("a")), "--subjects", "717", "--snps", "50", "--seed", "3",
        "--proportions", "0.4547,0.2999,0.2454"]);
    let b = ok(&["gen", "--out", s(&tmp.path().join("b")), "--subjects", "717", "--snps", "50", "--seed", "3",
        "--proportions", "0.4547,0.2999,0.2454"]);
    assert_eq!(a, b);
    let m: serde_json::Value = serde_json::from_str(&a).unwrap();
    let rows: Vec<u64> = m["shards"].as_array().unwrap().iter().map(|e| e["rows"].as_u64().unwrap()).collect();
    assert_eq!(rows, vec![326, 215, 176]);
    for k in 0..3 {
        let f = format!("shard_{k}.bin");
        assert_eq!(fs::read(tmp.path().join("a").join(&f)).unwrap(), fs::read(tmp.path().join("b").join(&f)).unwrap());
    }
    let c = ok(&["gen", "--out", s(&tmp.path().join("c")), "--subjects", "717", "--snps", "50", "--seed", "4"]);
    assert_ne!(a, c);
}

#[test]
fn path_report_has_one_row_per_point() {
    let tmp = TempDir::new().unwrap();
    let manifest = gen(&tmp.path().join("fed"), "1");
    let out = tmp.path().join("path.csv");
    let timing = tmp.path().join("timing.csv");
    ok(&["path", "--manifest", s(&manifest), "--out", s(&out), "--timing", s(&timing), "--num-points", "10",
        "--standardize"]);
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("# seed=0 config=sha256:"));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 10);
    let lambda = column(&rows, "lambda", &csv);
    assert!(lambda.windows(2).all(|w| w[1] < w[0]));
    let kkt = column(&rows, "kkt_residual", &csv);
    assert!(kkt.iter().all(|&r| r <= 1e-9));
    assert_eq!(fs::read_to_string(&timing).unwrap().lines().count(), 11);
}

#[test]
fn screening_changes_work_not_answers() {
    let tmp = TempDir::new().unwrap();
    let manifest = gen(&tmp.path().join("fed"), "2");
    let a = tmp.path().join("screened.csv");
    let b = tmp.path().join("plain.csv");
    ok(&["path", "--manifest", s(&manifest), "--out", s(&a), "--num-points", "15", "--standardize"]);
    ok(&["path", "--manifest", s(&manifest), "--out", s(&b), "--num-points", "15", "--standardize", "--no-screening"]);
    let (ca, cb) = (fs::read_to_string(&a).unwrap(), fs::read_to_string(&b).unwrap());
    let (ra, rb) = (data_rows(&ca), data_rows(&cb));
    let (oa, ob) = (column(&ra, "objective", &ca), column(&rb, "objective", &cb));
    for (x, y) in oa.iter().zip(&ob) {
        assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{x} vs {y}");
    }
    let wa: f64 = column(&ra, "work", &ca).iter().sum();
    let wb: f64 = column(&rb, "work", &cb).iter().sum();
    assert!(wa <= wb, "screened work {wa} > unscreened {wb}");
    // digests differ because the screening rule is part of the config
    assert_ne!(ca.lines().next(), cb.lines().next());
}

fn spawn_worker(manifest: &Path, k: usize) -> (Child, String) {
    let shard = manifest.parent().unwrap().join(format!("shard_{k}.bin"));
    let mut child = bin()
        .args(["worker", "--shard", s(&shard), "--manifest", s(manifest), "--index", &k.to_string()])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("worker banner").to_owned();
    (child, addr)
}

#[test]
fn socket_workers_match_simulation() {
    let tmp = TempDir::new().unwrap();
    let manifest = gen(&tmp.path().join("fed"), "3");
    let sim = tmp.path().join("sim.csv");
    let sock = tmp.path().join("sock.csv");
    let args = ["--num-points", "12", "--standardize"];
    ok(&[&["path", "--manifest", s(&manifest), "--out", s(&sim)][..], &args].concat());

    let workers: Vec<_> = (0..3).map(|k| spawn_worker(&manifest, k)).collect();
    let endpoints = workers.iter().map(|w| w.1.as_str()).collect::<Vec<_>>().join(",");
    ok(&[
        &["path", "--manifest", s(&manifest), "--out", s(&sock), "--transport", "socket", "--endpoints", &endpoints,
            "--shutdown-workers"][..],
        &args,
    ]
    .concat());
    for (mut child, _) in workers {
        assert!(child.wait().unwrap().success());
    }
    assert_eq!(fs::read(&sim).unwrap(), fs::read(&sock).unwrap());
}

#[test]
fn stability_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let manifest = gen(&tmp.path().join("fed"), "4");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(format!("{name}.csv"));
        let per = tmp.path().join(format!("{name}_lambda.csv"));
        let stdout = ok(&["stability", "--manifest", s(&manifest), "--out", s(&out), "--per-lambda", s(&per),
            "--rounds", "2", "--subsample-size", "200", "--num-points", "8", "--min-ratio", "0.2", "--standardize",
            "--seed", "9", "--top", "5"]);
        assert_eq!(stdout.lines().count(), 6);
        outputs.push((stdout, fs::read(&out).unwrap(), fs::read(&per).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(csv.starts_with("# seed=9 config=sha256:"));
}

#[test]
fn audit_flags_tampered_transcript() {
    let tmp = TempDir::new().unwrap();
    let manifest = gen(&tmp.path().join("fed"), "5");
    let t = tmp.path().join("t.jsonl");
    ok(&["path", "--manifest", s(&manifest), "--out", s(&tmp.path().join("p.csv")), "--num-points", "5",
        "--standardize", "--transcript", s(&t)]);
    let report: serde_json::Value = serde_json::from_str(&ok(&["audit", "--transcript", s(&t)])).unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    let rows = m["shards"][1]["rows"].as_u64().unwrap();
    let mut text = fs::read_to_string(&t).unwrap();
    text.push_str(&format!(
        "{{\"direction\":\"FromWorker\",\"worker\":1,\"round_id\":1,\"kind\":\"VectorSum\",\"tag\":\"R\",\"payload_len\":{rows}}}\n"
    ));
    fs::write(&t, text).unwrap();
    let out = run(&["audit", "--transcript", s(&t)]);
    assert_eq!(out.status.code(), Some(6));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 1);
}

#[test]
fn bad_configuration_exits_2() {
    let tmp = TempDir::new().unwrap();
    let manifest = gen(&tmp.path().join("fed"), "6");
    let out = tmp.path().join("p.csv");

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "num_points = 10\nnot_a_key = 1\n").unwrap();
    let r = run(&["--config", s(&cfg), "path", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let r = run(&["path", "--manifest", s(&manifest), "--out", s(&out), "--transport", "socket"]);
    assert_eq!(r.status.code(), Some(2));

    let r = run(&["path", "--manifest", s(&manifest), "--out", s(&out), "--min-ratio", "1.5"]);
    assert_eq!(r.status.code(), Some(2));

    let r = run(&["gen", "--out", s(&tmp.path().join("g")), "--proportions", "0.5,0.6"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_matches_flags() {
    let tmp = TempDir::new().unwrap();
    let manifest = gen(&tmp.path().join("fed"), "7");
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "num_points = 6\nstandardize = true\nscreening = \"safe\"\n").unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    ok(&["--config", s(&cfg), "path", "--manifest", s(&manifest), "--out", s(&a)]);
    ok(&["path", "--manifest", s(&manifest), "--out", s(&b), "--num-points", "6", "--standardize", "--screening", "safe"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn missing_manifest_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let r = run(&["path", "--manifest", s(&tmp.path().join("nope.json")), "--out", s(&tmp.path().join("p.csv"))]);
    assert_eq!(r.status.code(), Some(5));
}
