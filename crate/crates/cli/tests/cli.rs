use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn seqjoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqjoint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seqjoint(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/alice.txt")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Enciphers the corpus and ingests both halves; returns (plain, cipher) stats.
fn cipher_setup(dir: &Path) -> (PathBuf, PathBuf) {
    let e = dir.join("e");
    ok(&[
        "encipher",
        "--corpus",
        s(&corpus()),
        "--seed",
        "3",
        "--out-dir",
        s(&e),
    ]);
    let (p, c) = (dir.join("plain.json"), dir.join("cipher.json"));
    ok(&[
        "ingest",
        "--corpus",
        s(&e.join("plain.txt")),
        "--out",
        s(&p),
    ]);
    ok(&[
        "ingest",
        "--corpus",
        s(&e.join("cipher.txt")),
        "--exact",
        "--out",
        s(&c),
    ]);
    (p, c)
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(seqjoint(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(seqjoint(&["ingest", "--nope"]).status.code(), Some(1));
    assert_eq!(
        seqjoint(&["identifiability", "--eta", "0.5", "--zeta", "0.2"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(seqjoint(&["--help"]).status.code(), Some(0));
}

#[test]
fn degenerate_spectrum_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // Reduced 2x2 bigram is b bᵀ.
    let u = [0.2, 0.4, 0.4];
    let bigram: Vec<f64> = u
        .iter()
        .flat_map(|a| u.iter().map(move |b| a * b))
        .collect();
    let stats = serde_json::json!({
        "size": 3, "order": 2, "token_count": 10, "unigram": u, "bigram": bigram, "trigram": null
    });
    let path = dir.path().join("flat.json");
    fs::write(&path, stats.to_string()).unwrap();
    let out = seqjoint(&[
        "solve-svd",
        "--plain-stats",
        s(&path),
        "--cipher-stats",
        s(&path),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not separated"));
}

#[test]
fn ingest_writes_normalised_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("t.txt");
    fs::write(&text, "Ab ab!\n\nBA\n").unwrap();
    let v: Value =
        serde_json::from_str(&ok(&["ingest", "--corpus", s(&text), "--order", "3"])).unwrap();
    assert_eq!(v["size"], 28);
    let uni: f64 = v["unigram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .sum();
    assert!((uni - 1.0).abs() < 1e-12);
    assert_eq!(v["trigram"].as_array().unwrap().len(), 28 * 28 * 28);
}

#[test]
fn cipher_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (p, c) = cipher_setup(dir.path());
    let key = dir.path().join("e/key.json");
    let v: Value = serde_json::from_str(&ok(&[
        "solve-svd",
        "--plain-stats",
        s(&p),
        "--cipher-stats",
        s(&c),
        "--key",
        s(&key),
    ]))
    .unwrap();
    assert_eq!(v["permutation"].as_array().unwrap().len(), 27);
    assert_eq!(v["diagnostics"]["noisy"], true);
    let err = v["error_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&err));

    let short = [
        "--sgd-steps",
        "20",
        "--adam-steps",
        "20",
        "--runs",
        "3",
        "--seed",
        "5",
    ];
    let serial = dir.path().join("serial.csv");
    let parallel = dir.path().join("parallel.csv");
    let common = [
        "solve-grad",
        "--plain-stats",
        s(&p),
        "--cipher-stats",
        s(&c),
    ];
    let e = dir.path().join("e");
    let (ct, rt) = (e.join("cipher.txt"), e.join("reference.txt"));
    let texts = ["--cipher-text", s(&ct), "--reference-text", s(&rt)];
    ok(&[&common[..], &short, &texts, &["--out", s(&serial)]].concat());
    ok(&[
        &common[..],
        &short,
        &texts,
        &["--parallel", "2", "--out", s(&parallel)],
    ]
    .concat());
    let csv = fs::read_to_string(&serial).unwrap();
    assert_eq!(csv, fs::read_to_string(&parallel).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "seed,final_loss,bigram_kl,error_rate,succeeded");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("5,") && lines[3].starts_with("7,"));

    let summary: Value = serde_json::from_str(&ok(&["report", "--runs", s(&serial)])).unwrap();
    assert_eq!(summary["runs"], 3);
    assert_eq!(summary["sorted"].as_array().unwrap().len(), 3);

    let missing = seqjoint(&[&common[..], &short, &["--out", s(&serial)]].concat());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn encipher_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&[
            "encipher",
            "--corpus",
            s(&corpus()),
            "--seed",
            "9",
            "--out-dir",
            s(d.path()),
        ]);
    }
    for f in ["key.json", "plain.txt", "cipher.txt", "reference.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let key: Vec<usize> =
        serde_json::from_str(&fs::read_to_string(a.path().join("key.json")).unwrap()).unwrap();
    let mut sorted = key.clone();
    sorted.sort();
    assert_eq!(sorted, (0..27).collect::<Vec<_>>());
}

#[test]
fn identifiability_reports_verdict() {
    let v: Value = serde_json::from_str(&ok(&[
        "identifiability",
        "--b0",
        "0.3",
        "--rho",
        "0.4",
        "--eta",
        "0.7",
        "--zeta",
        "0.4",
    ]))
    .unwrap();
    assert_eq!(v["verdict"], "identifiable from trigrams");
    assert_eq!(v["candidates"].as_array().unwrap().len(), 2);
    assert_eq!(v["stationary_points"].as_array().unwrap().len(), 3);

    let flat: Value = serde_json::from_str(&ok(&[
        "identifiability",
        "--B",
        "0.25,0.25,0.25,0.25",
        "--eta",
        "0.7",
        "--zeta",
        "0.4",
    ]))
    .unwrap();
    assert!(flat["verdict"]
        .as_str()
        .unwrap()
        .starts_with("not identifiable"));
}

#[test]
fn train_semisup_outputs_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(
        &cfg,
        "# short run\ntotal_steps = 60\npretrain_steps = 20\neval_every = 30\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train-semisup",
            "--config",
            s(&cfg),
            "--n-train",
            "400",
            "--n-probe",
            "20",
            "--var-samples",
            "16",
            "--temperature",
            "1",
            "--baseline",
            "--out-dir",
            s(&out),
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in [
        "config.txt",
        "truth.json",
        "model.json",
        "posterior.json",
        "trace.csv",
        "summary.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(
        trace.lines().next().unwrap(),
        "step,gen_loss,var_loss,probe_logpy,posterior_kl"
    );
    assert_eq!(trace.lines().count(), 4);
    let config = fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(config.contains("temperature = 1\n") && config.contains("var_samples = 16\n"));
    let summary = json(&a.join("summary.json"));
    assert!(summary["joint_kl"].as_f64().unwrap() > 0.0);
    assert!(summary["kl_ratio"].as_f64().is_some());

    let eval: Value = serde_json::from_str(&ok(&[
        "eval",
        "--truth",
        s(&a.join("truth.json")),
        "--model",
        s(&a.join("model.json")),
        "--posterior",
        s(&a.join("posterior.json")),
        "--n-probe",
        "10",
    ]))
    .unwrap();
    assert_eq!(eval["joint_kl"], summary["joint_kl"]);
    assert_eq!(eval["posterior"]["evaluated"], 10);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "learning_rate = 1\n").unwrap();
    let out = seqjoint(&[
        "train-semisup",
        "--config",
        s(&cfg),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = seqjoint(&[
        "train-semisup",
        "--decoder-context",
        "attention",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
