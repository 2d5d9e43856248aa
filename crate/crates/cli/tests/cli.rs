use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/tiny")
        .join(name)
}

fn eegconn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eegconn"))
        .args(args)
        .env_remove("EEGCONN_THREADS")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_under(root: &Path) -> BTreeSet<String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeSet<String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_str().unwrap().replace('\\', "/"));
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn eval_on_fixture_prints_metrics() {
    let o = eegconn(&[
        "eval",
        "--model",
        s(&fixture("model.bin")),
        "--data",
        s(&fixture("dataset")),
        "--split",
        s(&fixture("split.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    let expected: Value = serde_json::from_slice(&fs::read(fixture("metrics.json")).unwrap()).unwrap();
    assert_eq!(printed, expected);
    for key in ["sensitivity", "specificity", "precision", "accuracy"] {
        assert!(printed[key].is_number(), "{key}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(eegconn(&["foo"]).status.code(), Some(2));
    assert_eq!(eegconn(&["eval"]).status.code(), Some(2));
    assert_eq!(eegconn(&["run", "--out", "x", "--scheme", "9"]).status.code(), Some(2));
    assert_eq!(eegconn(&["--help"]).status.code(), Some(0));
}

#[test]
fn extract_with_missing_annotations_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let recs = dir.path().join("recs");
    let o = eegconn(&[
        "synth",
        "--coupled",
        "1",
        "--uncoupled",
        "1",
        "--channels",
        "2",
        "--duration",
        "60",
        "--offset",
        "50",
        "--out",
        s(&recs),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let missing = recs.join("rec001_uncoupled.json");
    fs::remove_file(&missing).unwrap();
    let out = dir.path().join("ds");
    let o = eegconn(&[
        "extract",
        "--inputs",
        s(&recs.join("recordings.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn invalid_band_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_slice(&fs::read(fixture("config.json")).unwrap()).unwrap();
    cfg["source"]["synthetic"]["fs"] = 256.0.into();
    cfg["pipeline"]["bands"][4]["high_hz"] = 200.0.into();
    let path = dir.path().join("bad.json");
    fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = dir.path().join("run");
    let o = eegconn(&["run", "--config", s(&path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pipeline: bands[4]"), "{}", stderr(&o));
    assert!(!out.exists());

    fs::write(&path, b"{\"source\": 1}").unwrap();
    let o = eegconn(&["run", "--config", s(&path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn rerun_reproduces_outputs_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = (0..2).map(|k| dir.path().join(format!("run{k}"))).collect();
    for r in &runs {
        let o = eegconn(&["run", "--config", s(&fixture("config.json")), "--out", s(r)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [
        "metrics.json",
        "model.bin",
        "relevance.json",
        "history.json",
        "dataset/w00003.bin",
    ] {
        assert_eq!(
            fs::read(runs[0].join(f)).unwrap(),
            fs::read(runs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    // the bundled metrics came from the same config
    assert_eq!(
        fs::read(runs[0].join("metrics.json")).unwrap(),
        fs::read(fixture("metrics.json")).unwrap()
    );
}

#[test]
fn default_run_manifest_lists_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = eegconn(&["run", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    let listed: BTreeSet<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(listed, files_under(&out));
    for f in [
        "dataset/manifest.json",
        "model.bin",
        "metrics.json",
        "relevance.json",
        "relevance.svg",
    ] {
        assert!(listed.contains(f), "{f}");
    }
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let metrics: Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["accuracy"].as_f64().unwrap() >= 0.9, "{metrics}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = eegconn(&[
        "run",
        "--config",
        s(&fixture("config.json")),
        "--seed",
        "9",
        "--order",
        "3",
        "--mode",
        "per-band",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["pipeline"]["order"]["order"], 3);
    assert_eq!(cfg["pipeline"]["mode"], "per_band");
    assert_eq!(cfg["model"]["seed"], 9);
    assert_eq!(cfg["source"]["synthetic"]["seed"], 9);
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["train"], 9);
}

#[test]
fn stepwise_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let steps: Vec<Vec<String>> = vec![
        vec![
            "synth",
            "--coupled",
            "2",
            "--uncoupled",
            "2",
            "--channels",
            "2",
            "--duration",
            "60",
            "--offset",
            "50",
            "--out",
            s(&p("recs")),
        ],
        vec![
            "extract",
            "--inputs",
            s(&p("recs/recordings.json")),
            "--out",
            s(&p("ds")),
        ],
        vec!["train", "--data", s(&p("ds")), "--epochs", "2", "--out", s(&p("m"))],
        vec![
            "explain",
            "--model",
            s(&p("m/model.bin")),
            "--data",
            s(&p("ds")),
            "--variant",
            "per-sample",
            "--out",
            s(&p("rel")),
        ],
        vec![
            "plot",
            "--report",
            s(&p("rel/relevance.json")),
            "--out",
            s(&p("rel.svg")),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let o = eegconn(&args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let csv = fs::read_to_string(p("rel/relevance.csv")).unwrap();
    assert!(csv.starts_with("feature,class,percent,c_plus_sum\n"));
    assert!(fs::read_to_string(p("rel.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn plot_accepts_reports_from_older_runs() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("old.json");
    fs::write(
        &report,
        r#"{"classes":[{"class":"seizure","samples":4,"features":[{"feature":"COH","total":3.0,"percent":75.0},{"feature":"PLV","total":1.0,"percent":25.0}]}]}"#,
    )
    .unwrap();
    let svg = dir.path().join("old.svg");
    let o = eegconn(&["plot", "--report", s(&report), "--out", s(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&svg).unwrap().contains("75.0%"));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_eegconn"))
        .args(["plot", "--report", "missing.json", "--out", "x.svg"])
        .env("EEGCONN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EEGCONN_THREADS"));
}
