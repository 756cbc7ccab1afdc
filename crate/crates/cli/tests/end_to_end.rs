use std::fs;
use std::path::Path;
use std::process::Command;

fn segmeta(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_segmeta"))
        .args(args)
        .output()
        .expect("failed to spawn segmeta")
}

fn ok(args: &[&str]) {
    let out = segmeta(args);
    assert!(
        out.status.success(),
        "segmeta {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(dir: &Path) {
    let p = |n: &str| dir.join(n).to_str().unwrap().to_string();
    let stream = p("stream");
    let manifest = format!("{stream}/manifest.json");
    ok(&["synth", "--out", &stream, "--frames", "30", "--seed", "3", "--p-err", "0.25"]);
    ok(&["extract", "--manifest", &manifest, "--m", "3", "--out", &p("features.csv"), "--segments", &p("segments.csv")]);
    ok(&[
        "track",
        "--manifest",
        &manifest,
        "--features",
        &p("features.csv"),
        "--out",
        &p("tracking.csv"),
        "--features-out",
        &p("tracked.csv"),
    ]);
    ok(&["dataset", "--features", &p("tracked.csv"), "--history", "2", "--out", &p("dataset.csv")]);
    ok(&["train", "--dataset", &p("dataset.csv"), "--family", "linear", "--task", "classification", "--out", &p("model.json")]);
    ok(&[
        "--threads",
        "2",
        "eval",
        "--features",
        &p("tracked.csv"),
        "--ms",
        "0,3",
        "--histories",
        "0,2",
        "--runs",
        "2",
        "--out-csv",
        &p("report.csv"),
        "--out-json",
        &p("report.json"),
    ]);
}

const OUTPUTS: &[&str] = &[
    "features.csv",
    "segments.csv",
    "tracking.csv",
    "tracked.csv",
    "dataset.csv",
    "dataset.json",
    "model.json",
    "report.csv",
    "report.json",
];

#[test]
fn full_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    for name in OUTPUTS {
        let x = fs::read(a.path().join(name)).unwrap();
        assert!(!x.is_empty(), "{name} is empty");
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name} differs between runs");
    }
    let report = fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert!(report.starts_with("kind,family,task,m,T,metric,mean,std,best"));
}

#[test]
fn stability_count_beyond_blocks_fails() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s");
    let stream = stream.to_str().unwrap();
    ok(&["synth", "--out", stream, "--frames", "3"]);
    let out = segmeta(&[
        "extract",
        "--manifest",
        &format!("{stream}/manifest.json"),
        "--m",
        "10",
        "--out",
        dir.path().join("f.csv").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unknown_family_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = segmeta(&[
        "train",
        "--dataset",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--family",
        "forest",
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
