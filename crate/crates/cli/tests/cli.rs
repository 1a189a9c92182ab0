use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gymsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gymsense")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gymsense(args);
    assert!(
        out.status.success(),
        "gymsense {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap());
    }
    files
}

/// Names of files whose contents differ, ignoring the run manifest (it records `--out`).
fn differing(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let names: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    names.into_iter().filter(|n| n.as_str() != "run_manifest.json" && a.get(*n) != b.get(*n)).cloned().collect()
}

/// Small 2-subject dataset: two activities, one short set each.
fn small_dataset(dir: &Path, days: &str, noiseless: bool) {
    let mut args = vec![
        "synth", "--subjects", "2", "--days", days, "--seed", "7", "--activity", "Squat", "--activity", "Running",
        "--sets", "1", "--reps", "8", "--rest", "6", "--out", p(dir),
    ];
    if noiseless {
        args.push("--noiseless");
    }
    ok(&args);
}

#[test]
fn synth_rejects_single_subject() {
    let dir = tempfile::tempdir().unwrap();
    let out = gymsense(&["synth", "--subjects", "1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 subjects"));
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn synth_is_deterministic_and_ingestible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&["synth", "--subjects", "2", "--seed", "7", "--out", p(a.path())]);
    ok(&["synth", "--subjects", "2", "--seed", "7", "--out", p(b.path())]);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.len(), 8);
    assert_eq!(differing(&sa, &sb), Vec::<String>::new());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sessions"].as_array().unwrap().len(), 2);
    let stdout = ok(&["ingest", "--data", p(a.path())]);
    assert!(stdout.contains("2 sessions, subjects [1, 2], 0 warnings"), "{stdout}");
}

#[test]
fn count_on_noiseless_data_is_exact() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_dataset(data.path(), "1", true);
    let before = snapshot(data.path());
    ok(&["count", "--data", p(data.path()), "--grid-mode", "louo", "--out", p(out.path())]);
    assert!(before == snapshot(data.path()), "the dataset directory was modified");

    let long = fs::read_to_string(out.path().join("counting_long_wrist.csv")).unwrap();
    let mut lines = long.lines();
    assert_eq!(lines.next(), Some("activity,source,accuracy"));
    let mut sources = std::collections::BTreeSet::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 3);
        assert_eq!(cols[2], "1", "{line}");
        sources.insert(cols[1].to_string());
    }
    assert_eq!(sources.into_iter().collect::<Vec<_>>(), ["acc", "combined", "gyro", "hbc", "imu"]);
    let summary = fs::read_to_string(out.path().join("counting_summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("wrist,all,4,1,0,1,0,1,0,1,0,1,0")), "{summary}");
}

#[test]
fn count_requires_ground_truth() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_dataset(data.path(), "1", true);
    fs::remove_file(data.path().join("S2_D1_wrist.counts.json")).unwrap();
    let res = gymsense(&["count", "--data", p(data.path()), "--out", p(out.path())]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("no counts sidecar"));
}

#[test]
fn eval_writes_one_entry_per_cell_and_replays() {
    let (data, out, again) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_dataset(data.path(), "1", false);
    let before = snapshot(data.path());
    let args = [
        "eval", "--data", p(data.path()), "--position", "wrist", "--source", "hbc", "--source", "imu", "--epochs", "2",
        "--batch", "64", "--seed", "3", "--out", p(out.path()),
    ];
    ok(&args);
    assert!(before == snapshot(data.path()), "the dataset directory was modified");
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.path().join("report.json")).unwrap()).unwrap();
    let keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["wrist_hbc", "wrist_imu"]);
    for key in keys {
        assert_eq!(report[key]["folds"].as_array().unwrap().len(), 2);
        assert_eq!(report[key]["leakage_windows"], 0);
        assert!(out.path().join(format!("confusion_{key}.csv")).exists());
        let svg = fs::read_to_string(out.path().join(format!("confusion_{key}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    ok(&["replay", p(&out.path().join("run_manifest.json")), "--out", p(again.path())]);
    assert_eq!(
        fs::read(out.path().join("report.json")).unwrap(),
        fs::read(again.path().join("report.json")).unwrap()
    );

    let rendered = tempfile::tempdir().unwrap();
    ok(&["report", "--input", p(&out.path().join("report.json")), "--out", p(rendered.path())]);
    assert_eq!(
        fs::read(out.path().join("confusion_wrist_imu.csv")).unwrap(),
        fs::read(rendered.path().join("confusion_wrist_imu.csv")).unwrap()
    );
}

#[test]
fn eval_refuses_to_write_into_the_dataset() {
    let data = tempfile::tempdir().unwrap();
    small_dataset(data.path(), "1", true);
    let res = gymsense(&["eval", "--data", p(data.path()), "--epochs", "2", "--out", p(data.path())]);
    assert!(!res.status.success());
    assert!(!data.path().join("report.json").exists());
}

#[test]
fn combined_source_needs_hbc_column() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_dataset(data.path(), "1", true);
    let csv = data.path().join("S1_D1_wrist.csv");
    let stripped: String = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(1);
            cols.join(",") + "\n"
        })
        .collect();
    fs::write(&csv, stripped).unwrap();
    let res = gymsense(&["eval", "--data", p(data.path()), "--source", "combined", "--epochs", "2", "--out", p(out.path())]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing required column `hbc`"));
}

#[test]
fn auth_on_selected_activity() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_dataset(data.path(), "2", false);
    ok(&[
        "auth", "--data", p(data.path()), "--activity", "Squat", "--source", "imu", "--epochs", "2", "--batch", "64",
        "--out", p(out.path()),
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.path().join("report.json")).unwrap()).unwrap();
    let r = &report["wrist_imu_squat"];
    assert_eq!(r["activity"], "Squat");
    assert_eq!(r["class_names"].as_array().unwrap().len(), 10);
    assert_eq!(r["folds"].as_array().unwrap().len(), 2);
    assert_eq!(r["pooled"]["confusion"].as_array().unwrap().len(), 10);
    let csv = fs::read_to_string(out.path().join("confusion_wrist_imu_squat.csv")).unwrap();
    assert!(csv.starts_with("true\\predicted,S1,S2,"));
}

#[test]
fn thread_count_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gymsense"))
        .args(["synth", "--out", p(dir.path())])
        .env("WS_THREADS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_gymsense"))
        .args(["synth", "--out", p(dir.path())])
        .env("WS_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}
