use std::fs;
use std::path::Path;
use std::process::Command;

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lidar-stream")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_then_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"scenes_per_seed": 2}"#).unwrap();
    let data = dir.path().join("data");
    let out = cli(&["gen", "--config", path(&config), "--out", path(&data), "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["scene_000.json", "scene_001.json", "scan_000.json", "scan_000.bin"] {
        assert!(data.join(f).exists(), "missing {f}");
    }

    let run_dir = dir.path().join("run");
    let out = cli(&[
        "run",
        "--scan",
        path(&data.join("scan_000.json")),
        "--truth",
        path(&data.join("scene_000.json")),
        "--variant",
        "localized+statefulNMS",
        "--slices",
        "8",
        "--nms-window",
        "2",
        "--iou",
        "0.4",
        "--out",
        path(&run_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bins = fs::read_to_string(run_dir.join("bins.csv")).unwrap();
    assert!(bins.starts_with("variant,n,class,bin,ap\n"));
    assert_eq!(bins.lines().count(), 11);
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("eval.json")).unwrap()).unwrap();
    assert!(eval["classes"].is_array());
    let dets = fs::read_to_string(run_dir.join("detections.jsonl")).unwrap();
    for line in dets.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn latency_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("latency.csv");
    let out = cli(&[
        "latency",
        "--scan-period-ms",
        "100",
        "--full-infer-ms",
        "16",
        "--overhead-ms",
        "2.5",
        "--slices",
        "1,8",
        "--out",
        path(&out_path),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().nth(2).unwrap(), "8,17.000000,10.750000,0.125000,6.823529");
}

#[test]
fn sweep_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"scenes_per_seed": 2, "seeds": [1], "slices": [4], "variants": ["baseline", "localized"]}"#).unwrap();
    let out_dir = dir.path().join("sweep");
    let out = cli(&["sweep", "--config", path(&config), "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = cli(&["sweep", "--config", path(&missing), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seeds": []}"#).unwrap();
    let out = cli(&["sweep", "--config", path(&bad), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    let out = cli(&["latency", "--slices", "0", "--out", path(&dir.path().join("l.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}
