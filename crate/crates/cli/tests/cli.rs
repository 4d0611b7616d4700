use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn maw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maw")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let out = dir.join("synth");
    let mut args = vec!["synth", "--seed", "3", "--users", "3", "--days", "2", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = maw(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("records.csv").to_str().unwrap().to_string()
}

#[test]
fn run_writes_every_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth(dir.path(), &["--osc-rate", "0.05"]);
    let out = dir.path().join("run");
    let o = maw(&[
        "run",
        "--workflow",
        "preset:workflow3",
        "--distance-km",
        "1.0",
        "--duration-min",
        "5",
        "--osc-window-min",
        "5",
        "-i",
        &records,
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let labeled = fs::read_to_string(out.join("labeled.csv")).unwrap();
    assert!(labeled.starts_with("device_id,timestamp,lat,lon,accuracy_m,stay_lat,stay_lon,stay_duration_min\n"));
    let stays = fs::read_to_string(out.join("stays.csv")).unwrap();
    assert!(stays.starts_with("device_id,centroid_lat,centroid_lon,start,end,duration_min,record_count,source\n"));
    assert!(stays.lines().count() > 1);
    let hist = fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 49);
    assert!(hist.lines().nth(18).unwrap().starts_with("17,0830,"));
    let profile: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("profile.json")).unwrap()).unwrap();
    assert_eq!(profile["workflow"], "workflow3");
    assert_eq!(profile["stages"].as_array().unwrap().len(), 3);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["trips_per_person_day"].as_f64().unwrap() >= 0.0);
}

#[test]
fn outputs_do_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth(dir.path(), &[]);
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = maw(&[
            "run", "-w", "preset:integration", "-i", &records, "-o", out.to_str().unwrap(), "--workers", workers,
            "--no-profile",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "8");
    assert!(!a.join("profile.json").exists());
    for f in ["labeled.csv", "stays.csv", "metrics.json", "histogram.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validation_errors_exit_with_two() {
    let o = maw(&["validate", "-w", "preset:workflow3"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("W001"));

    let o = maw(&["validate", "-w", r#"{"name":"x","input":"gps","stages":[{"kind":"stay_duration","params":{"duration_min":5}}]}"#]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("E001"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("wf.json");
    fs::write(
        &cfg,
        "{\n  \"name\": \"neg\",\n  \"input\": \"gps\",\n  \"stages\": [\n    {\n      \"kind\": \"trace_segmentation\",\n      \"params\": { \"duration_min\": -1, \"distance_km\": 0.2 }\n    }\n  ]\n}\n",
    )
    .unwrap();
    let o = maw(&["validate", "-w", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("line 7") && err.contains("stages[0].params.duration_min"), "{err}");

    let o = maw(&["validate", "-w", "preset:workflow9"]);
    assert_eq!(code(&o), 2);
    let o = maw(&["validate", "-w", "preset:workflow1", "--distance-km", "5"]);
    assert_eq!(code(&o), 2);
    let o = maw(&["validate", "-w", "preset:workflow1", "--distance-km", "5", "--allow-out-of-range"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = maw(&["run", "-w", "preset:workflow1", "-i", "/nonexistent/records.csv", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "device_id,timestamp,lat,lon,accuracy_m\nu,0,95,0,10\n").unwrap();
    let o = maw(&["ingest", "-i", bad.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth(dir.path(), &[]);
    let o = maw(&["compare", "--workflows", "preset:workflow1", "-i", &records]);
    assert_eq!(code(&o), 2);
    let o = maw(&["profile", "--sizes", "1x", "--base-mb", "0.01"]);
    assert_eq!(code(&o), 2);
    let o = maw(&["synth", "--osc-rate", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_ingest_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth(dir.path(), &["--osc-rate", "0.05"]);
    let out = dir.path().join("cmp");
    let o = maw(&[
        "compare", "--workflows", "preset:workflow1", "preset:workflow2", "-i", &records, "-o", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("workflow1") && table.contains("workflow2"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);

    let o = maw(&["metrics", "--stays", out.join("1-workflow1/stays.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m, report["rows"][0]["metrics"]);

    let ing = dir.path().join("ing");
    let o = maw(&["ingest", "-i", &records, "-o", ing.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        s["records"].as_u64().unwrap(),
        s["gps_records"].as_u64().unwrap() + s["cellular_records"].as_u64().unwrap()
    );
    assert!(ing.join("gps.csv").exists() && ing.join("cellular.csv").exists());
}

#[test]
fn synth_is_seed_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = synth(a.path(), &[]);
    let rb = synth(b.path(), &[]);
    assert_eq!(fs::read(ra).unwrap(), fs::read(rb).unwrap());
}

#[test]
fn profile_reports_a_fit() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("scaling.json");
    let o = maw(&[
        "profile", "--sizes", "1x,2x,3x", "--base-mb", "0.05", "--repeats", "1", "-o", report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["points"].as_array().unwrap().len(), 3);
}
