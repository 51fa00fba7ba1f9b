use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn moe_place(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moe-place"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Copy of the bundled experiment with every sub-document inlined and
/// `edit` applied, written to `dir/config.json`.
fn config_with(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let read = |name: &str| -> Value { serde_json::from_str(&fs::read_to_string(configs().join(name)).unwrap()).unwrap() };
    let mut cfg = read("experiment.json");
    cfg["cluster"] = read("cluster.json");
    cfg["model"] = read("model.json");
    cfg["workload"] = read("workload.json");
    cfg["output_dir"] = json!("out");
    edit(&mut cfg);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn small_workload(cfg: &mut Value) {
    for s in cfg["workload"]["servers"].as_array_mut().unwrap() {
        s["requests"] = json!(20);
    }
}

#[test]
fn place_writes_a_valid_placement() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("experiment.json");
    let out = tmp.path().join("place");
    let o = moe_place(&["place", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["strategy"], "ours");
    assert!(report["counts"].is_object());

    let placement = out.join("placement.json");
    let v = moe_place(&["validate", "--config", cfg.to_str().unwrap(), placement.to_str().unwrap()]);
    assert!(v.status.success(), "{}", stdout(&v));
    assert!(stdout(&v).starts_with("ok"));
}

#[test]
fn infeasible_capacity_exits_2_and_names_the_deficit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with(tmp.path(), |c| {
        for s in c["cluster"]["servers"].as_array_mut().unwrap() {
            s["gpus"] = json!([{ "memory": 300_000_000u64, "load_bandwidth": 2e9 }]);
        }
    });
    let o = moe_place(&["place", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("short"), "{}", stderr(&o));
}

#[test]
fn oracle_refuses_oversized_instances() {
    let o = moe_place(&[
        "place",
        "--config",
        configs().join("experiment.json").to_str().unwrap(),
        "--strategy",
        "oracle",
        "--out",
        tempfile::tempdir().unwrap().path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("too large for the exhaustive oracle"));
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let o = moe_place(&["place", "--config", "x.json", "--strategy", "random"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with(tmp.path(), small_workload);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = moe_place(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let files: Vec<Vec<u8>> = ["requests.csv", "summary.json", "migrations.jsonl", "local_ratio.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0][0].clone()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "id,server,arrival,completion,latency,remote_invocations");
    assert_eq!(csv.lines().count(), 61);
}

#[test]
fn strategy_list_gets_one_directory_each() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with(tmp.path(), small_workload);
    let out = tmp.path().join("sim");
    let o = moe_place(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--strategies",
        "ours,eplb,uniform",
        "--no-migration",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for s in ["ours", "eplb", "uniform"] {
        let summary: Value = serde_json::from_str(&fs::read_to_string(out.join(s).join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["strategy"], s);
        assert_eq!(summary["migration_enabled"], false);
        assert_eq!(summary["candidates_evaluated"], 0);
    }
}

#[test]
fn seed_flag_changes_the_workload() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with(tmp.path(), small_workload);
    let read = |seed: &str| {
        let out = tmp.path().join(seed);
        let o = moe_place(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("requests.csv")).unwrap()
    };
    assert_ne!(read("3"), read("4"));
}

#[test]
fn missing_trace_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with(tmp.path(), |c| c["stats"] = json!("no-such-trace.jsonl"));
    let o = moe_place(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no-such-trace.jsonl"), "{}", stderr(&o));
}

#[test]
fn stats_trace_drives_the_placement() {
    let tmp = tempfile::tempdir().unwrap();
    // server 0 only ever uses expert 7 of every layer
    let trace: String = (0..4)
        .map(|l| format!("{{\"t\": 0.0, \"server\": 0, \"layer\": {l}, \"experts\": [7], \"tokens\": 10}}\n"))
        .collect();
    fs::write(tmp.path().join("trace.jsonl"), trace).unwrap();
    let cfg = config_with(tmp.path(), |c| c["stats"] = json!("trace.jsonl"));
    let out = tmp.path().join("place");
    let o = moe_place(&["place", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["utility"]["servers"][0]["utility"], 4.0);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with(tmp.path(), small_workload);
    let out = tmp.path().join("sweep");
    let o = moe_place(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--axis",
        "gpus",
        "--values",
        "4,8,16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("gpus,strategy,requests,mean_latency"));
    assert!(rows[1].starts_with("4.00000,ours,60,"));
}

#[test]
fn sweep_rejects_bad_axis_and_missing_values() {
    let cfg = configs().join("experiment.json");
    let o = moe_place(&["sweep", "--config", cfg.to_str().unwrap(), "--axis", "gpus"]);
    assert_eq!(o.status.code(), Some(1));
    let o = moe_place(&["sweep", "--config", cfg.to_str().unwrap(), "--axis", "memory", "--values", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown axis"));
}

#[test]
fn validate_reports_the_offending_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("cluster.json");
    fs::write(
        &bad,
        r#"{"servers": [{"gpus": [{"memory": 1, "load_bandwidth": 1.0}]},
                        {"gpus": [{"memory": 1, "load_bandwidth": 1.0}]}],
            "link_bandwidth": [[0, -5], [5, 0]], "link_latency": [[0, 0], [0, 0]]}"#,
    )
    .unwrap();
    let o = moe_place(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("link_bandwidth[0][1]"), "{}", stdout(&o));
}

#[test]
fn validate_points_at_the_bad_trace_line() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("trace.jsonl");
    fs::write(
        &trace,
        "{\"t\": 0, \"server\": 0, \"layer\": 0, \"experts\": [1], \"tokens\": 4}\n\
         {\"t\": 1, \"server\": 1, \"layer\": 2, \"experts\": [8], \"tokens\": 4}\n",
    )
    .unwrap();
    let o = moe_place(&[
        "validate",
        "--config",
        configs().join("experiment.json").to_str().unwrap(),
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("trace.jsonl:2:"), "{}", stdout(&o));
    assert!(stdout(&o).contains("expert 8"));
}

#[test]
fn validate_accepts_the_bundled_documents() {
    let names = ["experiment.json", "shift-experiment.json", "cluster.json", "model.json", "workload.json", "shift.json"];
    let paths: Vec<String> = names.iter().map(|n| configs().join(n).display().to_string()).collect();
    let mut args = vec!["validate", "--config"];
    let cfg = configs().join("experiment.json").display().to_string();
    args.push(&cfg);
    args.extend(paths.iter().map(String::as_str));
    let o = moe_place(&args);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("ok")).count(), names.len());
}
