use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_aap");

const ORACLE: &str = r#"{
    "version": 1,
    "seed": 7,
    "model": {"preset": "smallconv"},
    "dataset": {"kind": "synthetic", "train_size": 64, "test_size": 32},
    "trainer": "oracle",
    "oracle": {"curve": {"type": "step", "plateau": 99.0, "knee": 50.0, "drop": 20.0}},
    "train": {"initial_lr": 0.05, "total_epochs": 10, "batch_size": 16},
    "policy": {"objective": "accuracy_guaranteed", "acc_loss_target": 1.0, "lambda0": 0.05},
    "attention": {"batch_size": 32},
    "output_dir": "unused"
}"#;

const SUBSTRATE: &str = r#"{
    "version": 1,
    "seed": 1,
    "model": {"preset": "smallconv"},
    "dataset": {"kind": "synthetic", "train_size": 64, "test_size": 32},
    "train": {"initial_lr": 0.05, "total_epochs": 5, "batch_size": 16},
    "policy": {"objective": "memory_constrained", "param_target": 30.0, "lambda0": 0.2, "max_rounds": 3},
    "attention": {"batch_size": 32},
    "output_dir": "unused",
    "analysis": {"stability_rewind_epochs": [1]}
}"#;

fn aap(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_config(dir: &Path, text: &str, name: &str) -> (Output, PathBuf) {
    let config = dir.join(format!("{name}.json"));
    std::fs::write(&config, text).unwrap();
    let out = dir.join(name);
    let output = aap(&["run", "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    (output, out)
}

fn summary(run: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn oracle_run_writes_a_complete_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let (o, run) = run_config(tmp.path(), ORACLE, "a");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed().as_secs_f64() < 5.0);
    for f in ["config.json", "trace.jsonl", "trace.csv", "summary.json", "attention.jsonl", "costs.csv", "checkpoints/final.aap"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let s = summary(&run);
    for key in ["acc_loss_pct", "params_red_pct", "flops_red_pct", "rounds", "wall_time"] {
        assert!(s.get(key).is_some(), "{key} missing from summary");
    }
    assert!(s["params_red_pct"].as_f64().unwrap() <= 50.0);
}

#[test]
fn identical_configs_give_identical_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, run_a) = run_config(tmp.path(), ORACLE, "a");
    let (b, run_b) = run_config(tmp.path(), ORACLE, "b");
    assert!(a.status.success() && b.status.success());
    let (mut sa, mut sb) = (summary(&run_a), summary(&run_b));
    sa.as_object_mut().unwrap().remove("wall_time");
    sb.as_object_mut().unwrap().remove("wall_time");
    assert_eq!(sa, sb);
    let trace = |r: &Path| std::fs::read_to_string(r.join("trace.jsonl")).unwrap();
    assert_eq!(trace(&run_a), trace(&run_b));
}

#[test]
fn negative_lambda_is_a_usage_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, run) = run_config(tmp.path(), &ORACLE.replace("\"lambda0\": 0.05", "\"lambda0\": -0.01"), "bad");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("policy.lambda0"), "{}", stderr(&o));
    assert!(!run.exists());
}

#[test]
fn unknown_subcommand_and_missing_config_exit_two() {
    assert_eq!(aap(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(aap(&["run", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
}

#[test]
fn trace_report_has_one_row_per_round() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, run) = run_config(tmp.path(), ORACLE, "a");
    assert!(o.status.success());
    let r = aap(&["report", "--run", run.to_str().unwrap(), "--kind", "trace"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let csv = String::from_utf8(r.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("round,T,lambda,acc_loss,param_red"));
    let rounds = std::fs::read_to_string(run.join("trace.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"event\":\"round\""))
        .count();
    assert_eq!(lines.count(), rounds);
    assert_eq!(std::fs::read_to_string(run.join("reports/trace.csv")).unwrap(), csv);
}

#[test]
fn unpruned_run_reports_zero_sparsity() {
    let tmp = tempfile::tempdir().unwrap();
    // The knee sits at zero reduction, so every pruned round violates the target.
    let text = ORACLE.replace("\"knee\": 50.0", "\"knee\": 0.0");
    let (o, run) = run_config(tmp.path(), &text, "flat");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary(&run)["params_red_pct"].as_f64(), Some(0.0));
    let r = aap(&["report", "--run", run.to_str().unwrap(), "--kind", "sparsity"]);
    let csv = String::from_utf8(r.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        assert!(row.ends_with(",0") || row.ends_with(",0.0") || row.ends_with(",0.00"), "{row}");
    }
}

#[test]
fn attention_report_is_non_negative() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run) = run_config(tmp.path(), ORACLE, "a");
    let r = aap(&["report", "--run", run.to_str().unwrap(), "--kind", "attention"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let csv = String::from_utf8(r.stdout).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "score").expect("score column");
    let mut n = 0;
    for line in csv.lines().skip(1) {
        let v: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(v >= 0.0);
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn report_on_missing_run_exits_two() {
    let r = aap(&["report", "--run", "/nonexistent/run", "--kind", "trace"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn single_trial_bench_omits_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run) = run_config(tmp.path(), ORACLE, "a");
    let b = aap(&["bench", "--checkpoint", run.to_str().unwrap(), "--trials", "1", "--batch", "4"]);
    assert!(b.status.success(), "{}", stderr(&b));
    let report: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert!(report["masked"].get("std_ms").is_none());
    assert!(report["max_rel_diff"].as_f64().unwrap() < 1e-5);
}

#[test]
fn inspect_prints_the_header() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run) = run_config(tmp.path(), ORACLE, "a");
    let ckpt = run.join("checkpoints/final.aap");
    let i = aap(&["inspect", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(i.status.success(), "{}", stderr(&i));
    let v: serde_json::Value = serde_json::from_slice(&i.stdout).unwrap();
    assert_eq!(v["id"].as_str().unwrap().len(), 64);
    assert_eq!(aap(&["inspect", "--checkpoint", "/nonexistent.aap"]).status.code(), Some(2));
}

#[test]
fn substrate_run_records_stability() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, run) = run_config(tmp.path(), SUBSTRATE, "s");
    assert!(o.status.success(), "{}", stderr(&o));
    let points: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("stability.json")).unwrap()).unwrap();
    assert_eq!(points[0]["rewind_epoch"], 1);
    assert!(points[0]["stability"].as_f64().unwrap() >= 0.0);
    let r = aap(&["report", "--run", run.to_str().unwrap(), "--kind", "stability"]);
    assert!(r.status.success(), "{}", stderr(&r));
}

#[test]
fn fuzz_config_seeds_parse_and_validate() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/config");
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let config = aap_cli::config::parse_config(&std::fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.validate().unwrap();
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let config = aap_cli::config::parse_config(&std::fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.architecture().unwrap();
        n += 1;
    }
    assert!(n >= 3);
}
