use std::path::Path;
use std::process::{Command, Output};

fn stockmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stockmem")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn synth(dir: &Path) {
    let o = stockmem(&["synth", "--out", dir.to_str().unwrap(), "--companies", "2", "--train-days", "10", "--test-days", "4", "--window", "3"]);
    assert!(o.status.success(), "{}", text(&o));
}

#[test]
fn synth_backtest_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = dir.path().join("config.toml");
    let out = dir.path().join("out");
    let o = stockmem(&["build-memory", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("reflections"));
    let o = stockmem(&["backtest", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("as-of violations: 0"));
    for f in ["metrics.json", "records.jsonl", "generation_log.jsonl", "report.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let records = std::fs::read_to_string(out.join("records.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    let id = first["record_id"].as_str().unwrap();
    let o = stockmem(&["report", "--records", out.join("records.jsonl").to_str().unwrap(), "--id", id]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("Model reasoning"));
    let o = stockmem(&["report", "--records", out.join("records.jsonl").to_str().unwrap(), "--id", "ZZZ@2000-01-01"]);
    assert!(!o.status.success());
    assert!(text(&o).contains("unknown record"));
}

#[test]
fn ablate_selected_variants() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = dir.path().join("config.toml");
    let out = dir.path().join("abl");
    let o = stockmem(&["ablate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--variants", "full,no_reference"]);
    assert!(o.status.success(), "{}", text(&o));
    let results: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(results.as_array().unwrap().len(), 2);
    let o = stockmem(&["ablate", "--config", config.to_str().unwrap(), "--variants", "bogus"]);
    assert!(!o.status.success());
    assert!(text(&o).contains("unknown variant"));
}

#[test]
fn invalid_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = dir.path().join("config.toml");
    let body = std::fs::read_to_string(&config).unwrap().replace("window = 3", "window = 0");
    std::fs::write(&config, body).unwrap();
    let o = stockmem(&["backtest", "--config", config.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(text(&o).contains("window"), "{}", text(&o));
}
