use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--nodes", "20", "--t-transient", "10", "--t-train", "30", "--t-end", "50", "--windows", "5",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowconn-rc"))
        .current_dir(dir)
        .env_remove("LOWCONN_RC_OUTPUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_documents_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let top = String::from_utf8(run(dir.path(), &["--help"]).stdout).unwrap();
    for needle in ["default: lorenz", "default: general", "default: 100", "default: 0.01", "default: 50"] {
        assert!(top.contains(needle), "top-level help lacks `{needle}`");
    }
    let opt = String::from_utf8(run(dir.path(), &["optimize", "--help"]).stdout).unwrap();
    assert!(opt.contains("default: 100") && opt.contains("default: 20"));
    let train = String::from_utf8(run(dir.path(), &["train", "--help"]).stdout).unwrap();
    assert!(train.contains("--gamma") && train.contains("reference value"));
}

#[test]
fn out_of_box_hyperparameters_exit_2_with_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--gamma", "12"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma = 12 outside [7, 11]"), "{}", stderr(&o));
    let o = run(dir.path(), &["train", "--topology", "cycle", "--k", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_configuration_exits_2_and_missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "sede = 3\n").unwrap();
    let o = run(dir.path(), &["--config", "c.toml", "calibrate"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("sede"));
    let o = run(dir.path(), &["evaluate", "--snapshot", "missing.json"]);
    assert_eq!(o.status.code(), Some(4));
    let o = run(dir.path(), &["--t-train", "5", "--t-end", "4", "train"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file_and_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "seed = 5\nsystem = \"rossler\"\nbudget = 7\n").unwrap();
    let mut args = vec!["--config", "c.toml", "--seed", "6", "--output-dir", "out"];
    args.extend_from_slice(SMALL);
    args.push("train");
    let o = run(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = fs::read_to_string(dir.path().join("out/train_6.config.toml")).unwrap();
    assert!(echo.contains("seed = 6"));
    assert!(echo.contains("system = \"rossler\""));
    assert!(echo.contains("budget = 7"));
    assert!(dir.path().join("out/train_rossler_general_6.json").exists());
}

#[test]
fn train_then_evaluate_reproduces_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["--output-dir", "out", "--seed", "3", "--topology", "k1-cut"];
    args.extend_from_slice(SMALL);
    let mut train = args.clone();
    train.push("train");
    let o = run(dir.path(), &train);
    assert!(o.status.success(), "{}", stderr(&o));
    let trained: f64 = String::from_utf8_lossy(&o.stdout)
        .split("epsilon = ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .expect("summary reports epsilon");

    let mut eval = args.clone();
    eval.extend_from_slice(&["evaluate", "--snapshot", "out/train_lorenz_k1-cut_3.json"]);
    let o = run(dir.path(), &eval);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/evaluate_lorenz_k1-cut_3.json")).unwrap())
            .unwrap();
    let eps = report["epsilon"].as_f64().unwrap();
    assert!((eps - trained).abs() <= 5e-5, "{eps} vs {trained}");
}

#[test]
fn tiny_campaign_writes_its_log_and_result() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["--output-dir", "out", "--seed", "2", "--topology", "line"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["optimize", "--budget", "4", "--repeats", "1"]);
    let o = run(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(dir.path().join("out/optimize_lorenz_line_2.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/optimize_lorenz_line_2.json")).unwrap())
            .unwrap();
    assert_eq!(result["iterations"], 4);
    assert!(dir.path().join("out/snapshot_lorenz_line_2.json").exists());
}
