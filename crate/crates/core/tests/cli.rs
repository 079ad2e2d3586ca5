use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--classes",
    "3",
    "--train_per_class",
    "60",
    "--test_per_class",
    "20",
    "--dims",
    "4",
    "--hidden",
    "8",
    "--epochs",
    "6",
    "--batch_size",
    "16",
];

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclical"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn train(extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    bin(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn schedule_is_deterministic() {
    let args = [
        "schedule",
        "--epochs",
        "50",
        "--p_easy",
        "1e-4",
        "--p_hard",
        "1e-3",
        "--cyclical_factor",
        "2",
    ];
    let a = bin(&args);
    let b = bin(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(text.lines().count(), 51);
    assert!(text.starts_with("epoch,value\n0,0.0001\n"));
}

#[test]
fn schedule_factor_one_is_a_ramp() {
    let o = bin(&[
        "schedule",
        "--epochs",
        "20",
        "--p-easy",
        "0.5",
        "--p-hard",
        "2",
        "--cyclical_factor",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let values: Vec<f64> = column(&stdout(&o), "value")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(values[0], 0.5);
    assert_eq!(values[19], 2.0);
    assert!(values.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn schedule_usage_and_validation_errors() {
    let missing = bin(&["schedule", "--epochs", "10"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = bin(&[
        "schedule",
        "--epochs",
        "10",
        "--p_easy",
        "1",
        "--p_hard",
        "2",
        "--cyclical_factor",
        "0.5",
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("cyclical_factor"));
}

#[test]
fn train_without_controllers_is_baseline() {
    let o = train(&["--weight_decay", "5e-4"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 7);
    assert!(column(&text, "wd").iter().all(|v| v == "0.0005"));
    assert!(column(&text, "temperature").iter().all(|v| v == "1"));
}

#[test]
fn cyclical_weight_decay_flags() {
    let o = train(&[
        "--wd_min",
        "1e-5",
        "--wd_max",
        "8e-5",
        "--cyclical_factor",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let wd: Vec<f64> = column(&stdout(&o), "wd")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(wd[0], 1e-5);
    assert_eq!(wd[5], 1e-5);
    assert!(wd.iter().all(|&w| (1e-5..=8e-5).contains(&w)));
    assert!(wd[2] > wd[0]);
}

#[test]
fn cyclical_temperature_flags() {
    let o = train(&["--T_min", "0.5", "--T_max", "2", "--cyclical_factor", "1"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let t = column(&stdout(&o), "temperature");
    assert_eq!(t[0], "0.5");
    assert_eq!(t[5], "2");
}

#[test]
fn train_is_reproducible_and_multi_seed_needs_output() {
    assert_eq!(
        train(&["--seed", "4"]).stdout,
        train(&["--seed", "4"]).stdout
    );
    let o = train(&["--seeds", "1,2"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let o = train(&["--seeds", "1,2", "--output", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("log_seed1.csv").exists());
    assert!(dir.path().join("log_seed2.csv").exists());
}

#[test]
fn train_divergence_exits_runtime() {
    let o = train(&["--lr", "1e200", "--sched", "constant"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("aborted"));
}

#[test]
fn train_rejects_unknown_flag() {
    assert_eq!(train(&["--nesterov"]).status.code(), Some(2));
    assert_eq!(train(&["--wd_min", "1e-4"]).status.code(), Some(2));
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    let mut text = String::from("# small task\n");
    for pair in SMALL.chunks(2) {
        text.push_str(&format!(
            "{} = {}\n",
            pair[0].trim_start_matches('-'),
            pair[1]
        ));
    }
    text.push_str("wd_min = 1e-4\nwd_max = 1e-3\n");
    std::fs::write(&path, text).unwrap();

    let from_file = bin(&["train", "--config", path.to_str().unwrap()]);
    let from_flags = train(&["--wd_min", "1e-4", "--wd_max", "1e-3"]);
    assert_eq!(from_file.status.code(), Some(0));
    assert_eq!(from_file.stdout, from_flags.stdout);
}

fn write_arm(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn compare_writes_json_summary() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_arm(dir.path(), "a.conf", "weight_decay = 1e-3\n");
    let b = write_arm(dir.path(), "b.conf", "wd_min = 2e-4\nwd_max = 2e-3\n");
    let mut args = vec!["compare", "--arm_a", &a, "--arm_b", &b, "--seeds", "0,1,2"];
    args.extend_from_slice(SMALL);
    let o = bin(&args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["seeds"].as_array().unwrap().len(), 3);
    assert_eq!(json["arm_a"]["per_seed"].as_array().unwrap().len(), 3);
    assert_eq!(json["arm_b"]["config"]["wd_max"], "0.002");
    assert!(String::from_utf8_lossy(&o.stderr).contains("mean paired difference"));

    let single = bin(&["compare", "--arm_a", &a, "--arm_b", &b, "--seeds", "0"]);
    assert_eq!(single.status.code(), Some(2));
}

#[test]
fn sweep_prints_one_row_per_factor() {
    let mut args = vec![
        "sweep",
        "--fc_values",
        "1,2",
        "--wd_min",
        "1e-4",
        "--wd_max",
        "1e-3",
        "--seeds",
        "0,1",
    ];
    args.extend_from_slice(SMALL);
    let o = bin(&args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "cyclical_factor,mean_acc,std_acc,completed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[1].ends_with(",2"));
    assert!(lines[2].starts_with("2,"));
}

#[test]
fn check_ratio() {
    let o = bin(&["check", "--lr", "0.1", "--wd", "5e-4", "--bs", "128"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("in_range=true"));
    let o = bin(&["check", "--lr", "0.1", "--wd", "0.5", "--bs", "128"]);
    assert!(stdout(&o).contains("in_range=false"));
    assert_eq!(
        bin(&["check", "--wd", "5e-4", "--bs", "128"]).status.code(),
        Some(2)
    );
}

#[test]
fn help_exits_cleanly() {
    let o = bin(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("schedule"));
}
