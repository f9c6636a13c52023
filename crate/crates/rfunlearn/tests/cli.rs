//! End-to-end runs of the binary on a tiny configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# small enough to run in seconds
fleet.n = 3
fleet.recordings_per_device = 12
featurize.out_size = 16
train.epochs = 4
train.batch_size = 8
unlearn.max_epochs = 3
unlearn.batch_size = 8
unlearn.class.2.beta = 16
comv.max_epochs = 2
comv.batch_size = 8
";

fn rfunlearn(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("tiny.conf");
    if !cfg.exists() {
        fs::write(&cfg, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_rfunlearn"))
        .arg("--config")
        .arg(&cfg)
        .arg("--workdir")
        .arg(dir.join("work"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join("work").join(rel)).unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&rfunlearn(d, &["gen"]));
    let manifest = read(d, "manifest.json");
    ok(&rfunlearn(d, &["gen"]));
    assert_eq!(read(d, "manifest.json"), manifest);
    let m: serde_json::Value = serde_json::from_slice(&manifest).unwrap();
    assert_eq!(m["entries"].as_array().unwrap().len(), 36);

    ok(&rfunlearn(d, &["featurize"]));
    ok(&rfunlearn(d, &["train"]));
    let index: serde_json::Value = serde_json::from_slice(&read(d, "index.json")).unwrap();
    let model = index["model"].as_str().unwrap().to_string();
    ok(&rfunlearn(d, &["train"]));
    let again: serde_json::Value = serde_json::from_slice(&read(d, "index.json")).unwrap();
    assert_eq!(again["model"].as_str().unwrap(), model);
    ok(&rfunlearn(d, &["train", "--arch", "conv2d(4,3,1),relu,maxpool,flatten,dense(3)"]));
    let other: serde_json::Value = serde_json::from_slice(&read(d, "index.json")).unwrap();
    assert_ne!(other["model"].as_str().unwrap(), model);
    ok(&rfunlearn(d, &["train"]));

    let single = rfunlearn(d, &["unlearn", "--forget", "2"]);
    assert!(matches!(single.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&single.stderr));
    let comv = rfunlearn(d, &["--json-logs", "unlearn", "--forget", "0,1", "--mode", "com-v"]);
    assert!(matches!(comv.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&comv.stderr));
    let first_log = String::from_utf8_lossy(&comv.stderr).lines().next().unwrap().to_string();
    assert!(serde_json::from_str::<serde_json::Value>(&first_log).is_ok(), "{first_log}");
    let index: serde_json::Value = serde_json::from_slice(&read(d, "index.json")).unwrap();
    let coef = read(d, index["coeffs/0+1"].as_str().unwrap());
    let n = u32::from_le_bytes(coef[12..16].try_into().unwrap());
    assert_eq!(n, 3);
    let joint = rfunlearn(d, &["unlearn", "--forget", "0,1", "--mode", "single-v"]);
    assert!(matches!(joint.status.code(), Some(0 | 2)));

    ok(&rfunlearn(d, &["retrain", "--exclude", "2"]));
    let eval = rfunlearn(d, &["eval", "--forget", "2"]);
    ok(&eval);
    let stdout = String::from_utf8(eval.stdout).unwrap();
    assert!(stdout.contains("\"method\": \"original\"") && stdout.contains("\"method\": \"ffv\""));

    let report = rfunlearn(d, &["report", "--heatmaps", "2"]);
    ok(&report);
    let table = String::from_utf8(read(d, "report.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    let methods: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["com-v", "ffv", "original", "retrain", "single-v"]);
    let heatmaps = fs::read_dir(d.join("work/heatmaps/ffv-2")).unwrap().count();
    assert_eq!(heatmaps, 4);
    let pgm = fs::read(fs::read_dir(d.join("work/heatmaps/com-v-0+1")).unwrap().next().unwrap().unwrap().path()).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert!(!d.join("work/.lock").exists());
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(rfunlearn(d, &["train"]).status.code(), Some(1));
    assert_eq!(rfunlearn(d, &["report"]).status.code(), Some(1));
    ok(&rfunlearn(d, &["gen"]));
    ok(&rfunlearn(d, &["train"]));
    assert_eq!(rfunlearn(d, &["unlearn", "--forget", "7"]).status.code(), Some(1));
    assert_eq!(rfunlearn(d, &["unlearn", "--forget", "1", "--mode", "com-v"]).status.code(), Some(1));

    fs::write(d.join("bad.conf"), "unlearn.betta = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rfunlearn"))
        .args(["--config", d.join("bad.conf").to_str().unwrap(), "--workdir", d.join("w2").to_str().unwrap(), "gen"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    fs::write(d.join("work/.lock"), "1").unwrap();
    assert_eq!(rfunlearn(d, &["featurize"]).status.code(), Some(1));
}

#[test]
fn seed_flag_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&rfunlearn(d, &["gen"]));
    let a = read(d, "iq/dev000_00000.iq");
    let other = tempfile::tempdir().unwrap();
    ok(&rfunlearn(other.path(), &["--seed", "7", "gen"]));
    assert_ne!(fs::read(other.path().join("work/iq/dev000_00000.iq")).unwrap(), a);
}
