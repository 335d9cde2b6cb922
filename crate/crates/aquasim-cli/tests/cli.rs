//! End-to-end checks of the `aquasim` binary: flags, exit codes, file
//! outputs and cross-run determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aquasim"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn aquasim");
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn validate_accepts_every_shipped_config() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        run_ok(&["validate", "--config", path.to_str().unwrap()]);
    }
}

#[test]
fn validate_rejects_out_of_range_loss_with_exit_1() {
    let dir = tempdir("validate-loss");
    let bad = dir.join("bad.toml");
    std::fs::write(
        &bad,
        r#"
scenario = "streaming"
[streaming]
bitrate = 1508000.0
duration = 10.0
wireless_loss = 1.2
"#,
    )
    .unwrap();
    let out = bin()
        .args(["validate", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("streaming.wireless_loss"), "{stderr}");
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = bin()
        .args(["validate", "--config", "/nonexistent/nowhere.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pathological_loss_fails_at_runtime_with_exit_2() {
    let dir = tempdir("runtime-loss");
    let cfg = dir.join("hopeless.toml");
    std::fs::write(
        &cfg,
        r#"
scenario = "streaming"
[streaming]
bitrate = 1508000.0
duration = 1.0
wireless_loss = 0.999
"#,
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_twice_with_same_seed_is_byte_identical() {
    let dir = tempdir("run-determinism");
    let cfg = configs_dir().join("streaming.toml");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for out in [&a, &b] {
        run_ok(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let left = std::fs::read(&a).unwrap();
    assert!(!left.is_empty());
    assert_eq!(left, std::fs::read(&b).unwrap());
}

#[test]
fn json_format_is_available() {
    let dir = tempdir("run-json");
    let cfg = configs_dir().join("abr.toml");
    let out_path = dir.join("abr.json");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--format",
        "json",
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(parsed["scenario"], "abr");
}

#[test]
fn seed_list_writes_one_file_per_seed() {
    let dir = tempdir("seed-list");
    let cfg_path = dir.join("multi.toml");
    std::fs::write(
        &cfg_path,
        r#"
scenario = "abr"
seeds = [1, 2]

[abr]
ladder = [0.5e6, 1.5e6, 3.0e6]
"#,
    )
    .unwrap();
    let out = dir.join("abr.csv");
    run_ok(&[
        "run",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(dir.join("abr.s1.abr.csv").exists());
    assert!(dir.join("abr.s2.abr.csv").exists());
}

#[test]
fn sweep_emits_one_report_per_value() {
    let dir = tempdir("sweep");
    let cfg = configs_dir().join("streaming.toml");
    run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "streaming.wireless_loss",
        "--values",
        "0,0.01,0.02",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let mut files: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files.len(), 3, "{files:?}");
    assert!(
        files[0].starts_with("streaming.wireless_loss=0"),
        "{files:?}"
    );
    let body = std::fs::read_to_string(dir.join(&files[1])).unwrap();
    assert!(body.contains("sweep.streaming.wireless_loss,"), "{body}");
}

#[test]
fn parallel_sweep_bytes_match_serial() {
    let cfg = configs_dir().join("streaming.toml");
    let dir_s = tempdir("sweep-serial");
    let dir_p = tempdir("sweep-parallel");
    for (dir, parallel) in [(&dir_s, false), (&dir_p, true)] {
        let mut args = vec![
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--param",
            "streaming.wireless_loss",
            "--values",
            "0,0.05",
            "--out",
            dir.to_str().unwrap(),
        ];
        if parallel {
            args.push("--parallel");
        }
        run_ok(&args);
    }
    let mut names: Vec<String> = std::fs::read_dir(&dir_s)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2);
    for name in names {
        assert_eq!(
            std::fs::read(dir_s.join(&name)).unwrap(),
            std::fs::read(dir_p.join(&name)).unwrap(),
            "{name}"
        );
    }
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("aquasim-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
