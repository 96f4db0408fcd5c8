//! Exit-code and argument-handling contract of the `tablesvc` binary:
//! 0 = success, 1 = a check ran and failed, 2 = bad usage, bad config,
//! or an I/O failure.

use std::path::Path;
use std::process::Command;

use tablesvc::synthworld::WorldConfig;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tablesvc"));
    cmd.env_remove("TABLESVC_GRADCHECK_CORRUPT");
    cmd.env_remove("TABLESVC_THREADS");
    cmd
}

fn exit_code(output: &std::process::Output) -> i32 {
    output.status.code().expect("process not killed by signal")
}

fn write_tiny_world(path: &Path) {
    let mut world = WorldConfig::balanced();
    world.duration_s = 12;
    std::fs::write(
        path,
        serde_json::to_string_pretty(&world).expect("world serializes"),
    )
    .expect("config written");
}

#[test]
fn gradcheck_exits_zero_when_gradients_match() {
    let output = bin()
        .args(["gradcheck", "--seed", "0"])
        .output()
        .expect("binary runs");
    assert_eq!(
        exit_code(&output),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        stdout.contains("max relative error"),
        "gradcheck report missing from stdout: {stdout}"
    );
}

#[test]
fn gradcheck_exits_one_when_forced_to_fail() {
    let output = bin()
        .args(["gradcheck", "--seed", "0"])
        .env("TABLESVC_GRADCHECK_CORRUPT", "1")
        .output()
        .expect("binary runs");
    assert_eq!(exit_code(&output), 1, "corrupted gradcheck must exit 1");
}

#[test]
fn missing_subcommand_exits_two() {
    let output = bin().output().expect("binary runs");
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn unknown_flag_exits_two() {
    let output = bin()
        .args(["gradcheck", "--no-such-flag"])
        .output()
        .expect("binary runs");
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("broken.json");
    std::fs::write(&config, "{ this is not json").expect("config written");
    let output = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(["--episodes", "2"])
        .output()
        .expect("binary runs");
    assert_eq!(exit_code(&output), 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error:"), "stderr: {stderr}");
}

#[test]
fn invalid_world_config_exits_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("invalid.json");
    let mut world = WorldConfig::balanced();
    world.duration_s = 0;
    std::fs::write(
        &config,
        serde_json::to_string(&world).expect("world serializes"),
    )
    .expect("config written");
    let output = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(["--episodes", "2"])
        .output()
        .expect("binary runs");
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn out_of_range_budget_exits_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("world.json");
    write_tiny_world(&config);
    for budget in ["0.0", "1.5"] {
        let output = bin()
            .args(["ablate-selection", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join("out"))
            .args(["--budget", budget])
            .output()
            .expect("binary runs");
        assert_eq!(exit_code(&output), 2, "budget {budget} must be rejected");
    }
}

#[test]
fn bad_seed_list_exits_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("world.json");
    write_tiny_world(&config);
    let output = bin()
        .args(["ablate-features", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(["--seeds", "1,two,3"])
        .output()
        .expect("binary runs");
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn missing_dataset_exits_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = bin()
        .args(["train", "--data"])
        .arg(dir.path().join("missing"))
        .arg("--out")
        .arg(dir.path().join("model.json"))
        .output()
        .expect("binary runs");
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn invalid_thread_count_exits_two() {
    for value in ["0", "-3", "lots"] {
        let output = bin()
            .args(["gradcheck", "--seed", "0"])
            .env("TABLESVC_THREADS", value)
            .output()
            .expect("binary runs");
        assert_eq!(
            exit_code(&output),
            2,
            "TABLESVC_THREADS={value} must be rejected"
        );
        let stderr = String::from_utf8_lossy(&output.stderr);
        assert!(
            stderr.contains("TABLESVC_THREADS"),
            "stderr should name the variable: {stderr}"
        );
    }
}

#[test]
fn explicit_thread_count_is_accepted() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("world.json");
    write_tiny_world(&config);
    let output = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(["--episodes", "2", "--seed", "3"])
        .env("TABLESVC_THREADS", "2")
        .output()
        .expect("binary runs");
    assert_eq!(
        exit_code(&output),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        stdout.contains("frequencies.csv"),
        "synth should report its artifacts: {stdout}"
    );
}
