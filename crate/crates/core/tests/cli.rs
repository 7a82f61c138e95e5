use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fido-sidechan"));
    cmd.args(args).env_remove("FIDO_SIDECHAN_SEED");
    if let Some(seed) = seed_env {
        cmd.env("FIDO_SIDECHAN_SEED", seed);
    }
    cmd.output().unwrap()
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("s.scenario");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str =
    "id = t\nseed = 5\nmode = ATTACK\nauthenticator = feitian\nn = 5\ntrials = 2\nsessions = 10\n";

#[test]
fn calibrate_prints_a_fitted_profile() {
    let out = cli(
        &["calibrate", "--profile", "hyperfido", "--delta-us", "10070"],
        None,
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("cost_aes_decrypt_us"), "{stdout}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &["calibrate", "--profile", "no_such_token", "--delta-us", "1"],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = cli(
        &[
            "calibrate",
            "--profile",
            "constant_time",
            "--delta-us",
            "10070",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    let bad = write_scenario(
        dir.path(),
        "mode = ATTACK\nauthenticator = hyperfido\ntrials = 0\n",
    );
    let out = cli(&["run", "--scenario", &bad], None);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["run", "--scenario", "/nonexistent/s.scenario"], None);
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&["frobnicate"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_variable_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let read = |out: &str| std::fs::read(dir.path().join(out).join("observations.csv")).unwrap();
    let run = |out: &str, env: Option<&str>| {
        let target = dir.path().join(out);
        let o = cli(
            &[
                "run",
                "--scenario",
                &scenario,
                "--out",
                target.to_str().unwrap(),
            ],
            env,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("plain", None);
    run("env5", Some("5"));
    run("env6", Some("6"));
    assert_eq!(read("plain"), read("env5"));
    assert_ne!(read("plain"), read("env6"));
    let echo = std::fs::read_to_string(dir.path().join("env6/scenario.txt")).unwrap();
    assert!(echo.contains("seed = 6"), "{echo}");
    let out = cli(
        &[
            "run",
            "--scenario",
            &scenario,
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ],
        Some("abc"),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dump_wire_shows_frames_before_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let out = cli(
        &[
            "--dump-wire",
            "run",
            "--scenario",
            &scenario,
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let frames: Vec<&str> = stdout
        .lines()
        .filter(|l| l.starts_with("> ") || l.starts_with("< "))
        .collect();
    // Five candidate probes, the anchor probe and the final assertion.
    assert_eq!(frames.len(), 14);
    assert!(stdout.contains("runtime"));
}

#[test]
fn sweep_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = cli(
        &[
            "sweep",
            "--out",
            out_dir.to_str().unwrap(),
            "--profile",
            "feitian",
            "--n",
            "5",
            "--trials",
            "1",
            "--sessions",
            "10",
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in [
        "observations.csv",
        "summary.csv",
        "sweep.csv",
        "plotdata_sweep_error.dat",
        "scenario.txt",
    ] {
        assert!(out_dir.join(file).exists(), "{file}");
    }
    let sweep = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 9);
}
