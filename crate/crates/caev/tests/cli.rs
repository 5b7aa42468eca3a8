//! Black-box tests of the `caev` binary: command surface, output files, the
//! overwrite guard, and the exit-code contract (0 ok, 2 validation, 3
//! runtime).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_caev");

fn caev(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary must spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SHORT_RUN: &str = "\
[sim]
dt = 0.01
duration = 2.0
seed = 0

[leader]
constant = 15.0
";

#[test]
fn validate_accepts_bundled_scenarios() {
    for name in [
        "nominal.toml",
        "attack-undefended.toml",
        "attack-defended.toml",
        "train.toml",
        "sweep.toml",
    ] {
        let out = caev(&["validate", &scenario(name)]);
        assert_eq!(code(&out), 0, "{name}: {}", stderr(&out));
    }
}

#[test]
fn validate_rejects_bad_values_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    write(&bad, "[sim]\ndt = -0.5\nduration = 10.0\n");
    let out = caev(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sim.dt"), "stderr: {}", stderr(&out));
}

#[test]
fn validate_rejects_unknown_fields_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("typo.toml");
    write(&bad, "[sim]\ndtt = 0.01\n");
    assert_eq!(code(&caev(&["validate", bad.to_str().unwrap()])), 2);
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&caev(&["validate", missing.to_str().unwrap()])), 2);
}

#[test]
fn run_writes_outputs_and_guards_overwrites() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.toml");
    write(&sc, SHORT_RUN);
    let outdir = dir.path().join("out");
    let args = ["run", sc.to_str().unwrap(), "--out", outdir.to_str().unwrap()];

    let out = caev(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(outdir.join("trace.csv").exists());
    assert!(outdir.join("summary.json").exists());

    // second run without --force must refuse with a validation error
    let again = caev(&args);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));

    let forced = caev(&[&args[..], &["--force"]].concat());
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
}

#[test]
fn run_with_missing_policy_file_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.toml");
    write(
        &sc,
        &format!(
            "{SHORT_RUN}\n[defender]\nenabled = true\npolicy = \"does-not-exist.json\"\n"
        ),
    );
    let out = caev(&[
        "run",
        sc.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn train_writes_checkpoint_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("t.toml");
    write(
        &sc,
        "[sim]\ndt = 0.01\nseed = 3\n\n[training]\nepisodes = 4\nsteps_per_episode = 10\n",
    );
    let ckpt = dir.path().join("p.json");
    let out = caev(&[
        "train",
        sc.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(ckpt.exists());
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(curve.starts_with("episode,return"));
    assert_eq!(curve.lines().count(), 5); // header + one line per episode

    // --episodes overrides the scenario's count
    let out = caev(&[
        "train",
        sc.to_str().unwrap(),
        "--episodes",
        "2",
        "--out",
        ckpt.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
}

#[test]
fn sweep_writes_report_and_rejects_unknown_axis() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.toml");
    write(&sc, SHORT_RUN);
    let outdir = dir.path().join("sw");
    let out = caev(&[
        "sweep",
        sc.to_str().unwrap(),
        "--axis",
        "delta_a_max",
        "--values",
        "1,2",
        "--out",
        outdir.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(outdir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3); // header + two magnitudes
    assert!(outdir.join("sweep.json").exists());

    let bad = caev(&[
        "sweep",
        sc.to_str().unwrap(),
        "--axis",
        "delta_q_max",
        "--values",
        "1",
        "--out",
        outdir.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("axis"));
}

#[test]
fn report_summarizes_run_output_and_fails_on_empty_dir() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.toml");
    write(&sc, SHORT_RUN);
    let outdir = dir.path().join("out");
    let run = caev(&["run", sc.to_str().unwrap(), "--out", outdir.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));

    let rep = caev(&["report", outdir.to_str().unwrap()]);
    assert_eq!(code(&rep), 0, "{}", stderr(&rep));
    for f in ["vehicle.csv", "battery.csv", "residuals.csv", "agent.csv", "summary.txt"] {
        assert!(outdir.join(f).exists(), "{f} missing");
    }

    // a directory with no recognized outputs is a runtime failure
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let rep = caev(&["report", empty.to_str().unwrap()]);
    assert_eq!(code(&rep), 3, "{}", stderr(&rep));
}
