//! End-to-end subprocess tests of the kmswkg binary: exit codes, artifact
//! layout, and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::tempdir;

fn kmswkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmswkg"))
        .args(args)
        .env_remove("KMSWKG_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn preset_list_names_every_system() {
    let out = kmswkg(&["preset", "list"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for name in ["example-kms", "example-null", "kms-violating", "null-cubic"] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn check_verdicts_map_to_exit_codes() {
    let out = kmswkg(&["check", "example-null"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rec: Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(rec["record"], "check");
    assert_eq!(rec["schema"], "1");
    assert_eq!(rec["null"]["holds"], true);
    assert_eq!(rec["verdict"], "holds");

    let out = kmswkg(&["check", "example-kms"]);
    assert_eq!(code(&out), 0);
    let rec: Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(rec["null"]["holds"], false);
    assert_eq!(rec["verdict"], "holds", "searched certificate must verify");
    assert_eq!(rec["certificate"]["rows"], serde_json::json!([[1.0]]));

    let out = kmswkg(&["check", "kms-violating"]);
    assert_eq!(code(&out), 3, "no certificate exists; search comes up empty");
    let rec: Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(rec["verdict"], "search_absent");
}

#[test]
fn supplied_certificate_that_fails_exits_two() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "[system]\npreset = \"kms-violating\"\n[certificate]\nconstant = [[1.0]]\n",
    )
    .unwrap();
    let out = kmswkg(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let rec: Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(rec["verdict"], "fails");
    assert_eq!(rec["kms"]["holds"], false);
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = kmswkg(&["check", "no-such-system"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("no-such-system"));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[system]\npreset = \"example-null\"\nbogus_key = 1\n").unwrap();
    let out = kmswkg(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("bogus_key"), "{}", stderr(&out));
}

#[test]
fn weight_constraint_violation_names_the_constraint() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "[system]\npreset = \"example-null\"\n[weights]\nrho = 0.1\nkappa = 0.05\n",
    )
    .unwrap();
    let out = kmswkg(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("8 kappa < rho"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_four_but_help_exits_zero() {
    let out = kmswkg(&["definitely-not-a-subcommand"]);
    assert_eq!(code(&out), 4);
    let out = kmswkg(&["--help"]);
    assert_eq!(code(&out), 0);
    let out = kmswkg(&["check"]);
    assert_eq!(code(&out), 4, "check without a target is a usage problem");
}

#[test]
fn bad_thread_settings_are_config_errors() {
    let out = Command::new(env!("CARGO_BIN_EXE_kmswkg"))
        .args(["preset", "list"])
        .env("KMSWKG_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("KMSWKG_THREADS"));
    let out = kmswkg(&["--threads", "0", "preset", "list"]);
    assert_eq!(code(&out), 4);
}

const SMALL_RUN: &str = r#"
[system]
preset = "example-null"

[grid]
mode = "radial"
h = 0.1
dt = 0.04
t_max = 2.0

[data]
support_radius = 1.0
epsilon = 0.2

[[data.components]]
f = { kind = "bump", scale = 1.0, power = 4 }

[[recorders]]
kind = "norms"
times = { from = 0.5, to = 2.0, count = 7 }

[[recorders]]
kind = "snapshot"
times = [2.0]

[analyze]
[[analyze.fits]]
series = "kg_sup"
window = [0.5, 2.0]
"#;

fn write_config(dir: &Path) -> String {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    cfg.to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_the_run_directory() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let out = kmswkg(&["simulate", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    assert!(run.join("config.toml").exists());
    assert!(run.join("snapshot_0000.csv").exists());
    assert!(run.join("snapshot_0000.json").exists());
    let stream = std::fs::read_to_string(run.join("run.ndjson")).unwrap();
    let lines: Vec<Value> =
        stream.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["record"], "run_meta");
    for l in &lines {
        assert_eq!(l["schema"], "1", "every record carries the schema tag");
    }
    let last = lines.last().unwrap();
    assert_eq!(last["record"], "status");
    assert_eq!(last["status"], "completed");
    assert_eq!(last["t_final"], 2.0);
    assert_eq!(
        lines.iter().filter(|l| l["record"] == "norms").count(),
        7,
        "one norms record per sample time"
    );

    let csv = std::fs::read_to_string(run.join("snapshot_0000.csv")).unwrap();
    assert!(csv.starts_with("r,u1,ut1,u2,ut2"), "{}", &csv[..40.min(csv.len())]);
}

#[test]
fn reruns_are_byte_identical_and_the_echo_reproduces_them() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out_dir in [&a, &b] {
        let out = kmswkg(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let run_a = std::fs::read(a.join("run.ndjson")).unwrap();
    let run_b = std::fs::read(b.join("run.ndjson")).unwrap();
    assert_eq!(run_a, run_b, "rerun must reproduce the stream byte for byte");

    // The echoed config is a complete, equivalent description of the run.
    let echo = a.join("config.toml");
    let out = kmswkg(&["simulate", "--config", echo.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run_c = std::fs::read(c.join("run.ndjson")).unwrap();
    assert_eq!(run_a, run_c, "echoed config must reproduce the identical stream");
    let echo_c = std::fs::read_to_string(c.join("config.toml")).unwrap();
    assert_eq!(std::fs::read_to_string(&echo).unwrap(), echo_c, "echo is a fixed point");
}

#[test]
fn simulate_without_output_directory_is_a_config_error() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = kmswkg(&["simulate", "--config", &cfg]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("--out"), "{}", stderr(&out));
}

#[test]
fn scattering_samples_before_the_match_time_are_rejected() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text = format!(
        "{SMALL_RUN}\n[[recorders]]\nkind = \"scattering\"\nt_match = 1.0\ntimes = [0.5, 1.5]\n"
    );
    std::fs::write(&cfg, text).unwrap();
    let out = kmswkg(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("t_match"), "{}", stderr(&out));
}

#[test]
fn analyze_reports_on_a_finished_run() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let out = kmswkg(&["simulate", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let out = kmswkg(&["analyze", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("analysis: PASS"), "{}", stdout(&out));
    let text = std::fs::read_to_string(run.join("analysis.ndjson")).unwrap();
    let fit: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(fit["record"], "fit");
    assert_eq!(fit["series"], "kg_sup");
    assert!(fit["slope"].is_number());
    let last: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["record"], "analysis_summary");
    assert_eq!(last["pass"], true);
}

#[test]
fn analyze_refuses_a_foreign_schema_version() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let out = kmswkg(&["simulate", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let path = run.join("run.ndjson");
    let tampered = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"schema\":\"1\"", "\"schema\":\"99\"");
    std::fs::write(&path, tampered).unwrap();
    let out = kmswkg(&["analyze", run.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("schema version '99'"), "{}", stderr(&out));
}

#[test]
fn profile_with_a_preset_passes_its_oracle() {
    let dir = tempdir().unwrap();
    let out_dir = dir.path().join("prof");
    let out = kmswkg(&[
        "profile",
        "--preset",
        "example-kms",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("profile: PASS"), "{}", stdout(&out));
    let text = std::fs::read_to_string(out_dir.join("profile.ndjson")).unwrap();
    let mut saw_summary = false;
    for line in text.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert_eq!(rec["schema"], "1");
        if rec["record"] == "profile_summary" {
            assert_eq!(rec["pass"], true);
            saw_summary = true;
        }
    }
    assert!(saw_summary);
}
