//! Process-level tests of the command-line interface: pipeline wiring,
//! exit codes, determinism, and artifact round trips.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_etc-toolkit"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/robot_arm.spec")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("etc_toolkit_test_{name}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn etc-toolkit");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn full_pipeline_and_determinism() {
    let dir = tmp_dir("pipeline");
    let spec = fixture();

    run_ok(bin().args(["synth", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]));
    assert!(dir.join("gains.csv").exists());
    assert!(dir.join("certificate.csv").exists());
    assert!(dir.join("run_manifest.txt").exists());

    run_ok(bin().args([
        "trigger",
        spec.to_str().unwrap(),
        "--gains",
        dir.join("gains.csv").to_str().unwrap(),
        "--recompute",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    assert!(dir.join("trigger.csv").exists());
    // --recompute rewrites the certificate alongside the trigger
    assert!(dir.join("certificate.csv").exists());

    let sim = |out: &Path| {
        run_ok(bin().args([
            "simulate",
            spec.to_str().unwrap(),
            "--gains",
            dir.join("gains.csv").to_str().unwrap(),
            "--cert",
            dir.join("certificate.csv").to_str().unwrap(),
            "--trigger",
            dir.join("trigger.csv").to_str().unwrap(),
            "--config",
            "c",
            "--horizon",
            "3",
            "--seed",
            "7",
            "--out-dir",
            out.to_str().unwrap(),
        ]));
    };
    let run1 = dir.join("run1");
    let run2 = dir.join("run2");
    sim(&run1);
    sim(&run2);
    for f in ["trace.csv", "events.csv", "report.txt", "report.csv"] {
        assert!(run1.join(f).exists(), "{f} missing");
    }
    // fixed seed implies bit-identical traces
    let t1 = fs::read(run1.join("trace.csv")).unwrap();
    let t2 = fs::read(run2.join("trace.csv")).unwrap();
    assert_eq!(t1, t2, "same-seed traces must be bit-identical");

    // verify audits the artifacts it just produced
    let out = run_ok(bin().args([
        "verify",
        spec.to_str().unwrap(),
        "--trace",
        run1.join("trace.csv").to_str().unwrap(),
        "--events",
        run1.join("events.csv").to_str().unwrap(),
        "--gains",
        dir.join("gains.csv").to_str().unwrap(),
        "--cert",
        dir.join("certificate.csv").to_str().unwrap(),
        "--trigger",
        dir.join("trigger.csv").to_str().unwrap(),
        "--out-dir",
        run1.to_str().unwrap(),
    ]));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("lyapunov decrease"), "{report}");
    assert!(!report.contains("FAIL"), "verification reported failures:\n{report}");

    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn recompute_equals_separate_recertification() {
    let dir = tmp_dir("recompute_eq");
    let spec = fixture();

    // path 1: synth --recertify, then trigger with the written certificate
    let p1 = dir.join("p1");
    run_ok(bin().args([
        "synth",
        spec.to_str().unwrap(),
        "--recertify",
        "--out-dir",
        p1.to_str().unwrap(),
    ]));
    run_ok(bin().args([
        "trigger",
        spec.to_str().unwrap(),
        "--gains",
        p1.join("gains.csv").to_str().unwrap(),
        "--cert",
        p1.join("certificate.csv").to_str().unwrap(),
        "--out-dir",
        p1.to_str().unwrap(),
    ]));

    // path 2: synth (composite), then trigger --recompute
    let p2 = dir.join("p2");
    run_ok(bin().args([
        "synth",
        spec.to_str().unwrap(),
        "--out-dir",
        p2.to_str().unwrap(),
    ]));
    run_ok(bin().args([
        "trigger",
        spec.to_str().unwrap(),
        "--gains",
        p2.join("gains.csv").to_str().unwrap(),
        "--recompute",
        "--out-dir",
        p2.to_str().unwrap(),
    ]));

    let t1 = fs::read(p1.join("trigger.csv")).unwrap();
    let t2 = fs::read(p2.join("trigger.csv")).unwrap();
    assert_eq!(t1, t2, "the two recertification paths must agree bit-for-bit");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn parse_error_exits_one_and_names_the_matrix() {
    let dir = tmp_dir("parse_err");
    let bad = fs::read_to_string(fixture()).unwrap().replace("B = 0 1", "B = 0 1 2");
    let bad_path = dir.join("bad.spec");
    fs::write(&bad_path, bad).unwrap();
    let out = bin()
        .args(["synth", bad_path.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('B'), "stderr should name the offending matrix: {err}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn infeasible_synthesis_exits_two() {
    let dir = tmp_dir("infeasible");
    let bad = fs::read_to_string(fixture())
        .unwrap()
        .replace("A = 0 1  0 0", "A = 1 0  0 1")
        .replace("B = 0 1", "B = 0 0");
    let bad_path = dir.join("uncontrollable.spec");
    fs::write(&bad_path, bad).unwrap();
    let out = bin()
        .args(["synth", bad_path.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("residual"), "infeasibility report should carry residuals: {err}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn continuous_configuration_ignores_trigger_with_warning() {
    let dir = tmp_dir("config_a");
    let spec = fixture();
    run_ok(bin().args(["synth", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]));
    run_ok(bin().args([
        "trigger",
        spec.to_str().unwrap(),
        "--gains",
        dir.join("gains.csv").to_str().unwrap(),
        "--recompute",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    let out = run_ok(bin().args([
        "simulate",
        spec.to_str().unwrap(),
        "--gains",
        dir.join("gains.csv").to_str().unwrap(),
        "--cert",
        dir.join("certificate.csv").to_str().unwrap(),
        "--trigger",
        dir.join("trigger.csv").to_str().unwrap(),
        "--config",
        "a",
        "--horizon",
        "1",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ignores the trigger"), "expected a warning, got: {err}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn dual_trigger_requires_d_zero() {
    let dir = tmp_dir("d_nonzero");
    let with_d = fs::read_to_string(fixture())
        .unwrap()
        .replace("E = 0 -1", "E = 0 -1\nD = 0.5");
    let path = dir.join("with_d.spec");
    fs::write(&path, with_d).unwrap();
    run_ok(bin().args(["synth", path.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]));
    let out = bin()
        .args([
            "trigger",
            path.to_str().unwrap(),
            "--gains",
            dir.join("gains.csv").to_str().unwrap(),
            "--recompute",
            "--config",
            "c",
            "--out-dir",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("D = 0"));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn sdpa_export_reparses() {
    let dir = tmp_dir("sdpa");
    let spec = fixture();
    run_ok(bin().args([
        "export-sdpa",
        spec.to_str().unwrap(),
        "--which",
        "thm1-obs",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    let text = fs::read_to_string(dir.join("thm1-obs.dat-s")).unwrap();
    let parsed = etc_core::lmi::sdpa::parse_sdpa(&text).unwrap();
    assert!(parsed.m_dim > 0);
    assert_eq!(etc_core::lmi::sdpa::write_sdpa(&parsed), text, "export must re-parse identically");

    // the recertification export needs gains
    run_ok(bin().args(["synth", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]));
    run_ok(bin().args([
        "export-sdpa",
        spec.to_str().unwrap(),
        "--which",
        "prop1",
        "--gains",
        dir.join("gains.csv").to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    assert!(dir.join("prop1.dat-s").exists());
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn report_from_event_log() {
    let dir = tmp_dir("report");
    let events = "channel,k,t_k,gap\nu,0,0,0\nu,1,1,1\nu,2,2,1\ny,0,0,0\ny,1,2.5,2.5\n";
    let path = dir.join("events.csv");
    fs::write(&path, events).unwrap();
    let out = run_ok(bin().args([
        "report",
        "--events",
        path.to_str().unwrap(),
        "--windows",
        "0 3",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    let txt = String::from_utf8_lossy(&out.stdout);
    assert!(txt.contains("controller ETM"));
    assert!(txt.contains("output ETM"));
    assert!(dir.join("report.csv").exists());
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn anti_triangular_mode_pipeline_on_monotone_plant() {
    let dir = tmp_dir("thm2");
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/monotone_arm.spec");
    run_ok(bin().args(["synth", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]));
    // simulate the continuous loop from the spec's initial conditions and
    // confirm it settles (the spec sets omega0 = 0)
    let out = run_ok(bin().args([
        "simulate",
        spec.to_str().unwrap(),
        "--gains",
        dir.join("gains.csv").to_str().unwrap(),
        "--cert",
        dir.join("certificate.csv").to_str().unwrap(),
        "--config",
        "a",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    drop(out);
    let verify = run_ok(bin().args([
        "verify",
        spec.to_str().unwrap(),
        "--trace",
        dir.join("trace.csv").to_str().unwrap(),
        "--gains",
        dir.join("gains.csv").to_str().unwrap(),
        "--cert",
        dir.join("certificate.csv").to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    let report = String::from_utf8_lossy(&verify.stdout);
    // terminal ball from the report's ultimate-bound line
    let bound_line = report
        .lines()
        .find(|l| l.starts_with("ultimate bound"))
        .expect("report has a bound line");
    let bx: f64 = bound_line
        .split("|x| <= ")
        .nth(1)
        .and_then(|s| s.split(',').next())
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(bx < 5e-2, "monotone plant should settle, tail |x| = {bx}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn batch_mode_writes_per_seed_artifacts() {
    let dir = tmp_dir("batch");
    let spec = fixture();
    run_ok(bin().args(["synth", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]));
    run_ok(bin().args([
        "trigger",
        spec.to_str().unwrap(),
        "--gains",
        dir.join("gains.csv").to_str().unwrap(),
        "--recompute",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    run_ok(bin()
        .env("ETC_TOOLKIT_THREADS", "2")
        .args([
            "simulate",
            spec.to_str().unwrap(),
            "--gains",
            dir.join("gains.csv").to_str().unwrap(),
            "--cert",
            dir.join("certificate.csv").to_str().unwrap(),
            "--trigger",
            dir.join("trigger.csv").to_str().unwrap(),
            "--config",
            "c",
            "--horizon",
            "2",
            "--seed",
            "40",
            "--batch",
            "3",
            "--decimate",
            "50",
            "--out-dir",
            dir.to_str().unwrap(),
        ]));
    for s in 40..43 {
        assert!(dir.join(format!("trace_s{s}.csv")).exists());
        assert!(dir.join(format!("events_s{s}.csv")).exists());
        assert!(dir.join(format!("report_s{s}.txt")).exists());
    }
    let _ = fs::remove_dir_all(&dir);
}
