mod common;

use std::path::Path;
use std::process::{Command, Output};

use blockdetail::eval::EvalReport;
use blockdetail::io::load_motion;
use blockdetail::skeleton::SkeletonSpec;
use serde_json::Value;

fn blockdetail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockdetail"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = blockdetail(&["generate", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(blockdetail(&["--help"]).status.code(), Some(0));
}

#[test]
fn failures_report_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockdetail(&["generate", "missing.json", "--out", arg(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1);
    let v: Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(v["error"]["kind"], "io");

    let out = blockdetail(&[
        "bench",
        "--strategy",
        "teleport",
        "--out",
        arg(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(v["error"]["kind"], "validation");
}

#[test]
fn generate_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let blocking = dir.path().join("blocking.json");
    let keys = common::blocking(3).with_uniform_tolerance(1.0).unwrap();
    common::write_blocking(&blocking, &keys);
    let config = dir.path().join("run.toml");
    common::write_config(&config, 200, 50);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let run = blockdetail(&[
            "generate",
            arg(&blocking),
            "--out",
            arg(out),
            "--seed",
            "7",
            "--config",
            arg(&config),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.trace.json")).unwrap(),
        std::fs::read(dir.path().join("b.trace.json")).unwrap()
    );
    let m = load_motion::<f64>(&a, &SkeletonSpec::desk()).unwrap();
    assert_eq!(m.num_frames(), 60);
}

#[test]
fn bench_reports_one_row_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("test");
    let synth = blockdetail(&["synth-data", "--out", arg(&data), "--count", "50", "--seed", "2"]);
    assert!(synth.status.success());
    let config = dir.path().join("run.toml");
    common::write_config(&config, 50, 10);
    let report = dir.path().join("report.json");
    let run = blockdetail(&[
        "bench",
        "--data",
        arg(&data),
        "--strategy",
        "detailing=0.85,hard-impute",
        "--config",
        arg(&config),
        "--out",
        arg(&report),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report = EvalReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.clip_count, 50);
    assert!(report.rows.iter().all(|r| r.failures.is_empty() && r.fid.is_finite()));
    let table = String::from_utf8(run.stdout).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn metrics_of_an_idle_clip_show_no_skating() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("idle");
    assert!(
        blockdetail(&["synth-data", "--out", arg(&data), "--count", "1", "--kind", "idle"])
            .status
            .success()
    );
    let out = blockdetail(&["metrics", arg(&data.join("clip_0000.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["motions"][0]["footskate"].as_f64().unwrap() < 1e-6);
}

#[test]
fn trained_checkpoints_drive_generation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train");
    assert!(
        blockdetail(&["synth-data", "--out", arg(&data), "--count", "100", "--frames", "24"])
            .status
            .success()
    );
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "format_version = 1\n[schedule]\nsteps = 20\n[refinement]\nn = 5\n[training]\nsteps = 3\n[training.net]\nhidden = 16\ndepth = 1\n",
    )
    .unwrap();
    for mode in ["u", "r"] {
        let out = dir.path().join(format!("{mode}.bdnet"));
        let run = blockdetail(&[
            "train",
            "--mode",
            mode,
            "--data",
            arg(&data),
            "--out",
            arg(&out),
            "--config",
            arg(&config),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let skel = SkeletonSpec::desk();
    let gt = blockdetail::synth::synth_motion(blockdetail::synth::MotionKind::Walk, 24, 1).unwrap();
    let spec = blockdetail::eval::BenchmarkSpec {
        clip_length: 24,
        ..Default::default()
    };
    let keys = blockdetail::eval::make_blocking(&gt, &skel, &spec, 1).unwrap();
    let blocking = dir.path().join("blocking.json");
    common::write_blocking(&blocking, &keys);
    let motion = dir.path().join("motion.json");
    let (r, u) = (dir.path().join("r.bdnet"), dir.path().join("u.bdnet"));
    let run = blockdetail(&[
        "generate",
        arg(&blocking),
        "--out",
        arg(&motion),
        "--model",
        arg(&r),
        "--model",
        arg(&u),
        "--config",
        arg(&config),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let trace = std::fs::read_to_string(dir.path().join("motion.trace.json")).unwrap();
    let trace = blockdetail::detailing::RefinementTrace::from_json(&trace).unwrap();
    assert_eq!(trace.events.len(), 4);

    let run = blockdetail(&["generate", arg(&blocking), "--out", arg(&motion), "--model", arg(&r)]);
    assert_eq!(run.status.code(), Some(1));
}
