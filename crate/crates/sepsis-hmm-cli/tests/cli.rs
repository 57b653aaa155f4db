//! CLI behavior: exit codes, config handling, and the end-to-end pipeline.

use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sepsis-hmm")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("spawn")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["simulate", "--does-not-exist", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_maps_to_io_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit",
        "--episodes",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--out",
        dir.path().join("post.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("category=io"), "stderr: {stderr}");
}

#[test]
fn empty_episode_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let episodes = dir.path().join("empty.csv");
    std::fs::write(&episodes, "").unwrap();
    let out = run(&[
        "fit",
        "--episodes",
        episodes.to_str().unwrap(),
        "--out",
        dir.path().join("post.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("category=parse"), "stderr: {stderr}");
}

#[test]
fn infeasible_simulation_reports_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--n-patients",
        "10",
        "--cov-mean",
        "-4,-4,-4",
        "--cov-sd",
        "0.01,0.01,0.01",
        "--seed",
        "1",
        "--out",
        dir.path().join("eps.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(6));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("category=infeasible"), "stderr: {stderr}");
}

#[test]
fn full_pipeline_produces_named_divergences() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let episodes = d.join("episodes.csv");
    let truth = d.join("truth.csv");
    let posterior = d.join("posterior.csv");
    let params = d.join("map.toml");
    let traj = d.join("trajectories.csv");
    let flags = d.join("flags.csv");
    let report_dir = d.join("analysis");

    run_ok(&[
        "simulate",
        "--n-patients",
        "80",
        "--max-intervals",
        "50",
        "--seed",
        "21",
        "--out",
        episodes.to_str().unwrap(),
        "--truth-out",
        truth.to_str().unwrap(),
    ]);
    run_ok(&[
        "fit",
        "--episodes",
        episodes.to_str().unwrap(),
        "--out",
        posterior.to_str().unwrap(),
        "--sweeps",
        "400",
        "--keep",
        "100",
        "--adapt-burnin",
        "100",
        "--seed",
        "2",
        "--no-timestamp",
    ]);
    run_ok(&[
        "map-estimate",
        "--posterior",
        posterior.to_str().unwrap(),
        "--out",
        params.to_str().unwrap(),
    ]);
    run_ok(&[
        "decode",
        "--episodes",
        episodes.to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
        "--out",
        traj.to_str().unwrap(),
        "--sweeps",
        "300",
        "--keep",
        "100",
        "--seed",
        "5",
    ]);
    run_ok(&[
        "criteria",
        "--episodes",
        episodes.to_str().unwrap(),
        "--out",
        flags.to_str().unwrap(),
    ]);
    let stdout = run_ok(&[
        "analyze",
        "--trajectories",
        traj.to_str().unwrap(),
        "--out-dir",
        report_dir.to_str().unwrap(),
        "--bins",
        "10",
    ]);
    assert!(stdout.contains("jsd"), "stdout: {stdout}");

    let report = std::fs::read_to_string(report_dir.join("jsd_report.toml")).unwrap();
    let parsed: toml::Value = report.parse().unwrap();
    let jsd = parsed.get("jsd").expect("jsd table");
    for key in ["sepsis1", "qsofa", "s3"] {
        assert!(jsd.get(key).and_then(|v| v.as_float()).is_some(), "missing {key}");
    }
    for file in [
        "metrics.csv",
        "histograms.csv",
        "overlaps.csv",
        "overlap_summary.csv",
        "monotonicity.csv",
    ] {
        assert!(report_dir.join(file).exists(), "missing {file}");
    }
    // Flags file sanity: header plus one row per interval.
    let flags_text = std::fs::read_to_string(&flags).unwrap();
    assert!(flags_text.starts_with("episode_id,interval_index,sirs_hr"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("config.toml");
    std::fs::write(
        &cfg,
        "[simulate]\nn_patients = 9\nmax_intervals = 12\nseed = 3\n",
    )
    .unwrap();

    let from_config = d.join("a.csv");
    run_ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "simulate",
        "--out",
        from_config.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&from_config).unwrap();
    let ids: std::collections::HashSet<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 9);

    // A flag overrides the file value.
    let overridden = d.join("b.csv");
    run_ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "simulate",
        "--n-patients",
        "4",
        "--out",
        overridden.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&overridden).unwrap();
    let ids: std::collections::HashSet<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 4);

    // The environment variable is the fallback config path.
    let from_env = d.join("c.csv");
    let out = Command::new(bin())
        .env("SEPSIS_HMM_CONFIG", cfg.to_str().unwrap())
        .args(["simulate", "--out", from_env.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&from_env).unwrap(), std::fs::read(&from_config).unwrap());
}

#[test]
fn bad_config_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, "[simulate]\nunknown_key = 1\n").unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "simulate",
        "--out",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}
