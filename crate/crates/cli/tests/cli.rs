//! End-to-end tests for the `nstab` binary: exit-code contract, report
//! schemas, CSV formats, and byte-level determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::tempdir;

fn nstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nstab"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout should be JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

/// Small, fast closed-loop configuration used by the smoke tests.
const QUICK: &[&str] = &[
    "--set",
    "t_final=0.5",
    "--set",
    "dt=1e-2",
    "--set",
    "grid_m=64",
];

#[test]
fn design_reports_full_schema_and_succeeds() {
    let dir = tempdir().unwrap();
    let out_path = dir.path().join("design.json");
    let out = nstab(&["design", "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["d"], 2);
    assert_eq!(report["kalman"], true);
    assert_eq!(report["det_chain_agrees"], true);
    assert_eq!(report["gammas"], serde_json::json!([6.0, 7.0]));
    assert_eq!(report["lambda"].as_array().unwrap().len(), 2);
    assert_eq!(report["lambda"][0].as_array().unwrap().len(), 2);
    assert_eq!(report["L"].as_array().unwrap().len(), 2);
    assert_eq!(report["A"].as_array().unwrap().len(), 2);
    assert_eq!(report["C"].as_array().unwrap().len(), 2);
    assert!(report["min_singular_value"].as_f64().unwrap() > 0.0);
    // closed-loop spectrum pins the gains: C = L k_row with k assigning -6, -7
    assert!((report["lambda"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    // the file copy carries the same report
    let on_disk: Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(on_disk, report);
}

#[test]
fn design_fixture_fails_rank_with_exit_2() {
    let out = nstab(&["design", "--fixture"]);
    assert_eq!(code(&out), 2);
    let report = stdout_json(&out);
    assert_eq!(report["kalman"], false);
    assert!(report["A"].is_null());
    assert!(report["C"].is_null());
    assert!(report["min_singular_value"].as_f64().unwrap() < 1e-10);
}

#[test]
fn malformed_config_file_exits_1() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{not json").unwrap();
    let out = nstab(&["design", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn config_file_round_trips_through_simulate() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(
        &path,
        r#"{"alpha":1.0,"c":2.0,"rho":5.0,"tau":0.2,"gammas":null,
            "grid_m":64,"dt":0.01,"t_final":0.5,"y0":"sin-mix","seed":0}"#,
    )
    .unwrap();
    let csv = dir.path().join("t.csv");
    let out = nstab(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn t_final_below_tau_exits_1() {
    let out = nstab(&["simulate", "--set", "t_final=0.1", "--out", "/dev/null"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_set_key_exits_1() {
    let out = nstab(&["simulate", "--set", "bogus=3", "--out", "/dev/null"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn type_mismatch_in_set_exits_1() {
    let out = nstab(&["simulate", "--set", "grid_m=hello", "--out", "/dev/null"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn bad_flag_exits_1_and_help_exits_0() {
    assert_eq!(code(&nstab(&["simulate", "--no-such-flag"])), 1);
    assert_eq!(code(&nstab(&["--help"])), 0);
}

#[test]
fn simulate_writes_csv_with_contracted_header() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let mut args = vec!["simulate", "--out", csv.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    let out = nstab(&args);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert!(report["decay_rate"].as_f64().unwrap().is_finite());
    assert!(report["norm_ratio"].as_f64().unwrap() > 0.0);

    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,norm_y,u,Y0,Y1");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 51, "one row per recorded step plus t = 0");
    for row in rows {
        assert_eq!(row.split(',').count(), 5);
        for field in row.split(',') {
            field.parse::<f64>().expect("numeric field");
        }
    }
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let mut args = vec!["simulate", "--out", path.to_str().unwrap()];
        args.extend_from_slice(QUICK);
        assert_eq!(code(&nstab(&args)), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn zero_delay_predictor_matches_undelayed_bytes() {
    let dir = tempdir().unwrap();
    let marched = dir.path().join("marched.csv");
    let direct = dir.path().join("direct.csv");
    let base = |out: &Path, extra: &[&str]| {
        let mut args = vec!["simulate", "--set", "tau=0", "--out", out.to_str().unwrap()];
        args.extend_from_slice(QUICK);
        args.extend_from_slice(extra);
        assert_eq!(code(&nstab(&args)), 0);
    };
    base(&marched, &[]);
    base(&direct, &["--undelayed"]);
    assert_eq!(fs::read(&marched).unwrap(), fs::read(&direct).unwrap());
}

#[test]
fn undelayed_rejects_positive_tau() {
    let out = nstab(&["simulate", "--undelayed", "--out", "/dev/null"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn open_loop_blow_up_exits_3() {
    let out = nstab(&[
        "simulate",
        "--open-loop",
        "--set",
        "tau=0",
        "--set",
        "grid_m=50",
        "--set",
        "dt=5e-3",
        "--set",
        "t_final=15",
        "--set",
        "y0=sin1",
        "--out",
        "/dev/null",
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("blow-up"));
}

#[test]
fn modal_path_runs_and_matches_header() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("modal.csv");
    let mut args = vec!["simulate", "--path", "modal", "--out", csv.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    assert_eq!(code(&nstab(&args)), 0);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,norm_y,u,Y0,Y1\n"));
}

#[test]
fn profiles_out_writes_space_time_table() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let profs = dir.path().join("profiles.csv");
    let mut args = vec![
        "simulate",
        "--out",
        csv.to_str().unwrap(),
        "--profiles-out",
        profs.to_str().unwrap(),
    ];
    args.extend_from_slice(QUICK);
    assert_eq!(code(&nstab(&args)), 0);
    let text = fs::read_to_string(&profs).unwrap();
    assert!(text.starts_with("t,x,y\n"));
    assert!(text.lines().count() > 10);
}

#[test]
fn verify_spectral_reports_and_succeeds() {
    let out = nstab(&["verify", "spectral"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let reports = stdout_json(&out);
    let suites = reports.as_array().unwrap();
    assert_eq!(suites.len(), 1);
    assert_eq!(suites[0]["suite"], "spectral");
    assert_eq!(suites[0]["passed"], true);
    assert!(!suites[0]["checks"].as_array().unwrap().is_empty());
}

#[test]
fn verify_design_reports_and_succeeds() {
    let out = nstab(&["verify", "design"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let reports = stdout_json(&out);
    assert_eq!(reports[0]["suite"], "design");
    assert_eq!(reports[0]["passed"], true);
}

#[test]
fn sweep_writes_one_file_per_value() {
    let dir = tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--param",
        "rho",
        "--values",
        "4.0,5.0",
        "--jobs",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ];
    args.extend_from_slice(QUICK);
    let out = nstab(&args);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let entries = stdout_json(&out);
    let entries = entries.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    for (entry, value) in entries.iter().zip([4.0, 5.0]) {
        assert_eq!(entry["param"], "rho");
        assert_eq!(entry["value"].as_f64().unwrap(), value);
        assert!(entry["decay_rate"].as_f64().unwrap().is_finite());
    }
    assert!(dir.path().join("rho-4.0.csv").exists());
    assert!(dir.path().join("rho-5.0.csv").exists());
    let text = fs::read_to_string(dir.path().join("rho-4.0.csv")).unwrap();
    assert!(text.starts_with("t,norm_y,u,"));
}

#[test]
fn sweep_reports_per_value_errors_and_exit_code() {
    let dir = tempdir().unwrap();
    // dt = 0.3 does not divide t_final = 0.5: that value fails, 1e-2 succeeds
    let mut args = vec![
        "sweep",
        "--param",
        "dt",
        "--values",
        "1e-2,0.3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ];
    args.extend_from_slice(QUICK);
    let out = nstab(&args);
    assert_eq!(code(&out), 1);
    let entries = stdout_json(&out);
    let entries = entries.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries[0]["error"].is_null());
    assert!(entries[1]["error"].as_str().unwrap().contains("dt"));
    assert!(dir.path().join("dt-1e-2.csv").exists());
    assert!(!dir.path().join("dt-0.3.csv").exists());
}

#[test]
fn dump_spectrum_emits_contracted_table() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("spectrum.csv");
    let out = nstab(&["dump-spectrum", "--count", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,beta_k,lambda_2k,lambda_2k+1,C_k2,l_2k,l_2k+1");
    assert_eq!(lines.len(), 4);
    let mut last_beta = 0.0_f64;
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.parse::<f64>().unwrap())
            .collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[0] as usize, i);
        // roots interlace: beta_k lies in (k + 1/2, k + 1)
        assert!(fields[1] > i as f64 + 0.5 && fields[1] < i as f64 + 1.0);
        assert!(fields[1] > last_beta);
        last_beta = fields[1];
        // eigenvalues within a pair are ordered: lambda_2k > lambda_2k+1
        assert!(fields[2] > fields[3]);
    }
    // without --out the same table goes to stdout
    let out = nstab(&["dump-spectrum", "--count", "3"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout), text);
}

#[test]
fn dump_spectrum_rejects_zero_count() {
    assert_eq!(code(&nstab(&["dump-spectrum", "--count", "0"])), 1);
}
