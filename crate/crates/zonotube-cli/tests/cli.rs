//! Binary-level checks: artifact determinism, per-phase exit codes,
//! replicate fan-out, the plot bundle, and the bounds table.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use zonotube_cli::plotdata::validate_bundle;

fn zonotube(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zonotube"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const ARTIFACTS: [&str; 5] = [
    "dataset.csv",
    "m_data.json",
    "gain_certificate.json",
    "tube_bounds.csv",
    "trajectory.csv",
];

#[test]
fn preset_run_is_deterministic_and_feasible() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&dir_a, &dir_b] {
        let out = zonotube(&[
            "run",
            "--preset",
            "double_integrator",
            "--seed",
            "0",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ARTIFACTS {
        assert_eq!(read(&dir_a, name), read(&dir_b, name), "{name} differs between runs");
    }

    let summary: serde_json::Value =
        serde_json::from_slice(&read(&dir_a, "summary.json")).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert!(summary["phases"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p["ok"] == true && p["wall_ms"].is_f64()));
    let rep = &summary["closed_loop"][0];
    assert_eq!(rep["status"], "completed");
    assert_eq!(rep["all_feasible"], true);
    assert_eq!(rep["steps_recorded"], 12);
    assert_eq!(rep["objective_per_step"].as_array().unwrap().len(), 12);
    assert_eq!(rep["norm_decreased"], true);
    assert!(summary.get("error").is_none());
}

#[test]
fn replicates_share_the_model_set_but_not_the_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("rep");
    let config = serde_json::json!({
        "schema_version": 1,
        "plant": {
            "a": [[1.0, 1.0], [0.0, 1.0]],
            "b": [[0.5], [1.0]],
            "x0": [-5.0, -2.0],
            "noise": {"center": [0.0, 0.0], "generators": [[0.1, 0.05], [0.05, 0.1]]}
        },
        "data": {"t_samples": 100},
        "gain": {"mode": "verify", "k": [[-0.561, -1.385]], "epsilon": 0.01, "delta": 0.00001},
        "ocp": {
            "horizon": 2,
            "total_steps": 12,
            "state_constraint": {"center": [-4.0, 0.0], "generators": [[4.0, 0.0], [0.0, 2.0]]},
            "input_constraint": {"center": [0.0], "generators": [[1.0]]},
            "q": [[1.0, 0.0], [0.0, 1.0]],
            "c_u": 0.01
        },
        "master_seed": 0,
        "replicates": 3,
        "out_dir": out_dir
    });
    let cfg_path = tmp.path().join("rep.json");
    fs::write(&cfg_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    let out = zonotube(&["run", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let files = [
        read(&out_dir, "trajectory.csv"),
        read(&out_dir, "trajectory_r1.csv"),
        read(&out_dir, "trajectory_r2.csv"),
    ];
    assert!(files[0] != files[1] && files[0] != files[2] && files[1] != files[2]);

    let summary: serde_json::Value =
        serde_json::from_slice(&read(&out_dir, "summary.json")).unwrap();
    assert_eq!(summary["closed_loop"].as_array().unwrap().len(), 3);
}

#[test]
fn phase_failures_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    // Validation failure (ε = 0) → exit 2, before any compute.
    let base = serde_json::json!({
        "schema_version": 1,
        "plant": {
            "a": [[1.0, 1.0], [0.0, 1.0]],
            "b": [[0.5], [1.0]],
            "x0": [-5.0, -2.0],
            "noise": {"center": [0.0, 0.0], "generators": [[0.1, 0.05], [0.05, 0.1]]}
        },
        "data": {"t_samples": 100},
        "gain": {"mode": "verify", "k": [[-0.561, -1.385]], "epsilon": 0.0, "delta": 0.00001},
        "ocp": {
            "horizon": 2,
            "total_steps": 12,
            "state_constraint": {"center": [-4.0, 0.0], "generators": [[4.0, 0.0], [0.0, 2.0]]},
            "input_constraint": {"center": [0.0], "generators": [[1.0]]},
            "q": [[1.0, 0.0], [0.0, 1.0]],
            "c_u": 0.01
        },
        "master_seed": 0,
        "out_dir": tmp.path().join("eps0")
    });
    let p = tmp.path().join("eps0.json");
    fs::write(&p, serde_json::to_vec(&base).unwrap()).unwrap();
    let out = zonotube(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gain.epsilon"), "{stderr}");
    assert!(!tmp.path().join("eps0").exists(), "no artifacts before validation");

    // Destabilizing gain → rejected at the gain phase → exit 5 plus a
    // machine-readable error record in summary.json.
    let mut rejected = base.clone();
    rejected["gain"]["epsilon"] = 0.01.into();
    rejected["gain"]["k"] = serde_json::json!([[0.0, 0.0]]);
    rejected["out_dir"] = serde_json::json!(tmp.path().join("rej"));
    let p = tmp.path().join("rej.json");
    fs::write(&p, serde_json::to_vec(&rejected).unwrap()).unwrap();
    let out = zonotube(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    let summary: serde_json::Value =
        serde_json::from_slice(&read(&tmp.path().join("rej"), "summary.json")).unwrap();
    assert_eq!(summary["error"]["phase"], "gain");
    assert_eq!(summary["error"]["exit_code"], 5);
    assert!(summary["error"]["message"].as_str().unwrap().contains("spectral radius"));
    // Earlier phases still produced their artifacts.
    assert!(tmp.path().join("rej").join("dataset.csv").exists());
    assert!(tmp.path().join("rej").join("m_data.json").exists());

    // Plot data without a prior run → exit 9, file-level error.
    let out = zonotube(&[
        "plotdata",
        "--preset",
        "double_integrator",
        "--out",
        tmp.path().join("empty").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(9));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
}

#[test]
fn plotdata_bundle_round_trips_with_polygon_and_rectangles() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = zonotube(&[
        "run",
        "--preset",
        "double_integrator",
        "--seed",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = zonotube(&[
        "plotdata",
        "--preset",
        "double_integrator",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let bundle: serde_json::Value = serde_json::from_slice(&read(&dir, "plot_data.json")).unwrap();
    validate_bundle(&bundle).unwrap();
    let polygon = bundle["state_polygon"].as_array().unwrap();
    assert_eq!(polygon.len(), 4);
    for corner in [[-8.0, -2.0], [0.0, -2.0], [0.0, 2.0], [-8.0, 2.0]] {
        assert!(
            polygon.iter().any(|p| p[0] == corner[0] && p[1] == corner[1]),
            "missing corner {corner:?}"
        );
    }
    assert_eq!(bundle["trajectory"].as_array().unwrap().len(), 12);
    assert_eq!(bundle["tube_rectangles"].as_array().unwrap().len(), 12);
}

#[test]
fn enlarge_zx_scales_only_the_generators() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("wide");
    let out = zonotube(&[
        "run",
        "--preset",
        "double_integrator",
        "--seed",
        "0",
        "--enlarge-zx",
        "25",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Wider state set ⇒ looser tightening ⇒ the run still completes.
    let summary: serde_json::Value = serde_json::from_slice(&read(&dir, "summary.json")).unwrap();
    assert_eq!(summary["closed_loop"][0]["status"], "completed");
}

#[test]
fn bounds_stdout_parses_and_matches_the_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = zonotube(&[
        "bounds",
        "--n", "2", "--m", "1", "--t", "100", "--gamma-w", "2",
        "--horizons", "1,2,3",
        "--out", tmp.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let file = String::from_utf8(read(tmp.path(), "bound_report.csv")).unwrap();
    assert_eq!(stdout, file);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "1,5073927284,10");
    assert_eq!(lines[2], "2,5073927296,10");

    let out = zonotube(&["bounds", "--n", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phase_subcommands_write_their_own_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("phased");
    let d = dir.to_str().unwrap();
    for (args, artifact) in [
        (vec!["collect"], "dataset.csv"),
        (vec!["mdata"], "m_data.json"),
        (vec!["gain", "verify"], "gain_certificate.json"),
        (vec!["tube"], "tube_bounds.csv"),
    ] {
        let mut full = args.clone();
        full.extend(["--preset", "double_integrator", "--seed", "0", "--out", d]);
        let out = zonotube(&full);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(dir.join(artifact).exists(), "{artifact} missing");
    }
    // Phase outputs are the same bytes the full pipeline writes.
    let full_dir = tmp.path().join("full");
    let out = zonotube(&[
        "run",
        "--preset",
        "double_integrator",
        "--seed",
        "0",
        "--out",
        full_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for name in ["dataset.csv", "m_data.json", "gain_certificate.json", "tube_bounds.csv"] {
        assert_eq!(read(&dir, name), read(&full_dir, name), "{name} differs from pipeline");
    }
}
