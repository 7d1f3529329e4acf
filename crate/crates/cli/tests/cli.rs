//! Command-level tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn pacelaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacelaw"))
        .args(args)
        .output()
        .expect("binary must run")
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn full_pipeline_via_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let ing = dir.path().join("ing");
    let prof = dir.path().join("prof");
    let fit = dir.path().join("fit");

    let out = pacelaw(&[
        "simulate", "--out", &path(&sim), "--runners", "6", "--periods", "2",
        "--sessions", "3:5", "--seed", "5", "--noise-sd", "0.02",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["gps.csv", "lab.csv", "field_tests.csv", "periods.csv", "truth.json", "manifest.json"] {
        assert!(sim.join(name).exists(), "missing {name}");
    }

    let out = pacelaw(&["ingest", "--input", &path(&sim.join("gps.csv")), "--out", &path(&ing)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ing.join("sessions.jsonl").exists());

    let out = pacelaw(&[
        "profile", "--sessions", &path(&ing.join("sessions.jsonl")),
        "--periods", &path(&sim.join("periods.csv")), "--out", &path(&prof),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["profiles.csv", "period_curves.csv", "periods.json", "dropped.csv"] {
        assert!(prof.join(name).exists(), "missing {name}");
    }

    let out = pacelaw(&[
        "fit",
        "--field-tests", &path(&sim.join("field_tests.csv")),
        "--lab", &path(&sim.join("lab.csv")),
        "--periods-json", &path(&prof.join("periods.json")),
        "--out", &path(&fit),
        "--resolutions", "5,10",
        "--lambda2-grid", "0,1",
        "--fractions", "0.5,1.0",
        "--folds", "5",
        "--repeats", "2",
        "--test-runners", "2",
        "--seed", "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "report.json", "equation.json", "equation.txt", "coefficients.csv",
        "test_errors.csv", "cv_surfaces.csv", "solution_path.csv", "manifest.json",
    ] {
        assert!(fit.join(name).exists(), "missing {name}");
    }

    // Re-running with the same inputs and seed reproduces the report
    // byte for byte.
    let fit2 = dir.path().join("fit2");
    let out = pacelaw(&[
        "fit",
        "--field-tests", &path(&sim.join("field_tests.csv")),
        "--lab", &path(&sim.join("lab.csv")),
        "--periods-json", &path(&prof.join("periods.json")),
        "--out", &path(&fit2),
        "--resolutions", "5,10",
        "--lambda2-grid", "0,1",
        "--fractions", "0.5,1.0",
        "--folds", "5",
        "--repeats", "2",
        "--test-runners", "2",
        "--seed", "5",
    ]);
    assert!(out.status.success());
    let a = std::fs::read(fit.join("report.json")).unwrap();
    let b = std::fs::read(fit2.join("report.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn schema_violations_exit_nonzero_with_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "runner_id,timestamp_s,cumulative_distance_m\nR01,0,0\nR01,10,-3\n",
    )
    .unwrap();
    let out = pacelaw(&["ingest", "--input", &path(&bad), "--out", &path(&dir.path().join("out"))]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr was: {stderr}");
}

#[test]
fn predict_uses_equation_json_and_validates_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let eq_path = dir.path().join("equation.json");
    std::fs::write(
        &eq_path,
        r#"{
  "resolution": 95,
  "tau": 0.1310,
  "alpha": 1.0568,
  "scalars": [
    {"name": "height_m", "coefficient": 0.1007},
    {"name": "economy_l_kg_km", "coefficient": 0.1657},
    {"name": "obla_kmh", "coefficient": -0.0159}
  ],
  "intervals": [
    {"v_lo": 5.26, "v_hi": 5.39, "per_minute": -0.0078},
    {"v_lo": 5.39, "v_hi": 5.53, "per_minute": -0.0279},
    {"v_lo": 5.53, "v_hi": 5.66, "per_minute": -0.0307}
  ]
}"#,
    )
    .unwrap();

    let out = pacelaw(&[
        "predict", "--equation", &path(&eq_path), "--distance", "1200",
        "--set", "height_m=0", "--set", "economy_l_kg_km=0", "--set", "obla_kmh=0",
        "--interval-minutes", "0,0,0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let seconds: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    let expected = 0.1310 * 1200.0_f64.powf(1.0568);
    assert!((seconds - expected).abs() < 1e-9 * expected);

    // Missing covariate is an error naming the covariate.
    let out = pacelaw(&[
        "predict", "--equation", &path(&eq_path), "--distance", "1200",
        "--set", "height_m=1.8", "--set", "economy_l_kg_km=0.2",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("obla_kmh"));
}

#[test]
fn config_file_is_honoured_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        "seed = 3\n[simulate]\nrunner_count = 3\nperiods_per_runner = 2\nsessions_per_period_min = 2\nsessions_per_period_max = 3\n",
    )
    .unwrap();
    let sim = dir.path().join("sim");
    let out = pacelaw(&[
        "simulate", "--config", &path(&config_path), "--out", &path(&sim),
        "--periods", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sim.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["config"]["runner_count"], 3); // from file
    assert_eq!(truth["config"]["periods_per_runner"], 1); // flag wins
    assert_eq!(truth["config"]["seed"], 3);
}
