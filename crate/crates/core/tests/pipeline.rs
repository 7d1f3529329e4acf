//! End-to-end pipeline checks on synthetic studies with known truth.

use pacelaw::grid::SpeedGrid;
use pacelaw::gps::{ingest, write_records_csv, IngestConfig};
use pacelaw::multires::{select_resolution, CvSettings, MultiResConfig, TuningGrid};
use pacelaw::profile::profile_stage;
use pacelaw::study::{StudyData, SCALAR_COVARIATES};
use pacelaw::synth::{generate, SynthConfig, SynthStudy};
use pacelaw::elasticnet::SolveOptions;

/// Simulated records -> ingest -> profiles -> study data.
fn study_data_from(study: &SynthStudy) -> StudyData {
    let mut csv_bytes = Vec::new();
    write_records_csv(&mut csv_bytes, &study.records).unwrap();
    let out = ingest(csv_bytes.as_slice(), &IngestConfig::default()).unwrap();
    assert!(out.warnings.is_empty(), "synthetic data must ingest cleanly");
    assert_eq!(out.discarded_sessions, 0);
    let profiles = profile_stage(&out.sessions, &study.assignment, SpeedGrid::default()).unwrap();
    assert!(profiles.dropped.is_empty(), "synthetic sessions must pass cleaning");
    StudyData {
        field_tests: study.field_tests.clone(),
        lab_results: study.lab_results.clone(),
        periods: profiles.periods,
    }
}

fn noiseless_config() -> SynthConfig {
    SynthConfig {
        runner_count: 10,
        periods_per_runner: 4,
        sessions_per_period: (5, 9),
        noise_sd: 0.0,
        // Aligned with the G = 5 interval grid (width 2.5).
        delta_band: (5.0, 7.5),
        seed: 21,
        ..SynthConfig::default()
    }
}

fn unpenalised_config(resolutions: Vec<u32>, seed: u64) -> MultiResConfig {
    MultiResConfig {
        resolutions,
        grid: TuningGrid {
            lambda2: vec![0.0],
            fractions: vec![1.0],
        },
        cv: CvSettings::default(),
        solve: SolveOptions::default(),
        seed,
    }
}

#[test]
fn noiseless_study_recovers_planted_parameters() {
    let synth_config = noiseless_config();
    let study = generate(&synth_config).unwrap();
    let data = study_data_from(&study);
    let (estimation, test) = data.split_by_runner(4, 3).unwrap();

    let report = select_resolution(&estimation, &test, &unpenalised_config(vec![5], 3)).unwrap();
    assert_eq!(report.selected_resolution, 5);
    let outcome = &report.outcomes[0];

    // Per-row squared error in seconds must be numerically negligible.
    let rows = test.build_table(5).unwrap().rows.len();
    assert!(rows > 0);
    assert!(
        outcome.test_error.sum_squared / rows as f64 <= 1e-6,
        "test error {} over {rows} rows",
        outcome.test_error.sum_squared
    );

    // Planted coefficients come back: tau, alpha, gamma to 1e-4 relative.
    let fit = &outcome.fit.fit;
    let tau = fit.intercept_rescaled.exp();
    assert!((tau - synth_config.tau).abs() / synth_config.tau < 1e-4, "tau {tau}");
    assert!(
        (fit.rescaled[0] - synth_config.alpha).abs() / synth_config.alpha < 1e-6,
        "alpha {}",
        fit.rescaled[0]
    );
    for (j, &gamma) in synth_config.gamma.iter().enumerate() {
        let recovered = fit.rescaled[1 + j];
        assert!(
            (recovered - gamma).abs() / gamma.abs() < 1e-4,
            "gamma[{j}] planted {gamma} recovered {recovered}"
        );
    }
    // Session-length and band coefficients as a sanity check.
    assert!((fit.rescaled[9] - synth_config.delta_session_length).abs() < 1e-8);
    let band_interval = SCALAR_COVARIATES + 2; // (5.0, 7.5] is the third of five
    assert!(
        (fit.rescaled[band_interval] - synth_config.delta_magnitude).abs()
            < 1e-6 * synth_config.delta_magnitude.abs().max(1.0),
        "delta {}",
        fit.rescaled[band_interval]
    );
}

#[test]
fn refining_the_resolution_never_hurts_on_refinable_truth() {
    // The planted band sits on the G = 5 grid, so every refinement can
    // represent the truth. The covariate block repeats across the three
    // distances of a field test, so full rank at G = 125 (around 56
    // visited intervals plus 10 scalars) needs more estimation periods
    // than covariates: 24 runners give 20 x 4 = 80.
    let synth_config = SynthConfig {
        runner_count: 24,
        ..noiseless_config()
    };
    let study = generate(&synth_config).unwrap();
    let data = study_data_from(&study);
    let (estimation, test) = data.split_by_runner(4, 5).unwrap();

    let report =
        select_resolution(&estimation, &test, &unpenalised_config(vec![5, 10, 25, 125], 5))
            .unwrap();
    let base = report
        .outcomes
        .iter()
        .find(|o| o.resolution == 5)
        .unwrap()
        .test_error
        .sum_squared;
    for outcome in &report.outcomes {
        assert!(
            outcome.test_error.sum_squared <= base + 1e-6,
            "G={} error {} vs base {base}",
            outcome.resolution,
            outcome.test_error.sum_squared
        );
    }
}

#[test]
fn reports_are_deterministic_and_parallel_agrees_with_serial() {
    let synth_config = SynthConfig {
        runner_count: 6,
        periods_per_runner: 3,
        sessions_per_period: (3, 5),
        noise_sd: 0.02,
        seed: 9,
        ..SynthConfig::default()
    };
    let study = generate(&synth_config).unwrap();
    let data = study_data_from(&study);
    let (estimation, test) = data.split_by_runner(2, 17).unwrap();

    let config = MultiResConfig {
        resolutions: vec![5, 10],
        grid: TuningGrid {
            lambda2: vec![0.0, 1.0],
            fractions: vec![0.25, 0.5, 1.0],
        },
        cv: CvSettings {
            folds: 5,
            repeats: 3,
        },
        solve: SolveOptions::default(),
        seed: 17,
    };

    let first = select_resolution(&estimation, &test, &config).unwrap();
    let second = select_resolution(&estimation, &test, &config).unwrap();
    let bytes_first = serde_json::to_vec(&first).unwrap();
    let bytes_second = serde_json::to_vec(&second).unwrap();
    assert_eq!(bytes_first, bytes_second);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| select_resolution(&estimation, &test, &config).unwrap());
    let bytes_serial = serde_json::to_vec(&serial).unwrap();
    assert_eq!(bytes_first, bytes_serial);
}

#[test]
fn cross_validation_prefers_no_penalty_on_noiseless_data() {
    let study = generate(&noiseless_config()).unwrap();
    let data = study_data_from(&study);
    let (estimation, _) = data.split_by_runner(4, 3).unwrap();
    let table = estimation.build_table(5).unwrap();

    let grid = TuningGrid {
        lambda2: vec![0.0, 1.0],
        fractions: vec![0.5, 1.0],
    };
    let tuning = pacelaw::multires::cross_validate(
        &table,
        &grid,
        &CvSettings::default(),
        41,
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(tuning.lambda2, 0.0);
    assert_eq!(tuning.l1_fraction, 1.0);
    let chosen = tuning
        .surface
        .iter()
        .find(|p| p.lambda2 == 0.0 && p.l1_fraction == 1.0)
        .unwrap();
    assert!(chosen.mean_mse < 1e-12, "cv error {}", chosen.mean_mse);
}

#[test]
fn segmentation_recovers_planted_boundaries_for_ten_runners() {
    let synth_config = SynthConfig {
        runner_count: 10,
        periods_per_runner: 2,
        sessions_per_period: (3, 6),
        seed: 31,
        ..SynthConfig::default()
    };
    let study = generate(&synth_config).unwrap();
    let mut csv_bytes = Vec::new();
    write_records_csv(&mut csv_bytes, &study.records).unwrap();
    let out = ingest(csv_bytes.as_slice(), &IngestConfig::default()).unwrap();

    assert_eq!(out.sessions.len(), study.truth.sessions.len());
    for (session, truth) in out.sessions.iter().zip(&study.truth.sessions) {
        assert_eq!(session.runner_id, truth.runner_id);
        assert_eq!(session.start_s, truth.start_s);
        assert_eq!(session.duration_s, truth.duration_s);
        // Computed speeds agree with the planted piecewise-constant
        // speed function at every sample point past the first.
        let mut boundary = 0.0;
        let mut segment = truth.segments.iter();
        let mut current = segment.next().unwrap();
        for &(t, v) in &session.samples[1..] {
            while t > boundary + current.0 {
                boundary += current.0;
                current = segment.next().unwrap();
            }
            assert!(
                (v - current.1).abs() < 1e-9,
                "session {} at t={t}: speed {v} vs planted {}",
                session.session_id,
                current.1
            );
        }
    }
}

#[test]
fn uninformative_periods_drop_out_of_the_tables() {
    let synth_config = SynthConfig {
        runner_count: 3,
        periods_per_runner: 2,
        sessions_per_period: (2, 3),
        noise_sd: 0.0,
        seed: 2,
        ..SynthConfig::default()
    };
    let study = generate(&synth_config).unwrap();
    let mut data = study_data_from(&study);
    // Pretend R01 period 2 had no usable sessions.
    data.periods
        .periods
        .retain(|p| !(p.runner_id == "R01" && p.period_index == 2));
    data.periods.uninformative.push(pacelaw::profile::PeriodKey {
        runner_id: "R01".into(),
        period_index: 2,
    });
    let table = data.build_table(5).unwrap();
    assert_eq!(table.rows.len(), (3 * 2 - 1) * 3);
}
