//! Command-line pipeline from raw GPS records to a predictive
//! running-performance equation.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use manifest::Manifest;
use pacelaw::gps;
use pacelaw::grid::SpeedGrid;
use pacelaw::multires::{
    self, render_equation_text, select_resolution, PredictiveEquation, ResolutionReport,
};
use pacelaw::profile::{self, PeriodAssignment, PeriodProfiles};
use pacelaw::study::{self, StudyData};
use pacelaw::synth;

#[derive(Parser)]
#[command(
    name = "pacelaw",
    about = "Training distribution profiles and a multi-resolution elastic net for running performance",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw GPS CSV and segment it into speed-annotated sessions.
    Ingest(IngestArgs),
    /// Turn sessions into smoothed per-session and per-period profiles.
    Profile(ProfileArgs),
    /// Fit the performance model across resolutions and export the
    /// selected predictive equation.
    Fit(FitArgs),
    /// Evaluate an exported predictive equation.
    Predict(PredictArgs),
    /// Generate a synthetic study with known planted parameters.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Declarative configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every randomised step.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IngestArgs {
    /// Raw records CSV: runner_id,timestamp_s,cumulative_distance_m.
    #[arg(long)]
    input: PathBuf,
    /// Time gap that starts a new session, seconds.
    #[arg(long = "gap-threshold")]
    gap_threshold: Option<f64>,
    /// Minimum session duration to keep, seconds.
    #[arg(long = "min-session")]
    min_session: Option<f64>,
    /// Sampling gap above which zero speeds are imputed, seconds.
    #[arg(long = "max-sampling-gap")]
    max_sampling_gap: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ProfileArgs {
    /// Sessions JSONL produced by `ingest`.
    #[arg(long)]
    sessions: PathBuf,
    /// Period windows CSV: runner_id,period_index,start_s,end_s.
    #[arg(long)]
    periods: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct FitArgs {
    /// Field tests CSV: runner_id,period_index,distance_m,performance_s.
    #[arg(long = "field-tests")]
    field_tests: PathBuf,
    /// Lab results CSV.
    #[arg(long)]
    lab: PathBuf,
    /// Period profiles JSON produced by `profile`.
    #[arg(long = "periods-json")]
    periods_json: PathBuf,
    /// Comma-separated resolutions, e.g. 5,10,25,125.
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<u32>>,
    /// Comma-separated ridge weights.
    #[arg(long = "lambda2-grid", value_delimiter = ',')]
    lambda2_grid: Option<Vec<f64>>,
    /// Comma-separated L1 fractions in [0, 1].
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Cross-validation repeats (random fold allocations).
    #[arg(long)]
    repeats: Option<usize>,
    /// Runners held out as the test set.
    #[arg(long = "test-runners")]
    test_runners: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Equation JSON produced by `fit`.
    #[arg(long)]
    equation: PathBuf,
    /// Race distance in metres.
    #[arg(long)]
    distance: f64,
    /// Scalar covariates as name=value, repeatable.
    #[arg(long = "set", value_parser = parse_key_value)]
    set: Vec<(String, f64)>,
    /// Comma-separated per-interval training times in minutes, aligned
    /// with the equation's interval list. Defaults to zeros.
    #[arg(long = "interval-minutes", value_delimiter = ',')]
    interval_minutes: Option<Vec<f64>>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of runners.
    #[arg(long)]
    runners: Option<usize>,
    /// Training periods per runner.
    #[arg(long)]
    periods: Option<u32>,
    /// Sessions per period as lo:hi.
    #[arg(long, value_parser = parse_pair::<usize>)]
    sessions: Option<(usize, usize)>,
    /// Log-scale noise standard deviation.
    #[arg(long = "noise-sd")]
    noise_sd: Option<f64>,
    /// Planted distance exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Planted power-law constant.
    #[arg(long)]
    tau: Option<f64>,
    /// Planted effect band as lo:hi in m/s.
    #[arg(long = "delta-band", value_parser = parse_pair::<f64>)]
    delta_band: Option<(f64, f64)>,
    /// Planted effect size per second inside the band.
    #[arg(long = "delta-magnitude", allow_hyphen_values = true)]
    delta_magnitude: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_key_value(raw: &str) -> Result<(String, f64), String> {
    let (name, value) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{raw}`"))?;
    let value: f64 = value
        .parse()
        .map_err(|_| format!("bad numeric value in `{raw}`"))?;
    Ok((name.to_string(), value))
}

fn parse_pair<T: std::str::FromStr>(raw: &str) -> Result<(T, T), String> {
    let (lo, hi) = raw
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got `{raw}`"))?;
    Ok((
        lo.parse().map_err(|_| format!("bad lo in `{raw}`"))?,
        hi.parse().map_err(|_| format!("bad hi in `{raw}`"))?,
    ))
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Profile(args) => cmd_profile(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn prepare_out(common: &CommonArgs) -> Result<(PathBuf, RunConfig)> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;
    Ok((common.out.clone(), config))
}

fn write_out(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    manifest.record_output(name);
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let (out_dir, mut config) = prepare_out(&args.common)?;
    if let Some(v) = args.gap_threshold {
        config.ingest.gap_threshold_s = v;
    }
    if let Some(v) = args.min_session {
        config.ingest.min_session_s = v;
    }
    if let Some(v) = args.max_sampling_gap {
        config.ingest.max_sampling_gap_s = v;
    }

    let mut manifest = Manifest::new("ingest", &config.ingest)?;
    manifest.record_input(&args.input)?;

    let reader = BufReader::new(
        File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?,
    );
    let ingested = gps::ingest(reader, &config.ingest.to_ingest_config())?;
    for warning in &ingested.warnings {
        eprintln!("warning: line {}: {}", warning.line, warning.message);
    }

    let mut sessions_bytes = Vec::new();
    gps::write_sessions_jsonl(&mut sessions_bytes, &ingested.sessions)?;
    write_out(&out_dir, "sessions.jsonl", &sessions_bytes, &mut manifest)?;
    manifest.write(&out_dir)?;

    eprintln!(
        "{} sessions kept, {} short fragments discarded, {} row warnings",
        ingested.sessions.len(),
        ingested.discarded_sessions,
        ingested.warnings.len()
    );
    Ok(())
}

fn cmd_profile(args: ProfileArgs) -> Result<()> {
    let (out_dir, _config) = prepare_out(&args.common)?;
    let grid = SpeedGrid::default();
    let mut manifest = Manifest::new("profile", serde_json::json!({ "grid": grid }))?;
    manifest.record_input(&args.sessions)?;
    manifest.record_input(&args.periods)?;

    let sessions = gps::read_sessions_jsonl(BufReader::new(
        File::open(&args.sessions)
            .with_context(|| format!("opening {}", args.sessions.display()))?,
    ))?;
    let assignment = PeriodAssignment::read_csv(BufReader::new(
        File::open(&args.periods).with_context(|| format!("opening {}", args.periods.display()))?,
    ))?;

    let stage = profile::profile_stage(&sessions, &assignment, grid)?;

    let mut profiles_bytes = Vec::new();
    profile::write_profiles_csv(&mut profiles_bytes, &stage.session_profiles)?;
    write_out(&out_dir, "profiles.csv", &profiles_bytes, &mut manifest)?;

    let mut curves_bytes = Vec::new();
    profile::write_period_curves_csv(&mut curves_bytes, &stage.periods.periods)?;
    write_out(&out_dir, "period_curves.csv", &curves_bytes, &mut manifest)?;

    let mut periods_bytes = serde_json::to_vec_pretty(&stage.periods)?;
    periods_bytes.push(b'\n');
    write_out(&out_dir, "periods.json", &periods_bytes, &mut manifest)?;

    let mut dropped_bytes = Vec::new();
    profile::write_dropped_csv(&mut dropped_bytes, &stage.dropped)?;
    write_out(&out_dir, "dropped.csv", &dropped_bytes, &mut manifest)?;
    manifest.write(&out_dir)?;

    eprintln!(
        "{} session profiles kept, {} dropped by the cleaning rule, {} periods ({} uninformative)",
        stage.session_profiles.len(),
        stage.dropped.len(),
        stage.periods.periods.len(),
        stage.periods.uninformative.len()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let (out_dir, mut config) = prepare_out(&args.common)?;
    if let Some(v) = args.resolutions {
        config.fit.resolutions = v;
    }
    if let Some(v) = args.lambda2_grid {
        config.fit.lambda2_grid = v;
    }
    if let Some(v) = args.fractions {
        config.fit.fractions = v;
    }
    if let Some(v) = args.folds {
        config.fit.folds = v;
    }
    if let Some(v) = args.repeats {
        config.fit.repeats = v;
    }
    if let Some(v) = args.test_runners {
        config.fit.test_runners = v;
    }

    let mut manifest = Manifest::new(
        "fit",
        serde_json::json!({"seed": config.seed, "fit": &config.fit}),
    )?;
    manifest.record_input(&args.field_tests)?;
    manifest.record_input(&args.lab)?;
    manifest.record_input(&args.periods_json)?;

    let field_tests = study::read_field_tests(BufReader::new(
        File::open(&args.field_tests)
            .with_context(|| format!("opening {}", args.field_tests.display()))?,
    ))?;
    let lab_results = study::read_lab_results(BufReader::new(
        File::open(&args.lab).with_context(|| format!("opening {}", args.lab.display()))?,
    ))?;
    let periods: PeriodProfiles = serde_json::from_reader(BufReader::new(
        File::open(&args.periods_json)
            .with_context(|| format!("opening {}", args.periods_json.display()))?,
    ))?;

    let data = StudyData {
        field_tests,
        lab_results,
        periods,
    };
    let (estimation, test) = data.split_by_runner(config.fit.test_runners, config.seed)?;
    let mr_config = config.fit.to_multires_config(config.seed);
    let report = select_resolution(&estimation, &test, &mr_config)?;

    write_report(&out_dir, &report, &estimation, &mr_config, &mut manifest)?;
    manifest.write(&out_dir)?;

    eprintln!(
        "selected resolution G={} with test error {:.6}",
        report.selected_resolution,
        report
            .outcomes
            .iter()
            .find(|o| o.resolution == report.selected_resolution)
            .map(|o| o.test_error.sum_squared)
            .unwrap_or(f64::NAN)
    );
    Ok(())
}

fn write_report(
    out_dir: &Path,
    report: &ResolutionReport,
    estimation: &StudyData,
    mr_config: &pacelaw::multires::MultiResConfig,
    manifest: &mut Manifest,
) -> Result<()> {
    let mut report_bytes = serde_json::to_vec_pretty(report)?;
    report_bytes.push(b'\n');
    write_out(out_dir, "report.json", &report_bytes, manifest)?;

    let mut equation_bytes = serde_json::to_vec_pretty(&report.equation)?;
    equation_bytes.push(b'\n');
    write_out(out_dir, "equation.json", &equation_bytes, manifest)?;
    write_out(
        out_dir,
        "equation.txt",
        render_equation_text(&report.equation).as_bytes(),
        manifest,
    )?;

    let mut coefficients = Vec::new();
    multires::write_coefficients_csv(&mut coefficients, &report.outcomes)?;
    write_out(out_dir, "coefficients.csv", &coefficients, manifest)?;

    let mut errors = Vec::new();
    multires::write_test_errors_csv(&mut errors, &report.outcomes)?;
    write_out(out_dir, "test_errors.csv", &errors, manifest)?;

    let mut surfaces = Vec::new();
    multires::write_cv_surfaces_csv(&mut surfaces, &report.outcomes)?;
    write_out(out_dir, "cv_surfaces.csv", &surfaces, manifest)?;

    // Solution paths at the selected resolution and its chosen ridge
    // weight, over the configured fraction grid.
    let selected = report
        .outcomes
        .iter()
        .find(|o| o.resolution == report.selected_resolution)
        .expect("selected resolution must be among the outcomes");
    let table = estimation.build_table(report.selected_resolution)?;
    let (x, y) = table.design();
    let path = pacelaw::elasticnet::solution_path(
        &x,
        &y,
        selected.tuning.lambda2,
        &mr_config.grid.fractions,
        &mr_config.solve,
    )?;
    let mut path_bytes = Vec::new();
    pacelaw::elasticnet::write_solution_path_csv(&mut path_bytes, &path, &table.covariate_names)?;
    write_out(out_dir, "solution_path.csv", &path_bytes, manifest)?;
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let equation: PredictiveEquation = serde_json::from_reader(BufReader::new(
        File::open(&args.equation)
            .with_context(|| format!("opening {}", args.equation.display()))?,
    ))?;
    let scalars: BTreeMap<String, f64> = args.set.into_iter().collect();
    let interval_minutes = args
        .interval_minutes
        .unwrap_or_else(|| vec![0.0; equation.intervals.len()]);
    let seconds = multires::predict(&equation, args.distance, &scalars, &interval_minutes)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{seconds}")?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (out_dir, mut config) = prepare_out(&args.common)?;
    if let Some(v) = args.runners {
        config.simulate.runner_count = v;
    }
    if let Some(v) = args.periods {
        config.simulate.periods_per_runner = v;
    }
    if let Some((lo, hi)) = args.sessions {
        config.simulate.sessions_per_period_min = lo;
        config.simulate.sessions_per_period_max = hi;
    }
    if let Some(v) = args.noise_sd {
        config.simulate.noise_sd = v;
    }
    if let Some(v) = args.alpha {
        config.simulate.alpha = v;
    }
    if let Some(v) = args.tau {
        config.simulate.tau = v;
    }
    if let Some((lo, hi)) = args.delta_band {
        config.simulate.delta_band_lo = lo;
        config.simulate.delta_band_hi = hi;
    }
    if let Some(v) = args.delta_magnitude {
        config.simulate.delta_magnitude = v;
    }

    let synth_config = config.simulate.to_synth_config(config.seed);
    let mut manifest = Manifest::new("simulate", &synth_config)?;
    let study = synth::generate(&synth_config)?;

    let mut gps_bytes = Vec::new();
    gps::write_records_csv(&mut gps_bytes, &study.records)?;
    write_out(&out_dir, "gps.csv", &gps_bytes, &mut manifest)?;

    let mut lab_bytes = Vec::new();
    study::write_lab_results_csv(&mut lab_bytes, &study.lab_results)?;
    write_out(&out_dir, "lab.csv", &lab_bytes, &mut manifest)?;

    let mut tests_bytes = Vec::new();
    study::write_field_tests_csv(&mut tests_bytes, &study.field_tests)?;
    write_out(&out_dir, "field_tests.csv", &tests_bytes, &mut manifest)?;

    let mut periods_bytes = Vec::new();
    study.assignment.write_csv(&mut periods_bytes)?;
    write_out(&out_dir, "periods.csv", &periods_bytes, &mut manifest)?;

    let mut truth_bytes = serde_json::to_vec_pretty(&study.truth)?;
    truth_bytes.push(b'\n');
    write_out(&out_dir, "truth.json", &truth_bytes, &mut manifest)?;
    manifest.write(&out_dir)?;

    eprintln!(
        "{} records, {} sessions, {} runners",
        study.records.len(),
        study.truth.sessions.len(),
        synth_config.runner_count
    );
    Ok(())
}
