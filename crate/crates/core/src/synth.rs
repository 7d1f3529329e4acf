//! Synthetic studies with planted, known parameters.
//!
//! Sessions are piecewise-constant-speed interval workouts whose
//! time-above-speed curves are closed-form step functions; performances
//! are drawn from the multiplicative model evaluated at the planted
//! parameters. Segment durations are integer seconds and segment speeds
//! sit on grid-cell midpoints, so the pipeline recovers profiles exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gps::GpsRecord;
use crate::grid::SpeedGrid;
use crate::profile::{PeriodAssignment, PeriodWindow};
use crate::seed::{rng_for, TAG_SYNTH};
use crate::study::{FieldTest, LabResult, FIELD_TEST_DISTANCES_M};

/// Planted model parameters and study shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub runner_count: usize,
    pub periods_per_runner: u32,
    /// Inclusive range of sessions per period.
    pub sessions_per_period: (usize, usize),
    pub alpha: f64,
    pub tau: f64,
    /// Lab-covariate coefficients, one per column of the lab table.
    pub gamma: [f64; 8],
    /// Coefficient on mean session length, per second.
    pub delta_session_length: f64,
    /// Speed band `(v_lo, v_hi]` carrying the planted training effect.
    pub delta_band: (f64, f64),
    /// Training-effect coefficient per second spent inside the band.
    pub delta_magnitude: f64,
    /// Log-scale noise standard deviation.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            runner_count: 10,
            periods_per_runner: 4,
            sessions_per_period: (6, 12),
            alpha: 1.05,
            tau: 0.13,
            gamma: [0.002, 0.0015, 0.0005, -0.002, -0.003, 0.0008, 0.05, -0.02],
            delta_session_length: -5e-6,
            delta_band: (5.3, 5.7),
            delta_magnitude: -2e-4,
            noise_sd: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runner_count < 1 || self.periods_per_runner < 1 {
            return Err(Error::arg("need at least one runner and one period"));
        }
        let (lo, hi) = self.sessions_per_period;
        if lo < 1 || hi < lo {
            return Err(Error::arg("sessions per period must be a non-empty range"));
        }
        let (v_lo, v_hi) = self.delta_band;
        if !(0.0 < v_lo && v_lo < v_hi && v_hi < 12.5) {
            return Err(Error::arg("delta band must satisfy 0 < v_lo < v_hi < 12.5"));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::arg("noise standard deviation must be non-negative"));
        }
        if self.tau <= 0.0 {
            return Err(Error::arg("tau must be positive"));
        }
        Ok(())
    }
}

/// True composition of one generated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTruth {
    pub runner_id: String,
    pub period_index: u32,
    pub start_s: f64,
    pub duration_s: f64,
    /// `(duration_s, speed_ms)` blocks in order.
    pub segments: Vec<(f64, f64)>,
}

impl SessionTruth {
    /// Analytic time-above-speed value: total duration of segments
    /// strictly faster than `v`.
    pub fn profile_value(&self, v: f64) -> f64 {
        self.segments
            .iter()
            .map(|&(dur, speed)| if speed > v { dur } else { 0.0 })
            .sum()
    }
}

/// True per-period summaries entering the planted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTruth {
    pub runner_id: String,
    pub period_index: u32,
    pub mean_session_length_s: f64,
    /// Mean session time inside the planted band, seconds.
    pub band_time_s: f64,
    /// Physiological-status exponent, `gamma . lab`.
    pub zeta: f64,
    /// Training exponent.
    pub theta: f64,
}

/// Everything needed to verify pipeline output against the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub sessions: Vec<SessionTruth>,
    pub periods: Vec<PeriodTruth>,
}

/// A generated study in exactly the formats the pipeline consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthStudy {
    pub records: Vec<GpsRecord>,
    pub lab_results: Vec<LabResult>,
    pub field_tests: Vec<FieldTest>,
    pub assignment: PeriodAssignment,
    pub truth: GroundTruth,
}

/// Standard normal via Box-Muller on ChaCha uniforms.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Cells of the default grid whose midpoints fall strictly inside
/// `(lo, hi)`, excluding a small margin around the endpoints.
fn cells_between(grid: SpeedGrid, lo: f64, hi: f64, margin: f64) -> Vec<u32> {
    let step = grid.step();
    (0..grid.cells())
        .filter(|&c| {
            let mid = (c as f64 + 0.5) * step;
            mid > lo + margin && mid < hi - margin
        })
        .collect()
}

fn midpoint(grid: SpeedGrid, cell: u32) -> f64 {
    (cell as f64 + 0.5) * grid.step()
}

/// Generates GPS records, lab results, field tests, period windows and
/// ground truth from the planted parameters. Deterministic under the
/// config seed, with an independent stream per runner.
pub fn generate(config: &SynthConfig) -> Result<SynthStudy> {
    config.validate()?;
    let grid = SpeedGrid::default();
    let (band_lo, band_hi) = config.delta_band;
    let jog_cells = cells_between(grid, 1.8, 3.4, 0.0);
    let band_cells = cells_between(grid, band_lo, band_hi, 1e-9);
    if band_cells.is_empty() {
        return Err(Error::arg("delta band is too narrow for the speed grid"));
    }
    // Off-band work speeds keep a safety margin from the band edges.
    let mut off_band: Vec<u32> = cells_between(grid, 3.5, (band_lo - 0.05).max(3.6), 0.0);
    off_band.extend(cells_between(grid, band_hi + 0.05, 7.0, 0.0));

    let mut study = SynthStudy {
        records: Vec::new(),
        lab_results: Vec::new(),
        field_tests: Vec::new(),
        assignment: PeriodAssignment::default(),
        truth: GroundTruth {
            config: config.clone(),
            sessions: Vec::new(),
            periods: Vec::new(),
        },
    };

    for r in 0..config.runner_count {
        let runner_id = format!("R{:02}", r + 1);
        let mut rng = rng_for(config.seed, &[TAG_SYNTH, r as u64]);
        let mut clock: u64 = 1_000;
        let mut odometer = 0.0_f64;

        for period_index in 1..=config.periods_per_runner {
            let window_start = clock;
            let session_count =
                rng.gen_range(config.sessions_per_period.0..=config.sessions_per_period.1);
            // Period-level training intensity: probability that a work
            // block targets the planted band.
            let intensity: f64 = rng.gen_range(0.1..0.9);

            let mut durations = Vec::with_capacity(session_count);
            let mut band_lo_times = Vec::with_capacity(session_count);
            let mut band_hi_times = Vec::with_capacity(session_count);
            for _ in 0..session_count {
                let start = clock;
                let mut segments: Vec<(u64, f64)> = Vec::new();
                let warmup = rng.gen_range(300..=600u64);
                segments.push((warmup, midpoint(grid, jog_cells[rng.gen_range(0..jog_cells.len())])));
                let blocks = rng.gen_range(2..=4usize);
                for _ in 0..blocks {
                    let work = rng.gen_range(120..=300u64);
                    let in_band = rng.gen::<f64>() < intensity;
                    let cell = if in_band {
                        band_cells[rng.gen_range(0..band_cells.len())]
                    } else {
                        off_band[rng.gen_range(0..off_band.len())]
                    };
                    segments.push((work, midpoint(grid, cell)));
                    let rest = rng.gen_range(60..=180u64);
                    segments.push((rest, 0.0));
                }
                let cooldown = rng.gen_range(300..=600u64);
                segments.push((cooldown, midpoint(grid, jog_cells[rng.gen_range(0..jog_cells.len())])));

                // Emit records at a 5 s cadence plus exact segment ends.
                study.records.push(GpsRecord {
                    runner_id: runner_id.clone(),
                    timestamp_s: start as f64,
                    cumulative_distance_m: odometer,
                });
                let mut t = start;
                for &(dur, speed) in &segments {
                    let end = t + dur;
                    let mut sample = t + 5;
                    while sample < end {
                        odometer += speed * 5.0;
                        study.records.push(GpsRecord {
                            runner_id: runner_id.clone(),
                            timestamp_s: sample as f64,
                            cumulative_distance_m: odometer,
                        });
                        sample += 5;
                    }
                    odometer += speed * (end - (sample - 5)) as f64;
                    study.records.push(GpsRecord {
                        runner_id: runner_id.clone(),
                        timestamp_s: end as f64,
                        cumulative_distance_m: odometer,
                    });
                    t = end;
                }

                let truth = SessionTruth {
                    runner_id: runner_id.clone(),
                    period_index,
                    start_s: start as f64,
                    duration_s: (t - start) as f64,
                    segments: segments.iter().map(|&(d, v)| (d as f64, v)).collect(),
                };
                durations.push(truth.duration_s);
                band_lo_times.push(truth.profile_value(band_lo));
                band_hi_times.push(truth.profile_value(band_hi));
                study.truth.sessions.push(truth);

                clock = t + rng.gen_range(4_000..=90_000u64);
            }

            let window_end = clock;
            study.assignment.windows.push(PeriodWindow {
                runner_id: runner_id.clone(),
                period_index,
                start_s: window_start as f64,
                end_s: window_end as f64,
            });

            let n = session_count as f64;
            let mean_length = durations.iter().sum::<f64>() / n;
            // Same mean-of-curves arithmetic as the pipeline.
            let band_time =
                band_lo_times.iter().sum::<f64>() / n - band_hi_times.iter().sum::<f64>() / n;

            let lab = LabResult {
                runner_id: runner_id.clone(),
                period_index,
                weight_kg: rng.gen_range(55.0..80.0),
                height_cm: rng.gen_range(160.0..195.0),
                age_y: rng.gen_range(18.0..40.0),
                vo2max_ml: rng.gen_range(55.0..75.0),
                vo2max_kmh: rng.gen_range(15.0..22.0),
                economy_ml: rng.gen_range(180.0..220.0),
                economy_kcal: rng.gen_range(0.9..1.1),
                obla_ms: rng.gen_range(3.5..5.5),
            };
            let lab_values = [
                lab.weight_kg,
                lab.height_cm,
                lab.age_y,
                lab.vo2max_ml,
                lab.vo2max_kmh,
                lab.economy_ml,
                lab.economy_kcal,
                lab.obla_ms,
            ];
            let zeta: f64 = config
                .gamma
                .iter()
                .zip(&lab_values)
                .map(|(g, v)| g * v)
                .sum();
            let theta =
                config.delta_session_length * mean_length + config.delta_magnitude * band_time;
            study.lab_results.push(lab);
            study.truth.periods.push(PeriodTruth {
                runner_id: runner_id.clone(),
                period_index,
                mean_session_length_s: mean_length,
                band_time_s: band_time,
                zeta,
                theta,
            });

            for &distance in &FIELD_TEST_DISTANCES_M {
                let mean = config.tau * distance.powf(config.alpha) * (zeta + theta).exp();
                let noise = if config.noise_sd > 0.0 {
                    (config.noise_sd * normal(&mut rng)).exp()
                } else {
                    1.0
                };
                study.field_tests.push(FieldTest {
                    runner_id: runner_id.clone(),
                    period_index,
                    distance_m: distance,
                    performance_s: mean * noise,
                });
            }
        }
    }

    Ok(study)
}
