//! Declarative run configuration: a single TOML file, with command-line
//! flags taking precedence over file values.

use std::path::Path;

use anyhow::{Context, Result};
use pacelaw::elasticnet::SolveOptions;
use pacelaw::gps::{IngestConfig, SegmentConfig};
use pacelaw::multires::{CvSettings, MultiResConfig, TuningGrid, DEFAULT_RESOLUTIONS};
use pacelaw::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every randomised step of a run.
    pub seed: u64,
    pub ingest: IngestSection,
    pub fit: FitSection,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub gap_threshold_s: f64,
    pub min_session_s: f64,
    pub max_sampling_gap_s: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        let base = IngestConfig::default();
        IngestSection {
            gap_threshold_s: base.segment.gap_threshold_s,
            min_session_s: base.segment.min_session_s,
            max_sampling_gap_s: base.max_sampling_gap_s,
        }
    }
}

impl IngestSection {
    pub fn to_ingest_config(&self) -> IngestConfig {
        IngestConfig {
            segment: SegmentConfig {
                gap_threshold_s: self.gap_threshold_s,
                min_session_s: self.min_session_s,
            },
            max_sampling_gap_s: self.max_sampling_gap_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub resolutions: Vec<u32>,
    pub lambda2_grid: Vec<f64>,
    pub fractions: Vec<f64>,
    pub folds: usize,
    pub repeats: usize,
    pub test_runners: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let grid = TuningGrid::default();
        let cv = CvSettings::default();
        FitSection {
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
            lambda2_grid: grid.lambda2,
            fractions: grid.fractions,
            folds: cv.folds,
            repeats: cv.repeats,
            test_runners: 4,
        }
    }
}

impl FitSection {
    pub fn to_multires_config(&self, seed: u64) -> MultiResConfig {
        MultiResConfig {
            resolutions: self.resolutions.clone(),
            grid: TuningGrid {
                lambda2: self.lambda2_grid.clone(),
                fractions: self.fractions.clone(),
            },
            cv: CvSettings {
                folds: self.folds,
                repeats: self.repeats,
            },
            solve: SolveOptions::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub runner_count: usize,
    pub periods_per_runner: u32,
    pub sessions_per_period_min: usize,
    pub sessions_per_period_max: usize,
    pub alpha: f64,
    pub tau: f64,
    pub gamma: [f64; 8],
    pub delta_session_length: f64,
    pub delta_band_lo: f64,
    pub delta_band_hi: f64,
    pub delta_magnitude: f64,
    pub noise_sd: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let base = SynthConfig::default();
        SimulateSection {
            runner_count: base.runner_count,
            periods_per_runner: base.periods_per_runner,
            sessions_per_period_min: base.sessions_per_period.0,
            sessions_per_period_max: base.sessions_per_period.1,
            alpha: base.alpha,
            tau: base.tau,
            gamma: base.gamma,
            delta_session_length: base.delta_session_length,
            delta_band_lo: base.delta_band.0,
            delta_band_hi: base.delta_band.1,
            delta_magnitude: base.delta_magnitude,
            noise_sd: base.noise_sd,
        }
    }
}

impl SimulateSection {
    pub fn to_synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            runner_count: self.runner_count,
            periods_per_runner: self.periods_per_runner,
            sessions_per_period: (self.sessions_per_period_min, self.sessions_per_period_max),
            alpha: self.alpha,
            tau: self.tau,
            gamma: self.gamma,
            delta_session_length: self.delta_session_length,
            delta_band: (self.delta_band_lo, self.delta_band_hi),
            delta_magnitude: self.delta_magnitude,
            noise_sd: self.noise_sd,
            seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
            }
        }
    }
}
