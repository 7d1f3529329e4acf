//! Training distribution profiles: time-above-speed curves per session,
//! their monotone smoothing, cleaning, per-period averaging and the
//! interval-time summaries that feed the regression.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gps::{format_f64, Session};
use crate::grid::SpeedGrid;
use crate::isotonic::decreasing_pava;

/// Time-above-speed curve for one session on the common grid.
///
/// `values[i]` is the session time spent strictly faster than grid speed
/// `i`; it is non-increasing in `i` and bounded by the session duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDistributionProfile {
    pub session_id: String,
    pub runner_id: String,
    pub grid: SpeedGrid,
    pub values: Vec<f64>,
    pub total_duration_s: f64,
}

impl TrainingDistributionProfile {
    /// Curve value at an arbitrary speed: the session duration below zero,
    /// otherwise the value at the largest grid point not exceeding `v`.
    pub fn value_at(&self, v: f64) -> f64 {
        match self.grid.floor_index(v) {
            None => self.total_duration_s,
            Some(i) => self.values[i],
        }
    }

    /// Interval times at resolution `g`; see [`interval_times`].
    pub fn interval_times(&self, g: u32) -> Result<Vec<f64>> {
        interval_times(self.grid, &self.values, g)
    }
}

/// Evaluates the observed time-above-speed curve at each grid speed:
/// the sum of `(t[j] - t[j-1])` over samples with speed strictly above the
/// grid value, in sample order.
///
/// The grid must be strictly increasing and non-empty; speeds below zero
/// are allowed and recover the total duration.
pub fn observed_profile_at(session: &Session, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::arg("empty speed grid"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("speed grid must be strictly increasing"));
    }
    let samples = &session.samples;
    let mut out = Vec::with_capacity(grid.len());
    for &v in grid {
        let mut total = 0.0;
        for j in 1..samples.len() {
            if samples[j].1 > v {
                total += samples[j].0 - samples[j - 1].0;
            }
        }
        out.push(total);
    }
    Ok(out)
}

/// Observed profile of a session on the common grid.
pub fn observed_profile(session: &Session, grid: SpeedGrid) -> Result<TrainingDistributionProfile> {
    let values = observed_profile_at(session, &grid.speeds())?;
    Ok(TrainingDistributionProfile {
        session_id: session.session_id.clone(),
        runner_id: session.runner_id.clone(),
        grid,
        values,
        total_duration_s: session.duration_s,
    })
}

/// Monotone least-squares smoothing: the closest non-increasing curve to
/// the input in the squared-error sense. Idempotent; already-monotone
/// input comes back unchanged.
pub fn smooth_profile(profile: &TrainingDistributionProfile) -> TrainingDistributionProfile {
    TrainingDistributionProfile {
        values: decreasing_pava(&profile.values),
        ..profile.clone()
    }
}

/// Cleaning threshold: sessions with more time than this above
/// [`CLEAN_SPEED_MS`] are measurement errors (faster than any human runs).
pub const CLEAN_MAX_SECONDS_ABOVE: f64 = 125.0;
pub const CLEAN_SPEED_MS: f64 = 8.0;

/// Splits profiles into kept and dropped: a profile is dropped exactly
/// when its time above 8 m/s strictly exceeds 125 s.
pub fn clean_sessions(
    profiles: Vec<TrainingDistributionProfile>,
) -> (Vec<TrainingDistributionProfile>, Vec<TrainingDistributionProfile>) {
    profiles
        .into_iter()
        .partition(|p| p.value_at(CLEAN_SPEED_MS) <= CLEAN_MAX_SECONDS_ABOVE)
}

/// Identifies one training period of one runner.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeriodKey {
    pub runner_id: String,
    pub period_index: u32,
}

/// Per-period mean profile and mean session length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodProfile {
    pub runner_id: String,
    pub period_index: u32,
    pub grid: SpeedGrid,
    pub mean_values: Vec<f64>,
    pub mean_session_length_s: f64,
    pub session_count: usize,
}

impl PeriodProfile {
    pub fn key(&self) -> PeriodKey {
        PeriodKey {
            runner_id: self.runner_id.clone(),
            period_index: self.period_index,
        }
    }

    pub fn value_at(&self, v: f64) -> f64 {
        match self.grid.floor_index(v) {
            None => self.mean_session_length_s,
            Some(i) => self.mean_values[i],
        }
    }

    /// Mean time spent in each of the `g` equal speed intervals.
    pub fn interval_times(&self, g: u32) -> Result<Vec<f64>> {
        interval_times(self.grid, &self.mean_values, g)
    }
}

/// Pointwise mean of the given profiles, summed in session-id order so the
/// result does not depend on input ordering.
pub fn period_average(
    key: &PeriodKey,
    profiles: &[&TrainingDistributionProfile],
) -> Result<PeriodProfile> {
    if profiles.is_empty() {
        return Err(Error::UninformativePeriod {
            runner_id: key.runner_id.clone(),
            period_index: key.period_index,
        });
    }
    let grid = profiles[0].grid;
    if profiles.iter().any(|p| p.grid != grid) {
        return Err(Error::arg("profiles are not on a common grid"));
    }
    let mut ordered: Vec<&TrainingDistributionProfile> = profiles.to_vec();
    ordered.sort_by(|a, b| a.session_id.cmp(&b.session_id));

    let n = ordered.len() as f64;
    let mut mean_values = vec![0.0; grid.len()];
    let mut mean_length = 0.0;
    for profile in &ordered {
        for (slot, v) in mean_values.iter_mut().zip(&profile.values) {
            *slot += v;
        }
        mean_length += profile.total_duration_s;
    }
    for slot in mean_values.iter_mut() {
        *slot /= n;
    }
    Ok(PeriodProfile {
        runner_id: key.runner_id.clone(),
        period_index: key.period_index,
        grid,
        mean_values,
        mean_session_length_s: mean_length / n,
        session_count: ordered.len(),
    })
}

/// Time spent in each of `g` equal speed intervals, from grid values.
///
/// Interval `k` (1-based) covers `((k-1) w, k w]` with `w = 12.5 / g`; its
/// time is the drop in the curve across the interval. Sums are built by
/// recursive halving over grid cells, so the vector at resolution `g`
/// equals adjacent-pair sums of the vector at `2 g` bit for bit.
pub fn interval_times(grid: SpeedGrid, values: &[f64], g: u32) -> Result<Vec<f64>> {
    let cells_per = grid.cells_per_interval(g)?;
    if values.len() != grid.len() {
        return Err(Error::arg(format!(
            "expected {} grid values, found {}",
            grid.len(),
            values.len()
        )));
    }
    let drops: Vec<f64> = values.windows(2).map(|w| w[0] - w[1]).collect();
    let mut out = Vec::with_capacity(g as usize);
    for k in 0..g as usize {
        out.push(block_sum(&drops, k * cells_per, cells_per));
    }
    Ok(out)
}

fn block_sum(drops: &[f64], start: usize, len: usize) -> f64 {
    if len == 1 {
        drops[start]
    } else if len.is_multiple_of(2) {
        block_sum(drops, start, len / 2) + block_sum(drops, start + len / 2, len / 2)
    } else {
        drops[start..start + len].iter().sum()
    }
}

/// One period's time window; sessions are assigned by their start time,
/// `start_s <= t < end_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodWindow {
    pub runner_id: String,
    pub period_index: u32,
    pub start_s: f64,
    pub end_s: f64,
}

/// Assignment of sessions to training periods via per-runner windows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodAssignment {
    pub windows: Vec<PeriodWindow>,
}

pub const PERIOD_CSV_HEADER: [&str; 4] = ["runner_id", "period_index", "start_s", "end_s"];

impl PeriodAssignment {
    pub fn assign(&self, runner_id: &str, start_s: f64) -> Option<PeriodKey> {
        self.windows
            .iter()
            .find(|w| w.runner_id == runner_id && start_s >= w.start_s && start_s < w.end_s)
            .map(|w| PeriodKey {
                runner_id: w.runner_id.clone(),
                period_index: w.period_index,
            })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv_reader.headers()?.clone();
        if headers.iter().ne(PERIOD_CSV_HEADER) {
            return Err(Error::parse(
                1,
                format!("expected header `{}`", PERIOD_CSV_HEADER.join(",")),
            ));
        }
        let mut windows = Vec::new();
        for row in csv_reader.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            if row.len() != 4 {
                return Err(Error::parse(line, "expected 4 fields"));
            }
            let period_index: u32 = row[1]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad period_index `{}`", &row[1])))?;
            let start_s: f64 = row[2]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad start_s `{}`", &row[2])))?;
            let end_s: f64 = row[3]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad end_s `{}`", &row[3])))?;
            if period_index == 0 {
                return Err(Error::parse(line, "period_index starts at 1"));
            }
            if end_s <= start_s {
                return Err(Error::parse(line, "period window must have positive length"));
            }
            windows.push(PeriodWindow {
                runner_id: row[0].to_string(),
                period_index,
                start_s,
                end_s,
            });
        }
        Ok(PeriodAssignment { windows })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(PERIOD_CSV_HEADER)?;
        for w in &self.windows {
            out.write_record(&[
                w.runner_id.clone(),
                w.period_index.to_string(),
                format_f64(w.start_s),
                format_f64(w.end_s),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-period profiles plus the periods that held no sessions at all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodProfiles {
    pub periods: Vec<PeriodProfile>,
    pub uninformative: Vec<PeriodKey>,
}

impl PeriodProfiles {
    pub fn get(&self, key: &PeriodKey) -> Option<&PeriodProfile> {
        self.periods.iter().find(|p| &p.key() == key)
    }

    pub fn is_uninformative(&self, key: &PeriodKey) -> bool {
        self.uninformative.contains(key)
    }
}

/// Output of the profile stage.
#[derive(Debug, Clone, Default)]
pub struct ProfileStageOutput {
    /// Smoothed per-session profiles that survived cleaning.
    pub session_profiles: Vec<TrainingDistributionProfile>,
    /// Profiles dropped by the cleaning rule, retained for reporting.
    pub dropped: Vec<TrainingDistributionProfile>,
    pub periods: PeriodProfiles,
}

/// Runs the profile stage: observed curve, monotone smoothing, cleaning
/// and per-period averaging. Per-session work is pure and runs in
/// parallel; averaging sums in session-id order, so the result does not
/// depend on scheduling. Sessions outside every window are ignored;
/// windows that end up with no sessions are reported as uninformative.
pub fn profile_stage(
    sessions: &[Session],
    assignment: &PeriodAssignment,
    grid: SpeedGrid,
) -> Result<ProfileStageOutput> {
    use rayon::prelude::*;
    let profiles = sessions
        .par_iter()
        .map(|session| observed_profile(session, grid).map(|p| smooth_profile(&p)))
        .collect::<Result<Vec<_>>>()?;
    let (kept, dropped) = clean_sessions(profiles);

    let start_by_session: BTreeMap<&str, f64> = sessions
        .iter()
        .map(|s| (s.session_id.as_str(), s.start_s))
        .collect();

    let mut grouped: BTreeMap<PeriodKey, Vec<&TrainingDistributionProfile>> = BTreeMap::new();
    for profile in &kept {
        let start = start_by_session[profile.session_id.as_str()];
        if let Some(key) = assignment.assign(&profile.runner_id, start) {
            grouped.entry(key).or_default().push(profile);
        }
    }

    let mut periods = Vec::new();
    let mut uninformative = Vec::new();
    let mut window_keys: Vec<PeriodKey> = assignment
        .windows
        .iter()
        .map(|w| PeriodKey {
            runner_id: w.runner_id.clone(),
            period_index: w.period_index,
        })
        .collect();
    window_keys.sort();
    window_keys.dedup();
    for key in window_keys {
        match grouped.get(&key) {
            Some(group) => periods.push(period_average(&key, group)?),
            None => uninformative.push(key),
        }
    }

    Ok(ProfileStageOutput {
        session_profiles: kept,
        dropped,
        periods: PeriodProfiles {
            periods,
            uninformative,
        },
    })
}

/// Long-format CSV export: `session_id,v,P`.
pub fn write_profiles_csv<W: Write>(
    writer: W,
    profiles: &[TrainingDistributionProfile],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["session_id", "v", "P"])?;
    for profile in profiles {
        for (i, value) in profile.values.iter().enumerate() {
            out.write_record(&[
                profile.session_id.clone(),
                format_f64(profile.grid.speed(i)),
                format_f64(*value),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Sessions removed by the cleaning rule: `session_id,seconds_above_8ms`.
pub fn write_dropped_csv<W: Write>(
    writer: W,
    dropped: &[TrainingDistributionProfile],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["session_id", "seconds_above_8ms"])?;
    for profile in dropped {
        out.write_record(&[
            profile.session_id.clone(),
            format_f64(profile.value_at(CLEAN_SPEED_MS)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Period curves with their discrete negative derivative:
/// `runner_id,period_index,v,P_bar,neg_dP`.
pub fn write_period_curves_csv<W: Write>(writer: W, periods: &[PeriodProfile]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["runner_id", "period_index", "v", "P_bar", "neg_dP"])?;
    for period in periods {
        let step = period.grid.step();
        for (i, value) in period.mean_values.iter().enumerate() {
            let neg_dp = if i == 0 {
                0.0
            } else {
                (period.mean_values[i - 1] - value) / step
            };
            out.write_record(&[
                period.runner_id.clone(),
                period.period_index.to_string(),
                format_f64(period.grid.speed(i)),
                format_f64(*value),
                format_f64(neg_dp),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_session(speed: f64, duration: f64) -> Session {
        let n = (duration / 10.0) as usize;
        let mut samples = vec![(0.0, 0.0)];
        for i in 1..=n {
            samples.push((i as f64 * 10.0, speed));
        }
        Session {
            runner_id: "R01".into(),
            session_id: "R01-s0001".into(),
            start_s: 0.0,
            duration_s: duration,
            samples,
        }
    }

    fn profile_with_values(values: Vec<f64>, total: f64) -> TrainingDistributionProfile {
        let grid = SpeedGrid::new(values.len() as u32 - 1).unwrap();
        TrainingDistributionProfile {
            session_id: "s".into(),
            runner_id: "r".into(),
            grid,
            values,
            total_duration_s: total,
        }
    }

    #[test]
    fn constant_pace_profile_is_a_step() {
        let session = constant_session(3.0, 600.0);
        let values = observed_profile_at(&session, &[0.0, 1.0, 2.9, 3.0, 4.0]).unwrap();
        assert_eq!(values, vec![600.0, 600.0, 600.0, 0.0, 0.0]);
    }

    #[test]
    fn two_block_session_profile() {
        // 300 s at 2 m/s then 300 s at 5 m/s.
        let mut samples = vec![(0.0, 0.0)];
        for i in 1..=30 {
            samples.push((i as f64 * 10.0, 2.0));
        }
        for i in 31..=60 {
            samples.push((i as f64 * 10.0, 5.0));
        }
        let session = Session {
            runner_id: "R01".into(),
            session_id: "R01-s0001".into(),
            start_s: 0.0,
            duration_s: 600.0,
            samples,
        };
        let values = observed_profile_at(&session, &[1.0, 3.0, 6.0]).unwrap();
        assert_eq!(values, vec![600.0, 300.0, 0.0]);
    }

    #[test]
    fn below_zero_speed_recovers_total_duration() {
        let session = constant_session(3.0, 600.0);
        let values = observed_profile_at(&session, &[-1.0]).unwrap();
        assert_eq!(values, vec![600.0]);
        let profile = observed_profile(&session, SpeedGrid::default()).unwrap();
        assert_eq!(profile.value_at(-1.0), 600.0);
    }

    #[test]
    fn observed_profile_matches_brute_force() {
        let session = constant_session(3.0, 600.0);
        let grid = SpeedGrid::default();
        let profile = observed_profile(&session, grid).unwrap();
        let times: Vec<f64> = session.samples.iter().map(|s| s.0).collect();
        let speeds: Vec<f64> = session.samples.iter().map(|s| s.1).collect();
        let oracle = pacelaw_oracles::profile_brute_force(&times, &speeds, &grid.speeds());
        assert_eq!(profile.values, oracle);
    }

    #[test]
    fn smoothing_projects_and_is_idempotent() {
        let profile = profile_with_values(vec![10.0, 12.0, 5.0], 15.0);
        let smoothed = smooth_profile(&profile);
        assert_eq!(smoothed.values, vec![11.0, 11.0, 5.0]);
        assert_eq!(smooth_profile(&smoothed).values, smoothed.values);
    }

    #[test]
    fn cleaning_uses_strict_inequality_at_the_boundary() {
        let grid = SpeedGrid::default();
        let mk = |time_above_8: f64| {
            let mut values = vec![600.0; grid.len()];
            for i in 0..grid.len() {
                if grid.speed(i) >= 8.0 {
                    values[i] = time_above_8;
                }
            }
            // Keep the curve non-increasing.
            let values = decreasing_pava(&values);
            TrainingDistributionProfile {
                session_id: format!("s{time_above_8}"),
                runner_id: "r".into(),
                grid,
                values,
                total_duration_s: 600.0,
            }
        };
        let (kept, dropped) = clean_sessions(vec![mk(126.0), mk(125.0), mk(0.0)]);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].session_id, "s126");
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn period_average_of_one_is_itself() {
        let profile = profile_with_values(vec![600.0, 300.0, 0.0], 600.0);
        let key = PeriodKey {
            runner_id: "r".into(),
            period_index: 1,
        };
        let period = period_average(&key, &[&profile]).unwrap();
        assert_eq!(period.mean_values, profile.values);
        assert_eq!(period.mean_session_length_s, 600.0);
        assert_eq!(period.session_count, 1);
    }

    #[test]
    fn period_average_is_pointwise_mean() {
        let a = profile_with_values(vec![600.0, 600.0, 0.0], 600.0);
        let mut b = profile_with_values(vec![0.0, 0.0, 0.0], 600.0);
        b.session_id = "t".into();
        let key = PeriodKey {
            runner_id: "r".into(),
            period_index: 1,
        };
        let period = period_average(&key, &[&a, &b]).unwrap();
        assert_eq!(period.mean_values, vec![300.0, 300.0, 0.0]);
    }

    #[test]
    fn empty_period_is_uninformative() {
        let key = PeriodKey {
            runner_id: "r".into(),
            period_index: 2,
        };
        assert!(matches!(
            period_average(&key, &[]),
            Err(Error::UninformativePeriod { period_index: 2, .. })
        ));
    }

    #[test]
    fn interval_times_for_step_profile() {
        // Constant 3 m/s for 600 s on the default grid, G = 5: all time
        // lands in the interval containing 3 m/s, which is (2.5, 5].
        let session = constant_session(3.0, 600.0);
        let profile = observed_profile(&session, SpeedGrid::default()).unwrap();
        let times = profile.interval_times(5).unwrap();
        assert_eq!(times, vec![0.0, 600.0, 0.0, 0.0, 0.0]);
        assert_eq!(times.iter().sum::<f64>(), profile.values[0] - profile.values[500]);
    }

    #[test]
    fn interval_times_reject_bad_resolutions() {
        let profile = profile_with_values(vec![3.0, 2.0, 1.0, 1.0, 0.0, 0.0], 3.0);
        assert!(matches!(profile.interval_times(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            profile.interval_times(3),
            Err(Error::UnalignedResolution { resolution: 3, .. })
        ));
    }

    #[test]
    fn refinement_sums_exactly() {
        let session = constant_session(3.7, 1200.0);
        let profile = observed_profile(&session, SpeedGrid::default()).unwrap();
        for (coarse, fine) in [(5u32, 10u32), (10, 20), (25, 50), (50, 100)] {
            let tc = profile.interval_times(coarse).unwrap();
            let tf = profile.interval_times(fine).unwrap();
            for (k, &value) in tc.iter().enumerate() {
                assert_eq!(value, tf[2 * k] + tf[2 * k + 1], "G={coarse}");
            }
        }
    }

    #[test]
    fn profile_stage_flags_empty_windows() {
        let sessions = vec![constant_session(3.0, 600.0)];
        let assignment = PeriodAssignment {
            windows: vec![
                PeriodWindow {
                    runner_id: "R01".into(),
                    period_index: 1,
                    start_s: 0.0,
                    end_s: 100.0,
                },
                PeriodWindow {
                    runner_id: "R01".into(),
                    period_index: 2,
                    start_s: 100.0,
                    end_s: 200.0,
                },
            ],
        };
        let out = profile_stage(&sessions, &assignment, SpeedGrid::default()).unwrap();
        assert_eq!(out.periods.periods.len(), 1);
        assert_eq!(out.periods.periods[0].period_index, 1);
        assert_eq!(
            out.periods.uninformative,
            vec![PeriodKey {
                runner_id: "R01".into(),
                period_index: 2
            }]
        );
    }

    #[test]
    fn period_csv_round_trips() {
        let assignment = PeriodAssignment {
            windows: vec![PeriodWindow {
                runner_id: "R01".into(),
                period_index: 1,
                start_s: 0.0,
                end_s: 1000.5,
            }],
        };
        let mut buf = Vec::new();
        assignment.write_csv(&mut buf).unwrap();
        let back = PeriodAssignment::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, assignment);
    }
}
