//! GPS record ingestion: CSV parsing, session segmentation and speed
//! computation with zero-speed imputation.
//!
//! Raw input is a stream of `(runner, timestamp, cumulative distance)`
//! rows. Sessions are cut wherever the inter-record gap exceeds a
//! threshold or the odometer resets (distance decreases and stays down);
//! a one-row dip that immediately recovers is treated as a measurement
//! glitch and dropped with a warning instead.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw GPS measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsRecord {
    pub runner_id: String,
    pub timestamp_s: f64,
    pub cumulative_distance_m: f64,
}

/// A row that was dropped or adjusted during parsing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParseWarning {
    pub line: u64,
    pub message: String,
}

/// Parse output: retained records plus per-row warnings.
#[derive(Debug, Clone, Default)]
pub struct ParsedRecords {
    /// In input order, grouped by runner (first-appearance order).
    pub records: Vec<GpsRecord>,
    pub warnings: Vec<ParseWarning>,
}

pub const GPS_CSV_HEADER: [&str; 3] = ["runner_id", "timestamp_s", "cumulative_distance_m"];

/// Parses the record CSV (`runner_id,timestamp_s,cumulative_distance_m`).
///
/// Exact duplicate rows are removed. A row whose distance dips below the
/// previous one but is immediately followed by a recovery above it is
/// dropped with a warning; a non-recovering decrease is kept so that
/// segmentation can treat it as a device reset.
pub fn parse_records<R: Read>(reader: R) -> Result<ParsedRecords> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv_reader.headers()?.clone();
    if headers.iter().ne(GPS_CSV_HEADER) {
        return Err(Error::parse(
            1,
            format!(
                "expected header `{}`, found `{}`",
                GPS_CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    // (runner -> rows with line numbers), runners in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut by_runner: HashMap<String, Vec<(u64, f64, f64)>> = HashMap::new();
    let mut warnings = Vec::new();

    for row in csv_reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(Error::parse(line, format!("expected 3 fields, found {}", row.len())));
        }
        let runner = row[0].to_string();
        if runner.is_empty() {
            return Err(Error::parse(line, "empty runner_id"));
        }
        let timestamp: f64 = row[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad timestamp `{}`", &row[1])))?;
        let distance: f64 = row[2]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad distance `{}`", &row[2])))?;
        if !timestamp.is_finite() {
            return Err(Error::parse(line, "non-finite timestamp"));
        }
        if !distance.is_finite() || distance < 0.0 {
            return Err(Error::parse(line, format!("negative or non-finite distance {distance}")));
        }

        let rows = by_runner.entry(runner.clone()).or_insert_with(|| {
            order.push(runner.clone());
            Vec::new()
        });
        if let Some(&(_, prev_t, prev_d)) = rows.last() {
            if timestamp < prev_t {
                return Err(Error::parse(
                    line,
                    format!("timestamp {timestamp} precedes previous {prev_t} for runner {runner}"),
                ));
            }
            if timestamp == prev_t {
                if distance == prev_d {
                    continue; // exact duplicate
                }
                warnings.push(ParseWarning {
                    line,
                    message: format!(
                        "runner {runner}: conflicting distance at repeated timestamp {timestamp}; row dropped"
                    ),
                });
                continue;
            }
        }
        rows.push((line, timestamp, distance));
    }

    // Drop transient distance dips: d[j] < d[j-1] but d[j+1] recovers.
    let mut records = Vec::new();
    for runner in &order {
        let rows = &by_runner[runner];
        let mut kept_prev_distance: Option<f64> = None;
        for (idx, &(line, timestamp, distance)) in rows.iter().enumerate() {
            if let Some(prev_d) = kept_prev_distance {
                if distance < prev_d {
                    let recovers = rows.get(idx + 1).is_some_and(|&(_, _, next_d)| next_d >= prev_d);
                    if recovers {
                        warnings.push(ParseWarning {
                            line,
                            message: format!(
                                "runner {runner}: distance dip {distance} below {prev_d}; row dropped"
                            ),
                        });
                        continue;
                    }
                    // Non-recovering decrease: odometer reset, kept for
                    // segmentation to turn into a session boundary.
                }
            }
            kept_prev_distance = Some(distance);
            records.push(GpsRecord {
                runner_id: runner.clone(),
                timestamp_s: timestamp,
                cumulative_distance_m: distance,
            });
        }
    }

    Ok(ParsedRecords { records, warnings })
}

/// Writes records in the input CSV schema.
pub fn write_records_csv<W: Write>(writer: W, records: &[GpsRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(GPS_CSV_HEADER)?;
    for r in records {
        out.write_record(&[
            r.runner_id.clone(),
            format_f64(r.timestamp_s),
            format_f64(r.cumulative_distance_m),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn format_f64(v: f64) -> String {
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // serde_json prints shortest round-trip representations.
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}

/// Segmentation thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegmentConfig {
    /// Gap between records that starts a new session, in seconds.
    pub gap_threshold_s: f64,
    /// Sessions shorter than this are discarded as noise.
    pub min_session_s: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            gap_threshold_s: 1800.0,
            min_session_s: 300.0,
        }
    }
}

/// A segmented session before speeds are computed: time offsets plus the
/// raw cumulative distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSession {
    pub runner_id: String,
    pub session_id: String,
    /// Absolute start time, seconds.
    pub start_s: f64,
    /// `(offset_s, cumulative_distance_m)`, offsets re-based to zero.
    pub points: Vec<(f64, f64)>,
}

impl RawSession {
    pub fn duration_s(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.0)
    }

    /// Back to absolute-time records, e.g. to re-segment.
    pub fn to_records(&self) -> Vec<GpsRecord> {
        self.points
            .iter()
            .map(|&(offset, distance)| GpsRecord {
                runner_id: self.runner_id.clone(),
                timestamp_s: self.start_s + offset,
                cumulative_distance_m: distance,
            })
            .collect()
    }
}

/// Output of segmentation: kept sessions plus the too-short fragments.
#[derive(Debug, Clone, Default)]
pub struct Segmentation {
    pub sessions: Vec<RawSession>,
    pub discarded: Vec<RawSession>,
}

/// Cuts record streams into sessions.
///
/// A new session starts when the runner changes, when the time gap
/// exceeds `gap_threshold_s`, or when the cumulative distance decreases
/// (device reset). Kept sessions are sorted by `(runner_id, start)` and
/// fragments shorter than `min_session_s` land in `discarded`.
pub fn segment_sessions(records: &[GpsRecord], config: &SegmentConfig) -> Result<Segmentation> {
    if config.gap_threshold_s <= 0.0 {
        return Err(Error::arg("gap threshold must be positive"));
    }

    let mut by_runner: Vec<(&str, Vec<&GpsRecord>)> = Vec::new();
    for record in records {
        match by_runner.last_mut() {
            Some((runner, group)) if *runner == record.runner_id => group.push(record),
            _ => {
                if by_runner.iter().any(|(r, _)| *r == record.runner_id) {
                    return Err(Error::arg(format!(
                        "records for runner {} are not contiguous",
                        record.runner_id
                    )));
                }
                by_runner.push((&record.runner_id, vec![record]));
            }
        }
    }
    by_runner.sort_by(|a, b| a.0.cmp(b.0));

    let mut out = Segmentation::default();
    for (runner, group) in by_runner {
        let mut counter = 0u32;
        let mut current: Vec<&GpsRecord> = Vec::new();
        let flush = |chunk: &mut Vec<&GpsRecord>, counter: &mut u32, out: &mut Segmentation| {
            if chunk.is_empty() {
                return;
            }
            *counter += 1;
            let start = chunk[0].timestamp_s;
            let session = RawSession {
                runner_id: runner.to_string(),
                session_id: format!("{}-s{:04}", runner, counter),
                start_s: start,
                points: chunk
                    .iter()
                    .map(|r| (r.timestamp_s - start, r.cumulative_distance_m))
                    .collect(),
            };
            if session.duration_s() < config.min_session_s {
                out.discarded.push(session);
            } else {
                out.sessions.push(session);
            }
            chunk.clear();
        };

        for record in group {
            if let Some(prev) = current.last() {
                if record.timestamp_s <= prev.timestamp_s {
                    return Err(Error::arg(format!(
                        "records for runner {runner} are not strictly increasing in time"
                    )));
                }
                let gap = record.timestamp_s - prev.timestamp_s;
                let reset = record.cumulative_distance_m < prev.cumulative_distance_m;
                if gap > config.gap_threshold_s || reset {
                    flush(&mut current, &mut counter, &mut out);
                }
            }
            current.push(record);
        }
        flush(&mut current, &mut counter, &mut out);
    }
    Ok(out)
}

/// A session with computed speeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub runner_id: String,
    pub session_id: String,
    pub start_s: f64,
    pub duration_s: f64,
    /// `(offset_s, speed_ms)` with offsets strictly increasing from 0 and
    /// the first speed fixed at 0.
    pub samples: Vec<(f64, f64)>,
}

/// Computes speeds from consecutive distances and imputes zero-speed
/// samples inside gaps longer than `max_sampling_gap_s`, so stationary
/// time counts at zero speed.
pub fn compute_speed_profile(raw: &RawSession, max_sampling_gap_s: f64) -> Result<Session> {
    if max_sampling_gap_s <= 0.0 {
        return Err(Error::arg("max sampling gap must be positive"));
    }
    if raw.points.len() < 2 {
        return Err(Error::DegenerateSession {
            session_id: raw.session_id.clone(),
        });
    }

    let mut samples = Vec::with_capacity(raw.points.len());
    samples.push((raw.points[0].0, 0.0));
    for window in raw.points.windows(2) {
        let (t0, d0) = window[0];
        let (t1, d1) = window[1];
        let dt = t1 - t0;
        debug_assert!(dt > 0.0, "offsets must strictly increase");
        if d1 < d0 {
            return Err(Error::arg(format!(
                "session {}: cumulative distance decreases within a session",
                raw.session_id
            )));
        }
        if dt > max_sampling_gap_s {
            let mut t = t0 + max_sampling_gap_s;
            // Strictly inside the gap; the closing sample stays at t1.
            while t < t1 - 1e-9 {
                samples.push((t, 0.0));
                t += max_sampling_gap_s;
            }
        }
        samples.push((t1, (d1 - d0) / dt));
    }

    Ok(Session {
        runner_id: raw.runner_id.clone(),
        session_id: raw.session_id.clone(),
        start_s: raw.start_s,
        duration_s: raw.points[raw.points.len() - 1].0,
        samples,
    })
}

/// Full ingest settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IngestConfig {
    pub segment: SegmentConfig,
    /// Sampling gap above which zero speeds are imputed, in seconds.
    pub max_sampling_gap_s: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            segment: SegmentConfig::default(),
            max_sampling_gap_s: 10.0,
        }
    }
}

/// Everything the ingest stage produces.
#[derive(Debug, Clone, Default)]
pub struct IngestOutput {
    pub sessions: Vec<Session>,
    pub discarded_sessions: usize,
    pub warnings: Vec<ParseWarning>,
}

/// Parse, segment and compute speeds in one call.
pub fn ingest<R: Read>(reader: R, config: &IngestConfig) -> Result<IngestOutput> {
    let parsed = parse_records(reader)?;
    let segmented = segment_sessions(&parsed.records, &config.segment)?;
    let sessions = segmented
        .sessions
        .iter()
        .map(|raw| compute_speed_profile(raw, config.max_sampling_gap_s))
        .collect::<Result<Vec<_>>>()?;
    Ok(IngestOutput {
        sessions,
        discarded_sessions: segmented.discarded.len(),
        warnings: parsed.warnings,
    })
}

/// Serialises sessions as JSON lines, one session per line.
pub fn write_sessions_jsonl<W: Write>(mut writer: W, sessions: &[Session]) -> Result<()> {
    for session in sessions {
        serde_json::to_writer(&mut writer, session)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sessions_jsonl<R: Read>(reader: R) -> Result<Vec<Session>> {
    use std::io::BufRead;
    let buffered = std::io::BufReader::new(reader);
    let mut sessions = Vec::new();
    for (idx, line) in buffered.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let session: Session = serde_json::from_str(&line)
            .map_err(|e| Error::parse(idx as u64 + 1, format!("bad session JSON: {e}")))?;
        sessions.push(session);
    }
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(runner: &str, t: f64, d: f64) -> GpsRecord {
        GpsRecord {
            runner_id: runner.into(),
            timestamp_s: t,
            cumulative_distance_m: d,
        }
    }

    #[test]
    fn parses_well_formed_rows() {
        let csv = "runner_id,timestamp_s,cumulative_distance_m\nR01,0,0\nR01,10,30\nR01,20,60\n";
        let parsed = parse_records(csv.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert!(parsed.warnings.is_empty());
        assert_eq!(parsed.records[2], record("R01", 20.0, 60.0));
    }

    #[test]
    fn negative_distance_is_a_parse_error_with_line() {
        let csv = "runner_id,timestamp_s,cumulative_distance_m\nR01,0,0\nR01,10,-5\n";
        let err = parse_records(csv.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn exact_duplicates_collapse_to_one_record() {
        let csv = "runner_id,timestamp_s,cumulative_distance_m\nR01,5,10\nR01,5,10\n";
        let parsed = parse_records(csv.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn transient_dip_is_dropped_with_warning() {
        let csv = "runner_id,timestamp_s,cumulative_distance_m\n\
                   R01,0,100\nR01,10,105\nR01,20,103\nR01,30,110\n";
        let parsed = parse_records(csv.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.warnings[0].line, 4);
    }

    #[test]
    fn odometer_reset_is_kept_for_segmentation() {
        let csv = "runner_id,timestamp_s,cumulative_distance_m\n\
                   R01,0,100\nR01,10,105\nR01,20,0\nR01,30,12\n";
        let parsed = parse_records(csv.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 4);
        let seg = segment_sessions(
            &parsed.records,
            &SegmentConfig {
                gap_threshold_s: 1800.0,
                min_session_s: 0.0,
            },
        )
        .unwrap();
        assert_eq!(seg.sessions.len() + seg.discarded.len(), 2);
    }

    #[test]
    fn no_gap_means_one_session() {
        let records: Vec<_> = (0..100).map(|i| record("R01", i as f64 * 10.0, i as f64 * 25.0)).collect();
        let seg = segment_sessions(&records, &SegmentConfig::default()).unwrap();
        assert_eq!(seg.sessions.len(), 1);
        assert!(seg.discarded.is_empty());
        assert_eq!(seg.sessions[0].duration_s(), 990.0);
    }

    #[test]
    fn single_long_gap_splits_in_two() {
        let mut records = Vec::new();
        for i in 0..60 {
            records.push(record("R01", i as f64 * 10.0, i as f64 * 25.0));
        }
        let offset = 59.0 * 10.0 + 3600.0;
        for i in 0..60 {
            records.push(record("R01", offset + i as f64 * 10.0, 2000.0 + i as f64 * 25.0));
        }
        let seg = segment_sessions(&records, &SegmentConfig::default()).unwrap();
        assert_eq!(seg.sessions.len(), 2);
        assert_eq!(seg.sessions[0].points.len(), 60);
        assert_eq!(seg.sessions[1].points.len(), 60);
        assert_eq!(seg.sessions[1].points[0].0, 0.0);
    }

    #[test]
    fn short_fragments_are_discarded() {
        let records = vec![record("R01", 0.0, 0.0), record("R01", 10.0, 30.0)];
        let seg = segment_sessions(&records, &SegmentConfig::default()).unwrap();
        assert!(seg.sessions.is_empty());
        assert_eq!(seg.discarded.len(), 1);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let seg = segment_sessions(&[], &SegmentConfig::default()).unwrap();
        assert!(seg.sessions.is_empty() && seg.discarded.is_empty());
    }

    #[test]
    fn constant_pace_speeds() {
        let raw = RawSession {
            runner_id: "R01".into(),
            session_id: "R01-s0001".into(),
            start_s: 0.0,
            points: vec![(0.0, 0.0), (10.0, 30.0), (20.0, 60.0)],
        };
        let session = compute_speed_profile(&raw, 10.0).unwrap();
        assert_eq!(session.samples, vec![(0.0, 0.0), (10.0, 3.0), (20.0, 3.0)]);
        assert_eq!(session.duration_s, 20.0);
    }

    #[test]
    fn stationary_interval_gets_zero_speed_imputation() {
        let raw = RawSession {
            runner_id: "R01".into(),
            session_id: "R01-s0001".into(),
            start_s: 0.0,
            points: vec![(0.0, 0.0), (10.0, 30.0), (110.0, 30.0)],
        };
        let session = compute_speed_profile(&raw, 10.0).unwrap();
        // Imputed zeros at 20..=100, closing sample at 110 with speed 0.
        assert_eq!(session.samples.len(), 2 + 9 + 1);
        for pair in session.samples.windows(2) {
            assert!(pair[1].0 > pair[0].0);
        }
        assert!(session.samples[2..].iter().all(|&(_, v)| v == 0.0));
        assert_eq!(session.samples.last().unwrap().0, 110.0);
    }

    #[test]
    fn degenerate_session_errors() {
        let raw = RawSession {
            runner_id: "R01".into(),
            session_id: "R01-s0001".into(),
            start_s: 0.0,
            points: vec![(0.0, 0.0)],
        };
        assert!(matches!(
            compute_speed_profile(&raw, 10.0),
            Err(Error::DegenerateSession { .. })
        ));
    }

    #[test]
    fn sessions_jsonl_round_trips() {
        let raw = RawSession {
            runner_id: "R01".into(),
            session_id: "R01-s0001".into(),
            start_s: 50.0,
            points: vec![(0.0, 0.0), (10.0, 30.0)],
        };
        let session = compute_speed_profile(&raw, 10.0).unwrap();
        let mut buf = Vec::new();
        write_sessions_jsonl(&mut buf, std::slice::from_ref(&session)).unwrap();
        let back = read_sessions_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, vec![session]);
    }
}
