//! Study assembly: joins field-test performances, laboratory covariates
//! and period profiles into the regression design at a given resolution.
//!
//! Each field test contributes three rows, one per trial distance, that
//! share an identical covariate block. Unmeasured session-to-session
//! factors are treated as constant and absorbed into the intercept.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gps::format_f64;
use crate::profile::{PeriodKey, PeriodProfiles};
use crate::seed::{rng_for, TAG_SPLIT};

/// Laboratory results for one runner at the end of one training period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabResult {
    pub runner_id: String,
    pub period_index: u32,
    pub weight_kg: f64,
    pub height_cm: f64,
    pub age_y: f64,
    /// Maximal oxygen uptake, ml/min/kg.
    pub vo2max_ml: f64,
    /// Speed associated with maximal oxygen uptake, km/h.
    pub vo2max_kmh: f64,
    /// Oxygen cost of running, ml/kg/km.
    pub economy_ml: f64,
    /// Energy cost of running, kcal/kg/km.
    pub economy_kcal: f64,
    /// Speed at 4 mM blood lactate, m/s.
    pub obla_ms: f64,
}

impl LabResult {
    fn values(&self) -> [f64; 8] {
        [
            self.weight_kg,
            self.height_cm,
            self.age_y,
            self.vo2max_ml,
            self.vo2max_kmh,
            self.economy_ml,
            self.economy_kcal,
            self.obla_ms,
        ]
    }

    fn validate(&self, line: u64) -> Result<()> {
        if self.values().iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::parse(line, "lab covariates must be strictly positive"));
        }
        Ok(())
    }
}

/// Trial distances of the standardised field tests, metres.
pub const FIELD_TEST_DISTANCES_M: [f64; 3] = [1200.0, 2400.0, 3600.0];

/// Best-effort performance over one trial distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTest {
    pub runner_id: String,
    pub period_index: u32,
    pub distance_m: f64,
    pub performance_s: f64,
}

impl FieldTest {
    fn validate(&self, line: u64) -> Result<()> {
        if !FIELD_TEST_DISTANCES_M.contains(&self.distance_m) {
            return Err(Error::parse(
                line,
                format!("distance {} is not one of {FIELD_TEST_DISTANCES_M:?}", self.distance_m),
            ));
        }
        if !self.performance_s.is_finite() || self.performance_s <= 0.0 {
            return Err(Error::parse(line, "performance must be positive seconds"));
        }
        Ok(())
    }
}

/// Number of scalar covariate columns before the interval block.
pub const SCALAR_COVARIATES: usize = 10;

/// Column names for resolution `g`: log distance, the eight lab
/// covariates, the mean session length, then one column per interval.
pub fn covariate_names(g: u32) -> Vec<String> {
    let mut names = vec![
        "log_distance".to_string(),
        "weight_kg".to_string(),
        "height_cm".to_string(),
        "age_y".to_string(),
        "vo2max_ml".to_string(),
        "vo2max_kmh".to_string(),
        "economy_ml".to_string(),
        "economy_kcal".to_string(),
        "obla_ms".to_string(),
        "mean_session_length_s".to_string(),
    ];
    for k in 1..=g {
        names.push(format!("interval_{k:03}"));
    }
    names
}

/// One regression observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub runner_id: String,
    pub period_index: u32,
    pub distance_m: f64,
    pub performance_s: f64,
    pub covariates: Vec<f64>,
}

impl StudyRow {
    /// Log performance, the regression response.
    pub fn response(&self) -> f64 {
        self.performance_s.ln()
    }
}

/// Design table at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub resolution: u32,
    pub covariate_names: Vec<String>,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn runners(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.runner_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Covariate matrix (row-major) and responses.
    pub fn design(&self) -> (ndarray::Array2<f64>, Vec<f64>) {
        let n = self.rows.len();
        let p = self.covariate_names.len();
        let mut x = ndarray::Array2::zeros((n, p));
        let mut y = Vec::with_capacity(n);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row.covariates.iter().enumerate() {
                x[(i, j)] = *v;
            }
            y.push(row.response());
        }
        (x, y)
    }
}

/// Joins field tests, lab results and period profiles at resolution `g`.
///
/// Field tests whose period held no sessions are excluded; a field test
/// with no lab result or no period profile at all is a join error.
pub fn build_table(
    field_tests: &[FieldTest],
    lab_results: &[LabResult],
    periods: &PeriodProfiles,
    g: u32,
) -> Result<StudyTable> {
    if g == 0 {
        return Err(Error::arg("resolution must be at least 1"));
    }
    let mut lab_by_key: HashMap<PeriodKey, &LabResult> = HashMap::new();
    for lab in lab_results {
        let key = PeriodKey {
            runner_id: lab.runner_id.clone(),
            period_index: lab.period_index,
        };
        if lab_by_key.insert(key, lab).is_some() {
            return Err(Error::arg(format!(
                "duplicate lab result for runner {}, period {}",
                lab.runner_id, lab.period_index
            )));
        }
    }

    let mut interval_cache: HashMap<PeriodKey, Vec<f64>> = HashMap::new();
    let mut ordered: Vec<&FieldTest> = field_tests.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.runner_id, a.period_index, a.distance_m as u64)
            .cmp(&(&b.runner_id, b.period_index, b.distance_m as u64))
    });

    let mut rows = Vec::new();
    for test in ordered {
        test.validate(0)?;
        let key = PeriodKey {
            runner_id: test.runner_id.clone(),
            period_index: test.period_index,
        };
        if periods.is_uninformative(&key) {
            continue;
        }
        let lab = lab_by_key.get(&key).ok_or_else(|| Error::MissingJoin {
            what: "lab result",
            runner_id: key.runner_id.clone(),
            period_index: key.period_index,
        })?;
        let period = periods.get(&key).ok_or_else(|| Error::MissingJoin {
            what: "period profile",
            runner_id: key.runner_id.clone(),
            period_index: key.period_index,
        })?;
        if !interval_cache.contains_key(&key) {
            interval_cache.insert(key.clone(), period.interval_times(g)?);
        }
        let intervals = &interval_cache[&key];

        let mut covariates = Vec::with_capacity(SCALAR_COVARIATES + g as usize);
        covariates.push(test.distance_m.ln());
        covariates.extend_from_slice(&lab.values());
        covariates.push(period.mean_session_length_s);
        covariates.extend_from_slice(intervals);
        rows.push(StudyRow {
            runner_id: test.runner_id.clone(),
            period_index: test.period_index,
            distance_m: test.distance_m,
            performance_s: test.performance_s,
            covariates,
        });
    }

    Ok(StudyTable {
        resolution: g,
        covariate_names: covariate_names(g),
        rows,
    })
}

/// Picks `count` test runners deterministically from `seed`.
pub fn choose_test_runners(runners: &[String], count: usize, seed: u64) -> Result<BTreeSet<String>> {
    if runners.len() < count + 1 {
        return Err(Error::arg(format!(
            "need at least {} runners to hold {count} out, found {}",
            count + 1,
            runners.len()
        )));
    }
    let mut sorted: Vec<String> = runners.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() < count + 1 {
        return Err(Error::arg(format!(
            "need at least {} distinct runners to hold {count} out, found {}",
            count + 1,
            sorted.len()
        )));
    }
    let mut rng = rng_for(seed, &[TAG_SPLIT]);
    sorted.shuffle(&mut rng);
    Ok(sorted.into_iter().take(count).collect())
}

/// Splits a table into estimation and test sets by runner: every row of a
/// selected runner goes to the test side. Deterministic under `seed`.
pub fn split_by_runner(
    table: &StudyTable,
    test_runner_count: usize,
    seed: u64,
) -> Result<(StudyTable, StudyTable)> {
    let runners = table.runners();
    let test_runners = choose_test_runners(&runners, test_runner_count, seed)?;
    let (test_rows, est_rows): (Vec<StudyRow>, Vec<StudyRow>) = table
        .rows
        .iter()
        .cloned()
        .partition(|row| test_runners.contains(&row.runner_id));
    let make = |rows| StudyTable {
        resolution: table.resolution,
        covariate_names: table.covariate_names.clone(),
        rows,
    };
    Ok((make(est_rows), make(test_rows)))
}

/// The joinable study inputs, prior to discretisation at a resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyData {
    pub field_tests: Vec<FieldTest>,
    pub lab_results: Vec<LabResult>,
    pub periods: PeriodProfiles,
}

impl StudyData {
    pub fn build_table(&self, g: u32) -> Result<StudyTable> {
        build_table(&self.field_tests, &self.lab_results, &self.periods, g)
    }

    pub fn runners(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .field_tests
            .iter()
            .map(|t| t.runner_id.as_str())
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Runner-level split of the raw study inputs; uses the same runner
    /// choice as [`split_by_runner`] for any resolution.
    pub fn split_by_runner(&self, test_runner_count: usize, seed: u64) -> Result<(StudyData, StudyData)> {
        let runners = self.runners();
        let test_runners = choose_test_runners(&runners, test_runner_count, seed)?;
        let side = |test: bool| StudyData {
            field_tests: self
                .field_tests
                .iter()
                .filter(|t| test_runners.contains(&t.runner_id) == test)
                .cloned()
                .collect(),
            lab_results: self
                .lab_results
                .iter()
                .filter(|l| test_runners.contains(&l.runner_id) == test)
                .cloned()
                .collect(),
            periods: PeriodProfiles {
                periods: self
                    .periods
                    .periods
                    .iter()
                    .filter(|p| test_runners.contains(&p.runner_id) == test)
                    .cloned()
                    .collect(),
                uninformative: self
                    .periods
                    .uninformative
                    .iter()
                    .filter(|k| test_runners.contains(&k.runner_id) == test)
                    .cloned()
                    .collect(),
            },
        };
        Ok((side(false), side(true)))
    }
}

pub const FIELD_TEST_CSV_HEADER: [&str; 4] =
    ["runner_id", "period_index", "distance_m", "performance_s"];

pub const LAB_CSV_HEADER: [&str; 10] = [
    "runner_id",
    "period_index",
    "weight_kg",
    "height_cm",
    "age_y",
    "vo2max_ml",
    "vo2max_kmh",
    "economy_ml",
    "economy_kcal",
    "obla_ms",
];

pub fn read_field_tests<R: Read>(reader: R) -> Result<Vec<FieldTest>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    if headers.iter().ne(FIELD_TEST_CSV_HEADER) {
        return Err(Error::parse(
            1,
            format!("expected header `{}`", FIELD_TEST_CSV_HEADER.join(",")),
        ));
    }
    let mut tests = Vec::new();
    for row in csv_reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            return Err(Error::parse(line, "expected 4 fields"));
        }
        let test = FieldTest {
            runner_id: row[0].to_string(),
            period_index: row[1]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad period_index `{}`", &row[1])))?,
            distance_m: row[2]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad distance `{}`", &row[2])))?,
            performance_s: row[3]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad performance `{}`", &row[3])))?,
        };
        test.validate(line)?;
        tests.push(test);
    }
    Ok(tests)
}

pub fn write_field_tests_csv<W: Write>(writer: W, tests: &[FieldTest]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(FIELD_TEST_CSV_HEADER)?;
    for t in tests {
        out.write_record(&[
            t.runner_id.clone(),
            t.period_index.to_string(),
            format_f64(t.distance_m),
            format_f64(t.performance_s),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_lab_results<R: Read>(reader: R) -> Result<Vec<LabResult>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    if headers.iter().ne(LAB_CSV_HEADER) {
        return Err(Error::parse(
            1,
            format!("expected header `{}`", LAB_CSV_HEADER.join(",")),
        ));
    }
    let mut results = Vec::new();
    for row in csv_reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 10 {
            return Err(Error::parse(line, "expected 10 fields"));
        }
        let field = |idx: usize| -> Result<f64> {
            row[idx]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad {} `{}`", LAB_CSV_HEADER[idx], &row[idx])))
        };
        let lab = LabResult {
            runner_id: row[0].to_string(),
            period_index: row[1]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad period_index `{}`", &row[1])))?,
            weight_kg: field(2)?,
            height_cm: field(3)?,
            age_y: field(4)?,
            vo2max_ml: field(5)?,
            vo2max_kmh: field(6)?,
            economy_ml: field(7)?,
            economy_kcal: field(8)?,
            obla_ms: field(9)?,
        };
        lab.validate(line)?;
        results.push(lab);
    }
    Ok(results)
}

pub fn write_lab_results_csv<W: Write>(writer: W, results: &[LabResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(LAB_CSV_HEADER)?;
    for l in results {
        out.write_record(&[
            l.runner_id.clone(),
            l.period_index.to_string(),
            format_f64(l.weight_kg),
            format_f64(l.height_cm),
            format_f64(l.age_y),
            format_f64(l.vo2max_ml),
            format_f64(l.vo2max_kmh),
            format_f64(l.economy_ml),
            format_f64(l.economy_kcal),
            format_f64(l.obla_ms),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpeedGrid;
    use crate::profile::PeriodProfile;

    fn period(runner: &str, index: u32) -> PeriodProfile {
        let grid = SpeedGrid::new(5).unwrap();
        PeriodProfile {
            runner_id: runner.into(),
            period_index: index,
            grid,
            mean_values: vec![600.0, 600.0, 300.0, 100.0, 0.0, 0.0],
            mean_session_length_s: 650.0,
            session_count: 3,
        }
    }

    fn lab(runner: &str, index: u32) -> LabResult {
        LabResult {
            runner_id: runner.into(),
            period_index: index,
            weight_kg: 65.0,
            height_cm: 178.0,
            age_y: 28.0,
            vo2max_ml: 68.0,
            vo2max_kmh: 19.5,
            economy_ml: 200.0,
            economy_kcal: 1.0,
            obla_ms: 4.3,
        }
    }

    fn tests_for(runner: &str, index: u32) -> Vec<FieldTest> {
        FIELD_TEST_DISTANCES_M
            .iter()
            .map(|&d| FieldTest {
                runner_id: runner.into(),
                period_index: index,
                distance_m: d,
                performance_s: 0.25 * d,
            })
            .collect()
    }

    fn one_runner_data() -> StudyData {
        StudyData {
            field_tests: tests_for("R01", 1),
            lab_results: vec![lab("R01", 1)],
            periods: PeriodProfiles {
                periods: vec![period("R01", 1)],
                uninformative: vec![],
            },
        }
    }

    #[test]
    fn dimensions_for_one_field_test() {
        let table = one_runner_data().build_table(5).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.covariate_names.len(), 15);
        for row in &table.rows {
            assert_eq!(row.covariates.len(), 15);
        }
    }

    #[test]
    fn response_is_log_performance() {
        let data = one_runner_data();
        let table = data.build_table(5).unwrap();
        let row = &table.rows[0];
        assert_eq!(row.performance_s, 300.0);
        assert!((row.response() - 300.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn covariate_block_identical_across_distances() {
        let table = one_runner_data().build_table(5).unwrap();
        let block = |row: &StudyRow| row.covariates[1..].to_vec();
        assert_eq!(block(&table.rows[0]), block(&table.rows[1]));
        assert_eq!(block(&table.rows[0]), block(&table.rows[2]));
        assert_ne!(table.rows[0].covariates[0], table.rows[1].covariates[0]);
    }

    #[test]
    fn uninformative_periods_are_excluded() {
        let mut data = one_runner_data();
        data.field_tests.extend(tests_for("R01", 2));
        data.lab_results.push(lab("R01", 2));
        data.periods.uninformative.push(PeriodKey {
            runner_id: "R01".into(),
            period_index: 2,
        });
        let table = data.build_table(5).unwrap();
        assert_eq!(table.rows.len(), 3);
    }

    #[test]
    fn missing_lab_is_a_join_error() {
        let mut data = one_runner_data();
        data.lab_results.clear();
        assert!(matches!(
            data.build_table(5),
            Err(Error::MissingJoin { what: "lab result", .. })
        ));
    }

    #[test]
    fn study_design_row_count() {
        // 14 runners x 4 periods x 3 distances minus 2 dropped periods x 3.
        let mut data = StudyData::default();
        for r in 1..=14 {
            let runner = format!("R{r:02}");
            for p in 1..=4 {
                data.field_tests.extend(tests_for(&runner, p));
                data.lab_results.push(lab(&runner, p));
                let dropped = (runner == "R12" || runner == "R14") && p == 4;
                if dropped {
                    data.periods.uninformative.push(PeriodKey {
                        runner_id: runner.clone(),
                        period_index: p,
                    });
                } else {
                    data.periods.periods.push(period(&runner, p));
                }
            }
        }
        let table = data.build_table(5).unwrap();
        assert_eq!(table.rows.len(), 162);

        // With the two short-period runners in the estimation side, the
        // split reproduces the study shape: 114 estimation rows for 10
        // runners, 48 test rows for 4.
        let (est, test) = split_by_runner(&table, 4, 5).unwrap();
        assert_eq!(est.runners().len(), 10);
        assert_eq!(test.runners().len(), 4);
        assert_eq!(est.rows.len(), 114);
        assert_eq!(test.rows.len(), 48);
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let mut data = StudyData::default();
        for r in 1..=6 {
            let runner = format!("R{r:02}");
            data.field_tests.extend(tests_for(&runner, 1));
            data.lab_results.push(lab(&runner, 1));
            data.periods.periods.push(period(&runner, 1));
        }
        let table = data.build_table(5).unwrap();
        let (est1, test1) = split_by_runner(&table, 2, 7).unwrap();
        let (est2, test2) = split_by_runner(&table, 2, 7).unwrap();
        assert_eq!(est1, est2);
        assert_eq!(test1, test2);

        let est_runners: BTreeSet<_> = est1.runners().into_iter().collect();
        let test_runners: BTreeSet<_> = test1.runners().into_iter().collect();
        assert!(est_runners.is_disjoint(&test_runners));
        assert_eq!(est_runners.len() + test_runners.len(), 6);

        let (data_est, data_test) = data.split_by_runner(2, 7).unwrap();
        let data_test_runners: BTreeSet<_> = data_test.runners().into_iter().collect();
        assert_eq!(data_test_runners, test_runners);
        assert_eq!(data_est.runners().len(), 4);
    }

    #[test]
    fn too_few_runners_error() {
        let table = one_runner_data().build_table(5).unwrap();
        assert!(matches!(
            split_by_runner(&table, 4, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn field_test_csv_round_trip_and_validation() {
        let tests = tests_for("R01", 1);
        let mut buf = Vec::new();
        write_field_tests_csv(&mut buf, &tests).unwrap();
        let back = read_field_tests(buf.as_slice()).unwrap();
        assert_eq!(back, tests);

        let bad = "runner_id,period_index,distance_m,performance_s\nR01,1,1500,200\n";
        assert!(matches!(read_field_tests(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn lab_csv_rejects_non_positive_values() {
        let bad = "runner_id,period_index,weight_kg,height_cm,age_y,vo2max_ml,vo2max_kmh,economy_ml,economy_kcal,obla_ms\n\
                   R01,1,65,178,28,68,19.5,200,0,4.3\n";
        assert!(matches!(read_lab_results(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
