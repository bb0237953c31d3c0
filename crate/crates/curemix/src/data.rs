//! Dataset representation, CSV ingestion, artificial data-cuts, and
//! nonparametric Kaplan-Meier reference curves.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

use crate::numeric::Z_975;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {detail}")]
    Row { row: usize, detail: String },
    #[error("{0}")]
    Argument(String),
    #[error("dataset has no records")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn parse(s: &str) -> Option<Sex> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" => Some(Sex::Female),
            "male" => Some(Sex::Male),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

/// One observed time-to-event row. `endpoint` and `arm` index into the
/// owning dataset's label lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub endpoint: usize,
    pub arm: usize,
    /// Months since randomisation; strictly positive.
    pub time: f64,
    /// true = event observed, false = censored.
    pub event: bool,
    /// Years at randomisation.
    pub age: f64,
    pub sex: Sex,
    pub country: String,
}

#[derive(Debug, Clone)]
pub struct TrialDataset {
    pub records: Vec<SubjectRecord>,
    pub endpoints: Vec<String>,
    pub arms: Vec<String>,
    /// Mean age over all records, used for covariate centering.
    pub age_mean: f64,
}

impl TrialDataset {
    pub fn new(
        records: Vec<SubjectRecord>,
        endpoints: Vec<String>,
        arms: Vec<String>,
    ) -> Result<TrialDataset, DataError> {
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, r) in records.iter().enumerate() {
            if r.endpoint >= endpoints.len() || r.arm >= arms.len() {
                return Err(DataError::Row {
                    row: i + 1,
                    detail: "endpoint or arm index out of range".into(),
                });
            }
        }
        let age_mean = records.iter().map(|r| r.age).sum::<f64>() / records.len() as f64;
        Ok(TrialDataset {
            records,
            endpoints,
            arms,
            age_mean,
        })
    }

    pub fn n_endpoints(&self) -> usize {
        self.endpoints.len()
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    /// Indices of records in cell (arm, endpoint).
    pub fn cell_records(&self, arm: usize, endpoint: usize) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.arm == arm && r.endpoint == endpoint)
            .map(|(i, _)| i)
            .collect()
    }
}

const REQUIRED_COLUMNS: [&str; 8] = [
    "id", "endpoint", "arm", "time", "event", "age", "sex", "country",
];

/// Load a dataset from delimited text with header
/// `id,endpoint,arm,time,event,age,sex,country`.
///
/// Arm and endpoint labels are collected in sorted order so the resulting
/// indices do not depend on row order.
pub fn load_dataset(path: &Path) -> Result<TrialDataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let headers = reader.headers()?.clone();
    let mut col = std::collections::HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        col.insert(h.trim().to_string(), i);
    }
    for required in REQUIRED_COLUMNS {
        if !col.contains_key(required) {
            return Err(DataError::MissingColumn(required.to_string()));
        }
    }
    let idx = |name: &str| col[name];

    struct RawRow {
        id: String,
        endpoint: String,
        arm: String,
        time: f64,
        event: bool,
        age: f64,
        sex: Sex,
        country: String,
    }

    let mut raw = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        let field = |name: &str| record.get(idx(name)).unwrap_or("").trim().to_string();

        let time: f64 = field("time").parse().map_err(|_| DataError::Row {
            row,
            detail: format!("unparsable time `{}`", field("time")),
        })?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(DataError::Row {
                row,
                detail: format!("time must be positive, got {time}"),
            });
        }
        let event = match field("event").as_str() {
            "0" => false,
            "1" => true,
            other => {
                return Err(DataError::Row {
                    row,
                    detail: format!("event must be 0 or 1, got `{other}`"),
                })
            }
        };
        let age: f64 = field("age").parse().map_err(|_| DataError::Row {
            row,
            detail: format!("unparsable age `{}`", field("age")),
        })?;
        if !(age >= 0.0 && age.is_finite()) {
            return Err(DataError::Row {
                row,
                detail: format!("age must be non-negative, got {age}"),
            });
        }
        let sex = Sex::parse(&field("sex")).ok_or_else(|| DataError::Row {
            row,
            detail: format!("unknown sex code `{}`", field("sex")),
        })?;
        let country = field("country").to_ascii_uppercase();
        if !(2..=3).contains(&country.len()) || !country.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(DataError::Row {
                row,
                detail: format!("unknown country code `{}`", field("country")),
            });
        }
        raw.push(RawRow {
            id: field("id"),
            endpoint: field("endpoint"),
            arm: field("arm"),
            time,
            event,
            age,
            sex,
            country,
        });
    }
    if raw.is_empty() {
        return Err(DataError::Empty);
    }

    let endpoints: Vec<String> = raw
        .iter()
        .map(|r| r.endpoint.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let arms: Vec<String> = raw
        .iter()
        .map(|r| r.arm.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let records = raw
        .into_iter()
        .map(|r| SubjectRecord {
            id: r.id,
            endpoint: endpoints.binary_search(&r.endpoint).unwrap(),
            arm: arms.binary_search(&r.arm).unwrap(),
            time: r.time,
            event: r.event,
            age: r.age,
            sex: r.sex,
            country: r.country,
        })
        .collect();

    TrialDataset::new(records, endpoints, arms)
}

/// Write a dataset back out in the canonical column order.
pub fn write_dataset<W: Write>(data: &TrialDataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REQUIRED_COLUMNS)?;
    for r in &data.records {
        w.write_record([
            r.id.as_str(),
            data.endpoints[r.endpoint].as_str(),
            data.arms[r.arm].as_str(),
            &format!("{}", r.time),
            if r.event { "1" } else { "0" },
            &format!("{}", r.age),
            r.sex.name(),
            r.country.as_str(),
        ])?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Artificial data-cut: every record with time > cut becomes censored at the
/// cut; records at or before the cut are unchanged.
pub fn apply_datacut(data: &TrialDataset, cut: f64) -> Result<TrialDataset, DataError> {
    if !(cut > 0.0) {
        return Err(DataError::Argument(format!(
            "cut must be positive, got {cut}"
        )));
    }
    let records = data
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.time > cut {
                r.time = cut;
                r.event = false;
            }
            r
        })
        .collect();
    TrialDataset::new(records, data.endpoints.clone(), data.arms.clone())
}

/// Product-limit estimate with a Greenwood interval on the log-survival
/// scale. Steps are recorded at distinct event times only.
#[derive(Debug, Clone, PartialEq)]
pub struct KMCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
    pub n_risk: Vec<usize>,
}

impl KMCurve {
    /// Step-function evaluation; 1 before the first event time.
    pub fn survival_at(&self, t: f64) -> f64 {
        let mut s = 1.0;
        for (time, surv) in self.times.iter().zip(&self.survival) {
            if *time <= t {
                s = *surv;
            } else {
                break;
            }
        }
        s
    }
}

/// Kaplan-Meier estimator. Censored subjects at a tied time remain in the
/// risk set for events at that time.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KMCurve, DataError> {
    if times.is_empty() {
        return Err(DataError::Argument("empty input".into()));
    }
    if times.len() != events.len() {
        return Err(DataError::Argument(format!(
            "times ({}) and events ({}) differ in length",
            times.len(),
            events.len()
        )));
    }
    if let Some(t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(DataError::Argument(format!(
            "times must be positive, got {t}"
        )));
    }

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());

    let n = times.len();
    let mut curve = KMCurve {
        times: Vec::new(),
        survival: Vec::new(),
        lower95: Vec::new(),
        upper95: Vec::new(),
        n_risk: Vec::new(),
    };

    let mut s = 1.0;
    let mut greenwood = 0.0;
    let mut i = 0;
    let mut removed = 0usize;
    while i < n {
        let t = times[order[i]];
        let mut d = 0usize;
        let mut tied = 0usize;
        while i + tied < n && times[order[i + tied]] == t {
            if events[order[i + tied]] {
                d += 1;
            }
            tied += 1;
        }
        let at_risk = n - removed;
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            let (lower, upper) = if at_risk > d && s > 0.0 {
                greenwood += d as f64 / (at_risk as f64 * (at_risk - d) as f64);
                let se = greenwood.sqrt();
                (
                    (s * (-Z_975 * se).exp()).clamp(0.0, 1.0),
                    (s * (Z_975 * se).exp()).clamp(0.0, 1.0),
                )
            } else {
                s = 0.0;
                (0.0, 0.0)
            };
            curve.times.push(t);
            curve.survival.push(s);
            curve.lower95.push(lower);
            curve.upper95.push(upper);
            curve.n_risk.push(at_risk);
        }
        removed += tied;
        i += tied;
    }
    Ok(curve)
}

/// Write one KM curve as `time,survival,lower95,upper95,n_risk`.
pub fn write_km<W: Write>(curve: &KMCurve, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "survival", "lower95", "upper95", "n_risk"])?;
    for i in 0..curve.times.len() {
        w.write_record([
            format!("{}", curve.times[i]),
            format!("{}", curve.survival[i]),
            format!("{}", curve.lower95[i]),
            format!("{}", curve.upper95[i]),
            format!("{}", curve.n_risk[i]),
        ])?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn record(time: f64, event: bool) -> SubjectRecord {
        SubjectRecord {
            id: "s".into(),
            endpoint: 0,
            arm: 0,
            time,
            event,
            age: 60.0,
            sex: Sex::Female,
            country: "GB".into(),
        }
    }

    fn toy_dataset(rows: &[(f64, bool)]) -> TrialDataset {
        TrialDataset::new(
            rows.iter().map(|&(t, e)| record(t, e)).collect(),
            vec!["OS".into()],
            vec!["arm".into()],
        )
        .unwrap()
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_well_formed_file() {
        let f = write_csv(
            "id,endpoint,arm,time,event,age,sex,country\n\
             p1,OS,ipi,12.5,1,61.0,female,GB\n\
             p2,OS,ipi,30.0,0,55.0,male,US\n",
        );
        let data = load_dataset(f.path()).unwrap();
        assert_eq!(data.records.len(), 2);
        assert!((data.age_mean - 58.0).abs() < 1e-12);
        assert_eq!(data.endpoints, vec!["OS"]);
        assert_eq!(data.arms, vec!["ipi"]);
    }

    #[test]
    fn load_rejects_nonpositive_time_with_row_index() {
        let f = write_csv(
            "id,endpoint,arm,time,event,age,sex,country\n\
             p1,OS,ipi,12.5,1,61.0,female,GB\n\
             p2,OS,ipi,30.0,0,55.0,male,US\n\
             p3,OS,ipi,0,1,47.0,male,US\n",
        );
        match load_dataset(f.path()) {
            Err(DataError::Row { row, detail }) => {
                assert_eq!(row, 3);
                assert!(detail.contains("time"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_event_and_sex_and_missing_column() {
        let f = write_csv(
            "id,endpoint,arm,time,event,age,sex,country\n\
             p1,OS,ipi,12.5,2,61.0,female,GB\n",
        );
        assert!(matches!(
            load_dataset(f.path()),
            Err(DataError::Row { row: 1, .. })
        ));

        let f = write_csv(
            "id,endpoint,arm,time,event,age,sex,country\n\
             p1,OS,ipi,12.5,1,61.0,unknown,GB\n",
        );
        assert!(matches!(load_dataset(f.path()), Err(DataError::Row { .. })));

        let f = write_csv("id,endpoint,arm,time,event,age,sex\np1,OS,ipi,1,1,61,female\n");
        match load_dataset(f.path()) {
            Err(DataError::MissingColumn(c)) => assert_eq!(c, "country"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn datacut_censors_beyond_cut() {
        let data = toy_dataset(&[(40.0, true)]);
        let cut = apply_datacut(&data, 12.0).unwrap();
        assert_eq!(cut.records[0].time, 12.0);
        assert!(!cut.records[0].event);
    }

    #[test]
    fn datacut_beyond_max_time_is_identity() {
        let data = toy_dataset(&[(40.0, true), (12.0, false)]);
        let cut = apply_datacut(&data, 50.0).unwrap();
        assert_eq!(cut.records, data.records);
        assert!(apply_datacut(&data, 0.0).is_err());
        assert!(apply_datacut(&data, -3.0).is_err());
    }

    #[test]
    fn datacut_count_matches_direct_scan() {
        // 100 records, 37 with t > 30: exactly those become censored at 30.
        let rows: Vec<(f64, bool)> = (0..100)
            .map(|i| (if i < 37 { 31.0 + i as f64 } else { 1.0 + i as f64 * 0.2 }, true))
            .collect();
        let data = toy_dataset(&rows);
        let cut = apply_datacut(&data, 30.0).unwrap();
        assert_eq!(cut.records.len(), 100);
        let censored_at_cut = cut
            .records
            .iter()
            .filter(|r| !r.event && r.time == 30.0)
            .count();
        assert_eq!(censored_at_cut, 37);
    }

    #[test]
    fn datacut_is_idempotent_and_composes() {
        let data = toy_dataset(&[(40.0, true), (25.0, true), (10.0, false), (30.0, true)]);
        let once = apply_datacut(&data, 30.0).unwrap();
        let twice = apply_datacut(&once, 30.0).unwrap();
        assert_eq!(once.records, twice.records);

        let c1_then_c2 = apply_datacut(&apply_datacut(&data, 30.0).unwrap(), 12.0).unwrap();
        let direct = apply_datacut(&data, 12.0).unwrap();
        assert_eq!(c1_then_c2.records, direct.records);
    }

    #[test]
    fn km_all_events_hand_fixture() {
        let curve = kaplan_meier(&[1.0, 2.0, 3.0, 4.0], &[true; 4]).unwrap();
        assert_eq!(curve.times, vec![1.0, 2.0, 3.0, 4.0]);
        let expected = [0.75, 0.5, 0.25, 0.0];
        for (s, e) in curve.survival.iter().zip(expected) {
            assert!((s - e).abs() < 1e-12);
        }
        assert_eq!(curve.n_risk, vec![4, 3, 2, 1]);
    }

    #[test]
    fn km_all_censored_is_flat_one() {
        let curve = kaplan_meier(&[1.0, 2.0, 3.0], &[false; 3]).unwrap();
        assert!(curve.times.is_empty());
        assert_eq!(curve.survival_at(10.0), 1.0);
    }

    #[test]
    fn km_with_censoring_hand_fixture() {
        // Events at 1 and 2, censored at 3; risk sets 3, 2, 1.
        let curve = kaplan_meier(&[1.0, 2.0, 3.0], &[true, true, false]).unwrap();
        assert!((curve.survival_at(1.0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((curve.survival_at(3.0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn km_is_invariant_to_row_order() {
        let a = kaplan_meier(&[5.0, 1.0, 3.0, 2.0], &[true, true, false, true]).unwrap();
        let b = kaplan_meier(&[1.0, 2.0, 3.0, 5.0], &[true, true, false, true]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn km_without_censoring_matches_one_minus_ecdf() {
        let times = [0.5, 1.2, 1.2, 3.0, 4.4, 7.1];
        let curve = kaplan_meier(&times, &[true; 6]).unwrap();
        for &t in &times {
            let ecdf = times.iter().filter(|x| **x <= t).count() as f64 / times.len() as f64;
            assert!((curve.survival_at(t) - (1.0 - ecdf)).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn km_interval_bounds_bracket_survival() {
        let times = [1.0, 2.0, 2.0, 3.0, 5.0, 8.0, 9.0];
        let events = [true, false, true, true, false, true, false];
        let curve = kaplan_meier(&times, &events).unwrap();
        for i in 0..curve.times.len() {
            assert!(curve.lower95[i] <= curve.survival[i] + 1e-12);
            assert!(curve.survival[i] <= curve.upper95[i] + 1e-12);
            assert!(curve.lower95[i] >= 0.0 && curve.upper95[i] <= 1.0);
        }
    }

    #[test]
    fn km_tied_censoring_stays_in_risk_set() {
        // Censored at 2 stays at risk for the event at 2.
        let curve = kaplan_meier(&[2.0, 2.0, 4.0], &[true, false, true]).unwrap();
        assert_eq!(curve.n_risk, vec![3, 1]);
        assert!((curve.survival[0] - 2.0 / 3.0).abs() < 1e-12);
    }
}
