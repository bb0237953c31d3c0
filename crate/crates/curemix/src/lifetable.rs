//! Background (general-population) survival from country/age/sex life
//! tables, used as fixed known quantities.
//!
//! Tables carry conditional probabilities of death q over 5-year age bands
//! up to 85 and a constant annual mortality rate beyond 85. Within-band
//! hazards are constant, h = -ln(1-q)/5 per year, and no-one survives past
//! age 100.

use crate::data::Sex;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

pub const BAND_WIDTH: f64 = 5.0;
pub const OVER_RATE_AGE: f64 = 85.0;
pub const MAX_AGE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum LifeTableError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {detail}")]
    Row { row: usize, detail: String },
    #[error("table for ({country}, {sex}): {detail}")]
    Schema {
        country: String,
        sex: String,
        detail: String,
    },
    #[error("no life table for country `{country}`, sex `{sex}`")]
    MissingKey { country: String, sex: String },
}

/// One country/sex life table: q per contiguous 5-year band plus the
/// constant annual rate applied from age 85 to the 100-year cap.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTable {
    /// (age_start, q) pairs; band i covers [age_start, age_start + 5).
    pub bands: Vec<(f64, f64)>,
    /// Annual mortality rate for ages in [85, 100).
    pub over85_rate: f64,
}

impl LifeTable {
    /// Build a table from bands starting at 0. Bands must be contiguous
    /// 5-year intervals; q must lie strictly inside (0, 1).
    pub fn from_bands(bands: Vec<(f64, f64)>, over85_rate: f64) -> Result<LifeTable, String> {
        if bands.is_empty() {
            return Err("no bands".into());
        }
        let mut expected = 0.0;
        for &(start, q) in &bands {
            if start != expected {
                return Err(format!(
                    "missing band {expected}-{}; found start {start}",
                    expected + BAND_WIDTH
                ));
            }
            if !(q > 0.0 && q < 1.0) {
                return Err(format!("q must lie in (0,1), got {q} at band start {start}"));
            }
            expected += BAND_WIDTH;
        }
        if expected > OVER_RATE_AGE {
            return Err(format!("bands extend past {OVER_RATE_AGE}"));
        }
        if !(over85_rate > 0.0 && over85_rate.is_finite()) {
            return Err(format!(
                "over-85 annual rate must be positive, got {over85_rate}"
            ));
        }
        Ok(LifeTable { bands, over85_rate })
    }

    fn band_hazard(&self, idx: usize) -> f64 {
        let q = self.bands[idx].1;
        -(1.0 - q).ln() / BAND_WIDTH
    }

    /// Annual hazard at an attained age; infinite at or past the 100-year cap.
    pub fn hazard_at(&self, attained_age: f64) -> f64 {
        if attained_age >= MAX_AGE {
            return f64::INFINITY;
        }
        if attained_age >= OVER_RATE_AGE {
            return self.over85_rate;
        }
        let idx = (attained_age / BAND_WIDTH).floor() as usize;
        if idx < self.bands.len() {
            self.band_hazard(idx)
        } else {
            // Past the tabulated bands but below 85 (only possible for
            // partial tables built in tests): fall back to the over-85 rate.
            self.over85_rate
        }
    }

    /// Integrated annual hazard from age `a0` to age `a1`, infinite once
    /// `a1` reaches the 100-year cap.
    pub fn cumulative_hazard_ages(&self, a0: f64, a1: f64) -> f64 {
        debug_assert!(a1 >= a0);
        if a1 >= MAX_AGE {
            return f64::INFINITY;
        }
        let mut total = 0.0;
        // Banded region [a0, min(a1, 85)).
        let banded_end = a1.min(OVER_RATE_AGE);
        let mut a = a0;
        while a < banded_end {
            let idx = (a / BAND_WIDTH).floor() as usize;
            let band_end = (idx as f64 + 1.0) * BAND_WIDTH;
            let seg_end = band_end.min(banded_end);
            let h = if idx < self.bands.len() {
                self.band_hazard(idx)
            } else {
                self.over85_rate
            };
            total += h * (seg_end - a);
            a = seg_end;
        }
        // Constant-rate region [max(a0, 85), a1).
        if a1 > OVER_RATE_AGE {
            total += self.over85_rate * (a1 - a0.max(OVER_RATE_AGE));
        }
        total
    }

    /// log S_b for a subject entering at `age0` years, `t` months later,
    /// with an optional hazard multiplier.
    pub fn log_survival(&self, age0: f64, t_months: f64, multiplier: f64) -> f64 {
        let attained = age0 + t_months / 12.0;
        if attained >= MAX_AGE {
            return f64::NEG_INFINITY;
        }
        -multiplier * self.cumulative_hazard_ages(age0, attained)
    }
}

/// Background survival S_b(age0, t months) with unit hazard multiplier.
pub fn background_survival(table: &LifeTable, age0: f64, t_months: f64) -> f64 {
    table.log_survival(age0, t_months, 1.0).exp()
}

/// Annual background hazard at an attained age.
pub fn background_hazard(table: &LifeTable, attained_age: f64) -> f64 {
    table.hazard_at(attained_age)
}

/// Life tables keyed by (country, sex).
#[derive(Debug, Clone, Default)]
pub struct LifeTableSet {
    tables: BTreeMap<(String, Sex), LifeTable>,
}

impl LifeTableSet {
    pub fn get(&self, country: &str, sex: Sex) -> Result<&LifeTable, LifeTableError> {
        self.tables
            .get(&(country.to_ascii_uppercase(), sex))
            .ok_or_else(|| LifeTableError::MissingKey {
                country: country.to_string(),
                sex: sex.name().to_string(),
            })
    }

    pub fn insert(&mut self, country: &str, sex: Sex, table: LifeTable) {
        self.tables
            .insert((country.to_ascii_uppercase(), sex), table);
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Load life tables from `country,sex,age_start,q5` rows. The row with
/// age_start = 85 carries the over-85 annual rate instead of a q.
pub fn load_life_table(path: &Path) -> Result<LifeTableSet, LifeTableError> {
    let file = std::fs::File::open(path).map_err(|source| LifeTableError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_life_table_reader(file)
}

pub fn load_life_table_reader<R: Read>(reader: R) -> Result<LifeTableSet, LifeTableError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);

    type Raw = BTreeMap<(String, Sex), (Vec<(f64, f64)>, Option<f64>)>;
    let mut raw: Raw = BTreeMap::new();

    for (row_idx, record) in csv_reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        if record.len() < 4 {
            return Err(LifeTableError::Row {
                row,
                detail: "expected columns country,sex,age_start,q5".into(),
            });
        }
        let country = record[0].trim().to_ascii_uppercase();
        let sex = Sex::parse(record[1].trim()).ok_or_else(|| LifeTableError::Row {
            row,
            detail: format!("unknown sex code `{}`", &record[1]),
        })?;
        let age_start: f64 = record[2].trim().parse().map_err(|_| LifeTableError::Row {
            row,
            detail: format!("unparsable age_start `{}`", &record[2]),
        })?;
        let value: f64 = record[3].trim().parse().map_err(|_| LifeTableError::Row {
            row,
            detail: format!("unparsable value `{}`", &record[3]),
        })?;

        let entry = raw.entry((country, sex)).or_default();
        if age_start == OVER_RATE_AGE {
            entry.1 = Some(value);
        } else {
            entry.0.push((age_start, value));
        }
    }

    let mut set = LifeTableSet::default();
    for ((country, sex), (mut bands, over85)) in raw {
        bands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let schema_err = |detail: String| LifeTableError::Schema {
            country: country.clone(),
            sex: sex.name().to_string(),
            detail,
        };
        // Full coverage 0..85 required from file input.
        let expected_bands = (OVER_RATE_AGE / BAND_WIDTH) as usize;
        for (i, w) in bands.windows(2).enumerate() {
            if w[0].0 == w[1].0 {
                return Err(schema_err(format!("duplicate band at {}", w[0].0)));
            }
            let _ = i;
        }
        if bands.len() != expected_bands {
            // Identify the first gap for the error message.
            let mut expected = 0.0;
            for &(start, _) in &bands {
                if start != expected {
                    break;
                }
                expected += BAND_WIDTH;
            }
            return Err(schema_err(format!(
                "missing band {}-{} (have {} of {} bands)",
                expected,
                expected + BAND_WIDTH,
                bands.len(),
                expected_bands
            )));
        }
        let over85 =
            over85.ok_or_else(|| schema_err("missing over-85 annual rate row".to_string()))?;
        for &(start, q) in &bands {
            if !(q > 0.0 && q < 1.0) {
                return Err(schema_err(format!(
                    "q must lie in the open interval (0,1), got {q} at band start {start}"
                )));
            }
        }
        let table = LifeTable::from_bands(bands, over85).map_err(schema_err)?;
        set.insert(&country, sex, table);
    }
    Ok(set)
}
