//! Ingestion of static demographic/economic tables and daily cumulative case
//! reports, joined per county on the FIPS code.

mod cases;
mod census;
mod features;
mod repair;
mod store;
mod usda;

pub use cases::{date_from_filename, parse_daily_cases, DailyCases};
pub use census::{parse_census, CensusOptions, CENSUS_VALUE_COLUMNS};
pub use features::{build_static_matrix, FeatureManifest, StaticMatrix};
pub use repair::{normalize_by_population, repair_monotone};
pub use store::{entity_path, load_store, save_store, EntityStore, MANIFEST_FILE};
pub use usda::{parse_usda, UsdaOptions, USDA_VALUE_COLUMNS};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Five-digit state+county FIPS code, zero padded.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityKey(String);

impl EntityKey {
    pub fn from_parts(state: u32, county: u32) -> Result<Self> {
        if state == 0 || state > 99 || county > 999 {
            return Err(Error::Data(format!("invalid FIPS parts {state}/{county}")));
        }
        Ok(EntityKey(format!("{state:02}{county:03}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn state(&self) -> &str {
        &self.0[..2]
    }

    pub fn county(&self) -> &str {
        &self.0[2..]
    }
}

impl FromStr for EntityKey {
    type Err = Error;

    /// Accepts `"39035"`, `"1001"` (padded to `"01001"`) and float-formatted
    /// codes such as `"39035.0"` that some daily reports carry.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let digits = match s.split_once('.') {
            Some((int, frac)) if frac.chars().all(|c| c == '0') => int,
            Some(_) => return Err(Error::Data(format!("invalid FIPS code {s:?}"))),
            None => s,
        };
        if digits.is_empty() || digits.len() > 5 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Data(format!("invalid FIPS code {s:?}")));
        }
        let padded = format!("{digits:0>5}");
        if &padded[..2] == "00" {
            return Err(Error::Data(format!("FIPS code {s:?} has a zero state prefix")));
        }
        Ok(EntityKey(padded))
    }
}

impl TryFrom<String> for EntityKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EntityKey> for String {
    fn from(k: EntityKey) -> String {
        k.0
    }
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Standardized static features of one entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub key: EntityKey,
    pub values: Vec<f64>,
}

/// Daily cumulative infections and deaths, one value per calendar day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSeries {
    pub key: EntityKey,
    pub start_date: NaiveDate,
    pub infections: Vec<f64>,
    pub deaths: Vec<f64>,
    pub population: Option<u64>,
    pub normalized: bool,
}

impl CaseSeries {
    pub fn len(&self) -> usize {
        self.infections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infections.is_empty()
    }

    /// Per-day input vectors `[infections, deaths]`.
    pub fn channels(&self) -> Vec<Vec<f64>> {
        self.infections
            .iter()
            .zip(&self.deaths)
            .map(|(i, d)| vec![*i, *d])
            .collect()
    }

    /// First `days` days.
    pub fn prefix(&self, days: usize) -> CaseSeries {
        let days = days.min(self.len());
        CaseSeries {
            infections: self.infections[..days].to_vec(),
            deaths: self.deaths[..days].to_vec(),
            ..self.clone()
        }
    }

    /// Both channels passed through [`repair_monotone`].
    pub fn repaired(&self) -> CaseSeries {
        CaseSeries {
            infections: repair_monotone(&self.infections),
            deaths: repair_monotone(&self.deaths),
            ..self.clone()
        }
    }
}

/// An entity with its standardized static vector and normalized series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub key: EntityKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub statics: Vec<f64>,
    pub series: CaseSeries,
}

/// A named feature table keyed by entity; `None` marks a missing cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<EntityKey, Vec<Option<f64>>>,
    pub entity_names: BTreeMap<EntityKey, String>,
    pub report: ParseReport,
}

impl FeatureTable {
    pub fn get(&self, key: &EntityKey, feature: &str) -> Option<f64> {
        let idx = self.names.iter().position(|n| n == feature)?;
        self.rows.get(key)?.get(idx).copied().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Per-file parse bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub errors: Vec<RowError>,
    pub imputed: usize,
    pub warnings: Vec<String>,
}

impl ParseReport {
    fn row_error(&mut self, line: u64, message: impl Into<String>) {
        self.rows_skipped += 1;
        self.errors.push(RowError {
            line,
            message: message.into(),
        });
    }
}

/// Parses a numeric cell. Blank → `Ok(None)`; thousands separators, `$`
/// and `%` are tolerated.
pub(crate) fn parse_number(cell: &str) -> std::result::Result<Option<f64>, String> {
    let cleaned: String = cell
        .trim()
        .chars()
        .filter(|c| !matches!(c, ',' | '$' | '%' | '"'))
        .collect();
    if cleaned.is_empty() || cleaned.eq_ignore_ascii_case("na") || cleaned == "." {
        return Ok(None);
    }
    cleaned
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| format!("unparseable number {:?}", cell.trim()))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub(crate) fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
        .ok_or_else(|| Error::Schema {
            column: name.to_string(),
        })
}

/// Options for [`assemble_entities`].
#[derive(Clone, Debug, Default)]
pub struct AssembleOptions {
    pub state_filter: Option<String>,
}

/// Result of joining the three sources.
#[derive(Clone, Debug)]
pub struct Assembled {
    pub records: Vec<EntityRecord>,
    pub manifest: FeatureManifest,
    pub skipped: Vec<(EntityKey, String)>,
}

/// Joins census, USDA and case sources into normalized per-entity records.
/// Entities need a census population and a case series; the final series is
/// repaired and then divided by population.
pub fn assemble_entities(
    census: &FeatureTable,
    usda: &FeatureTable,
    cases: &DailyCases,
    opts: &AssembleOptions,
) -> Result<Assembled> {
    let mut keys = Vec::new();
    let mut skipped = Vec::new();
    for key in cases.series.keys() {
        if let Some(state) = &opts.state_filter {
            if key.state() != state {
                continue;
            }
        }
        match census.get(key, census::POPULATION_FEATURE) {
            Some(pop) if pop >= 1.0 => keys.push(key.clone()),
            _ => skipped.push((key.clone(), "no census population".to_string())),
        }
    }
    if keys.is_empty() {
        return Err(Error::Data("no entity has both a case series and a census population".into()));
    }
    let matrix = build_static_matrix(&[census, usda], &keys)?;
    let mut records = Vec::with_capacity(keys.len());
    for key in &keys {
        let population = census.get(key, census::POPULATION_FEATURE).unwrap_or(0.0) as u64;
        let raw = &cases.series[key];
        let series = normalize_by_population(&raw.repaired(), population)?;
        records.push(EntityRecord {
            key: key.clone(),
            name: census.entity_names.get(key).cloned(),
            statics: matrix.features[key].values.clone(),
            series,
        });
    }
    Ok(Assembled {
        records,
        manifest: matrix.manifest,
        skipped,
    })
}
