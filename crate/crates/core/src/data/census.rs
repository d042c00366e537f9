use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use super::{column_index, parse_number, EntityKey, FeatureTable};
use crate::error::Result;

/// Census population columns pivoted by age group.
pub const CENSUS_VALUE_COLUMNS: [&str; 11] = [
    "TOT_POP",
    "TOT_MALE",
    "TOT_FEMALE",
    "WA_MALE",
    "WA_FEMALE",
    "BA_MALE",
    "BA_FEMALE",
    "AA_MALE",
    "AA_FEMALE",
    "TOM_MALE",
    "TOM_FEMALE",
];

/// All-ages total population, used for normalization.
pub(crate) const POPULATION_FEATURE: &str = "TOT_POP_AG0";

const COUNTY_SUMLEV: u32 = 50;

#[derive(Clone, Debug, Default)]
pub struct CensusOptions {
    /// Keep only rows with this `YEAR` code; `None` keeps the latest per county.
    pub reference_year: Option<u32>,
    /// Two-digit state FIPS prefix.
    pub state_filter: Option<String>,
}

type YearRows = BTreeMap<u32, BTreeMap<u32, Vec<Option<f64>>>>;

/// Parses a county-characteristics census extract, pivoting `AGEGRP` rows
/// into `<COLUMN>_AG<group>` features.
pub fn parse_census<R: Read>(input: R, opts: &CensusOptions) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = lossy_record(reader.byte_headers()?);
    let sumlev = column_index(&headers, "SUMLEV")?;
    let state = column_index(&headers, "STATE")?;
    let county = column_index(&headers, "COUNTY")?;
    let year = column_index(&headers, "YEAR")?;
    let agegrp = column_index(&headers, "AGEGRP")?;
    let value_idx = CENSUS_VALUE_COLUMNS
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let stname = column_index(&headers, "STNAME").ok();
    let ctyname = column_index(&headers, "CTYNAME").ok();

    let mut table = FeatureTable::default();
    let mut by_key: BTreeMap<EntityKey, YearRows> = BTreeMap::new();
    let mut groups = BTreeSet::new();

    for record in reader.byte_records() {
        let record = lossy_record(&record?);
        let line = record.position().map_or(0, |p| p.line());
        table.report.rows_read += 1;
        let field = |i: usize| record.get(i).unwrap_or("").trim();

        let Ok(level) = field(sumlev).parse::<u32>() else {
            table.report.row_error(line, format!("bad SUMLEV {:?}", field(sumlev)));
            continue;
        };
        if level != COUNTY_SUMLEV {
            continue;
        }
        let parsed = (|| {
            let st: u32 = field(state).parse().map_err(|_| "bad STATE".to_string())?;
            let co: u32 = field(county).parse().map_err(|_| "bad COUNTY".to_string())?;
            let yr: u32 = field(year).parse().map_err(|_| "bad YEAR".to_string())?;
            let ag: u32 = field(agegrp).parse().map_err(|_| "bad AGEGRP".to_string())?;
            let key = EntityKey::from_parts(st, co).map_err(|e| e.to_string())?;
            let values = value_idx
                .iter()
                .zip(CENSUS_VALUE_COLUMNS)
                .map(|(&i, name)| parse_number(field(i)).map_err(|e| format!("{name}: {e}")))
                .collect::<std::result::Result<Vec<_>, String>>()?;
            Ok::<_, String>((key, yr, ag, values))
        })();
        let (key, yr, ag, values) = match parsed {
            Ok(v) => v,
            Err(msg) => {
                table.report.row_error(line, msg);
                continue;
            }
        };
        if let Some(filter) = &opts.state_filter {
            if key.state() != filter {
                continue;
            }
        }
        if let (Some(s), Some(c)) = (stname, ctyname) {
            table
                .entity_names
                .entry(key.clone())
                .or_insert_with(|| format!("{}, {}", field(c), field(s)));
        }
        groups.insert(ag);
        by_key
            .entry(key)
            .or_default()
            .entry(yr)
            .or_default()
            .insert(ag, values);
    }

    for g in &groups {
        for col in CENSUS_VALUE_COLUMNS {
            table.names.push(format!("{col}_AG{g}"));
        }
    }
    for (key, years) in by_key {
        let chosen = match opts.reference_year {
            Some(y) => years.get(&y),
            None => years.values().next_back(),
        };
        let Some(rows) = chosen else {
            table.report.warnings.push(format!(
                "{key}: reference year {:?} not present",
                opts.reference_year
            ));
            continue;
        };
        let mut values = Vec::with_capacity(table.names.len());
        for g in &groups {
            match rows.get(g) {
                Some(v) => values.extend_from_slice(v),
                None => values.extend(std::iter::repeat_n(None, CENSUS_VALUE_COLUMNS.len())),
            }
        }
        table.rows.insert(key, values);
    }
    Ok(table)
}

/// Census extracts are frequently Latin-1; decode lossily rather than fail.
pub(crate) fn lossy_record(record: &csv::ByteRecord) -> csv::StringRecord {
    let mut out: csv::StringRecord = record
        .iter()
        .map(|f| String::from_utf8_lossy(f).into_owned())
        .collect();
    out.set_position(record.position().cloned());
    out
}
