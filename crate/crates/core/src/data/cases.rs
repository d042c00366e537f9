use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;

use super::census::lossy_record;
use super::{column_index, parse_number, CaseSeries, EntityKey};
use crate::error::{Error, Result};

/// Raw (unrepaired) cumulative series over one contiguous date range.
#[derive(Clone, Debug, Default)]
pub struct DailyCases {
    pub series: BTreeMap<EntityKey, CaseSeries>,
    pub duplicate_warnings: usize,
    pub files: usize,
}

/// Finds an `MM-DD-YYYY` date anywhere in a file name.
pub fn date_from_filename(name: &str) -> Result<NaiveDate> {
    let stem = name.rsplit(['/', '\\']).next().unwrap_or(name);
    for b in stem.as_bytes().windows(10) {
        let shape_ok = b.iter().enumerate().all(|(i, c)| match i {
            2 | 5 => *c == b'-',
            _ => c.is_ascii_digit(),
        });
        if !shape_ok {
            continue;
        }
        let window = std::str::from_utf8(b).expect("ascii digits and dashes");
        if let Ok(d) = NaiveDate::parse_from_str(window, "%m-%d-%Y") {
            return Ok(d);
        }
    }
    Err(Error::Input(format!("no MM-DD-YYYY date in file name {name:?}")))
}

#[derive(Default)]
struct DayValue {
    confirmed: Option<f64>,
    deaths: Option<f64>,
}

/// Parses daily report files `(file name, contents)`. Days without a value
/// carry the last known value forward; days before the first report are 0.
pub fn parse_daily_cases<I, R>(files: I) -> Result<DailyCases>
where
    I: IntoIterator<Item = (String, R)>,
    R: Read,
{
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<EntityKey, DayValue>> = BTreeMap::new();
    let mut out = DailyCases::default();
    for (name, input) in files {
        let date = date_from_filename(&name)?;
        out.files += 1;
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let headers = lossy_record(reader.byte_headers()?);
        let fips = column_index(&headers, "FIPS")?;
        let confirmed = column_index(&headers, "Confirmed")?;
        let deaths = column_index(&headers, "Deaths")?;
        let day = by_date.entry(date).or_default();
        for record in reader.byte_records() {
            let record = lossy_record(&record?);
            let field = |i: usize| record.get(i).unwrap_or("").trim();
            let Ok(key) = field(fips).parse::<EntityKey>() else {
                continue;
            };
            let value = DayValue {
                confirmed: parse_number(field(confirmed)).ok().flatten(),
                deaths: parse_number(field(deaths)).ok().flatten(),
            };
            if day.insert(key, value).is_some() {
                out.duplicate_warnings += 1;
            }
        }
    }
    let (Some(&first), Some(&last)) = (by_date.keys().next(), by_date.keys().next_back()) else {
        return Ok(out);
    };
    let days = (last - first).num_days() as usize + 1;

    let mut keys: Vec<EntityKey> = by_date.values().flat_map(|m| m.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    for key in keys {
        let mut infections = Vec::with_capacity(days);
        let mut deaths = Vec::with_capacity(days);
        let (mut last_c, mut last_d) = (0.0, 0.0);
        for offset in 0..days {
            let date = first + chrono::Days::new(offset as u64);
            if let Some(v) = by_date.get(&date).and_then(|m| m.get(&key)) {
                if let Some(c) = v.confirmed {
                    last_c = c;
                }
                if let Some(d) = v.deaths {
                    last_d = d;
                }
            }
            infections.push(last_c);
            deaths.push(last_d);
        }
        out.series.insert(
            key.clone(),
            CaseSeries {
                key,
                start_date: first,
                infections,
                deaths,
                population: None,
                normalized: false,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(name: &str, body: &str) -> (String, std::io::Cursor<Vec<u8>>) {
        (
            name.to_string(),
            std::io::Cursor::new(format!("FIPS,Admin2,Province_State,Confirmed,Deaths\n{body}").into_bytes()),
        )
    }

    #[test]
    fn filename_dates() {
        assert_eq!(
            date_from_filename("csse/09-18-2020.csv").unwrap(),
            NaiveDate::from_ymd_opt(2020, 9, 18).unwrap()
        );
        assert!(matches!(date_from_filename("latest.csv"), Err(Error::Input(_))));
        assert!(date_from_filename("13-45-2020.csv").is_err());
    }

    #[test]
    fn forward_fills_missing_days() {
        let cases = parse_daily_cases(vec![
            file("03-01-2020.csv", "39035,Cuyahoga,Ohio,5,0\n"),
            file("03-03-2020.csv", "39035,Cuyahoga,Ohio,9,1\n39007,Ashtabula,Ohio,2,0\n"),
        ])
        .unwrap();
        let k: EntityKey = "39035".parse().unwrap();
        assert_eq!(cases.series[&k].infections, vec![5.0, 5.0, 9.0]);
        assert_eq!(cases.series[&k].deaths, vec![0.0, 0.0, 1.0]);
        let late: EntityKey = "39007".parse().unwrap();
        assert_eq!(cases.series[&late].infections, vec![0.0, 0.0, 2.0]);
        assert!(!cases.series.contains_key(&"39001".parse().unwrap()));
    }

    #[test]
    fn decreases_are_preserved_raw() {
        let cases = parse_daily_cases(vec![
            file("03-01-2020.csv", "39035.0,Cuyahoga,Ohio,10,1\n"),
            file("03-02-2020.csv", "39035.0,Cuyahoga,Ohio,8,1\n"),
        ])
        .unwrap();
        let k: EntityKey = "39035".parse().unwrap();
        assert_eq!(cases.series[&k].infections, vec![10.0, 8.0]);
    }

    #[test]
    fn duplicates_last_wins() {
        let cases = parse_daily_cases(vec![file(
            "03-01-2020.csv",
            "39035,Cuyahoga,Ohio,1,0\n39035,Cuyahoga,Ohio,4,0\n,Unassigned,Ohio,3,0\n",
        )])
        .unwrap();
        assert_eq!(cases.duplicate_warnings, 1);
        assert_eq!(cases.series[&"39035".parse().unwrap()].infections, vec![4.0]);
    }

    #[test]
    fn bad_filename_is_an_input_error() {
        assert!(matches!(
            parse_daily_cases(vec![file("cases.csv", "")]),
            Err(Error::Input(_))
        ));
    }
}
