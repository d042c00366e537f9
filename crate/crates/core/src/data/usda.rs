use std::io::Read;

use super::census::lossy_record;
use super::{column_index, median, parse_number, EntityKey, FeatureTable};
use crate::error::Result;

pub const USDA_VALUE_COLUMNS: [&str; 4] = [
    "Med_HH_Income_Percent_of_State_Total_2019",
    "Median_Household_Income_2019",
    "Unemployment_rate_2019",
    "Unemployment_rate_2020",
];

#[derive(Clone, Debug, Default)]
pub struct UsdaOptions {
    pub state_filter: Option<String>,
}

/// Parses the county-level economic extract. Blank cells are imputed with
/// the median of the parsed study population; state and national summary
/// rows (county code `000`) are ignored.
pub fn parse_usda<R: Read>(input: R, opts: &UsdaOptions) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = lossy_record(reader.byte_headers()?);
    let fips = column_index(&headers, "FIPS_Code")?;
    let value_idx = USDA_VALUE_COLUMNS
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut table = FeatureTable {
        names: USDA_VALUE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    for record in reader.byte_records() {
        let record = lossy_record(&record?);
        let line = record.position().map_or(0, |p| p.line());
        table.report.rows_read += 1;
        let field = |i: usize| record.get(i).unwrap_or("").trim();

        let code = field(fips);
        if code.trim_start_matches('0').is_empty() || code.ends_with("000") && code.len() >= 4 {
            continue;
        }
        let key: EntityKey = match code.parse() {
            Ok(k) => k,
            Err(e) => {
                table.report.row_error(line, e.to_string());
                continue;
            }
        };
        if let Some(filter) = &opts.state_filter {
            if key.state() != filter {
                continue;
            }
        }
        let values = value_idx
            .iter()
            .zip(USDA_VALUE_COLUMNS)
            .map(|(&i, name)| parse_number(field(i)).map_err(|e| format!("{name}: {e}")))
            .collect::<std::result::Result<Vec<_>, String>>();
        match values {
            Ok(v) => {
                if table.rows.insert(key.clone(), v).is_some() {
                    table.report.warnings.push(format!("{key}: duplicate row, last wins"));
                }
            }
            Err(msg) => table.report.row_error(line, msg),
        }
    }

    for col in 0..table.names.len() {
        let mut present: Vec<f64> = table.rows.values().filter_map(|r| r[col]).collect();
        let Some(fill) = median(&mut present) else {
            continue;
        };
        for row in table.rows.values_mut() {
            if row[col].is_none() {
                row[col] = Some(fill);
                table.report.imputed += 1;
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    const HEADER: &str = "FIPS_Code,State,Med_HH_Income_Percent_of_State_Total_2019,Median_Household_Income_2019,Unemployment_rate_2019,Unemployment_rate_2020";

    #[test]
    fn direct_mapping_and_padding() {
        let csv = format!(
            "{HEADER}\n39035,OH,90.1,\"50,366\",4.1,9.4\n1001,AL,112.5,58233,2.7,5.3\n39000,OH,100,56000,4.2,8.2\n0,US,100,65000,3.7,8.1\n"
        );
        let t = parse_usda(csv.as_bytes(), &UsdaOptions::default()).unwrap();
        let oh: EntityKey = "39035".parse().unwrap();
        let al: EntityKey = "01001".parse().unwrap();
        assert_eq!(t.get(&oh, "Unemployment_rate_2019"), Some(4.1));
        assert_eq!(t.get(&oh, "Median_Household_Income_2019"), Some(50366.0));
        assert_eq!(t.get(&al, "Unemployment_rate_2020"), Some(5.3));
        assert_eq!(t.rows.len(), 2);
    }

    #[test]
    fn blank_income_is_median_imputed() {
        let csv = format!(
            "{HEADER}\n39001,OH,80,40000,4,8\n39003,OH,90,,4,8\n39005,OH,95,52000,4,8\n39007,OH,99,61000,4,8\n"
        );
        let t = parse_usda(csv.as_bytes(), &UsdaOptions::default()).unwrap();
        let mut observed = vec![40000.0, 52000.0, 61000.0];
        observed.sort_by(f64::total_cmp);
        let expected = observed[1];
        let key: EntityKey = "39003".parse().unwrap();
        assert_eq!(t.get(&key, "Median_Household_Income_2019"), Some(expected));
        assert_eq!(t.report.imputed, 1);
    }

    #[test]
    fn missing_column() {
        let csv = "FIPS_Code,State\n39035,OH\n";
        assert!(matches!(
            parse_usda(csv.as_bytes(), &UsdaOptions::default()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn unparseable_row_is_counted() {
        let csv = format!("{HEADER}\n39001,OH,80,abc,4,8\n39003,OH,90,1,4,8\n");
        let t = parse_usda(csv.as_bytes(), &UsdaOptions::default()).unwrap();
        assert_eq!(t.report.rows_skipped, 1);
        assert_eq!(t.report.errors[0].line, 2);
        assert_eq!(t.rows.len(), 1);
    }
}
