//! Small data directory in the public census / USDA / daily-report layouts.

#![allow(dead_code)]

use std::fmt::Write;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;

pub const DAYS: usize = 90;
/// Ohio counties written by [`write_data_dir`]; one Alabama county is added
/// to exercise the state filter.
pub const OHIO: [u32; 6] = [1, 3, 5, 7, 9, 11];

const CENSUS_HEADER: &str = "SUMLEV,STATE,COUNTY,STNAME,CTYNAME,YEAR,AGEGRP,TOT_POP,TOT_MALE,TOT_FEMALE,WA_MALE,WA_FEMALE,BA_MALE,BA_FEMALE,AA_MALE,AA_FEMALE,TOM_MALE,TOM_FEMALE";
const USDA_HEADER: &str = "FIPS_Code,State,Med_HH_Income_Percent_of_State_Total_2019,Median_Household_Income_2019,Unemployment_rate_2019,Unemployment_rate_2020";
const CASES_HEADER: &str = "FIPS,Admin2,Province_State,Country_Region,Last_Update,Lat,Long_,Confirmed,Deaths,Recovered,Active,Combined_Key";

fn population(i: usize) -> f64 {
    20_000.0 + 15_000.0 * i as f64
}

fn logistic(t: f64, r: f64, t0: f64) -> f64 {
    1.0 / (1.0 + (-r * (t - t0)).exp())
}

/// Writes `census.csv`, `usda.csv` and `cases/MM-DD-YYYY.csv` under `dir`.
/// County 39005 reports one downward correction; one daily file is missing.
pub fn write_data_dir(dir: &Path) {
    let counties: Vec<(u32, u32, &str)> = OHIO
        .iter()
        .map(|&c| (39, c, "Ohio"))
        .chain([(1, 1, "Alabama")])
        .collect();

    let mut census = format!("{CENSUS_HEADER}\n");
    // a state total row, which is not a county
    writeln!(census, "040,39,0,Ohio,Ohio,12,0,11689100,1,1,1,1,1,1,1,1,1,1").unwrap();
    for (i, &(st, co, name)) in counties.iter().enumerate() {
        for year in [11, 12] {
            for ag in 0..3 {
                let pop = population(i) / if ag == 0 { 1.0 } else { 4.0 + ag as f64 };
                let p = pop.round() as u64;
                writeln!(
                    census,
                    "050,{st},{co},{name},County {co},{year},{ag},{p},{},{},{},{},{},{},{},{},{},{}",
                    p / 2,
                    p - p / 2,
                    p * 4 / 10,
                    p * 4 / 10,
                    p / 20 + i as u64 * 30,
                    p / 20,
                    p / 100,
                    p / 90,
                    p / 60,
                    p / 70
                )
                .unwrap();
            }
        }
    }
    fs::write(dir.join("census.csv"), census).unwrap();

    let mut usda = format!("{USDA_HEADER}\n0,US,100,65000,3.7,8.1\n39000,OH,100,56000,4.2,8.2\n");
    for (i, &(st, co, _)) in counties.iter().enumerate() {
        let abbr = if st == 39 { "OH" } else { "AL" };
        writeln!(
            usda,
            "{},{abbr},{},\"{}\",{},{}",
            st * 1000 + co,
            80.0 + 5.0 * i as f64,
            format_thousands(45_000 + 3_000 * i as u64),
            3.5 + 0.2 * i as f64,
            7.5 + 0.4 * i as f64
        )
        .unwrap();
    }
    fs::write(dir.join("usda.csv"), usda).unwrap();

    let cases = dir.join("cases");
    fs::create_dir_all(&cases).unwrap();
    let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
    for day in 0..DAYS {
        if day == 40 {
            continue;
        }
        let date = start + chrono::Days::new(day as u64);
        let mut text = format!("{CASES_HEADER}\n");
        for (i, &(st, co, name)) in counties.iter().enumerate() {
            let pop = population(i);
            let lag = 4.0 * (i % 3) as f64;
            let mut confirmed = (0.05 * pop * logistic(day as f64, 0.12, 40.0 + lag)).round();
            if st == 39 && co == 5 && day == 50 {
                confirmed -= 25.0;
            }
            let deaths = (0.01 * confirmed * logistic(day as f64, 0.1, 50.0 + lag)).round();
            writeln!(
                text,
                "{},County {co},{name},US,{} 23:00:00,40.0,-82.0,{confirmed},{deaths},0,{confirmed},\"County {co}, {name}, US\"",
                st * 1000 + co,
                date.format("%Y-%m-%d")
            )
            .unwrap();
        }
        writeln!(text, ",Unassigned,Ohio,US,{} 23:00:00,,,3,0,0,3,\"Unassigned, Ohio, US\"", date.format("%Y-%m-%d")).unwrap();
        fs::write(cases.join(format!("{}.csv", date.format("%m-%d-%Y"))), text).unwrap();
    }
}

fn format_thousands(v: u64) -> String {
    format!("{},{:03}", v / 1000, v % 1000)
}

/// Every regular file under `dir` with the given extension, as paths
/// relative to `dir`, sorted.
pub fn files_with_extension(dir: &Path, ext: &str) -> Vec<std::path::PathBuf> {
    walkdir::WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == ext))
        .map(|e| e.path().strip_prefix(dir).unwrap().to_path_buf())
        .collect()
}
