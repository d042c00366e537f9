use super::CaseSeries;
use crate::error::{Error, Result};

/// Holds the last value before a drop until the series recovers: the running
/// maximum of the input.
pub fn repair_monotone(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut running = f64::NEG_INFINITY;
    for &v in series {
        running = running.max(v);
        out.push(running);
    }
    out
}

/// Divides both channels by `population`.
pub fn normalize_by_population(series: &CaseSeries, population: u64) -> Result<CaseSeries> {
    if population == 0 {
        return Err(Error::Data(format!("{}: population must be positive", series.key)));
    }
    let p = population as f64;
    Ok(CaseSeries {
        infections: series.infections.iter().map(|v| v / p).collect(),
        deaths: series.deaths.iter().map(|v| v / p).collect(),
        population: Some(population),
        normalized: true,
        ..series.clone()
    })
}
