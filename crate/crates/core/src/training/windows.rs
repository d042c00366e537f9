use serde::{Deserialize, Serialize};

use crate::data::CaseSeries;
use crate::error::{Error, Result};

/// Input window length and forecast offsets (days past the window's last day).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub window_len: usize,
    pub offsets: Vec<usize>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window_len: 14,
            offsets: vec![1, 3, 5],
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::Config("window_len must be at least 1".into()));
        }
        if self.offsets.is_empty() || self.offsets.contains(&0) {
            return Err(Error::Config("offsets must be a non-empty set of positive days".into()));
        }
        if self.offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("offsets must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn max_offset(&self) -> usize {
        self.offsets.iter().copied().max().unwrap_or(0)
    }

    /// Shortest series that yields one sample.
    pub fn min_len(&self) -> usize {
        self.window_len + self.max_offset()
    }
}

/// One supervised example: `window_len` days of `[infections, deaths]` and
/// the two channels at each offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub start: usize,
    pub inputs: Vec<Vec<f64>>,
    /// `targets[o]` = `[infections, deaths]` at `offsets[o]`.
    pub targets: Vec<[f64; 2]>,
    /// Largest day index read by this sample.
    pub max_index: usize,
}

pub fn make_windows(series: &CaseSeries, spec: &WindowSpec) -> Result<Vec<Sample>> {
    windows_from_channels(&series.infections, &series.deaths, spec)
}

pub fn windows_from_channels(
    infections: &[f64],
    deaths: &[f64],
    spec: &WindowSpec,
) -> Result<Vec<Sample>> {
    spec.validate()?;
    if infections.len() != deaths.len() {
        return Err(Error::Shape("channel lengths differ".into()));
    }
    let len = infections.len();
    if len < spec.min_len() {
        return Err(Error::Data(format!(
            "series of {len} days is too short: window {} + offset {} needs at least {} days",
            spec.window_len,
            spec.max_offset(),
            spec.min_len()
        )));
    }
    let count = len - spec.min_len() + 1;
    Ok((0..count)
        .map(|start| {
            let last = start + spec.window_len - 1;
            Sample {
                start,
                inputs: (start..=last)
                    .map(|t| vec![infections[t], deaths[t]])
                    .collect(),
                targets: spec
                    .offsets
                    .iter()
                    .map(|o| [infections[last + o], deaths[last + o]])
                    .collect(),
                max_index: last + spec.max_offset(),
            }
        })
        .collect())
}

/// Withholds the last `test_days` days.
pub fn split_train_test(series: &CaseSeries, test_days: usize) -> Result<(CaseSeries, CaseSeries)> {
    let len = series.len();
    if len <= test_days {
        return Err(Error::Data(format!(
            "{}: {len} days cannot hold a {test_days}-day test buffer",
            series.key
        )));
    }
    let cut = len - test_days;
    let train = series.prefix(cut);
    let test = CaseSeries {
        start_date: series.start_date + chrono::Days::new(cut as u64),
        infections: series.infections[cut..].to_vec(),
        deaths: series.deaths[cut..].to_vec(),
        ..series.clone()
    };
    Ok((train, test))
}
