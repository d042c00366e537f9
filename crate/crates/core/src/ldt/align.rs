use serde::{Deserialize, Serialize};

use crate::data::{CaseSeries, EntityKey};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignGrid {
    pub lags: Vec<i64>,
    pub scales: Vec<f64>,
}

impl Default for AlignGrid {
    fn default() -> Self {
        AlignGrid {
            lags: (-30..=30).collect(),
            scales: vec![0.75, 1.0, 1.25, 1.5],
        }
    }
}

/// Target day `t` corresponds to donor day `scale_a * t + lag_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAlignment {
    pub donor: EntityKey,
    pub target: EntityKey,
    pub lag_b: i64,
    pub scale_a: f64,
    pub fit_error: f64,
}

impl TrajectoryAlignment {
    pub fn donor_position(&self, t: f64) -> f64 {
        self.scale_a * t + self.lag_b as f64
    }

    /// Last target-time day at which the donor still has data.
    pub fn donor_horizon(&self, donor_len: usize) -> Option<usize> {
        let t = ((donor_len as f64 - 1.0) - self.lag_b as f64) / self.scale_a;
        (t >= 0.0).then(|| (t + 1e-9).floor() as usize)
    }

    /// Days the donor extends past target day `frontier` in target time.
    pub fn extra_days(&self, donor_len: usize, frontier: usize) -> usize {
        self.donor_horizon(donor_len)
            .map_or(0, |h| h.saturating_sub(frontier))
    }
}

/// Linear interpolation at a fractional day; positions before day 0 take
/// the first value.
pub fn sample_at(values: &[f64], pos: f64) -> f64 {
    if pos <= 0.0 {
        return values[0];
    }
    let lo = pos.floor() as usize;
    if lo + 1 >= values.len() {
        return values[values.len() - 1];
    }
    let frac = pos - lo as f64;
    values[lo] * (1.0 - frac) + values[lo + 1] * frac
}

/// Donor channels resampled onto target days `0..days`.
pub fn resample(donor: &CaseSeries, alignment: &TrajectoryAlignment, days: usize) -> (Vec<f64>, Vec<f64>) {
    (0..days)
        .map(|t| {
            let p = alignment.donor_position(t as f64);
            (sample_at(&donor.infections, p), sample_at(&donor.deaths, p))
        })
        .unzip()
}

/// Grid search for the `(a, b)` minimising the mean squared difference
/// over both channels between the target and the resampled donor. Ties go
/// to the smallest `|b|`, then the smallest `|a - 1|`.
pub fn trajectory_align(target: &CaseSeries, donor: &CaseSeries, grid: &AlignGrid) -> Result<TrajectoryAlignment> {
    if grid.lags.is_empty() || grid.scales.is_empty() {
        return Err(Error::Config("alignment grid is empty".into()));
    }
    if let Some(a) = grid.scales.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Config(format!("alignment scale {a} is not positive")));
    }
    if target.is_empty() || donor.is_empty() {
        return Err(Error::Alignment(format!("{} or {} has no data", target.key, donor.key)));
    }
    let n = target.len();
    let last = (n - 1) as f64;
    let mut best: Option<TrajectoryAlignment> = None;
    for &a in &grid.scales {
        for &b in &grid.lags {
            if a * last + b as f64 > (donor.len() - 1) as f64 + 1e-9 {
                continue;
            }
            let mut sse = 0.0;
            for t in 0..n {
                let p = a * t as f64 + b as f64;
                let di = sample_at(&donor.infections, p) - target.infections[t];
                let dd = sample_at(&donor.deaths, p) - target.deaths[t];
                sse += di * di + dd * dd;
            }
            let cand = TrajectoryAlignment {
                donor: donor.key.clone(),
                target: target.key.clone(),
                lag_b: b,
                scale_a: a,
                fit_error: sse / (2 * n) as f64,
            };
            let better = match &best {
                None => true,
                Some(cur) => match cand.fit_error.total_cmp(&cur.fit_error) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => {
                        (b.unsigned_abs(), (a - 1.0).abs()) < (cur.lag_b.unsigned_abs(), (cur.scale_a - 1.0).abs())
                    }
                },
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Alignment(format!(
            "donor {} ({} days) is too short for target {} ({n} days) under every lag and scale",
            donor.key,
            donor.len(),
            target.key
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldt::synthetic::{logistic, GroupParams};
    use chrono::NaiveDate;

    fn series(fips: &str, infections: Vec<f64>) -> CaseSeries {
        CaseSeries {
            key: fips.parse().unwrap(),
            start_date: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            deaths: infections.iter().map(|v| v * 0.02).collect(),
            infections,
            population: Some(1000),
            normalized: true,
        }
    }

    fn curve(t: impl Iterator<Item = f64>) -> Vec<f64> {
        let g = GroupParams { r: 0.15, k: 0.2 };
        t.map(|t| logistic(t, g, 30.0)).collect()
    }

    #[test]
    fn recovers_a_pure_shift() {
        let full = curve((0..80).map(|t| t as f64));
        let target = series("99001", full[..50].to_vec());
        // donor day t + 5 holds target day t
        let mut shifted = vec![full[0]; 5];
        shifted.extend_from_slice(&full[..70]);
        let donor = series("99002", shifted);
        let a = trajectory_align(&target, &donor, &AlignGrid::default()).unwrap();
        assert_eq!((a.scale_a, a.lag_b), (1.0, 5));
        assert!(a.fit_error < 1e-20);
    }

    #[test]
    fn identity_alignment() {
        let full = curve((0..60).map(|t| t as f64));
        let target = series("99001", full[..40].to_vec());
        let donor = series("99002", full.clone());
        let a = trajectory_align(&target, &donor, &AlignGrid::default()).unwrap();
        assert_eq!((a.scale_a, a.lag_b, a.fit_error), (1.0, 0, 0.0));
    }

    #[test]
    fn recovers_time_scale() {
        let donor = series("99002", curve((0..100).map(|t| t as f64)));
        let target = series("99001", curve((0..45).map(|t| 1.5 * t as f64)));
        let a = trajectory_align(&target, &donor, &AlignGrid::default()).unwrap();
        assert_eq!((a.scale_a, a.lag_b), (1.5, 0));
        // half-day positions are interpolated
        assert!(a.fit_error < 1e-6);
    }

    #[test]
    fn too_short_donor() {
        let target = series("99001", vec![0.1; 50]);
        let donor = series("99002", vec![0.1; 5]);
        assert!(matches!(
            trajectory_align(&target, &donor, &AlignGrid::default()),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn interpolation_and_horizon() {
        assert_eq!(sample_at(&[0.0, 10.0, 20.0], 0.25), 2.5);
        assert_eq!(sample_at(&[4.0, 10.0], -3.0), 4.0);
        let al = TrajectoryAlignment {
            donor: "99002".parse().unwrap(),
            target: "99001".parse().unwrap(),
            lag_b: -20,
            scale_a: 1.0,
            fit_error: 0.0,
        };
        // donor of 70 days, 20 days ahead: covers target days up to 89
        assert_eq!(al.donor_horizon(70), Some(89));
        assert_eq!(al.extra_days(70, 69), 20);
    }
}
