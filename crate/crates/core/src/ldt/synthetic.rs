use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{build_static_matrix, repair_monotone, CaseSeries, EntityKey, EntityRecord, FeatureManifest, FeatureTable};
use crate::error::{Error, Result};

/// State code used for generated entities (not a real state).
pub const SYNTH_STATE: u32 = 99;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    /// Logistic growth rate per day.
    pub r: f64,
    /// Final attack fraction in (0, 1].
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenario {
    pub groups: Vec<GroupParams>,
    pub per_group: usize,
    /// Lags are spread evenly over `0..=max_lag` within each group.
    pub max_lag: usize,
    /// Inflection day of a zero-lag entity.
    pub t0: f64,
    pub days: usize,
    /// Deaths follow infections `death_delay` days later at rate `cfr`.
    pub cfr: f64,
    pub death_delay: usize,
    /// Standard deviation of the multiplicative daily noise.
    pub noise: f64,
    /// Standard deviation of the multiplicative noise on statics.
    pub static_noise: f64,
    pub population: u64,
    pub rng_seed: u64,
}

/// Rates from 0.10 to 0.24 per day, capacities from 0.06 to 0.30.
fn spaced_groups(n: usize) -> Vec<GroupParams> {
    (0..n)
        .map(|g| {
            let f = if n > 1 { g as f64 / (n - 1) as f64 } else { 0.5 };
            GroupParams {
                r: 0.10 + 0.14 * f,
                k: 0.06 + 0.24 * f,
            }
        })
        .collect()
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        SyntheticScenario {
            groups: spaced_groups(3),
            per_group: 8,
            max_lag: 20,
            t0: 45.0,
            days: 100,
            cfr: 0.02,
            death_delay: 7,
            noise: 0.01,
            static_noise: 0.05,
            population: 100_000,
            rng_seed: 7,
        }
    }
}

impl SyntheticScenario {
    /// `n` groups with evenly spaced rates and capacities.
    pub fn with_groups(n: usize, per_group: usize, rng_seed: u64) -> Self {
        SyntheticScenario {
            groups: spaced_groups(n),
            per_group,
            rng_seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() || self.per_group == 0 {
            return Err(Error::Config("scenario needs at least one group and one entity".into()));
        }
        if let Some(g) = self.groups.iter().find(|g| !(g.k > 0.0 && g.k <= 1.0) || !(g.r > 0.0)) {
            return Err(Error::Config(format!("invalid group parameters {g:?}")));
        }
        if self.days < self.max_lag + 30 {
            return Err(Error::Config(format!(
                "{} days cannot hold lags up to {} plus 30 days",
                self.days, self.max_lag
            )));
        }
        if self.groups.len() * self.per_group > 999 {
            return Err(Error::Config("at most 999 synthetic entities".into()));
        }
        if !(self.noise >= 0.0 && self.static_noise >= 0.0 && self.cfr >= 0.0) {
            return Err(Error::Config("noise levels and cfr must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lag_of(&self, j: usize) -> usize {
        if self.per_group <= 1 {
            0
        } else {
            (j * self.max_lag + (self.per_group - 1) / 2) / (self.per_group - 1)
        }
    }
}

pub fn logistic(t: f64, g: GroupParams, shift: f64) -> f64 {
    g.k / (1.0 + (-g.r * (t - shift)).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSet {
    pub scenario: SyntheticScenario,
    pub records: Vec<EntityRecord>,
    pub labels: BTreeMap<EntityKey, usize>,
    pub lags: BTreeMap<EntityKey, usize>,
    pub manifest: FeatureManifest,
}

pub const SYNTH_FEATURES: [&str; 2] = ["growth_rate", "capacity"];

/// Generates `groups x per_group` entities in group order. Statics are the
/// noisy group parameters, standardized like real features.
pub fn generate_synthetic(scenario: &SyntheticScenario) -> Result<SyntheticSet> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    let daily = Normal::new(0.0, scenario.noise).map_err(|e| Error::Config(e.to_string()))?;
    let stat = Normal::new(0.0, scenario.static_noise).map_err(|e| Error::Config(e.to_string()))?;
    let start = NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date");

    let mut table = FeatureTable {
        names: SYNTH_FEATURES.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    let mut series = Vec::new();
    let mut labels = BTreeMap::new();
    let mut lags = BTreeMap::new();
    for (gi, g) in scenario.groups.iter().enumerate() {
        for j in 0..scenario.per_group {
            let index = gi * scenario.per_group + j;
            let key = EntityKey::from_parts(SYNTH_STATE, index as u32 + 1)?;
            let lag = scenario.lag_of(j);
            let shift = scenario.t0 + lag as f64;
            let mut inf = Vec::with_capacity(scenario.days);
            let mut dea = Vec::with_capacity(scenario.days);
            for t in 0..scenario.days {
                let t = t as f64;
                let i = logistic(t, *g, shift);
                let d = scenario.cfr * logistic(t - scenario.death_delay as f64, *g, shift);
                inf.push(i * (1.0 + daily.sample(&mut rng)));
                dea.push(d * (1.0 + daily.sample(&mut rng)));
            }
            let statics = vec![
                Some(g.r * (1.0 + stat.sample(&mut rng))),
                Some(g.k * (1.0 + stat.sample(&mut rng))),
            ];
            table.rows.insert(key.clone(), statics);
            labels.insert(key.clone(), gi);
            lags.insert(key.clone(), lag);
            series.push(CaseSeries {
                key,
                start_date: start,
                infections: repair_monotone(&inf),
                deaths: repair_monotone(&dea),
                population: Some(scenario.population),
                normalized: true,
            });
        }
    }
    let keys: Vec<EntityKey> = series.iter().map(|s| s.key.clone()).collect();
    let matrix = build_static_matrix(&[&table], &keys)?;
    let records = series
        .into_iter()
        .map(|s| {
            let statics = matrix.features[&s.key].values.clone();
            EntityRecord {
                key: s.key.clone(),
                name: Some(format!("synthetic group {} entity", labels[&s.key])),
                statics,
                series: s,
            }
        })
        .collect();
    Ok(SyntheticSet {
        scenario: scenario.clone(),
        records,
        labels,
        lags,
        manifest: matrix.manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(groups: usize, per_group: usize, max_lag: usize) -> SyntheticScenario {
        SyntheticScenario {
            noise: 0.0,
            static_noise: 0.0,
            max_lag,
            ..SyntheticScenario::with_groups(groups, per_group, 1)
        }
    }

    #[test]
    fn two_by_three_labels() {
        let s = generate_synthetic(&SyntheticScenario::with_groups(2, 3, 5)).unwrap();
        assert_eq!(s.records.len(), 6);
        assert_eq!(s.labels.values().copied().collect::<Vec<_>>(), vec![0, 0, 0, 1, 1, 1]);
        assert!(s.records.iter().all(|r| r.statics.len() == 2));
    }

    #[test]
    fn zero_noise_zero_lag_curves_coincide() {
        let s = generate_synthetic(&quiet(2, 3, 0)).unwrap();
        assert_eq!(s.records[0].series.infections, s.records[1].series.infections);
        assert_eq!(s.records[1].series.deaths, s.records[2].series.deaths);
        assert_ne!(s.records[0].series.infections, s.records[3].series.infections);
    }

    #[test]
    fn lag_is_a_pure_shift() {
        // per_group 5 over 0..=20 gives lags 0, 5, 10, 15, 20
        let s = generate_synthetic(&quiet(1, 5, 20)).unwrap();
        assert_eq!(s.lags.values().copied().collect::<Vec<_>>(), vec![0, 5, 10, 15, 20]);
        let base = &s.records[0].series.infections;
        let lagged = &s.records[1].series.infections;
        for t in 5..base.len() {
            assert!((lagged[t] - base[t - 5]).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_monotone() {
        let sc = SyntheticScenario::default();
        let a = generate_synthetic(&sc).unwrap();
        let b = generate_synthetic(&sc).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 24);
        for r in &a.records {
            assert!(r.series.infections.windows(2).all(|w| w[1] >= w[0]));
            assert!(r.series.deaths.iter().zip(&r.series.infections).all(|(d, i)| d <= i));
        }
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = SyntheticScenario::default();
        sc.groups[0].k = 1.5;
        assert!(sc.validate().is_err());
        let sc = SyntheticScenario { days: 40, ..Default::default() };
        assert!(sc.validate().is_err());
        let sc = SyntheticScenario { groups: vec![], ..Default::default() };
        assert!(sc.validate().is_err());
    }
}
