//! Loosely decoupled timeseries: synthetic scenarios, trajectory alignment,
//! donor matching within clusters, and donor-augmented forecasting.

mod align;
mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use align::{resample, sample_at, trajectory_align, AlignGrid, TrajectoryAlignment};
pub use synthetic::{generate_synthetic, logistic, GroupParams, SyntheticScenario, SyntheticSet, SYNTH_FEATURES, SYNTH_STATE};

use crate::data::{CaseSeries, EntityKey, EntityRecord};
use crate::embedding::Clustering;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::model::{LstmModel, CHANNELS};
use crate::nn::AdamConfig;
use crate::training::{windows_from_channels, Budget, HaltReason, Sample, TrainRun, Trainer};

/// The part of `series` observed on or before `until`.
pub fn observed_until(series: &CaseSeries, until: chrono::NaiveDate) -> CaseSeries {
    let days = (until - series.start_date).num_days() + 1;
    series.prefix(days.clamp(0, series.len() as i64) as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub grid: AlignGrid,
    pub min_extra_days: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            grid: AlignGrid::default(),
            min_extra_days: 14,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DonorMatch {
    pub alignment: TrajectoryAlignment,
    /// Donor days available past the target's last observed day.
    pub extra_days: usize,
}

/// Same-cluster entities that, once aligned, run at least `min_extra_days`
/// past the target's last observed day. Every series is cut at the target's
/// last observed calendar day. Ranked by fit error, then key.
pub fn match_donors(
    target: &EntityRecord,
    observed_days: usize,
    clustering: &Clustering,
    entities: &[EntityRecord],
    opts: &MatchOptions,
) -> Result<Vec<DonorMatch>> {
    let label = clustering
        .label_of(&target.key)
        .ok_or_else(|| Error::Usage(format!("{} has no cluster label", target.key)))?;
    if observed_days == 0 || observed_days > target.series.len() {
        return Err(Error::Data(format!(
            "{}: {observed_days} observed days outside a {}-day series",
            target.key,
            target.series.len()
        )));
    }
    let history = target.series.prefix(observed_days);
    let until = history.start_date + chrono::Days::new(observed_days as u64 - 1);
    let mut out: Vec<DonorMatch> = entities
        .par_iter()
        .filter(|e| e.key != target.key && clustering.label_of(&e.key) == Some(label))
        .filter_map(|e| {
            let donor = observed_until(&e.series, until);
            let alignment = trajectory_align(&history, &donor, &opts.grid).ok()?;
            let extra_days = alignment.extra_days(donor.len(), observed_days - 1);
            (extra_days >= opts.min_extra_days).then_some(DonorMatch { alignment, extra_days })
        })
        .collect();
    out.sort_by(|a, b| {
        a.alignment
            .fit_error
            .total_cmp(&b.alignment.fit_error)
            .then_with(|| a.alignment.donor.cmp(&b.alignment.donor))
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub epochs: usize,
    pub loss: LossSpec,
    pub mini_batches: usize,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    /// Use at most this many top-ranked donors; 0 uses all.
    pub max_donors: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            epochs: 20,
            loss: LossSpec::default(),
            mini_batches: 3,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            max_donors: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub target: EntityKey,
    pub observed_days: usize,
    pub augmented: bool,
    pub donors: Vec<TrajectoryAlignment>,
    pub epochs: usize,
    pub target_windows: usize,
    pub donor_windows: usize,
    pub halt: Option<HaltReason>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedForecast {
    pub forecast: Vec<[f64; CHANNELS]>,
    pub provenance: Provenance,
}

/// Donor history mapped into target time, up to the donor's last day.
fn aligned_donor(donor: &CaseSeries, alignment: &TrajectoryAlignment) -> Option<CaseSeries> {
    let days = alignment.donor_horizon(donor.len())? + 1;
    let (infections, deaths) = resample(donor, alignment, days);
    Some(CaseSeries {
        infections,
        deaths,
        ..donor.clone()
    })
}

/// Fine-tunes a copy of `model` on the target's windows plus every donor's
/// aligned windows (all seeded with the target's statics), then rolls out
/// `horizon` days from the target's last observed day. Without donors this
/// is the plain rollout.
pub fn forecast_augmented(
    target: &EntityRecord,
    observed_days: usize,
    donors: &[(&EntityRecord, &TrajectoryAlignment)],
    model: &LstmModel,
    horizon: usize,
    opts: &AugmentOptions,
) -> Result<AugmentedForecast> {
    if horizon == 0 {
        return Err(Error::Usage("horizon must be at least 1".into()));
    }
    if observed_days == 0 || observed_days > target.series.len() {
        return Err(Error::Data(format!(
            "{}: {observed_days} observed days outside a {}-day series",
            target.key,
            target.series.len()
        )));
    }
    if let Some((d, _)) = donors.iter().find(|(d, a)| d.key == target.key || a.donor != d.key) {
        return Err(Error::Usage(format!(
            "{} cannot donate to {} (self match or mismatched alignment)",
            d.key, target.key
        )));
    }
    let history = target.series.prefix(observed_days);
    let donors = if opts.max_donors > 0 && donors.len() > opts.max_donors {
        &donors[..opts.max_donors]
    } else {
        donors
    };
    let mut provenance = Provenance {
        target: target.key.clone(),
        observed_days,
        augmented: false,
        donors: donors.iter().map(|(_, a)| (*a).clone()).collect(),
        epochs: 0,
        target_windows: 0,
        donor_windows: 0,
        halt: None,
    };
    if donors.is_empty() {
        let forecast = model.rollout(&history.channels(), &target.statics, horizon)?;
        return Ok(AugmentedForecast { forecast, provenance });
    }

    let until = history.start_date + chrono::Days::new(observed_days as u64 - 1);
    let mut samples: Vec<Sample> = windows_from_channels(&history.infections, &history.deaths, &model.window).unwrap_or_default();
    provenance.target_windows = samples.len();
    for (donor, alignment) in donors {
        let observed = observed_until(&donor.series, until);
        let Some(aligned) = aligned_donor(&observed, alignment) else {
            continue;
        };
        if let Ok(w) = windows_from_channels(&aligned.infections, &aligned.deaths, &model.window) {
            provenance.donor_windows += w.len();
            samples.extend(w);
        }
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: no windows for fine-tuning", target.key)));
    }
    let mut run = TrainRun::new(model.config.clone(), opts.loss, model.window.clone());
    run.mini_batches = opts.mini_batches;
    run.adam = opts.adam;
    run.clip_norm = opts.clip_norm;
    run.budget = Budget::epochs(opts.epochs);
    run.patience = usize::MAX;
    let mut trainer = Trainer::new(model.clone(), run, samples, Vec::new(), target.statics.clone())?;
    trainer.run_until(opts.epochs);
    let outcome = trainer.finish();
    provenance.augmented = true;
    provenance.epochs = outcome.history.len();
    provenance.halt = Some(outcome.halt);
    let forecast = outcome.model.rollout(&history.channels(), &target.statics, horizon)?;
    Ok(AugmentedForecast { forecast, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cluster_entities, ClusterCenters, ClusterMethod};
    use crate::model::EmbedMode;
    use crate::nn::ModelConfig;
    use crate::training::WindowSpec;
    use std::collections::BTreeMap;

    fn clustering(labels: &[(EntityKey, usize)]) -> Clustering {
        Clustering {
            method: ClusterMethod::Kmeans,
            k: 3,
            pit: 60,
            mode: EmbedMode::Last,
            source: Default::default(),
            with_static: false,
            w_static: 1.0,
            seed: 0,
            labels: labels.iter().cloned().collect::<BTreeMap<_, _>>(),
            centers: ClusterCenters::Centroids(vec![]),
            inertia: 0.0,
        }
    }

    fn scenario() -> SyntheticSet {
        generate_synthetic(&SyntheticScenario::with_groups(2, 5, 3)).unwrap()
    }

    #[test]
    fn lone_target_has_no_donors() {
        let s = scenario();
        let c = clustering(&[(s.records[0].key.clone(), 0), (s.records[1].key.clone(), 1)]);
        let d = match_donors(&s.records[0], 70, &c, &s.records, &MatchOptions::default()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn lagged_target_matches_leading_groupmates() {
        let s = scenario();
        let c = clustering(&s.labels.iter().map(|(k, &g)| (k.clone(), g)).collect::<Vec<_>>());
        // group 0 lags 0, 5, 10, 15, 20
        let target = &s.records[4];
        assert_eq!(s.lags[&target.key], 20);
        let d = match_donors(target, 70, &c, &s.records, &MatchOptions::default()).unwrap();
        assert!(d.iter().all(|m| s.labels[&m.alignment.donor] == 0 && m.extra_days >= 14));
        let lags: Vec<usize> = d.iter().map(|m| s.lags[&m.alignment.donor]).collect();
        assert!(lags.contains(&0), "{lags:?}");
        for m in &d {
            let truth = s.lags[&m.alignment.donor] as i64 - 20;
            assert_eq!(m.alignment.scale_a, 1.0);
            assert!((m.alignment.lag_b - truth).abs() <= 1, "{} vs {truth}", m.alignment.lag_b);
        }
    }

    #[test]
    fn extra_day_threshold() {
        let s = scenario();
        let c = clustering(&s.labels.iter().map(|(k, &g)| (k.clone(), g)).collect::<Vec<_>>());
        let target = &s.records[1]; // lag 5
        let strict = MatchOptions { min_extra_days: 14, ..Default::default() };
        let loose = MatchOptions { min_extra_days: 3, ..Default::default() };
        let d_strict = match_donors(target, 70, &c, &s.records, &strict).unwrap();
        let d_loose = match_donors(target, 70, &c, &s.records, &loose).unwrap();
        assert!(d_strict.iter().all(|m| m.extra_days >= 14));
        assert!(d_loose.len() >= d_strict.len());
        assert!(d_loose.iter().any(|m| m.extra_days < 14));
    }

    fn model(static_dim: usize) -> LstmModel {
        LstmModel::new(ModelConfig::new(4, 1, 2, 6, static_dim, 9), WindowSpec::default()).unwrap()
    }

    #[test]
    fn no_donors_is_the_plain_rollout() {
        let s = scenario();
        let m = model(2);
        let t = &s.records[3];
        let out = forecast_augmented(t, 70, &[], &m, 10, &AugmentOptions::default()).unwrap();
        let plain = m.rollout(&t.series.prefix(70).channels(), &t.statics, 10).unwrap();
        assert_eq!(out.forecast, plain);
        assert!(!out.provenance.augmented);
    }

    #[test]
    fn self_donation_is_rejected() {
        let s = scenario();
        let t = &s.records[0];
        let al = trajectory_align(&t.series.prefix(50), &t.series, &AlignGrid::default()).unwrap();
        let err = forecast_augmented(t, 50, &[(t, &al)], &model(2), 5, &AugmentOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn augmented_path_records_provenance() {
        let s = scenario();
        let t = &s.records[4];
        let d = &s.records[0];
        let al = trajectory_align(&t.series.prefix(70), &d.series.prefix(70), &AlignGrid::default()).unwrap();
        let opts = AugmentOptions { epochs: 3, ..Default::default() };
        let out = forecast_augmented(t, 70, &[(d, &al)], &model(2), 7, &opts).unwrap();
        assert_eq!(out.forecast.len(), 7);
        assert!(out.provenance.augmented);
        assert_eq!(out.provenance.epochs, 3);
        assert!(out.provenance.donor_windows > 0 && out.provenance.target_windows > 0);
        assert_eq!(out.provenance.donors, vec![al]);
    }

    #[test]
    fn clustering_feeds_donor_matching() {
        let s = scenario();
        let es: Vec<_> = s
            .records
            .iter()
            .map(|r| crate::embedding::Embedding {
                key: r.key.clone(),
                pit_days: 60,
                mode: EmbedMode::Last,
                source: Default::default(),
                hidden_part: r.statics.clone(),
                static_part: None,
            })
            .collect();
        let c = cluster_entities(&es, &crate::embedding::ClusterSpec { k: 2, ..Default::default() }).unwrap();
        let d = match_donors(&s.records[4], 70, &c, &s.records, &MatchOptions::default()).unwrap();
        assert!(d.iter().all(|m| c.label_of(&m.alignment.donor) == c.label_of(&s.records[4].key)));
    }
}
