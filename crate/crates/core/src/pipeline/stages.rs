use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_json, write_csv, write_json};
use crate::data::{
    assemble_entities, parse_census, parse_daily_cases, parse_usda, save_store, AssembleOptions, Assembled, CensusOptions,
    EntityKey, EntityRecord, UsdaOptions,
};
use crate::embedding::{cluster_entities, combine_embedding, ClusterMethod, ClusterSpec, Clustering, Embedding};
use crate::error::{Error, Result};
use crate::ldt::{forecast_augmented, match_donors, AugmentOptions, AugmentedForecast, MatchOptions, SyntheticScenario, SyntheticSet};
use crate::metrics::{cluster_stability, horizon_errors, moving_average_error, relative_count_error, relative_error};
use crate::model::{EmbedMode, EmbedSource, LstmModel};
use crate::training::{grid_search, train_model, write_history, GridSpace, TrainOutcome, TrainRun};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

fn read_input(path: &Path, inputs: &mut Vec<InputFile>) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    inputs.push(InputFile {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    });
    Ok(bytes)
}

pub struct Ingested {
    pub assembled: Assembled,
    pub inputs: Vec<InputFile>,
    pub warnings: Vec<String>,
}

/// Reads the census extract, the USDA extract and every `*.csv` daily
/// report in `cases_dir`, then joins them into entity records.
pub fn ingest_sources(
    census: &Path,
    usda: &Path,
    cases_dir: &Path,
    state_filter: Option<&str>,
    census_year: Option<u32>,
) -> Result<Ingested> {
    for p in [census, usda] {
        if !p.is_file() {
            return Err(Error::Input(format!("input file {} does not exist", p.display())));
        }
    }
    if !cases_dir.is_dir() {
        return Err(Error::Input(format!("cases directory {} does not exist", cases_dir.display())));
    }
    let mut inputs = Vec::new();
    let state_filter = state_filter.map(str::to_string);
    let census_table = parse_census(
        Cursor::new(read_input(census, &mut inputs)?),
        &CensusOptions {
            reference_year: census_year,
            state_filter: state_filter.clone(),
        },
    )?;
    let usda_table = parse_usda(
        Cursor::new(read_input(usda, &mut inputs)?),
        &UsdaOptions {
            state_filter: state_filter.clone(),
        },
    )?;
    let mut case_files: Vec<PathBuf> = fs::read_dir(cases_dir)
        .map_err(|e| Error::io(cases_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|s| s.to_str()).is_some_and(|s| s.eq_ignore_ascii_case("csv")))
        .collect();
    case_files.sort();
    if case_files.is_empty() {
        return Err(Error::Input(format!("no .csv daily reports in {}", cases_dir.display())));
    }
    let mut files = Vec::with_capacity(case_files.len());
    for p in &case_files {
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        files.push((name, Cursor::new(read_input(p, &mut inputs)?)));
    }
    let cases = parse_daily_cases(files)?;

    let mut warnings = Vec::new();
    for (label, table) in [("census", &census_table), ("usda", &usda_table)] {
        warnings.extend(table.report.warnings.iter().map(|w| format!("{label}: {w}")));
        warnings.extend(
            table
                .report
                .errors
                .iter()
                .map(|e| format!("{label}: line {}: {}", e.line, e.message)),
        );
    }
    if cases.duplicate_warnings > 0 {
        warnings.push(format!("cases: {} duplicate rows", cases.duplicate_warnings));
    }
    let assembled = assemble_entities(&census_table, &usda_table, &cases, &AssembleOptions { state_filter })?;
    warnings.extend(assembled.skipped.iter().map(|(k, why)| format!("{k}: skipped, {why}")));
    Ok(Ingested {
        assembled,
        inputs,
        warnings,
    })
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Generating labels of a synthetic entity set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: SyntheticScenario,
    pub labels: BTreeMap<EntityKey, usize>,
    pub lags: BTreeMap<EntityKey, usize>,
}

/// Writes the entity directory with the ground truth next to the records.
pub fn save_synthetic(dir: &Path, set: &SyntheticSet) -> Result<()> {
    save_store(dir, &set.records, &set.manifest)?;
    write_json(
        &dir.join(GROUND_TRUTH_FILE),
        &GroundTruth {
            scenario: set.scenario.clone(),
            labels: set.labels.clone(),
            lags: set.lags.clone(),
        },
    )
}

pub fn load_ground_truth(entities_dir: &Path) -> Result<Option<GroundTruth>> {
    let path = entities_dir.join(GROUND_TRUTH_FILE);
    if path.is_file() {
        read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn static_dim(records: &[EntityRecord]) -> Result<usize> {
    let Some(first) = records.first() else {
        return Err(Error::Data("no entities".into()));
    };
    let dim = first.statics.len();
    if let Some(r) = records.iter().find(|r| r.statics.len() != dim) {
        return Err(Error::Data(format!(
            "{} has {} static features, {} has {dim}",
            r.key,
            r.statics.len(),
            first.key
        )));
    }
    Ok(dim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub fips: EntityKey,
    pub hidden: usize,
    pub layers: usize,
    pub num_params: usize,
    pub validation_loss: f64,
    pub eliminated_at: Option<usize>,
    pub selected: bool,
}

pub struct TrainedEntity {
    pub key: EntityKey,
    pub outcome: TrainOutcome,
}

pub struct TrainedSet {
    pub entities: Vec<TrainedEntity>,
    pub grid: Vec<GridRow>,
}

/// Trains one model per entity. With a grid, every entity is searched and
/// the configuration that wins for the most entities (ties: fewer
/// parameters, then smaller hidden size and depth) is used for all of them,
/// so every embedding has the same length.
pub fn train_entities(records: &[EntityRecord], run: &TrainRun, grid: Option<&GridSpace>) -> Result<TrainedSet> {
    let Some(space) = grid else {
        let entities = records
            .par_iter()
            .map(|r| {
                train_model(r, run).map(|outcome| TrainedEntity {
                    key: r.key.clone(),
                    outcome,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(TrainedSet {
            entities,
            grid: Vec::new(),
        });
    };
    let searched = records
        .par_iter()
        .map(|r| grid_search(r, space, run))
        .collect::<Result<Vec<_>>>()?;
    let mut votes: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for g in &searched {
        let w = &g.ranked[0];
        let slot = votes
            .entry((w.config.hidden_size, w.config.num_layers))
            .or_insert((0, w.num_params));
        slot.0 += 1;
    }
    let (&chosen, _) = votes
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)).then(b.0.cmp(a.0)))
        .expect("at least one entity");
    let mut rows = Vec::new();
    let mut entities = Vec::with_capacity(records.len());
    let mut retrain = Vec::new();
    for (r, g) in records.iter().zip(searched) {
        for arm in &g.ranked {
            rows.push(GridRow {
                fips: r.key.clone(),
                hidden: arm.config.hidden_size,
                layers: arm.config.num_layers,
                num_params: arm.num_params,
                validation_loss: arm.validation_loss,
                eliminated_at: arm.eliminated_at,
                selected: (arm.config.hidden_size, arm.config.num_layers) == chosen,
            });
        }
        let winner = g.ranked.into_iter().next().expect("non-empty grid");
        if (winner.config.hidden_size, winner.config.num_layers) == chosen {
            entities.push(Some(TrainedEntity {
                key: r.key.clone(),
                outcome: winner.outcome,
            }));
        } else {
            retrain.push(entities.len());
            entities.push(None);
        }
    }
    let mut chosen_run = run.clone();
    chosen_run.config.hidden_size = chosen.0;
    chosen_run.config.num_layers = chosen.1;
    let redone = retrain
        .par_iter()
        .map(|&i| {
            train_model(&records[i], &chosen_run).map(|outcome| TrainedEntity {
                key: records[i].key.clone(),
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, t) in retrain.into_iter().zip(redone) {
        entities[i] = Some(t);
    }
    Ok(TrainedSet {
        entities: entities.into_iter().map(|e| e.expect("filled")).collect(),
        grid: rows,
    })
}

pub fn model_path(models_dir: &Path, key: &EntityKey) -> PathBuf {
    models_dir.join(key.as_str()).join("model.json")
}

/// `<fips>/model.json` and `<fips>/history.csv` per entity, plus
/// `grid.csv` when a grid was searched.
pub fn save_models(models_dir: &Path, trained: &TrainedSet) -> Result<()> {
    for t in &trained.entities {
        t.outcome.model.save(&model_path(models_dir, &t.key))?;
        write_history(&models_dir.join(t.key.as_str()).join("history.csv"), &t.outcome.history)?;
    }
    if !trained.grid.is_empty() {
        write_csv(&models_dir.join("grid.csv"), &trained.grid)?;
    }
    Ok(())
}

pub fn load_models(models_dir: &Path, keys: &[EntityKey], inputs: &mut Vec<InputFile>) -> Result<Vec<LstmModel>> {
    keys.iter()
        .map(|k| {
            let path = model_path(models_dir, k);
            if !path.is_file() {
                return Err(Error::Input(format!("no model for {k} at {}", path.display())));
            }
            inputs.push(InputFile {
                sha256: sha256_file(&path)?,
                bytes: fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len(),
                path: path.clone(),
            });
            LstmModel::load(&path)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub pit: usize,
    pub mode: EmbedMode,
    pub source: EmbedSource,
    pub embeddings: Vec<Embedding>,
}

pub fn embeddings_path(run_dir: &Path, pit: usize, mode: EmbedMode) -> PathBuf {
    run_dir.join("embeddings").join(format!("pit{pit}_{mode}.json"))
}

/// Embeddings at one PIT; entities whose series is shorter than the PIT
/// are left out and reported.
pub fn embed_entities(
    records: &[EntityRecord],
    models: &[LstmModel],
    pit: usize,
    mode: EmbedMode,
    source: EmbedSource,
) -> Result<(EmbeddingSet, Vec<String>)> {
    if records.len() != models.len() {
        return Err(Error::Usage(format!("{} entities but {} models", records.len(), models.len())));
    }
    let mut embeddings = Vec::new();
    let mut skipped = Vec::new();
    for (r, m) in records.iter().zip(models) {
        if pit > r.series.len() {
            skipped.push(format!("{}: {}-day series is shorter than PIT {pit}", r.key, r.series.len()));
            continue;
        }
        embeddings.push(crate::embedding::extract_embedding(m, r, pit, mode, source)?);
    }
    Ok((
        EmbeddingSet {
            pit,
            mode,
            source,
            embeddings,
        },
        skipped,
    ))
}

/// Clusters on the raw series prefix: infections then deaths over the
/// first `pit` days, optionally followed by the weighted statics.
pub fn cluster_actuals(records: &[EntityRecord], pit: usize, spec: &ClusterSpec) -> Result<Clustering> {
    let embeddings: Vec<Embedding> = records
        .iter()
        .filter(|r| r.series.len() >= pit)
        .map(|r| {
            let p = r.series.prefix(pit);
            let mut raw = p.infections;
            raw.extend(p.deaths);
            let (hidden_part, static_part) = if spec.with_static {
                (combine_embedding(&raw, Some(&r.statics), spec.w_static), None)
            } else {
                (raw, None)
            };
            Embedding {
                key: r.key.clone(),
                pit_days: pit,
                mode: EmbedMode::Last,
                source: EmbedSource::H,
                hidden_part,
                static_part,
            }
        })
        .collect();
    let mut mixed = *spec;
    mixed.with_static = false;
    let mut c = cluster_entities(&embeddings, &mixed)?;
    c.with_static = spec.with_static;
    c.w_static = spec.w_static;
    Ok(c)
}

pub fn variant_name(with_static: bool) -> &'static str {
    if with_static {
        "combined"
    } else {
        "hidden"
    }
}

pub fn clustering_path(run_dir: &Path, method: ClusterMethod, pit: usize, with_static: bool) -> PathBuf {
    run_dir
        .join("clusters")
        .join(format!("{method}_pit{pit}_{}.json", variant_name(with_static)))
}

pub fn actual_clustering_path(run_dir: &Path, method: ClusterMethod, pit: usize, with_static: bool) -> PathBuf {
    run_dir
        .join("clusters")
        .join(format!("actual_{method}_pit{pit}_{}.json", variant_name(with_static)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub method: ClusterMethod,
    pub with_static: bool,
    pub reference_pit: usize,
    pub pit: usize,
    pub accuracy: f64,
    pub ari: f64,
    pub matched: u64,
    pub n: u64,
    pub actual_accuracy: f64,
    pub actual_matched: u64,
    /// `|actual_matched - matched| / actual_matched`.
    pub count_error: Option<f64>,
}

fn common(a: &Clustering, b: &Clustering) -> (BTreeMap<EntityKey, usize>, BTreeMap<EntityKey, usize>) {
    let pick = |x: &Clustering, y: &Clustering| {
        x.labels
            .iter()
            .filter(|(k, _)| y.labels.contains_key(*k))
            .map(|(k, v)| (k.clone(), *v))
            .collect::<BTreeMap<_, _>>()
    };
    (pick(a, b), pick(b, a))
}

/// Stability of the PIT `pit` clustering against the reference PIT, for
/// the embeddings and for the actual series.
pub fn stability_row(
    reference: &Clustering,
    at: &Clustering,
    actual_reference: &Clustering,
    actual_at: &Clustering,
) -> Result<StabilityRow> {
    let k = reference.k.max(at.k);
    let (a, b) = common(reference, at);
    let emb = cluster_stability(&a, &b, k)?;
    let (a, b) = common(actual_reference, actual_at);
    let act = cluster_stability(&a, &b, actual_reference.k.max(actual_at.k))?;
    Ok(StabilityRow {
        method: at.method,
        with_static: at.with_static,
        reference_pit: reference.pit,
        pit: at.pit,
        accuracy: emb.accuracy,
        ari: emb.ari,
        matched: emb.matched,
        n: emb.n,
        actual_accuracy: act.accuracy,
        actual_matched: act.matched,
        count_error: relative_count_error(act.matched, emb.matched).ok(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonErrorRow {
    pub fips: EntityKey,
    pub horizon: usize,
    pub pred_infections: f64,
    pub actual_infections: f64,
    pub pred_deaths: f64,
    pub actual_deaths: f64,
    pub rel_err_infections: f64,
    pub rel_err_deaths: f64,
}

/// Per-entity horizon curves; the second value collects truncation
/// warnings.
pub fn evaluate_entities(
    records: &[EntityRecord],
    models: &[LstmModel],
    test_days: usize,
    horizons: usize,
) -> Result<(Vec<HorizonErrorRow>, Vec<String>)> {
    let curves = records
        .par_iter()
        .zip(models)
        .map(|(r, m)| horizon_errors(m, r, test_days, horizons).map(|c| (r.key.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (key, c) in curves {
        warnings.extend(c.warnings);
        for ((row, p), a) in c.rows.iter().zip(&c.forecast).zip(&c.actual) {
            rows.push(HorizonErrorRow {
                fips: key.clone(),
                horizon: row.horizon,
                pred_infections: p[0],
                actual_infections: a[0],
                pred_deaths: p[1],
                actual_deaths: a[1],
                rel_err_infections: row.rel_err_infections,
                rel_err_deaths: row.rel_err_deaths,
            });
        }
    }
    Ok((rows, warnings))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub date_offset: usize,
    pub pred_infections: f64,
    pub pred_deaths: f64,
    pub donor_count: usize,
}

pub fn forecast_rows(f: &AugmentedForecast) -> Vec<ForecastRow> {
    f.forecast
        .iter()
        .enumerate()
        .map(|(d, p)| ForecastRow {
            date_offset: d + 1,
            pred_infections: p[0],
            pred_deaths: p[1],
            donor_count: f.provenance.donors.len(),
        })
        .collect()
}

/// Donor search plus augmented forecast from the first `observed_days`
/// days. Without `augment` (or without donors) this is the plain rollout.
#[allow(clippy::too_many_arguments)]
pub fn forecast_entity(
    target: &EntityRecord,
    observed_days: usize,
    clustering: &Clustering,
    records: &[EntityRecord],
    model: &LstmModel,
    horizon: usize,
    augment: bool,
    match_opts: &MatchOptions,
    opts: &AugmentOptions,
) -> Result<AugmentedForecast> {
    let donors = if augment {
        match_donors(target, observed_days, clustering, records, match_opts)?
    } else {
        Vec::new()
    };
    let pairs = donors
        .iter()
        .map(|d| {
            records
                .iter()
                .find(|r| r.key == d.alignment.donor)
                .map(|r| (r, &d.alignment))
                .ok_or_else(|| Error::Usage(format!("donor {} not among the entities", d.alignment.donor)))
        })
        .collect::<Result<Vec<_>>>()?;
    forecast_augmented(target, observed_days, &pairs, model, horizon, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummaryRow {
    pub fips: EntityKey,
    pub observed_days: usize,
    pub horizon: usize,
    pub donor_count: usize,
    pub ma_rel_err_plain: f64,
    pub ma_rel_err_augmented: f64,
    pub rel_err_plain: f64,
    pub rel_err_augmented: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastCompareRow {
    pub fips: EntityKey,
    pub date_offset: usize,
    pub actual_infections: f64,
    pub plain_infections: f64,
    pub augmented_infections: f64,
}

pub struct ForecastEval {
    pub augmented: AugmentedForecast,
    pub summary: ForecastSummaryRow,
    pub compare: Vec<ForecastCompareRow>,
}

/// Plain and donor-augmented forecasts from the train/test cut, scored on
/// infections against the withheld days.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_forecast(
    target: &EntityRecord,
    test_days: usize,
    clustering: &Clustering,
    records: &[EntityRecord],
    model: &LstmModel,
    horizon: usize,
    ma_window: usize,
    match_opts: &MatchOptions,
    opts: &AugmentOptions,
) -> Result<ForecastEval> {
    let len = target.series.len();
    if test_days >= len || horizon > test_days {
        return Err(Error::Data(format!(
            "{}: cannot score a {horizon}-day forecast with {test_days} test days of {len}",
            target.key
        )));
    }
    let cut = len - test_days;
    let plain = forecast_entity(target, cut, clustering, records, model, horizon, false, match_opts, opts)?;
    let augmented = forecast_entity(target, cut, clustering, records, model, horizon, true, match_opts, opts)?;
    let actual = &target.series.infections[cut..cut + horizon];
    let infections = |f: &AugmentedForecast| f.forecast.iter().map(|p| p[0]).collect::<Vec<f64>>();
    let (p, a) = (infections(&plain), infections(&augmented));
    let summary = ForecastSummaryRow {
        fips: target.key.clone(),
        observed_days: cut,
        horizon,
        donor_count: augmented.provenance.donors.len(),
        ma_rel_err_plain: moving_average_error(&p, actual, ma_window)?,
        ma_rel_err_augmented: moving_average_error(&a, actual, ma_window)?,
        rel_err_plain: relative_error(p[horizon - 1], actual[horizon - 1]),
        rel_err_augmented: relative_error(a[horizon - 1], actual[horizon - 1]),
    };
    let compare = (0..horizon)
        .map(|d| ForecastCompareRow {
            fips: target.key.clone(),
            date_offset: d + 1,
            actual_infections: actual[d],
            plain_infections: p[d],
            augmented_infections: a[d],
        })
        .collect();
    Ok(ForecastEval {
        augmented,
        summary,
        compare,
    })
}
