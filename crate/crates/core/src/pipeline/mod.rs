//! Configured runs across all stages, and their reports.

mod config;
mod report;
mod stages;
mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{derive_seed, RunConfig, Stages, SEEDED_STAGES};
pub use report::{emit_report, ClusterSummaryRow, ForecastOverviewRow, HorizonSummaryRow, ReportOptions};
pub use stages::{
    actual_clustering_path, cluster_actuals, clustering_path, embed_entities, embeddings_path, evaluate_entities,
    evaluate_forecast, forecast_entity, forecast_rows, ingest_sources, load_ground_truth, load_models, model_path,
    save_models, save_synthetic, sha256_file, sha256_hex, stability_row, static_dim, train_entities, variant_name,
    EmbeddingSet, ForecastCompareRow, ForecastEval, ForecastRow, ForecastSummaryRow, GridRow, GroundTruth,
    HorizonErrorRow, Ingested, InputFile, StabilityRow, TrainedEntity, TrainedSet, GROUND_TRUTH_FILE,
};

use crate::data::{entity_path, load_store, save_store, EntityKey, EntityRecord, MANIFEST_FILE};
use crate::embedding::{cluster_entities, ClusterMethod, Clustering};
use crate::error::{Error, Result};
use crate::ldt::generate_synthetic;
use crate::metrics::HorizonRow;
use crate::model::LstmModel;
use crate::training::HaltReason;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
    /// Relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub config: RunConfig,
    pub inputs: Vec<InputFile>,
    pub stages: Vec<StageRecord>,
    pub models: Vec<EntityKey>,
    pub completed: bool,
    pub error: Option<String>,
}

pub const RUN_MANIFEST: &str = "manifest.json";

#[derive(Default)]
struct StageOut {
    outputs: Vec<PathBuf>,
    warnings: Vec<String>,
}

type ClusterKey = (ClusterMethod, usize, bool);

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    manifest: Manifest,
    records: Option<Vec<EntityRecord>>,
    models: Option<Vec<LstmModel>>,
    embeddings: BTreeMap<usize, EmbeddingSet>,
    clusterings: BTreeMap<ClusterKey, Clustering>,
    actuals: BTreeMap<ClusterKey, Clustering>,
}

/// Runs every enabled stage in order. The manifest is rewritten after each
/// stage, so a failure leaves the finished outputs and a record of the
/// error behind.
pub fn run_pipeline<'a>(cfg: &'a RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut run = Run {
        cfg,
        dir,
        manifest: Manifest {
            tool: "ldtcast".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            master_seed: cfg.seed,
            seeds: cfg.seeds(),
            config: cfg.clone(),
            inputs: Vec::new(),
            stages: Vec::new(),
            models: Vec::new(),
            completed: false,
            error: None,
        },
        records: None,
        models: None,
        embeddings: BTreeMap::new(),
        clusterings: BTreeMap::new(),
        actuals: BTreeMap::new(),
    };
    let s = &cfg.stages;
    let plan: [(&str, bool, fn(&mut Run<'a>) -> Result<StageOut>); 9] = [
        ("ingest", s.ingest, Run::ingest),
        ("synth", s.synth, Run::synth),
        ("train", s.train, Run::train),
        ("embed", s.embed, Run::embed),
        ("cluster", s.cluster, Run::cluster),
        ("stability", s.stability, Run::stability),
        ("evaluate", s.evaluate, Run::evaluate),
        ("forecast", s.forecast, Run::forecast),
        ("report", s.report, Run::report),
    ];
    for (name, enabled, stage) in plan {
        if !enabled {
            continue;
        }
        log::info!("stage {name}");
        let t = Instant::now();
        let result = stage(&mut run);
        let seconds = t.elapsed().as_secs_f64();
        match result {
            Ok(out) => {
                for w in &out.warnings {
                    log::warn!("{name}: {w}");
                }
                run.manifest.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Ok,
                    seconds,
                    outputs: out.outputs,
                    warnings: out.warnings,
                    error: None,
                });
                run.write_manifest()?;
            }
            Err(e) => {
                let e = e.in_stage(name);
                run.manifest.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    seconds,
                    outputs: Vec::new(),
                    warnings: Vec::new(),
                    error: Some(e.to_string()),
                });
                run.manifest.error = Some(e.to_string());
                run.write_manifest()?;
                return Err(e);
            }
        }
    }
    run.manifest.completed = true;
    run.write_manifest()?;
    Ok(run.manifest)
}

impl Run<'_> {
    fn write_manifest(&self) -> Result<()> {
        write_json(&self.dir.join(RUN_MANIFEST), &self.manifest)
    }

    fn rel(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.dir).unwrap_or(p).to_path_buf()
    }

    fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        self.manifest.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
            bytes,
        });
        Ok(())
    }

    fn records(&mut self) -> Result<&[EntityRecord]> {
        if self.records.is_none() {
            let dir = self.cfg.entities_dir();
            let store = load_store(&dir)?;
            if store.records.is_empty() {
                return Err(Error::Data(format!("no entity records in {}", dir.display())));
            }
            for r in &store.records {
                self.hash_input(&entity_path(&dir, &r.key))?;
            }
            for extra in [MANIFEST_FILE, GROUND_TRUTH_FILE] {
                let p = dir.join(extra);
                if p.is_file() {
                    self.hash_input(&p)?;
                }
            }
            self.records = Some(store.records);
        }
        Ok(self.records.as_deref().expect("loaded"))
    }

    fn keys(&mut self) -> Result<Vec<EntityKey>> {
        Ok(self.records()?.iter().map(|r| r.key.clone()).collect())
    }

    fn models(&mut self) -> Result<&[LstmModel]> {
        if self.models.is_none() {
            let keys = self.keys()?;
            let mut inputs = Vec::new();
            let models = load_models(&self.cfg.models_dir(), &keys, &mut inputs)?;
            self.manifest.inputs.extend(inputs);
            self.manifest.models = keys;
            self.models = Some(models);
        }
        Ok(self.models.as_deref().expect("loaded"))
    }

    fn embedding_set(&mut self, pit: usize) -> Result<&EmbeddingSet> {
        if !self.embeddings.contains_key(&pit) {
            let path = embeddings_path(&self.dir, pit, self.cfg.mode);
            if !path.is_file() {
                return Err(Error::Input(format!("no embeddings at {}", path.display())));
            }
            self.hash_input(&path)?;
            self.embeddings.insert(pit, read_json(&path)?);
        }
        Ok(&self.embeddings[&pit])
    }

    fn clustering(&mut self, key: ClusterKey, actual: bool) -> Result<Clustering> {
        let cached = if actual { &self.actuals } else { &self.clusterings };
        if let Some(c) = cached.get(&key) {
            return Ok(c.clone());
        }
        let (method, pit, ws) = key;
        let path = if actual {
            actual_clustering_path(&self.dir, method, pit, ws)
        } else {
            clustering_path(&self.dir, method, pit, ws)
        };
        if !path.is_file() {
            return Err(Error::Input(format!("no clustering at {}", path.display())));
        }
        self.hash_input(&path)?;
        let c: Clustering = read_json(&path)?;
        if actual {
            self.actuals.insert(key, c.clone());
        } else {
            self.clusterings.insert(key, c.clone());
        }
        Ok(c)
    }

    /// `with_static` variants that apply to this entity set.
    fn variants(&mut self) -> Result<(Vec<bool>, Vec<String>)> {
        let dim = static_dim(self.records()?)?;
        let mut warnings = Vec::new();
        let out = self
            .cfg
            .with_static
            .iter()
            .copied()
            .filter(|&ws| {
                let keep = !ws || dim > 0;
                if !keep {
                    warnings.push("entities carry no static features; combined clustering skipped".to_string());
                }
                keep
            })
            .collect();
        Ok((out, warnings))
    }

    fn ingest(&mut self) -> Result<StageOut> {
        let cfg = self.cfg;
        let ing = ingest_sources(
            &cfg.census_path().expect("validated"),
            &cfg.usda_path().expect("validated"),
            &cfg.cases_path().expect("validated"),
            cfg.state_filter.as_deref(),
            cfg.census_year,
        )?;
        let dir = cfg.entities_dir();
        save_store(&dir, &ing.assembled.records, &ing.assembled.manifest)?;
        self.manifest.inputs.extend(ing.inputs);
        let out = StageOut {
            outputs: vec![self.rel(&dir)],
            warnings: ing.warnings,
        };
        self.records = Some(ing.assembled.records);
        Ok(out)
    }

    fn synth(&mut self) -> Result<StageOut> {
        let set = generate_synthetic(&self.cfg.scenario())?;
        let dir = self.cfg.entities_dir();
        save_synthetic(&dir, &set)?;
        self.records = Some(set.records);
        Ok(StageOut {
            outputs: vec![self.rel(&dir)],
            warnings: Vec::new(),
        })
    }

    fn train(&mut self) -> Result<StageOut> {
        let cfg = self.cfg;
        let records = self.records()?;
        let run = cfg.train_run(static_dim(records)?);
        let trained = train_entities(records, &run, cfg.grid.then_some(&cfg.grid_space))?;
        let dir = cfg.models_dir();
        save_models(&dir, &trained)?;
        let mut out = StageOut::default();
        for t in &trained.entities {
            out.outputs.push(self.rel(&dir.join(t.key.as_str())));
            if let HaltReason::Numeric(why) = &t.outcome.halt {
                out.warnings.push(format!("{}: training halted on a numeric error ({why})", t.key));
            }
        }
        if !trained.grid.is_empty() {
            out.outputs.push(self.rel(&dir.join("grid.csv")));
        }
        self.manifest.models = trained.entities.iter().map(|t| t.key.clone()).collect();
        self.models = Some(trained.entities.into_iter().map(|t| t.outcome.model).collect());
        Ok(out)
    }

    fn embed(&mut self) -> Result<StageOut> {
        let cfg = self.cfg;
        self.models()?;
        let records = self.records.as_deref().expect("loaded with models");
        let models = self.models.as_deref().expect("loaded");
        let mut out = StageOut::default();
        for &pit in &cfg.pits {
            let (set, skipped) = embed_entities(records, models, pit, cfg.mode, cfg.source)?;
            let path = embeddings_path(&self.dir, pit, cfg.mode);
            write_json(&path, &set)?;
            out.outputs.push(self.rel(&path));
            out.warnings.extend(skipped);
            self.embeddings.insert(pit, set);
        }
        Ok(out)
    }

    fn cluster(&mut self) -> Result<StageOut> {
        let cfg = self.cfg;
        let (variants, warnings) = self.variants()?;
        let mut out = StageOut {
            warnings,
            ..Default::default()
        };
        for &pit in &cfg.pits {
            let embeddings = self.embedding_set(pit)?.embeddings.clone();
            for &method in &cfg.methods {
                for &ws in &variants {
                    let spec = cfg.cluster_spec(method, ws);
                    let c = cluster_entities(&embeddings, &spec)?;
                    let path = clustering_path(&self.dir, method, pit, ws);
                    c.save(&path)?;
                    out.outputs.push(self.rel(&path));
                    self.clusterings.insert((method, pit, ws), c);

                    let a = cluster_actuals(self.records.as_deref().expect("loaded"), pit, &spec)?;
                    let path = actual_clustering_path(&self.dir, method, pit, ws);
                    a.save(&path)?;
                    out.outputs.push(self.rel(&path));
                    self.actuals.insert((method, pit, ws), a);
                }
            }
        }
        Ok(out)
    }

    fn stability(&mut self) -> Result<StageOut> {
        let cfg = self.cfg;
        let (variants, warnings) = self.variants()?;
        let reference = cfg.reference_pit();
        let mut rows = Vec::new();
        for &method in &cfg.methods {
            for &ws in &variants {
                let r = self.clustering((method, reference, ws), false)?;
                let ra = self.clustering((method, reference, ws), true)?;
                for &pit in &cfg.pits {
                    let c = self.clustering((method, pit, ws), false)?;
                    let ca = self.clustering((method, pit, ws), true)?;
                    rows.push(stability_row(&r, &c, &ra, &ca)?);
                }
            }
        }
        let path = self.dir.join("stability.csv");
        write_csv(&path, &rows)?;
        Ok(StageOut {
            outputs: vec![self.rel(&path)],
            warnings,
        })
    }

    fn evaluate(&mut self) -> Result<StageOut> {
        let cfg = self.cfg;
        self.models()?;
        let records = self.records.as_deref().expect("loaded");
        let models = self.models.as_deref().expect("loaded");
        let (rows, warnings) = evaluate_entities(records, models, cfg.test_days, cfg.horizons)?;
        let mut out = StageOut {
            warnings,
            ..Default::default()
        };
        let path = self.dir.join("horizon_errors.csv");
        write_csv(&path, &rows)?;
        out.outputs.push(self.rel(&path));
        for r in records {
            let curve: Vec<HorizonRow> = rows
                .iter()
                .filter(|h| h.fips == r.key)
                .map(|h| HorizonRow {
                    horizon: h.horizon,
                    rel_err_infections: h.rel_err_infections,
                    rel_err_deaths: h.rel_err_deaths,
                })
                .collect();
            let path = self.dir.join("curves").join(format!("{}.csv", r.key));
            write_csv(&path, &curve)?;
            out.outputs.push(self.rel(&path));
        }
        Ok(out)
    }

    fn forecast(&mut self) -> Result<StageOut> {
        let cfg = self.cfg;
        self.models()?;
        let mut out = StageOut::default();
        let min_cut = self
            .records()?
            .iter()
            .map(|r| r.series.len().saturating_sub(cfg.test_days))
            .min()
            .unwrap_or(0);
        let pit = match cfg.forecast_pit {
            Some(p) => p,
            None => cfg.pits.iter().copied().filter(|&p| p <= min_cut).max().ok_or_else(|| {
                Error::Config(format!("no PIT fits within the {min_cut} days before the test buffer"))
            })?,
        };
        let ws = cfg.forecast_with_static && static_dim(self.records()?)? > 0;
        let clustering = self.clustering((cfg.forecast_method, pit, ws), false)?;
        let horizon = if cfg.forecast_horizon > cfg.test_days {
            out.warnings.push(format!(
                "forecast horizon {} exceeds the {}-day test buffer; truncated",
                cfg.forecast_horizon, cfg.test_days
            ));
            cfg.test_days
        } else {
            cfg.forecast_horizon
        };
        let records = self.records.as_deref().expect("loaded");
        let models = self.models.as_deref().expect("loaded");
        let (mopts, aopts) = (cfg.match_options(), cfg.augment_options());
        let evals = records
            .par_iter()
            .zip(models)
            .map(|(r, m)| {
                evaluate_forecast(r, cfg.test_days, &clustering, records, m, horizon, cfg.ma_window, &mopts, &aopts)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut summary = Vec::new();
        let mut compare = Vec::new();
        for e in evals {
            let key = &e.summary.fips;
            let path = self.dir.join("forecasts").join(format!("{key}.csv"));
            write_csv(&path, &forecast_rows(&e.augmented))?;
            out.outputs.push(self.rel(&path));
            let path = self.dir.join("forecasts").join(format!("{key}_provenance.json"));
            write_json(&path, &e.augmented.provenance)?;
            out.outputs.push(self.rel(&path));
            if let Some(HaltReason::Numeric(why)) = &e.augmented.provenance.halt {
                out.warnings.push(format!("{key}: fine-tuning halted on a numeric error ({why})"));
            }
            summary.push(e.summary);
            compare.extend(e.compare);
        }
        for (name, write) in [
            ("forecast_summary.csv", write_csv(&self.dir.join("forecast_summary.csv"), &summary)),
            ("forecast_vs_actual.csv", write_csv(&self.dir.join("forecast_vs_actual.csv"), &compare)),
        ] {
            write?;
            out.outputs.push(PathBuf::from(name));
        }
        Ok(out)
    }

    fn report(&mut self) -> Result<StageOut> {
        let files = emit_report(&self.dir, &ReportOptions { svg: self.cfg.svg })?;
        Ok(StageOut {
            outputs: files.iter().map(|p| self.rel(p)).collect(),
            warnings: Vec::new(),
        })
    }
}
