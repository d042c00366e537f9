use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{ClusterMethod, ClusterOptions, ClusterSpec};
use crate::error::{Error, Result};
use crate::ldt::{AugmentOptions, MatchOptions, SyntheticScenario};
use crate::losses::LossSpec;
use crate::model::{EmbedMode, EmbedSource, CHANNELS};
use crate::nn::{AdamConfig, ModelConfig};
use crate::training::{Budget, GridSpace, TrainRun, WindowSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub ingest: bool,
    pub synth: bool,
    pub train: bool,
    pub embed: bool,
    pub cluster: bool,
    pub stability: bool,
    pub evaluate: bool,
    pub forecast: bool,
    pub report: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            ingest: false,
            synth: true,
            train: true,
            embed: true,
            cluster: true,
            stability: true,
            evaluate: true,
            forecast: true,
            report: true,
        }
    }
}

impl Stages {
    pub fn only(name: &str) -> Result<Self> {
        let mut s = Stages {
            ingest: false,
            synth: false,
            train: false,
            embed: false,
            cluster: false,
            stability: false,
            evaluate: false,
            forecast: false,
            report: false,
        };
        *s.flag_mut(name)? = true;
        Ok(s)
    }

    pub fn flag_mut(&mut self, name: &str) -> Result<&mut bool> {
        Ok(match name {
            "ingest" => &mut self.ingest,
            "synth" => &mut self.synth,
            "train" => &mut self.train,
            "embed" => &mut self.embed,
            "cluster" => &mut self.cluster,
            "stability" => &mut self.stability,
            "evaluate" => &mut self.evaluate,
            "forecast" => &mut self.forecast,
            "report" => &mut self.report,
            other => return Err(Error::Config(format!("unknown stage {other:?}"))),
        })
    }
}

/// Everything a run needs. Every field has a default, so a config file only
/// lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Holds the census and USDA extracts and a directory of daily reports.
    pub data_dir: Option<PathBuf>,
    pub census_file: String,
    pub usda_file: String,
    pub cases_dir: String,
    pub state_filter: Option<String>,
    pub census_year: Option<u32>,
    pub synthetic: SyntheticScenario,
    pub stages: Stages,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,

    pub window: WindowSpec,
    pub loss: LossSpec,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub forget_gate: bool,
    pub epochs: usize,
    pub max_seconds: Option<f64>,
    pub learning_rate: f64,
    pub mini_batches: usize,
    pub clip_norm: f64,
    pub test_days: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub grid: bool,
    pub grid_space: GridSpace,

    pub pits: Vec<usize>,
    pub mode: EmbedMode,
    pub source: EmbedSource,
    pub methods: Vec<ClusterMethod>,
    pub k: usize,
    /// Each clustering is run once per listed value.
    pub with_static: Vec<bool>,
    pub w_static: f64,
    pub restarts: usize,
    /// Stability compares every PIT with this one; defaults to the middle
    /// entry of `pits`.
    pub stability_reference_pit: Option<usize>,

    pub horizons: usize,
    pub forecast_horizon: usize,
    /// Clustering used for donor search; defaults to the largest PIT that
    /// fits before every test buffer.
    pub forecast_pit: Option<usize>,
    pub forecast_method: ClusterMethod,
    pub forecast_with_static: bool,
    pub augment_epochs: usize,
    pub max_donors: usize,
    pub min_extra_days: usize,
    pub ma_window: usize,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("ldtcast-run"),
            data_dir: None,
            census_file: "census.csv".into(),
            usda_file: "usda.csv".into(),
            cases_dir: "cases".into(),
            state_filter: None,
            census_year: None,
            synthetic: SyntheticScenario::default(),
            stages: Stages::default(),
            seed: 0,
            window: WindowSpec::default(),
            loss: LossSpec::default(),
            hidden_size: 32,
            num_layers: 1,
            forget_gate: true,
            epochs: 100,
            max_seconds: None,
            learning_rate: 1e-2,
            mini_batches: 3,
            clip_norm: 5.0,
            test_days: 30,
            patience: 5,
            validation_fraction: 0.0,
            grid: false,
            grid_space: GridSpace::default(),
            pits: vec![30, 60, 90],
            mode: EmbedMode::Last,
            source: EmbedSource::H,
            methods: vec![ClusterMethod::Kmeans, ClusterMethod::Kmedoids],
            k: 3,
            with_static: vec![false, true],
            w_static: 1.0,
            restarts: 10,
            stability_reference_pit: None,
            horizons: 30,
            forecast_horizon: 10,
            forecast_pit: None,
            forecast_method: ClusterMethod::Kmeans,
            forecast_with_static: true,
            augment_epochs: 20,
            max_donors: 0,
            min_extra_days: 14,
            ma_window: 10,
            svg: false,
        }
    }
}

/// Stage seed: the first 8 bytes of `sha256("ldtcast/<stage>/<master>")`.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("ldtcast/{stage}/{master}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub const SEEDED_STAGES: [&str; 3] = ["synth", "train", "cluster"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        SEEDED_STAGES
            .iter()
            .map(|s| (s.to_string(), derive_seed(self.seed, s)))
            .collect()
    }

    pub fn reference_pit(&self) -> usize {
        self.stability_reference_pit.unwrap_or(self.pits[self.pits.len() / 2])
    }

    pub fn entities_dir(&self) -> PathBuf {
        self.output_dir.join("entities")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.output_dir.join("models")
    }

    pub fn census_path(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(&self.census_file))
    }

    pub fn usda_path(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(&self.usda_file))
    }

    pub fn cases_path(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(&self.cases_dir))
    }

    /// Checks values and every path a stage will read, before any work.
    pub fn validate(&self) -> Result<()> {
        let s = &self.stages;
        if s.ingest && s.synth {
            return Err(Error::Config("enable either ingest or synth, not both".into()));
        }
        if s.ingest {
            let Some(dir) = &self.data_dir else {
                return Err(Error::Config("ingest needs data_dir".into()));
            };
            if !dir.is_dir() {
                return Err(Error::Config(format!("data directory {} does not exist", dir.display())));
            }
            for p in [self.census_path(), self.usda_path()].into_iter().flatten() {
                if !p.is_file() {
                    return Err(Error::Config(format!("input file {} does not exist", p.display())));
                }
            }
            let cases = self.cases_path().expect("data_dir set");
            if !cases.is_dir() {
                return Err(Error::Config(format!("cases directory {} does not exist", cases.display())));
            }
        }
        if s.synth {
            self.synthetic.validate()?;
        }
        let needs_entities = s.train || s.embed || s.cluster || s.evaluate || s.forecast;
        if needs_entities && !s.ingest && !s.synth && !self.entities_dir().is_dir() {
            return Err(Error::Config(format!(
                "no source stage enabled and {} does not exist",
                self.entities_dir().display()
            )));
        }
        let needs_models = s.embed || s.evaluate || s.forecast;
        if needs_models && !s.train && !self.models_dir().is_dir() {
            return Err(Error::Config(format!(
                "train is disabled and {} does not exist",
                self.models_dir().display()
            )));
        }
        if self.pits.is_empty() || self.pits.contains(&0) {
            return Err(Error::Config("pits must be a non-empty list of positive day counts".into()));
        }
        if self.stability_reference_pit.is_some_and(|p| !self.pits.contains(&p)) {
            return Err(Error::Config("stability_reference_pit must be one of pits".into()));
        }
        if self.methods.is_empty() || self.with_static.is_empty() {
            return Err(Error::Config("methods and with_static must be non-empty".into()));
        }
        if self.k == 0 || self.restarts == 0 {
            return Err(Error::Config("k and restarts must be at least 1".into()));
        }
        if self.horizons == 0 || self.forecast_horizon == 0 || self.ma_window == 0 {
            return Err(Error::Config("horizons, forecast_horizon and ma_window must be at least 1".into()));
        }
        if !(self.w_static >= 0.0) {
            return Err(Error::Config("w_static must be non-negative".into()));
        }
        if self.stages.forecast {
            if self.stages.cluster && !self.methods.contains(&self.forecast_method) {
                return Err(Error::Config(format!("forecast_method {} is not among methods", self.forecast_method)));
            }
            if self.forecast_pit.is_some_and(|p| !self.pits.contains(&p)) {
                return Err(Error::Config("forecast_pit must be one of pits".into()));
            }
            if self.stages.cluster && !self.with_static.contains(&self.forecast_with_static) {
                return Err(Error::Config("forecast_with_static must be one of with_static".into()));
            }
        }
        let mut run = self.train_run(0);
        run.config.static_dim = 1;
        run.validate()?;
        if self.grid && (self.grid_space.hidden.is_empty() || self.grid_space.layers.is_empty()) {
            return Err(Error::Config("grid search over an empty space".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, static_dim: usize) -> ModelConfig {
        ModelConfig {
            forget_gate: self.forget_gate,
            ..ModelConfig::new(
                self.hidden_size,
                self.num_layers,
                CHANNELS,
                CHANNELS * self.window.offsets.len(),
                static_dim,
                derive_seed(self.seed, "train"),
            )
        }
    }

    pub fn train_run(&self, static_dim: usize) -> TrainRun {
        let mut run = TrainRun::new(self.model_config(static_dim), self.loss, self.window.clone());
        run.test_days = self.test_days;
        run.mini_batches = self.mini_batches;
        run.budget = Budget {
            epochs: self.epochs,
            max_seconds: self.max_seconds,
        };
        run.adam = AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        };
        run.clip_norm = self.clip_norm;
        run.patience = self.patience;
        run.validation_fraction = self.validation_fraction;
        run
    }

    pub fn cluster_spec(&self, method: ClusterMethod, with_static: bool) -> ClusterSpec {
        ClusterSpec {
            method,
            k: self.k,
            with_static,
            w_static: self.w_static,
            options: ClusterOptions {
                restarts: self.restarts,
                seed: derive_seed(self.seed, "cluster"),
                ..ClusterOptions::default()
            },
        }
    }

    pub fn augment_options(&self) -> AugmentOptions {
        AugmentOptions {
            epochs: self.augment_epochs,
            loss: self.loss,
            mini_batches: self.mini_batches,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            clip_norm: self.clip_norm,
            max_donors: self.max_donors,
        }
    }

    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            min_extra_days: self.min_extra_days,
            ..MatchOptions::default()
        }
    }

    pub fn scenario(&self) -> SyntheticScenario {
        SyntheticScenario {
            rng_seed: derive_seed(self.seed, "synth"),
            ..self.synthetic.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"k": 4, "loss": {"kind": "rmse_rel"}, "stages": {"forecast": false}}"#).unwrap();
        assert_eq!(c.k, 4);
        assert_eq!(c.loss.epsilon, 1e-8);
        assert!(c.stages.synth && !c.stages.forecast);
        assert_eq!(c.pits, vec![30, 60, 90]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"hiden_size": 4}"#).is_err());
    }

    #[test]
    fn seeds_split_per_stage() {
        let a = RunConfig::default().seeds();
        assert_eq!(a.len(), 3);
        assert_ne!(a["synth"], a["train"]);
        assert_eq!(a, RunConfig::default().seeds());
        let b = RunConfig { seed: 1, ..Default::default() }.seeds();
        assert_ne!(a["cluster"], b["cluster"]);
    }

    #[test]
    fn missing_data_dir_is_named() {
        let mut c = RunConfig {
            data_dir: Some("/nonexistent/ldtcast-data".into()),
            ..Default::default()
        };
        c.stages.synth = false;
        c.stages.ingest = true;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ldtcast-data"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn both_sources_rejected() {
        let mut c = RunConfig::default();
        c.stages.ingest = true;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
