use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::windows::{make_windows, split_train_test, Sample, WindowSpec};
use crate::data::EntityRecord;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::model::{LstmModel, CHANNELS};
use crate::nn::{backward, clip_global_norm, lstm_forward, AdamConfig, Gradients, LstmParams, ModelConfig, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub epochs: usize,
    #[serde(default)]
    pub max_seconds: Option<f64>,
}

impl Budget {
    pub fn epochs(epochs: usize) -> Self {
        Budget {
            epochs,
            max_seconds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub config: ModelConfig,
    pub loss: LossSpec,
    pub window: WindowSpec,
    pub test_days: usize,
    pub mini_batches: usize,
    pub budget: Budget,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub patience: usize,
    pub min_rel_improvement: f64,
    /// Fraction of training windows (the latest ones) held out for
    /// validation; 0 trains on all of them.
    pub validation_fraction: f64,
}

impl TrainRun {
    pub fn new(config: ModelConfig, loss: LossSpec, window: WindowSpec) -> Self {
        TrainRun {
            config,
            loss,
            window,
            test_days: 30,
            mini_batches: 3,
            budget: Budget::epochs(200),
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            patience: 5,
            min_rel_improvement: 1e-6,
            validation_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.loss.validate()?;
        self.window.validate()?;
        if self.mini_batches == 0 {
            return Err(Error::Config("mini_batches must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        if !(self.clip_norm > 0.0) || !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("clip norm and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Budget,
    Converged,
    Numeric(String),
}

pub struct TrainOutcome {
    pub model: LstmModel,
    pub history: Vec<EpochRecord>,
    pub halt: HaltReason,
}

/// Loss of one sample and, optionally, its parameter gradient. The loss is
/// applied per channel to the sequence of predictions across offsets and
/// summed over channels.
pub fn sample_loss(
    model: &LstmModel,
    loss: &LossSpec,
    sample: &Sample,
    statics: &[f64],
    with_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    let init = model.initial_state(statics)?;
    let (outputs, _, trace) = lstm_forward(&model.params, &sample.inputs, &init)?;
    let y = outputs.last().expect("non-empty window");
    let offsets = model.window.offsets.len();
    let mut total = 0.0;
    let mut dy = vec![0.0; y.len()];
    for c in 0..CHANNELS {
        let pred: Vec<f64> = (0..offsets).map(|o| y[o * CHANNELS + c]).collect();
        let target: Vec<f64> = sample.targets.iter().map(|t| t[c]).collect();
        let (v, g) = loss.evaluate(&pred, &target)?;
        total += v;
        for (o, gv) in g.into_iter().enumerate() {
            dy[o * CHANNELS + c] = gv;
        }
    }
    if !total.is_finite() {
        return Err(Error::Training(format!("non-finite loss on window at day {}", sample.start)));
    }
    if !with_grad {
        return Ok((total, None));
    }
    let mut d_outputs = vec![vec![0.0; y.len()]; outputs.len()];
    *d_outputs.last_mut().expect("non-empty") = dy;
    Ok((total, Some(backward(&model.params, &trace, &d_outputs)?)))
}

pub fn mean_loss(model: &LstmModel, loss: &LossSpec, samples: &[Sample], statics: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let mut sum = 0.0;
    for s in samples {
        sum += sample_loss(model, loss, s, statics, false)?.0;
    }
    Ok(sum / samples.len() as f64)
}

/// Fails if any sample reads a day at or past `limit`.
pub fn check_no_leak(samples: &[Sample], limit: usize) -> Result<()> {
    match samples.iter().find(|s| s.max_index >= limit) {
        Some(s) => Err(Error::Training(format!(
            "window starting at day {} reads day {} (limit {limit})",
            s.start, s.max_index
        ))),
        None => Ok(()),
    }
}

/// Resumable training loop over a fixed sample set.
pub struct Trainer {
    model: LstmModel,
    optimizer: OptimizerState,
    run: TrainRun,
    train: Vec<Sample>,
    validation: Vec<Sample>,
    statics: Vec<f64>,
    rng: ChaCha8Rng,
    history: Vec<EpochRecord>,
    best_train: f64,
    stall: usize,
    best: Option<(f64, LstmParams)>,
    halt: Option<HaltReason>,
    started: Instant,
}

impl Trainer {
    pub fn new(
        model: LstmModel,
        run: TrainRun,
        train: Vec<Sample>,
        validation: Vec<Sample>,
        statics: Vec<f64>,
    ) -> Result<Self> {
        run.validate()?;
        if train.is_empty() {
            return Err(Error::Data("no training windows".into()));
        }
        if model.config.static_dim > 0 && statics.len() != model.config.static_dim {
            return Err(Error::Shape(format!(
                "model expects {} static features, entity has {}",
                model.config.static_dim,
                statics.len()
            )));
        }
        let optimizer = OptimizerState::new(&model.params, run.adam);
        let rng = ChaCha8Rng::seed_from_u64(model.config.rng_seed ^ 0x5348_5546);
        Ok(Trainer {
            model,
            optimizer,
            run,
            train,
            validation,
            statics,
            rng,
            history: Vec::new(),
            best_train: f64::INFINITY,
            stall: 0,
            best: None,
            halt: None,
            started: Instant::now(),
        })
    }

    /// Builds windows from an entity's training prefix and holds out the
    /// latest `validation_fraction` of them.
    pub fn for_entity(entity: &EntityRecord, run: &TrainRun) -> Result<Self> {
        run.validate()?;
        let need = run.window.min_len() + run.test_days;
        if entity.series.len() < need {
            return Err(Error::Data(format!(
                "{}: {} days, training needs at least {need} (window {} + offset {} + test {})",
                entity.key,
                entity.series.len(),
                run.window.window_len,
                run.window.max_offset(),
                run.test_days
            )));
        }
        let (train_series, _) = split_train_test(&entity.series, run.test_days)?;
        let mut windows = make_windows(&train_series, &run.window)?;
        check_no_leak(&windows, entity.series.len() - run.test_days)?;
        let held = (windows.len() as f64 * run.validation_fraction).floor() as usize;
        let held = if run.validation_fraction > 0.0 && windows.len() >= 2 {
            held.clamp(1, windows.len() - 1)
        } else {
            0
        };
        let validation = windows.split_off(windows.len() - held);
        let model = LstmModel::new(run.config.clone(), run.window.clone())?;
        Trainer::new(model, run.clone(), windows, validation, entity.statics.clone())
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn model(&self) -> &LstmModel {
        &self.model
    }

    pub fn halted(&self) -> Option<&HaltReason> {
        self.halt.as_ref()
    }

    /// Lowest validation loss seen so far.
    pub fn best_validation(&self) -> Option<f64> {
        self.best.as_ref().map(|(v, _)| *v)
    }

    fn time_exhausted(&self) -> bool {
        self.run
            .budget
            .max_seconds
            .is_some_and(|s| self.started.elapsed().as_secs_f64() >= s)
    }

    /// Trains until `total_epochs` have run or training halts.
    pub fn run_until(&mut self, total_epochs: usize) {
        while self.halt.is_none() && self.history.len() < total_epochs {
            if self.time_exhausted() {
                self.halt = Some(HaltReason::Budget);
                break;
            }
            self.epoch();
        }
    }

    fn epoch(&mut self) {
        let snapshot = self.model.params.clone();
        match self.try_epoch() {
            Ok(record) => self.record(record),
            Err(e) => {
                self.model.params = snapshot;
                self.halt = Some(HaltReason::Numeric(e.to_string()));
            }
        }
    }

    fn try_epoch(&mut self) -> Result<EpochRecord> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let batches = self.run.mini_batches.min(order.len());
        let mut sum = 0.0;
        for b in 0..batches {
            let lo = b * order.len() / batches;
            let hi = (b + 1) * order.len() / batches;
            let mut grads = self.model.params.zeros_like();
            for &i in &order[lo..hi] {
                let (v, g) = sample_loss(&self.model, &self.run.loss, &self.train[i], &self.statics, true)?;
                sum += v;
                grads.add_assign(&g.expect("gradient requested"))?;
            }
            grads.scale(1.0 / (hi - lo) as f64);
            clip_global_norm(&mut grads, self.run.clip_norm);
            self.optimizer.step(&mut self.model.params, &grads)?;
        }
        if !self.model.params.is_finite() {
            return Err(Error::Training("parameters became non-finite".into()));
        }
        let validation_loss = if self.validation.is_empty() {
            None
        } else {
            Some(mean_loss(&self.model, &self.run.loss, &self.validation, &self.statics)?)
        };
        Ok(EpochRecord {
            epoch: self.history.len() + 1,
            loss: sum / self.train.len() as f64,
            validation_loss,
        })
    }

    fn record(&mut self, record: EpochRecord) {
        if let Some(v) = record.validation_loss {
            if self.best.as_ref().is_none_or(|(b, _)| v < *b) {
                self.best = Some((v, self.model.params.clone()));
            }
        }
        let rel = (self.best_train - record.loss) / self.best_train.abs().max(f64::MIN_POSITIVE);
        if self.best_train.is_finite() && !(rel >= self.run.min_rel_improvement) {
            self.stall += 1;
        } else {
            self.stall = 0;
        }
        self.best_train = self.best_train.min(record.loss);
        self.history.push(record);
        if self.stall >= self.run.patience {
            self.halt = Some(HaltReason::Converged);
        }
    }

    /// Returns the best-validation parameters when a validation set exists,
    /// otherwise the last good parameters.
    pub fn finish(mut self) -> TrainOutcome {
        let validation_loss = self.best.as_ref().map(|(v, _)| *v);
        if let Some((_, params)) = self.best.take() {
            self.model.params = params;
        }
        self.model.meta.loss = self.run.loss.kind.name().to_string();
        self.model.meta.epochs = self.history.len();
        self.model.meta.final_loss = self.history.last().map(|r| r.loss);
        self.model.meta.validation_loss = validation_loss;
        TrainOutcome {
            model: self.model,
            history: self.history,
            halt: self.halt.unwrap_or(HaltReason::Budget),
        }
    }
}

pub fn train_model(entity: &EntityRecord, run: &TrainRun) -> Result<TrainOutcome> {
    let mut trainer = Trainer::for_entity(entity, run)?;
    trainer.run_until(run.budget.epochs);
    let mut outcome = trainer.finish();
    outcome.model.meta.data_hash = data_hash(entity);
    Ok(outcome)
}

/// SHA-256 over the entity key, statics and both series.
pub fn data_hash(entity: &EntityRecord) -> String {
    let mut h = Sha256::new();
    h.update(entity.key.as_str().as_bytes());
    for v in entity
        .statics
        .iter()
        .chain(&entity.series.infections)
        .chain(&entity.series.deaths)
    {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "validation_loss"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.validation_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CaseSeries, EntityKey};
    use crate::losses::LossKind;
    use chrono::NaiveDate;

    fn entity(infections: Vec<f64>, deaths: Vec<f64>) -> EntityRecord {
        let key = EntityKey::from_parts(39, 35).unwrap();
        EntityRecord {
            key: key.clone(),
            name: None,
            statics: vec![0.3, -1.2],
            series: CaseSeries {
                key,
                start_date: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
                infections,
                deaths,
                population: Some(1000),
                normalized: true,
            },
        }
    }

    fn logistic(len: usize) -> EntityRecord {
        let f = |t: usize, k: f64| k / (1.0 + (-0.15 * (t as f64 - 35.0)).exp());
        entity(
            (0..len).map(|t| f(t, 0.5)).collect(),
            (0..len).map(|t| f(t, 0.02)).collect(),
        )
    }

    fn run(hidden: usize, static_dim: usize, loss: LossKind) -> TrainRun {
        let window = WindowSpec {
            window_len: 7,
            offsets: vec![1, 3, 5],
        };
        let cfg = ModelConfig::new(hidden, 1, 2, 6, static_dim, 17);
        TrainRun::new(cfg, LossSpec::new(loss), window)
    }

    #[test]
    fn zero_series_learns_zero_map() {
        let e = entity(vec![0.0; 60], vec![0.0; 60]);
        let mut r = run(4, 0, LossKind::MseAbs);
        r.budget = Budget::epochs(3000);
        r.patience = usize::MAX;
        let out = train_model(&e, &r).unwrap();
        let last = out.history.last().unwrap().loss;
        assert!(last < 1e-10, "final loss {last}");
    }

    #[test]
    fn reruns_are_identical() {
        let e = logistic(60);
        let mut r = run(6, 2, LossKind::RmseRel);
        r.budget = Budget::epochs(15);
        r.validation_fraction = 0.2;
        let a = train_model(&e, &r).unwrap();
        let b = train_model(&e, &r).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.params, b.model.params);
        assert!(a.history.iter().all(|h| h.loss.is_finite()));
    }

    #[test]
    fn logistic_training_loss_drops_tenfold() {
        let e = logistic(80);
        let mut r = run(8, 0, LossKind::MseAbs);
        r.adam.learning_rate = 1e-2;
        r.budget = Budget::epochs(300);
        let out = train_model(&e, &r).unwrap();
        let first = out.history[0].loss;
        let last = out.history.last().unwrap().loss;
        assert!(first / last >= 10.0, "first {first} last {last}");
    }

    #[test]
    fn training_windows_stop_before_the_test_buffer() {
        let e = logistic(70);
        let mut r = run(3, 0, LossKind::MseAbs);
        r.validation_fraction = 0.2;
        let t = Trainer::for_entity(&e, &r).unwrap();
        check_no_leak(&t.train, 40).unwrap();
        check_no_leak(&t.validation, 40).unwrap();
        assert_eq!(t.train.len() + t.validation.len(), 40 - 12 + 1);
        assert!(t.validation.iter().all(|v| v.start > t.train.iter().map(|s| s.start).max().unwrap()));
    }

    #[test]
    fn short_entity_is_a_data_error() {
        let e = logistic(40);
        let r = run(3, 0, LossKind::MseAbs);
        let err = Trainer::for_entity(&e, &r).err().unwrap();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("42"));
    }

    #[test]
    fn convergence_halts_early() {
        let e = entity(vec![0.0; 60], vec![0.0; 60]);
        let mut r = run(2, 0, LossKind::MseAbs);
        r.budget = Budget::epochs(100_000);
        let out = train_model(&e, &r).unwrap();
        assert_eq!(out.halt, HaltReason::Converged);
        assert!(out.history.len() < 100_000);
    }

    #[test]
    fn leak_check_flags_overlap() {
        let e = logistic(50);
        let w = make_windows(&e.series, &WindowSpec::default()).unwrap();
        assert!(check_no_leak(&w, 50).is_ok());
        assert!(check_no_leak(&w, 49).is_err());
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/history.csv");
        let h = vec![
            EpochRecord { epoch: 1, loss: 0.5, validation_loss: Some(0.25) },
            EpochRecord { epoch: 2, loss: 0.125, validation_loss: None },
        ];
        write_history(&path, &h).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,loss,validation_loss\n1,0.5,0.25\n2,0.125,\n");
    }

    #[test]
    fn data_hash_tracks_content() {
        let a = logistic(50);
        let mut b = a.clone();
        assert_eq!(data_hash(&a), data_hash(&b));
        b.series.deaths[3] += 1e-12;
        assert_ne!(data_hash(&a), data_hash(&b));
        assert_eq!(data_hash(&a).len(), 64);
    }
}
