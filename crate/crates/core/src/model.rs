//! A trained per-entity model and its versioned JSON checkpoint.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{lstm_forward, seed_hidden, LstmParams, LstmState, ModelConfig, Tensor};
use crate::training::WindowSpec;

pub const CHECKPOINT_FORMAT: &str = "ldtcast-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub loss: String,
    pub epochs: usize,
    pub data_hash: String,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub validation_loss: Option<f64>,
}

/// Which recurrent tensor is read out as the embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedSource {
    /// Hidden output `h`.
    #[default]
    H,
    /// Internal cell state `s_c`.
    Sc,
    /// `h` followed by `s_c`.
    HSc,
}

impl std::str::FromStr for EmbedSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(EmbedSource::H),
            "sc" => Ok(EmbedSource::Sc),
            "h_sc" => Ok(EmbedSource::HSc),
            other => Err(Error::Config(format!("unknown embedding source {other:?} (expected h, sc or h_sc)"))),
        }
    }
}

impl std::fmt::Display for EmbedSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbedSource::H => "h",
            EmbedSource::Sc => "sc",
            EmbedSource::HSc => "h_sc",
        })
    }
}

/// `last` reads the top layer only; `all` concatenates every layer,
/// bottom to top.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    #[default]
    Last,
    All,
}

impl std::str::FromStr for EmbedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(EmbedMode::Last),
            "all" => Ok(EmbedMode::All),
            other => Err(Error::Config(format!("unknown embedding mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbedMode::Last => "last",
            EmbedMode::All => "all",
        })
    }
}

/// Output `o * 2 + c` predicts channel `c` (0 infections, 1 deaths) at
/// `window.offsets[o]` days past the last input day.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmModel {
    pub config: ModelConfig,
    pub params: LstmParams,
    pub window: WindowSpec,
    pub meta: TrainingMeta,
}

pub const CHANNELS: usize = 2;

impl LstmModel {
    pub fn new(config: ModelConfig, window: WindowSpec) -> Result<Self> {
        window.validate()?;
        if config.input_dim != CHANNELS || config.output_dim != CHANNELS * window.offsets.len() {
            return Err(Error::Config(format!(
                "model needs input_dim {CHANNELS} and output_dim {} for offsets {:?}",
                CHANNELS * window.offsets.len(),
                window.offsets
            )));
        }
        let params = LstmParams::init(&config)?;
        Ok(LstmModel {
            config,
            params,
            window,
            meta: TrainingMeta::default(),
        })
    }

    pub fn initial_state(&self, statics: &[f64]) -> Result<LstmState> {
        if self.config.static_dim > 0 {
            seed_hidden(&self.params, statics)
        } else {
            Ok(LstmState::zeros(self.config.num_layers, self.config.hidden_size))
        }
    }

    /// Final-step outputs for one input sequence.
    pub fn predict(&self, inputs: &[Vec<f64>], statics: &[f64]) -> Result<Vec<f64>> {
        let init = self.initial_state(statics)?;
        let (out, _, _) = lstm_forward(&self.params, inputs, &init)?;
        Ok(out.into_iter().next_back().expect("non-empty"))
    }

    /// Index of the one-day-ahead head.
    fn next_day_head(&self) -> Result<usize> {
        self.window
            .offsets
            .iter()
            .position(|&o| o == 1)
            .ok_or_else(|| Error::Config("recursive rollout needs offset 1".into()))
    }

    /// Recursive forecast: each predicted day is appended to the history and
    /// the next day is predicted from the trailing window.
    pub fn rollout(
        &self,
        history: &[Vec<f64>],
        statics: &[f64],
        horizon: usize,
    ) -> Result<Vec<[f64; CHANNELS]>> {
        if history.is_empty() {
            return Err(Error::Data("rollout needs a non-empty history".into()));
        }
        let head = self.next_day_head()?;
        let mut buf: Vec<Vec<f64>> = history.to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let start = buf.len().saturating_sub(self.window.window_len);
            let y = self.predict(&buf[start..], statics)?;
            let next = [y[head * CHANNELS], y[head * CHANNELS + 1]];
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::Training("non-finite forecast".into()));
            }
            buf.push(next.to_vec());
            out.push(next);
        }
        Ok(out)
    }

    /// Final recurrent state after consuming `inputs`.
    pub fn final_state(&self, inputs: &[Vec<f64>], statics: &[f64]) -> Result<LstmState> {
        let init = self.initial_state(statics)?;
        let (_, state, _) = lstm_forward(&self.params, inputs, &init)?;
        Ok(state)
    }

    pub fn embedding_len(&self, mode: EmbedMode, source: EmbedSource) -> usize {
        let layers = match mode {
            EmbedMode::Last => 1,
            EmbedMode::All => self.config.num_layers,
        };
        let per = match source {
            EmbedSource::H | EmbedSource::Sc => 1,
            EmbedSource::HSc => 2,
        };
        layers * per * self.config.hidden_size
    }

    pub fn embed(
        &self,
        inputs: &[Vec<f64>],
        statics: &[f64],
        mode: EmbedMode,
        source: EmbedSource,
    ) -> Result<Vec<f64>> {
        let state = self.final_state(inputs, statics)?;
        let layers: Vec<usize> = match mode {
            EmbedMode::Last => vec![self.config.num_layers - 1],
            EmbedMode::All => (0..self.config.num_layers).collect(),
        };
        let mut out = Vec::with_capacity(self.embedding_len(mode, source));
        for l in layers {
            match source {
                EmbedSource::H => out.extend_from_slice(&state.h[l]),
                EmbedSource::Sc => out.extend_from_slice(&state.c[l]),
                EmbedSource::HSc => {
                    out.extend_from_slice(&state.h[l]);
                    out.extend_from_slice(&state.c[l]);
                }
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            rng_seed: self.config.rng_seed,
            config: self.config.clone(),
            window: self.window.clone(),
            training: self.meta.clone(),
            tensors: self
                .params
                .named_tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a checkpoint (format {:?})", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut model = LstmModel::new(ck.config, ck.window)?;
        let names: Vec<String> = model.params.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != ck.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, config implies {}",
                ck.tensors.len(),
                names.len()
            )));
        }
        for ((name, dst), src) in names.iter().zip(model.params.tensors_mut()).zip(ck.tensors) {
            if *name != src.name || dst.shape != src.shape || dst.data.len() != src.data.len() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match expected {name} {:?}",
                    src.name, src.shape, dst.shape
                )));
            }
            *dst = Tensor {
                shape: src.shape,
                data: src.data,
            };
        }
        model.params.check_shapes(&model.config)?;
        if !model.params.is_finite() {
            return Err(Error::Data("checkpoint contains non-finite parameters".into()));
        }
        model.meta = ck.training;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LstmModel::from_checkpoint(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub window: WindowSpec,
    pub rng_seed: u64,
    pub training: TrainingMeta,
    pub tensors: Vec<NamedTensor>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(hidden: usize, layers: usize, static_dim: usize) -> LstmModel {
        let window = WindowSpec::default();
        let cfg = ModelConfig::new(hidden, layers, 2, 2 * window.offsets.len(), static_dim, 21);
        LstmModel::new(cfg, window).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_value_exact() {
        let mut m = model(5, 2, 3);
        for (i, t) in m.params.tensors_mut().into_iter().enumerate() {
            for (j, v) in t.data.iter_mut().enumerate() {
                *v = (*v * 1e3).sin() / 7.0 + (i * j) as f64 * 1e-17;
            }
        }
        m.meta.loss = "rmse_rel".into();
        let text = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = LstmModel::from_checkpoint(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.params.flatten(), m.params.flatten());
        assert_eq!(back.meta, m.meta);
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn checkpoint_rejects_mismatched_tensors() {
        let m = model(4, 1, 0);
        let mut ck = m.to_checkpoint();
        ck.tensors[0].shape = vec![1, 1];
        assert!(LstmModel::from_checkpoint(ck).is_err());
        let mut ck = m.to_checkpoint();
        ck.version = 99;
        assert!(LstmModel::from_checkpoint(ck).is_err());
    }

    #[test]
    fn embedding_lengths() {
        let m = model(256, 2, 0);
        let inputs = vec![vec![0.01, 0.0001]; 5];
        assert_eq!(m.embed(&inputs, &[], EmbedMode::Last, EmbedSource::H).unwrap().len(), 256);
        assert_eq!(m.embed(&inputs, &[], EmbedMode::All, EmbedSource::H).unwrap().len(), 512);
        assert_eq!(m.embedding_len(EmbedMode::All, EmbedSource::HSc), 1024);
        let a = m.embed(&inputs, &[], EmbedMode::Last, EmbedSource::H).unwrap();
        let b = m.embed(&inputs, &[], EmbedMode::Last, EmbedSource::H).unwrap();
        assert_eq!(a, b);
        let all = m.embed(&inputs, &[], EmbedMode::All, EmbedSource::H).unwrap();
        assert_eq!(&all[256..], &a[..]);
    }

    #[test]
    fn rollout_length_and_head() {
        let m = model(4, 1, 2);
        let hist = vec![vec![0.1, 0.001]; 20];
        let f = m.rollout(&hist, &[0.5, -0.5], 7).unwrap();
        assert_eq!(f.len(), 7);
        let no_one = LstmModel::new(
            ModelConfig::new(4, 1, 2, 2, 0, 1),
            WindowSpec { window_len: 7, offsets: vec![3] },
        )
        .unwrap();
        assert!(no_one.rollout(&hist, &[], 1).is_err());
    }
}
