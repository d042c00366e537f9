//! LSTM stack with a static-feature seed projection, exact backpropagation
//! through time, and Adam.

mod adam;
mod lstm;
mod params;

pub use adam::{clip_global_norm, AdamConfig, OptimizerState};
pub use lstm::{backward, lstm_forward, seed_hidden, Gradients, LstmState, Trace};
pub use params::{LayerParams, LstmParams, Tensor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Dimension of the static feature vector; 0 disables seeding.
    pub static_dim: usize,
    pub rng_seed: u64,
    /// `false` pins the forget gate to 1 (the original no-forget cell).
    #[serde(default = "default_true")]
    pub forget_gate: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(
        hidden_size: usize,
        num_layers: usize,
        input_dim: usize,
        output_dim: usize,
        static_dim: usize,
        rng_seed: u64,
    ) -> Self {
        ModelConfig {
            hidden_size,
            num_layers,
            input_dim,
            output_dim,
            static_dim,
            rng_seed,
            forget_gate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be at least 1".into()));
        }
        if !(1..=3).contains(&self.num_layers) {
            return Err(Error::Config(format!(
                "num_layers must be 1, 2 or 3 (got {})",
                self.num_layers
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input_dim and output_dim must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_size
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::new(8, 1, 2, 2, 0, 42);
        let a = LstmParams::init(&cfg).unwrap();
        let b = LstmParams::init(&cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let other = LstmParams::init(&ModelConfig { rng_seed: 43, ..cfg }).unwrap();
        assert_ne!(a.flatten(), other.flatten());
    }

    #[test]
    fn zero_hidden_is_a_config_error() {
        let cfg = ModelConfig::new(0, 1, 2, 2, 0, 42);
        assert!(matches!(LstmParams::init(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn seed_projection_shape_per_layer() {
        let cfg = ModelConfig::new(8, 2, 2, 2, 4, 1);
        let p = LstmParams::init(&cfg).unwrap();
        for l in &p.layers {
            assert_eq!(l.seed_w.as_ref().unwrap().shape, vec![4, 8]);
            assert_eq!(l.seed_b.as_ref().unwrap().shape, vec![8]);
        }
        let no_seed = LstmParams::init(&ModelConfig::new(8, 2, 2, 2, 0, 1)).unwrap();
        assert!(no_seed.layers.iter().all(|l| l.seed_w.is_none()));
        p.check_shapes(&cfg).unwrap();
    }

    #[test]
    fn init_ranges_and_forget_bias() {
        let cfg = ModelConfig::new(16, 1, 2, 3, 2, 9);
        let p = LstmParams::init(&cfg).unwrap();
        let bound = 0.25;
        assert!(p.layers[0].w_input.data.iter().all(|v| v.abs() <= bound));
        assert!(p.head_w.data.iter().all(|v| v.abs() <= bound));
        let b = &p.layers[0].bias.data;
        assert!(b[..16].iter().all(|&v| v == 0.0));
        assert!(b[16..32].iter().all(|&v| v == 1.0));
        assert!(b[32..].iter().all(|&v| v == 0.0));
        assert!(p.head_b.data.iter().all(|&v| v == 0.0));
    }
}
