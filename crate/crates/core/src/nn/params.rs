use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};

/// Dense row-major tensor of rank 1 or 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// `out += self · x` for a `rows × cols` matrix.
    pub(crate) fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        let cols = self.cols();
        debug_assert_eq!(x.len(), cols);
        debug_assert_eq!(out.len(), self.rows());
        for (row, o) in self.data.chunks_exact(cols).zip(out.iter_mut()) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `out += selfᵀ · y`.
    pub(crate) fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        let cols = self.cols();
        debug_assert_eq!(y.len(), self.rows());
        debug_assert_eq!(out.len(), cols);
        for (row, &yr) in self.data.chunks_exact(cols).zip(y) {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }

    /// `self += y · xᵀ` (rank-one update).
    pub(crate) fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        let cols = self.cols();
        debug_assert_eq!(x.len(), cols);
        for (row, &yr) in self.data.chunks_exact_mut(cols).zip(y) {
            if yr == 0.0 {
                continue;
            }
            for (w, v) in row.iter_mut().zip(x) {
                *w += yr * v;
            }
        }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Tensor::zeros(shape);
        for v in &mut t.data {
            *v = rng.random_range(-bound..=bound);
        }
        t
    }
}

fn forget_default() -> bool {
    true
}

/// Parameters of one LSTM layer. Gate rows are stacked in the order
/// input, forget, candidate, output (`4 * hidden` rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
    /// `static_dim × hidden` projection used to seed `h_0`.
    pub seed_w: Option<Tensor>,
    pub seed_b: Option<Tensor>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: Vec<LayerParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    /// `false` pins the forget gate activation to 1.
    #[serde(default = "forget_default")]
    pub forget_gate: bool,
    /// Bumped on every mutable borrow; traces remember the value they saw.
    #[serde(skip)]
    pub(crate) version: u64,
}

impl PartialEq for LstmParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.head_w == other.head_w
            && self.head_b == other.head_b
            && self.forget_gate == other.forget_gate
    }
}

impl LstmParams {
    /// Deterministic initialization from `config.rng_seed`: weights uniform
    /// in `±1/sqrt(hidden)`, biases zero except the forget gate at `+1`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let bound = 1.0 / (h as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let in_dim = config.layer_input_dim(l);
            let w_input = Tensor::uniform(&[4 * h, in_dim], bound, &mut rng);
            let w_hidden = Tensor::uniform(&[4 * h, h], bound, &mut rng);
            let mut bias = Tensor::zeros(&[4 * h]);
            if config.forget_gate {
                bias.data[h..2 * h].fill(1.0);
            }
            let (seed_w, seed_b) = if config.static_dim > 0 {
                (
                    Some(Tensor::uniform(&[config.static_dim, h], bound, &mut rng)),
                    Some(Tensor::zeros(&[h])),
                )
            } else {
                (None, None)
            };
            layers.push(LayerParams {
                w_input,
                w_hidden,
                bias,
                seed_w,
                seed_b,
            });
        }
        let head_w = Tensor::uniform(&[config.output_dim, h], bound, &mut rng);
        let head_b = Tensor::zeros(&[config.output_dim]);
        Ok(LstmParams {
            layers,
            head_w,
            head_b,
            forget_gate: config.forget_gate,
            version: 0,
        })
    }

    /// Same shapes, all zeros. Used for gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(&t.shape);
        LstmParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_input: z(&l.w_input),
                    w_hidden: z(&l.w_hidden),
                    bias: z(&l.bias),
                    seed_w: l.seed_w.as_ref().map(z),
                    seed_b: l.seed_b.as_ref().map(z),
                })
                .collect(),
            head_w: z(&self.head_w),
            head_b: z(&self.head_b),
            forget_gate: self.forget_gate,
            version: 0,
        }
    }

    /// Named tensors in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w_input"), &l.w_input));
            out.push((format!("layer{i}.w_hidden"), &l.w_hidden));
            out.push((format!("layer{i}.bias"), &l.bias));
            if let Some(t) = &l.seed_w {
                out.push((format!("layer{i}.seed_w"), t));
            }
            if let Some(t) = &l.seed_b {
                out.push((format!("layer{i}.seed_b"), t));
            }
        }
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable tensors in the same order as [`LstmParams::tensors`].
    /// Invalidates outstanding forward traces.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.version = self.version.wrapping_add(1);
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w_input);
            out.push(&mut l.w_hidden);
            out.push(&mut l.bias);
            if let Some(t) = &mut l.seed_w {
                out.push(t);
            }
            if let Some(t) = &mut l.seed_b {
                out.push(t);
            }
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &LstmParams) -> Result<()> {
        let src = other.tensors();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::Shape("parameter families differ".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            if d.shape != s.shape {
                return Err(Error::Shape(format!("{:?} vs {:?}", d.shape, s.shape)));
            }
            d.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    /// Concatenation of every coordinate in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    /// Set coordinate `index` of the flattened view.
    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t.data[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }

    pub(crate) fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let h = config.hidden_size;
        if self.layers.len() != config.num_layers {
            return Err(Error::Shape(format!(
                "{} layers, config has {}",
                self.layers.len(),
                config.num_layers
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let expect = |t: &Tensor, shape: &[usize], what: &str| -> Result<()> {
                if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                    return Err(Error::Shape(format!(
                        "layer{i}.{what}: shape {:?}, expected {shape:?}",
                        t.shape
                    )));
                }
                Ok(())
            };
            expect(&l.w_input, &[4 * h, config.layer_input_dim(i)], "w_input")?;
            expect(&l.w_hidden, &[4 * h, h], "w_hidden")?;
            expect(&l.bias, &[4 * h], "bias")?;
            match (&l.seed_w, &l.seed_b, config.static_dim) {
                (None, None, 0) => {}
                (Some(w), Some(b), s) if s > 0 => {
                    expect(w, &[s, h], "seed_w")?;
                    expect(b, &[h], "seed_b")?;
                }
                _ => {
                    return Err(Error::Shape(format!(
                        "layer{i}: seed projection must be present iff static_dim > 0"
                    )))
                }
            }
        }
        if self.forget_gate != config.forget_gate {
            return Err(Error::Shape("forget-gate mode differs from config".into()));
        }
        if self.head_w.shape != [config.output_dim, h] || self.head_b.shape != [config.output_dim] {
            return Err(Error::Shape("output head shape".into()));
        }
        Ok(())
    }
}
