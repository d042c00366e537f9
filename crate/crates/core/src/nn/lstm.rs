use serde::{Deserialize, Serialize};

use super::params::LstmParams;
use super::sigmoid;
use crate::error::{Error, Result};

/// Per-layer hidden output `h` and internal cell state `s_c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// Static vector this state was seeded from; backward routes the
    /// initial-state gradient into the seed projection when present.
    #[serde(skip)]
    pub static_input: Option<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(num_layers: usize, hidden: usize) -> Self {
        LstmState {
            h: vec![vec![0.0; hidden]; num_layers],
            c: vec![vec![0.0; hidden]; num_layers],
            static_input: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).flatten().all(|v| v.is_finite())
    }
}

/// Initial state from static features: `h_0 = tanh(W_seedᵀ p + b)` per
/// layer, `s_c(0) = 0`.
pub fn seed_hidden(params: &LstmParams, static_vec: &[f64]) -> Result<LstmState> {
    let hidden = params.head_w.cols();
    let mut state = LstmState::zeros(params.layers.len(), hidden);
    for (l, layer) in params.layers.iter().enumerate() {
        let (Some(w), Some(b)) = (&layer.seed_w, &layer.seed_b) else {
            return Err(Error::Shape("model has no seed projection (static_dim = 0)".into()));
        };
        if w.rows() != static_vec.len() {
            return Err(Error::Shape(format!(
                "static vector has {} entries, seed projection expects {}",
                static_vec.len(),
                w.rows()
            )));
        }
        if static_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite static feature".into()));
        }
        let mut pre = b.data.clone();
        w.matvec_t_acc(static_vec, &mut pre);
        state.h[l] = pre.into_iter().map(f64::tanh).collect();
    }
    state.static_input = Some(static_vec.to_vec());
    Ok(state)
}

#[derive(Clone, Debug)]
struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates `[i, f, g, o]`, each `hidden` long.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations cached by [`lstm_forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct Trace {
    version: u64,
    hidden: usize,
    steps: Vec<Vec<Step>>,
    top_h: Vec<Vec<f64>>,
    static_input: Option<Vec<f64>>,
    h0: Vec<Vec<f64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.top_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.top_h.is_empty()
    }
}

/// Gradients share the parameter layout.
pub type Gradients = LstmParams;

pub fn lstm_forward(
    params: &LstmParams,
    inputs: &[Vec<f64>],
    initial: &LstmState,
) -> Result<(Vec<Vec<f64>>, LstmState, Trace)> {
    if inputs.is_empty() {
        return Err(Error::Shape("empty input sequence".into()));
    }
    let hidden = params.head_w.cols();
    let layers = params.layers.len();
    let input_dim = params.layers[0].w_input.cols();
    if initial.h.len() != layers
        || initial.c.len() != layers
        || initial.h.iter().chain(&initial.c).any(|v| v.len() != hidden)
    {
        return Err(Error::Shape(format!(
            "initial state must be {layers} layers x {hidden}"
        )));
    }
    for (t, x) in inputs.iter().enumerate() {
        if x.len() != input_dim {
            return Err(Error::Shape(format!(
                "input at t={t} has {} features, expected {input_dim}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite input at t={t}")));
        }
    }

    let mut state = LstmState {
        h: initial.h.clone(),
        c: initial.c.clone(),
        static_input: None,
    };
    let mut steps: Vec<Vec<Step>> = vec![Vec::with_capacity(inputs.len()); layers];
    let mut top_h = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut z = vec![0.0; 4 * hidden];

    for x in inputs {
        let mut layer_in = x.clone();
        for (l, p) in params.layers.iter().enumerate() {
            z.copy_from_slice(&p.bias.data);
            p.w_input.matvec_acc(&layer_in, &mut z);
            p.w_hidden.matvec_acc(&state.h[l], &mut z);
            let mut gates = vec![0.0; 4 * hidden];
            for k in 0..hidden {
                gates[k] = sigmoid(z[k]);
                gates[hidden + k] = if params.forget_gate {
                    sigmoid(z[hidden + k])
                } else {
                    1.0
                };
                gates[2 * hidden + k] = z[2 * hidden + k].tanh();
                gates[3 * hidden + k] = sigmoid(z[3 * hidden + k]);
            }
            let mut c = vec![0.0; hidden];
            let mut tanh_c = vec![0.0; hidden];
            let mut h = vec![0.0; hidden];
            for k in 0..hidden {
                c[k] = gates[hidden + k] * state.c[l][k] + gates[k] * gates[2 * hidden + k];
                tanh_c[k] = c[k].tanh();
                h[k] = gates[3 * hidden + k] * tanh_c[k];
            }
            let h_prev = std::mem::replace(&mut state.h[l], h);
            let c_prev = std::mem::replace(&mut state.c[l], c);
            steps[l].push(Step {
                x: std::mem::take(&mut layer_in),
                h_prev,
                c_prev,
                gates,
                tanh_c,
            });
            layer_in = state.h[l].clone();
        }
        let mut y = params.head_b.data.clone();
        params.head_w.matvec_acc(&layer_in, &mut y);
        outputs.push(y);
        top_h.push(layer_in);
    }

    let trace = Trace {
        version: params.version,
        hidden,
        steps,
        top_h,
        static_input: initial.static_input.clone(),
        h0: initial.h.clone(),
    };
    Ok((outputs, state, trace))
}

/// Exact gradients of a scalar loss given `dL/dy_t` for every output.
pub fn backward(
    params: &LstmParams,
    trace: &Trace,
    d_outputs: &[Vec<f64>],
) -> Result<Gradients> {
    let hidden = params.head_w.cols();
    if trace.version != params.version
        || trace.hidden != hidden
        || trace.steps.len() != params.layers.len()
    {
        return Err(Error::Usage(
            "trace does not belong to these parameters (stale or mismatched)".into(),
        ));
    }
    let steps = trace.len();
    if d_outputs.len() != steps {
        return Err(Error::Usage(format!(
            "{} output gradients for a trace of length {steps}",
            d_outputs.len()
        )));
    }
    let out_dim = params.head_b.len();
    if d_outputs.iter().any(|d| d.len() != out_dim) {
        return Err(Error::Shape(format!("output gradient must have {out_dim} entries")));
    }

    let mut grads = params.zeros_like();
    // dL/dh of the current layer at every step, seeded from the head.
    let mut dh_above: Vec<Vec<f64>> = Vec::with_capacity(steps);
    for (t, dy) in d_outputs.iter().enumerate() {
        grads.head_w.outer_acc(dy, &trace.top_h[t]);
        grads.head_b.data.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
        let mut dh = vec![0.0; hidden];
        params.head_w.matvec_t_acc(dy, &mut dh);
        dh_above.push(dh);
    }

    let mut dz = vec![0.0; 4 * hidden];
    for l in (0..params.layers.len()).rev() {
        let p = &params.layers[l];
        let in_dim = p.w_input.cols();
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        let mut dx_all = if l > 0 {
            vec![vec![0.0; in_dim]; steps]
        } else {
            Vec::new()
        };
        let g = &mut grads.layers[l];
        for t in (0..steps).rev() {
            let s = &trace.steps[l][t];
            for k in 0..hidden {
                let i = s.gates[k];
                let f = s.gates[hidden + k];
                let cand = s.gates[2 * hidden + k];
                let o = s.gates[3 * hidden + k];
                let dh = dh_above[t][k] + dh_next[k];
                let d_o = dh * s.tanh_c[k];
                let dc = dh * o * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
                dz[k] = dc * cand * i * (1.0 - i);
                dz[hidden + k] = if params.forget_gate {
                    dc * s.c_prev[k] * f * (1.0 - f)
                } else {
                    0.0
                };
                dz[2 * hidden + k] = dc * i * (1.0 - cand * cand);
                dz[3 * hidden + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            g.w_input.outer_acc(&dz, &s.x);
            g.w_hidden.outer_acc(&dz, &s.h_prev);
            g.bias.data.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
            dh_next.fill(0.0);
            p.w_hidden.matvec_t_acc(&dz, &mut dh_next);
            if l > 0 {
                p.w_input.matvec_t_acc(&dz, &mut dx_all[t]);
            }
        }
        if let (Some(stat), Some(gw), Some(gb)) =
            (&trace.static_input, g.seed_w.as_mut(), g.seed_b.as_mut())
        {
            let dpre: Vec<f64> = dh_next
                .iter()
                .zip(&trace.h0[l])
                .map(|(d, h)| d * (1.0 - h * h))
                .collect();
            // seed_w is static_dim × hidden: grad[j][k] = p_j * dpre_k
            gw.outer_acc(stat, &dpre);
            gb.data.iter_mut().zip(&dpre).for_each(|(b, d)| *b += d);
        }
        if l > 0 {
            dh_above = dx_all;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelConfig, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_params(cfg: &ModelConfig) -> LstmParams {
        let mut p = LstmParams::init(cfg).unwrap();
        for t in p.tensors_mut() {
            t.data.fill(0.0);
        }
        p
    }

    fn random_inputs(t: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_weights_collapse_to_output_bias() {
        let cfg = ModelConfig::new(4, 2, 2, 3, 0, 1);
        let mut p = zero_params(&cfg);
        let init = LstmState::zeros(2, 4);
        let (out, fin, _) = lstm_forward(&p, &random_inputs(5, 2, 3), &init).unwrap();
        assert!(out.iter().flatten().all(|&v| v == 0.0));
        assert!(fin.h.iter().chain(&fin.c).flatten().all(|&v| v == 0.0));

        p.head_b.data = vec![0.5, -1.0, 2.0];
        let (out, _, _) = lstm_forward(&p, &random_inputs(7, 2, 4), &init).unwrap();
        for y in out {
            assert_eq!(y, vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn output_shapes() {
        let cfg = ModelConfig::new(8, 2, 2, 6, 0, 5);
        let p = LstmParams::init(&cfg).unwrap();
        let (out, fin, trace) =
            lstm_forward(&p, &random_inputs(11, 2, 1), &LstmState::zeros(2, 8)).unwrap();
        assert_eq!(out.len(), 11);
        assert!(out.iter().all(|y| y.len() == 6));
        assert!(fin.h.iter().chain(&fin.c).all(|v| v.len() == 8));
        assert_eq!(trace.len(), 11);
    }

    #[test]
    fn seed_zero_map() {
        let cfg = ModelConfig::new(5, 2, 2, 2, 3, 7);
        let mut p = LstmParams::init(&cfg).unwrap();
        for l in &mut p.layers {
            l.seed_w.as_mut().unwrap().data.fill(0.0);
        }
        let s = seed_hidden(&p, &[1.0, -2.0, 3.0]).unwrap();
        assert!(s.h.iter().chain(&s.c).flatten().all(|&v| v == 0.0));

        let p = LstmParams::init(&cfg).unwrap();
        let s = seed_hidden(&p, &[0.0, 0.0, 0.0]).unwrap();
        assert!(s.h.iter().flatten().all(|&v| v == 0.0));
        let s = seed_hidden(&p, &[0.3, 0.1, -0.4]).unwrap();
        assert!(s.h.iter().flatten().any(|&v| v != 0.0));
        assert!(s.c.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn seed_dimension_mismatch() {
        let p = LstmParams::init(&ModelConfig::new(4, 1, 2, 2, 3, 7)).unwrap();
        assert!(matches!(seed_hidden(&p, &[1.0]), Err(Error::Shape(_))));
        let unseeded = LstmParams::init(&ModelConfig::new(4, 1, 2, 2, 0, 7)).unwrap();
        assert!(matches!(seed_hidden(&unseeded, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let p = LstmParams::init(&ModelConfig::new(4, 1, 2, 2, 0, 7)).unwrap();
        let init = LstmState::zeros(1, 4);
        assert!(matches!(lstm_forward(&p, &[], &init), Err(Error::Shape(_))));
        assert!(matches!(
            lstm_forward(&p, &[vec![1.0]], &init),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            lstm_forward(&p, &[vec![f64::NAN, 0.0]], &init),
            Err(Error::Data(_))
        ));
    }

    /// Scalar re-derivation of a hidden=2 single-layer cell, one step at a time.
    #[test]
    fn matches_scalar_recurrence() {
        let cfg = ModelConfig::new(2, 1, 1, 1, 0, 0);
        let mut p = LstmParams::init(&cfg).unwrap();
        // rows: i0 i1 f0 f1 g0 g1 o0 o1
        let wx = [0.5, -0.3, 0.8, 0.1, 1.2, -0.7, 0.4, 0.9];
        let wh = [
            0.1, 0.2, -0.2, 0.3, 0.05, -0.1, 0.4, 0.0, -0.3, 0.2, 0.6, -0.5, 0.1, 0.1, -0.2, 0.3,
        ];
        let b = [0.0, 0.1, 1.0, 1.0, -0.1, 0.2, 0.3, -0.3];
        p.layers[0].w_input = Tensor { shape: vec![8, 1], data: wx.to_vec() };
        p.layers[0].w_hidden = Tensor { shape: vec![8, 2], data: wh.to_vec() };
        p.layers[0].bias = Tensor { shape: vec![8], data: b.to_vec() };
        p.head_w = Tensor { shape: vec![1, 2], data: vec![0.7, -1.1] };
        p.head_b = Tensor { shape: vec![1], data: vec![0.05] };
        let xs = [0.3, -0.8, 1.5];

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = ([0.0f64; 2], [0.0f64; 2]);
        let mut expected = Vec::new();
        for &x in &xs {
            let pre = |row: usize| wx[row] * x + wh[2 * row] * h[0] + wh[2 * row + 1] * h[1] + b[row];
            let mut nh = [0.0; 2];
            for k in 0..2 {
                let i = sig(pre(k));
                let f = sig(pre(2 + k));
                let g = pre(4 + k).tanh();
                let o = sig(pre(6 + k));
                c[k] = f * c[k] + i * g;
                nh[k] = o * c[k].tanh();
            }
            h = nh;
            expected.push(0.7 * h[0] - 1.1 * h[1] + 0.05);
        }
        let inputs: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let (out, fin, _) = lstm_forward(&p, &inputs, &LstmState::zeros(1, 2)).unwrap();
        for (y, e) in out.iter().zip(&expected) {
            assert!((y[0] - e).abs() < 1e-14, "{} vs {}", y[0], e);
        }
        assert!((fin.c[0][0] - c[0]).abs() < 1e-14);
        assert!((fin.h[0][1] - h[1]).abs() < 1e-14);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let cfg = ModelConfig::new(6, 2, 2, 2, 3, 11);
        let p = LstmParams::init(&cfg).unwrap();
        let s = seed_hidden(&p, &[0.2, -0.5, 1.0]).unwrap();
        let (out, _, trace) = lstm_forward(&p, &random_inputs(4, 2, 9), &s).unwrap();
        let zeros = vec![vec![0.0; 2]; out.len()];
        let g = backward(&p, &trace, &zeros).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    /// loss = Σ_t y_t with a single output: dL/d(head bias) = T.
    #[test]
    fn output_bias_gradient_counts_steps() {
        let cfg = ModelConfig::new(3, 1, 2, 1, 0, 2);
        let p = LstmParams::init(&cfg).unwrap();
        let t = 9;
        let (_, _, trace) =
            lstm_forward(&p, &random_inputs(t, 2, 2), &LstmState::zeros(1, 3)).unwrap();
        let g = backward(&p, &trace, &vec![vec![1.0]; t]).unwrap();
        assert_eq!(g.head_b.data, vec![t as f64]);
    }

    #[test]
    fn stale_trace_is_rejected() {
        let cfg = ModelConfig::new(3, 1, 2, 1, 0, 2);
        let mut p = LstmParams::init(&cfg).unwrap();
        let (_, _, trace) =
            lstm_forward(&p, &random_inputs(3, 2, 2), &LstmState::zeros(1, 3)).unwrap();
        p.tensors_mut()[0].data[0] += 0.1;
        assert!(matches!(
            backward(&p, &trace, &vec![vec![1.0]; 3]),
            Err(Error::Usage(_))
        ));
        let other = LstmParams::init(&ModelConfig::new(4, 1, 2, 1, 0, 2)).unwrap();
        assert!(backward(&other, &trace, &vec![vec![1.0]; 3]).is_err());
    }

    fn loss_of(p: &LstmParams, inputs: &[Vec<f64>], stat: Option<&[f64]>, w: &[Vec<f64>]) -> f64 {
        let init = match stat {
            Some(s) => seed_hidden(p, s).unwrap(),
            None => LstmState::zeros(p.layers.len(), p.head_w.cols()),
        };
        let (out, _, _) = lstm_forward(p, inputs, &init).unwrap();
        out.iter()
            .zip(w)
            .map(|(y, wt)| y.iter().zip(wt).map(|(a, b)| (a * b).sin()).sum::<f64>())
            .sum()
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for (hidden, layers, steps, sdim, forget) in
            [(8, 2, 12, 4, true), (3, 1, 5, 0, true), (4, 2, 6, 2, false)]
        {
            let mut cfg = ModelConfig::new(hidden, layers, 2, 3, sdim, rng.random());
            cfg.forget_gate = forget;
            let mut p = LstmParams::init(&cfg).unwrap();
            let inputs = random_inputs(steps, 2, rng.random());
            let stat: Vec<f64> = (0..sdim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let stat_ref = (sdim > 0).then_some(stat.as_slice());
            let w: Vec<Vec<f64>> = (0..steps)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();

            let init = match stat_ref {
                Some(s) => seed_hidden(&p, s).unwrap(),
                None => LstmState::zeros(layers, hidden),
            };
            let (out, _, trace) = lstm_forward(&p, &inputs, &init).unwrap();
            let d: Vec<Vec<f64>> = out
                .iter()
                .zip(&w)
                .map(|(y, wt)| y.iter().zip(wt).map(|(a, b)| b * (a * b).cos()).collect())
                .collect();
            let analytic = backward(&p, &trace, &d).unwrap().flatten();
            let base = p.flatten();
            let eps = 1e-5;
            for idx in 0..base.len() {
                p.set_flat(idx, base[idx] + eps);
                let up = loss_of(&p, &inputs, stat_ref, &w);
                p.set_flat(idx, base[idx] - eps);
                let down = loss_of(&p, &inputs, stat_ref, &w);
                p.set_flat(idx, base[idx]);
                let numeric = (up - down) / (2.0 * eps);
                let diff = (numeric - analytic[idx]).abs();
                let scale = numeric.abs().max(analytic[idx].abs());
                assert!(
                    diff <= 1e-7_f64.max(1e-4 * scale),
                    "coord {idx}: numeric {numeric} analytic {}",
                    analytic[idx]
                );
            }
        }
    }
}
