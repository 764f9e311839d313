//! Dense multilayer perceptrons with hand-written backpropagation and Adam.
//!
//! Parameters of a network live in one flat vector so optimizers, gradient
//! clipping and checkpoints can treat every network uniformly. Layer inputs
//! that are exactly zero are skipped in both directions, which makes the
//! sparse occupancy-grid observations cheap to push through wide layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    relu_output: bool,
    pub params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward`]; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// ReLU between layers; the output layer is linear unless `relu_output`.
    /// Hidden layers use He-uniform initialisation, the last layer is scaled
    /// by `output_gain` (small gains give near-uniform policies).
    pub fn new<R: Rng>(sizes: &[usize], relu_output: bool, output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        let n_layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let last = l + 1 == n_layers;
            let bound = if last {
                output_gain * (3.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for _ in 0..fan_in * fan_out {
                params.push(if bound == 0.0 { 0.0 } else { rng.gen_range(-bound..bound) });
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            relu_output,
            params,
        }
    }

    pub fn zeros(sizes: &[usize], relu_output: bool) -> Self {
        Self {
            sizes: sizes.to_vec(),
            relu_output,
            params: vec![0.0; param_count(sizes)],
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (off, off + i * o)
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        let l = self.sizes.len() - 2;
        let (w, b) = self.layer_offsets(l);
        let end = b + self.sizes[l + 1];
        self.params[w..end].iter_mut().for_each(|p| *p = 0.0);
    }

    fn relu_at(&self, l: usize) -> bool {
        l + 2 < self.sizes.len() || self.relu_output
    }

    pub fn forward(&self, x: &[f64]) -> MlpCache {
        assert_eq!(x.len(), self.sizes[0], "mlp input size mismatch");
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.sizes.len() - 1 {
            let (wo, bo) = self.layer_offsets(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = acts.last().unwrap();
            let mut out = self.params[bo..bo + n_out].to_vec();
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &self.params[wo + i * n_out..wo + (i + 1) * n_out];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += a * w;
                }
            }
            debug_assert_eq!(input.len(), n_in);
            if self.relu_at(l) {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        MlpCache { acts }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).acts.pop().unwrap()
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when `want_input` is set.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &[f64],
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut g = grad_out.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (wo, bo) = self.layer_offsets(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if self.relu_at(l) {
                for (gi, &a) in g.iter_mut().zip(&cache.acts[l + 1]) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            for (gb, gi) in grads[bo..bo + n_out].iter_mut().zip(&g) {
                *gb += gi;
            }
            let input = &cache.acts[l];
            let need_in = l > 0 || want_input;
            let mut g_in = if need_in { vec![0.0; n_in] } else { Vec::new() };
            for (i, &a) in input.iter().enumerate() {
                let row = wo + i * n_out..wo + (i + 1) * n_out;
                if a != 0.0 {
                    for (gw, gi) in grads[row.clone()].iter_mut().zip(&g) {
                        *gw += a * gi;
                    }
                }
                if need_in {
                    g_in[i] = self.params[row].iter().zip(&g).map(|(w, gi)| w * gi).sum();
                }
            }
            if l == 0 {
                return if want_input { Some(g_in) } else { None };
            }
            g = g_in;
        }
        unreachable!()
    }
}

/// Adam with PyTorch-style bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr / bc1;
        for i in 0..params.len() {
            let g = grads[i];
            // untouched inputs of sparse layers: the update would be exactly 0
            if g == 0.0 && self.m[i] == 0.0 && self.v[i] == 0.0 {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= step * self.m[i] / ((self.v[i] / bc2).sqrt() + self.eps);
        }
    }
}

pub fn global_norm(grads: &[&[f64]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / (norm + 1e-6);
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
