//! Minimal dense network with hand-rolled reverse-mode gradients, plus Adam.
//!
//! Layers are tanh-activated except the linear output. Parameters live in one
//! flat vector (per layer: row-major weight block, then biases) so the
//! optimizer and checkpoints can treat them uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations cached by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    // post-activation values per layer, including the input at index 0
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Final-layer output recorded by the forward pass.
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache always holds the input layer")
    }
}

impl Mlp {
    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Random init: hidden weights ~ U(+-sqrt(1/fan_in)), output layer
    /// scaled down so the initial policy mean sits near zero.
    pub fn new<R: Rng>(dims: Vec<usize>, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(Self::param_count(&dims));
        let layers = dims.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut scale = (1.0 / fan_in as f64).sqrt();
            if l == layers - 1 {
                scale *= 0.01;
            }
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-scale..scale));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out)); // zero biases
        }
        Self { dims, params }
    }

    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, ForwardCache) {
        debug_assert_eq!(input.len(), self.dims[0]);
        let mut acts = vec![input.to_vec()];
        let mut offset = 0;
        let layers = self.dims.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let prev = &acts[l];
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut out = vec![0.0; n_out];
            for o in 0..n_out {
                let mut z = b[o];
                let row = &w[o * n_in..(o + 1) * n_in];
                for (x, wi) in prev.iter().zip(row) {
                    z += x * wi;
                }
                out[o] = if l == layers - 1 { z } else { z.tanh() };
            }
            acts.push(out);
            offset += n_in * n_out + n_out;
        }
        (acts[layers].clone(), ForwardCache { acts })
    }

    /// Accumulate parameter gradients for upstream gradient `d_out` into
    /// `grad` (same layout as `params`). Returns the gradient w.r.t. the
    /// network input.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.dims.len() - 1;
        let mut layer_offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            layer_offsets.push(offset);
            offset += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }

        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = layer_offsets[l];
            let act_in = &cache.acts[l];
            let act_out = &cache.acts[l + 1];
            // tanh derivative on hidden layers
            if l != layers - 1 {
                for o in 0..n_out {
                    delta[o] *= 1.0 - act_out[o] * act_out[o];
                }
            }
            for o in 0..n_out {
                let d = delta[o];
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(act_in) {
                    *g += d * x;
                }
                grad[off + n_in * n_out + o] += d;
            }
            // propagate to the previous layer's activations; at l == 0 this
            // is the gradient w.r.t. the network input
            let w = &self.params[off..off + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for (i, n) in next.iter_mut().enumerate() {
                for o in 0..n_out {
                    *n += w[o * n_in + i] * delta[o];
                }
            }
            delta = next;
        }
        delta
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Apply one descent step of `grad` (gradient of the loss) to `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
