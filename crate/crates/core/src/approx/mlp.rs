use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulates performed by forward passes on this thread since the
/// last reset.
pub fn mac_count() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

/// A fully connected feed-forward network.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs. Its weights are
/// stored row-major with shape `(out, in)` followed by `out` biases, and all
/// layers are concatenated into `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Per-layer outputs of a forward pass, input first.
#[derive(Debug, Clone)]
pub struct Trace {
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("trace holds at least the input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Builds a network with weights drawn uniformly from
    /// `±sqrt(6 / (fan_in + fan_out))` and zero biases.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least two layer sizes"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid(format!("layer sizes must be positive: {sizes:?}")));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::invalid(format!(
                "expected {} activation tags, got {}",
                sizes.len() - 1,
                activations.len()
            )));
        }
        Ok(Self { sizes: sizes.to_vec(), activations: activations.to_vec(), params: vec![0.0; param_count(sizes)] })
    }

    /// Rebuilds a network from explicit parameters, validating shape and finiteness.
    pub fn from_params(sizes: &[usize], activations: &[Activation], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, layer sizes require {}",
                params.len(),
                net.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("non-finite parameter"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Multiply-accumulates in one forward pass.
    pub fn forward_macs(&self) -> u64 {
        self.sizes.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
    }

    /// Zeroes the weights and biases of the output layer.
    pub fn zero_output_layer(&mut self) {
        let l = self.sizes.len() - 2;
        let n = self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        let len = self.params.len();
        self.params[len - n..].fill(0.0);
    }

    /// Mutable view of layer `l`'s (weights, biases).
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let offset = self.layer_offset(l);
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w, rest) = self.params[offset..].split_at_mut(fan_in * fan_out);
        (w, &mut rest[..fan_out])
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.sizes[..=l])
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.sizes[0] {
            return Err(Error::invalid(format!("input has length {}, network expects {}", input.len(), self.sizes[0])));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            x = self.layer_forward(l, offset, w[0], w[1], &x);
            offset += w[0] * w[1] + w[1];
        }
        x
    }

    fn layer_forward(&self, l: usize, offset: usize, fan_in: usize, fan_out: usize, x: &[f64]) -> Vec<f64> {
        let weights = &self.params[offset..offset + fan_in * fan_out];
        let biases = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        let act = self.activations[l];
        MACS.with(|c| c.set(c.get() + (fan_in * fan_out) as u64));
        weights
            .chunks_exact(fan_in)
            .zip(biases)
            .map(|(row, b)| act.apply(row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b))
            .collect()
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        Ok(self.trace_unchecked(input))
    }

    pub(crate) fn trace_unchecked(&self, input: &[f64]) -> Trace {
        let mut outputs = Vec::with_capacity(self.sizes.len());
        outputs.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let next = self.layer_forward(l, offset, w[0], w[1], outputs.last().unwrap());
            outputs.push(next);
            offset += w[0] * w[1] + w[1];
        }
        Trace { outputs }
    }

    /// Reverse pass over a recorded trace.
    ///
    /// Parameter gradients are *added* into `grads` (length `num_params`), so a
    /// batch can be accumulated by repeated calls. Returns the gradient with
    /// respect to the network input.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if grads.len() != self.params.len() || trace.outputs.len() != self.sizes.len() {
            return Err(Error::invalid("gradient buffer or trace does not match the network"));
        }
        Ok(self.backward_unchecked(trace, upstream, grads))
    }

    pub(crate) fn backward_unchecked(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut delta: Vec<f64> = upstream.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= fan_in * fan_out + fan_out;
            let out = &trace.outputs[l + 1];
            let input = &trace.outputs[l];
            let act = self.activations[l];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(*y);
            }
            let (gw, gb) = grads[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for ((row, gb_j), d) in gw.chunks_exact_mut(fan_in).zip(gb.iter_mut()).zip(&delta) {
                *gb_j += d;
                if *d != 0.0 {
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (row, d) in weights.chunks_exact(fan_in).zip(&delta) {
                if *d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Exact reverse-mode gradients of `upstream · f(input)`.
    ///
    /// Returns (parameter gradients, input gradient).
    pub fn gradient(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward(&trace, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// Sum of all parameters weighted by position; a cheap fingerprint for
    /// determinism checks.
    pub fn checksum(&self) -> f64 {
        self.params.iter().enumerate().map(|(i, p)| p * (1.0 + (i % 7) as f64)).sum()
    }
}
