//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! All arithmetic is `f64`. A [`Network`] is an ordered list of
//! [`DenseLayer`]s computing `y = act(W x + b)` with row-major `W`.

mod adam;
mod checkpoint;
mod gradcheck;

pub use adam::{AdamConfig, AdamState};
pub(crate) use checkpoint::read_network_from;
pub use checkpoint::{
    network_to_bytes, read_network, write_network, NETWORK_MAGIC, NETWORK_VERSION,
};
pub use gradcheck::{check_gradient, finite_diff_check, finite_diff_check_with, FdReport};

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Softplus => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Softplus),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Softplus => softplus(v),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(pre),
        }
    }
}

/// Numerically stable `log(1 + e^v)`, clamped away from zero so the result
/// stays strictly positive where `e^v` underflows.
#[inline]
pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p().max(f64::MIN_POSITIVE)
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// Row-major `(out_dim, in_dim)`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::dim("layer weights", in_dim * out_dim, weights.len()));
        }
        if biases.len() != out_dim {
            return Err(Error::dim("layer biases", out_dim, biases.len()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    #[inline]
    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in self
            .weights
            .chunks_exact(self.in_dim)
            .zip(&self.biases)
            .enumerate()
        {
            out[o] = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("trace has at least the input")
    }
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

/// Per-layer parameter gradients plus the gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl GradientTape {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.params_mut() {
            v.iter_mut().for_each(|g| *g *= s);
        }
        self.input.iter_mut().for_each(|g| *g *= s);
    }

    pub fn add_assign(&mut self, other: &GradientTape) {
        for (a, b) in self.params_mut().zip(other.params()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.input
            .iter_mut()
            .zip(&other.input)
            .for_each(|(x, y)| *x += y);
    }

    pub fn reset(&mut self) {
        for v in self.params_mut() {
            v.iter_mut().for_each(|g| *g = 0.0);
        }
        self.input.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Parameter gradients in the same order as [`Network::params`].
    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params().flat_map(|s| s.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::LayerDim {
                    layer: i + 1,
                    expected: pair[1].in_dim,
                    actual: pair[0].out_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Multi-layer perceptron with `hidden_act` on hidden layers and
    /// `output_act` on the last one.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        hidden_act: Activation,
        output_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let act = if i == last { output_act } else { hidden_act };
                DenseLayer::glorot(d[0], d[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameter slices in the order weights(0), biases(0), weights(1), ...
    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.out_dim];
            layer.affine_into(&cur, &mut next);
            next.iter_mut()
                .for_each(|v| *v = layer.activation.apply(*v));
            cur = next;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim];
            layer.affine_into(inputs.last().unwrap(), &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            inputs.push(a);
        }
        Ok(ForwardTrace { inputs, pre })
    }

    pub fn backward(&self, x: &[f64], dl_dy: &[f64]) -> Result<GradientTape> {
        let trace = self.forward_trace(x)?;
        let mut tape = GradientTape::zeros_like(self);
        self.backward_into(&trace, dl_dy, &mut tape)?;
        Ok(tape)
    }

    /// Accumulates (adds) the gradients of `dl_dy . y` into `tape`. The input
    /// gradient is overwritten, not accumulated.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        dl_dy: &[f64],
        tape: &mut GradientTape,
    ) -> Result<()> {
        if dl_dy.len() != self.output_dim() {
            return Err(Error::dim(
                "output gradient",
                self.output_dim(),
                dl_dy.len(),
            ));
        }
        let mut delta: Vec<f64> = dl_dy.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[l];
            for (d, &p) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= layer.activation.derivative(p);
            }
            let gw = &mut tape.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
            }
            tape.biases[l]
                .iter_mut()
                .zip(&delta)
                .for_each(|(g, d)| *g += d);
            let mut prev = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
            }
            delta = prev;
        }
        tape.input = delta;
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::LayerDim {
                layer: 0,
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}
