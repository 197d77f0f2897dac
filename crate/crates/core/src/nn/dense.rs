use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative-side slope of the leaky ReLU used throughout.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    LeakyRelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::LeakyRelu => leaky_relu(x),
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu => leaky_relu_grad(x),
        }
    }
}

#[inline]
pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_relu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// One fully connected layer, `y = act(W x + b)` with `W` stored `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    /// Uniform fan-in initialization in `[-1/sqrt(inputs), 1/sqrt(inputs)]`.
    pub fn uniform<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weights = Array2::from_shape_fn((outputs, inputs), |_| rng.gen_range(-bound..=bound));
        let bias = Array1::from_shape_fn(outputs, |_| rng.gen_range(-bound..=bound));
        Dense {
            weights,
            bias,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Feed-forward network made of [`Dense`] layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Gradient buffer laid out exactly like the parameters of a [`DenseNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<LayerGrad>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Intermediate values of a batched forward pass, needed by
/// [`DenseNet::backward_batch`].
#[derive(Clone, Debug)]
pub struct BatchTrace {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(
                    "layer chaining",
                    pair[0].outputs(),
                    pair[1].inputs(),
                ));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::shape("bias length", layer.outputs(), layer.bias.len()));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Builds a net with layer widths `sizes` (input first, output last).
    /// Hidden layers use `hidden`, the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Invalid("need at least input and output sizes".into()));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::uniform(w[0], w[1], act, rng)
            })
            .collect();
        DenseNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn zero_tape(&self) -> GradientTape {
        GradientTape {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("forward input", self.input_dim(), input.len()));
        }
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer_forward(layer, &x).1;
        }
        Ok(x)
    }

    /// Gradient of a scalar loss with respect to every parameter and to the
    /// input, given `output_grad = dloss/doutput`.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(GradientTape, Vec<f64>)> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("backward input", self.input_dim(), input.len()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::shape(
                "backward output gradient",
                self.output_dim(),
                output_grad.len(),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let (pre, out) = layer_forward(layer, &x);
            inputs.push(std::mem::replace(&mut x, out));
            pres.push(pre);
        }

        let mut tape = self.zero_tape();
        let mut grad = output_grad.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = grad
                .iter()
                .zip(&pres[k])
                .map(|(g, p)| g * layer.activation.derivative(*p))
                .collect();
            let lg = &mut tape.layers[k];
            for (r, d) in delta.iter().enumerate() {
                lg.bias[r] = *d;
                for (c, xin) in inputs[k].iter().enumerate() {
                    lg.weights[[r, c]] = d * xin;
                }
            }
            let mut next = vec![0.0; layer.inputs()];
            for (r, d) in delta.iter().enumerate() {
                for (c, slot) in next.iter_mut().enumerate() {
                    *slot += layer.weights[[r, c]] * d;
                }
            }
            grad = next;
        }
        Ok((tape, grad))
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<BatchTrace> {
        if input.ncols() != self.input_dim() {
            return Err(Error::shape("batch input", self.input_dim(), input.ncols()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for layer in &self.layers {
            let z = x.dot(&layer.weights.t()) + &layer.bias;
            let act = layer.activation;
            let out = z.mapv(|v| act.apply(v));
            inputs.push(std::mem::replace(&mut x, out));
            pre.push(z);
        }
        Ok(BatchTrace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Output only, without keeping the trace.
    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::shape("batch input", self.input_dim(), input.ncols()));
        }
        let mut x = input.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            x = (x.dot(&layer.weights.t()) + &layer.bias).mapv(|v| act.apply(v));
        }
        Ok(x)
    }

    /// Accumulates parameter gradients of a batch into `tape` and returns the
    /// gradient with respect to the batch input. `output_grad` is the gradient
    /// of the (already batch-reduced) loss with respect to each output row.
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        output_grad: ArrayView2<f64>,
        tape: &mut GradientTape,
    ) -> Result<Array2<f64>> {
        if output_grad.dim() != trace.output.dim() {
            return Err(Error::shape(
                "batch output gradient",
                trace.output.len(),
                output_grad.len(),
            ));
        }
        let mut grad = output_grad.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Linear {
                grad.zip_mut_with(&trace.pre[k], |g, p| *g *= act.derivative(*p));
            }
            let lg = &mut tape.layers[k];
            lg.weights += &grad.t().dot(&trace.inputs[k]);
            lg.bias += &grad.sum_axis(Axis(0));
            grad = grad.dot(&layer.weights);
        }
        Ok(grad)
    }

    /// Polyak averaging: `self <- (1 - tau) * self + tau * online`.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) -> Result<()> {
        if self.layers.len() != online.layers.len() {
            return Err(Error::shape(
                "soft update layers",
                self.layers.len(),
                online.layers.len(),
            ));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            if t.weights.dim() != o.weights.dim() {
                return Err(Error::shape(
                    "soft update weights",
                    t.weights.len(),
                    o.weights.len(),
                ));
            }
            polyak(
                t.weights.as_slice_mut().unwrap(),
                o.weights.as_slice().unwrap(),
                tau,
            );
            polyak(t.bias.as_slice_mut().unwrap(), o.bias.as_slice().unwrap(), tau);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

pub(crate) fn polyak(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

fn layer_forward(layer: &Dense, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pre: Vec<f64> = layer
        .weights
        .rows()
        .into_iter()
        .zip(layer.bias.iter())
        .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
        .collect();
    let out = pre.iter().map(|v| layer.activation.apply(*v)).collect();
    (pre, out)
}

impl GradientTape {
    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Flattened view in the same order as [`ParamSet::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice().unwrap(), l.bias.as_slice().unwrap()])
            .collect()
    }
}

/// Anything whose parameters can be exposed as a list of flat slices.
pub trait ParamSet {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamSet for DenseNet {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice().unwrap(), l.bias.as_slice().unwrap()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Dense { weights, bias, .. } = l;
                [weights.as_slice_mut().unwrap(), bias.as_slice_mut().unwrap()]
            })
            .collect()
    }
}
