//! Minimal dense feed-forward network with from-scratch backpropagation.
//!
//! Hidden layers use ReLU, the output layer is identity (raw logits).
//! Everything is `f64` and every operation is a pure function of its
//! inputs, so runs are reproducible bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One dense layer, weights stored row-major with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Parameters of one client model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_dims: Vec<usize>,
    layers: Vec<DenseLayer>,
}

/// Parameter gradients, shape-congruent with the `ModelParams` they came from.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<DenseLayer>,
}

/// Per-layer activations recorded during a forward pass.
pub(crate) struct ForwardTrace {
    /// Post-activation output of each layer; the last entry holds the logits.
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub(crate) fn logits(&self) -> &[f64] {
        self.activations.last().expect("trace has at least one layer")
    }
}

/// Seed-deterministic initialization: weights uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn init_params(layer_dims: &[usize], seed: u64) -> Result<ModelParams> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "all layer dims must be positive, got {layer_dims:?}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(layer_dims.len() - 1);
    for win in layer_dims.windows(2) {
        let (in_dim, out_dim) = (win[0], win[1]);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        layers.push(DenseLayer {
            in_dim,
            out_dim,
            weights,
            biases: vec![0.0; out_dim],
        });
    }
    Ok(ModelParams {
        layer_dims: layer_dims.to_vec(),
        layers,
    })
}

impl ModelParams {
    /// Build directly from explicit layers. Dimensions must chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        let mut layer_dims = vec![layers[0].in_dim];
        for layer in &layers {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.biases.len() != layer.out_dim
            {
                return Err(Error::InvalidArgument(
                    "layer buffer sizes do not match declared dims".into(),
                ));
            }
            if *layer_dims.last().unwrap() != layer.in_dim {
                return Err(Error::DimensionMismatch {
                    context: "layer input",
                    expected: *layer_dims.last().unwrap(),
                    actual: layer.in_dim,
                });
            }
            layer_dims.push(layer.out_dim);
        }
        Ok(Self { layer_dims, layers })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Class count of the task this model was built for.
    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite())
        })
    }

    /// Raw logits for one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward_traced(x)?;
        Ok(trace.activations.pop().expect("at least one layer"))
    }

    pub(crate) fn forward_traced(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut input = x;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            for (o, out_v) in out.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = layer.biases[o];
                for (w, xi) in row.iter().zip(input) {
                    acc += w * xi;
                }
                // ReLU on hidden layers, identity at the output.
                *out_v = if idx < last { acc.max(0.0) } else { acc };
            }
            activations.push(out);
            input = activations.last().unwrap();
        }
        Ok(ForwardTrace { activations })
    }

    /// Accumulate the backward pass for one sample into `acc`.
    ///
    /// `grad_logits` is dL/d(logits) for this sample; `trace` must come from
    /// `forward_traced` on the same `x`.
    pub(crate) fn backprop_into(
        &self,
        x: &[f64],
        trace: &ForwardTrace,
        grad_logits: &[f64],
        acc: &mut Gradients,
    ) -> Result<()> {
        if grad_logits.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "logit gradient",
                expected: self.output_dim(),
                actual: grad_logits.len(),
            });
        }
        let mut delta = grad_logits.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let layer_input: &[f64] = if idx == 0 {
                x
            } else {
                &trace.activations[idx - 1]
            };
            let g = &mut acc.layers[idx];
            for (o, &d) in delta.iter().enumerate() {
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, xi) in row.iter_mut().zip(layer_input) {
                    *w += d * xi;
                }
            }
            if idx == 0 {
                break;
            }
            // Propagate through the previous layer's ReLU: post-activation > 0
            // iff pre-activation > 0, so the recorded output is enough.
            let prev_out = &trace.activations[idx - 1];
            let mut prev_delta = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (pd, w) in prev_delta.iter_mut().zip(row) {
                    *pd += d * w;
                }
            }
            for (pd, &a) in prev_delta.iter_mut().zip(prev_out) {
                if a <= 0.0 {
                    *pd = 0.0;
                }
            }
            delta = prev_delta;
        }
        Ok(())
    }
}

impl Gradients {
    /// Zeroed gradients shaped like `params`.
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| DenseLayer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for w in &mut l.weights {
                *w *= factor;
            }
            for b in &mut l.biases {
                *b *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite())
        })
    }

    fn congruent_with(&self, params: &ModelParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.in_dim == p.in_dim && g.out_dim == p.out_dim)
    }
}

/// Mean gradient over a batch of `(input, dL/d(logits))` pairs.
pub fn backward(params: &ModelParams, batch: &[(&[f64], &[f64])]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = Gradients::zeros_like(params);
    for (x, grad_logits) in batch {
        let trace = params.forward_traced(x)?;
        params.backprop_into(x, &trace, grad_logits, &mut acc)?;
    }
    acc.scale(1.0 / batch.len() as f64);
    Ok(acc)
}

/// One plain SGD step: every parameter `p` becomes `p - lr * g`.
///
/// Pure: returns the updated parameters, leaving the input untouched.
pub fn sgd_step(params: &ModelParams, grads: &Gradients, lr: f64) -> Result<ModelParams> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grads, lr)?;
    Ok(out)
}

/// In-place variant of [`sgd_step`] for the training hot loop.
pub fn sgd_step_in_place(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    if !grads.congruent_with(params) {
        return Err(Error::DimensionMismatch {
            context: "gradient shape",
            expected: params.layers.len(),
            actual: grads.layers.len(),
        });
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "gradients passed to sgd_step".into(),
        });
    }
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (w, gw) in p.weights.iter_mut().zip(&g.weights) {
            *w -= lr * gw;
        }
        for (b, gb) in p.biases.iter_mut().zip(&g.biases) {
            *b -= lr * gb;
        }
    }
    Ok(())
}
