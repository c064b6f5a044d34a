//! A small fully connected classifier: dense+ReLU hidden layers followed by a
//! dense+softmax output, trained with hand-written backpropagation.
//!
//! Each layer stores `y = W x + b` with `W` shaped `out x in`. Forward passes
//! take one combined keep-mask per layer; a weight contributes only where its
//! mask bit is set, and its gradient is zero elsewhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Mask, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: WeightMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Block-pruning mask; all ones for an unpruned layer.
    pub bp_mask: Mask,
}

impl Layer {
    pub fn new(weights: WeightMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::ShapeMismatch(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weights.rows()
            )));
        }
        let bp_mask = Mask::ones(weights.rows(), weights.cols());
        Ok(Self {
            weights,
            bias,
            activation,
            bp_mask,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ToyModel {
    layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct RawModel {
    layers: Vec<Layer>,
}

impl TryFrom<RawModel> for ToyModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        ToyModel::new(raw.layers)
    }
}

impl ToyModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("model has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            let last = i + 1 == layers.len();
            let expected = if last {
                Activation::Softmax
            } else {
                Activation::Relu
            };
            if layer.activation != expected {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} must use {expected:?}"
                )));
            }
            if layer.bp_mask.shape() != layer.weights.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} mask shape {:?} does not match weights {:?}",
                    layer.bp_mask.shape(),
                    layer.weights.shape()
                )));
            }
            if layer.bias.len() != layer.outputs() {
                return Err(Error::ShapeMismatch(format!("layer {i} bias length")));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized `sizes[0] -> sizes[1] -> ... -> classes` network
    /// (He-uniform weights, zero biases).
    pub fn random(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::ShapeMismatch(
                "need at least input and output sizes".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                let act = if i + 2 == sizes.len() {
                    Activation::Softmax
                } else {
                    Activation::Relu
                };
                Layer::new(
                    WeightMatrix::new(fan_out, fan_in, data)?,
                    vec![0.0; fan_out],
                    act,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn bp_masks(&self) -> Vec<Mask> {
        self.layers.iter().map(|l| l.bp_mask.clone()).collect()
    }

    /// Weights with the block-pruning mask applied.
    pub fn effective_weights(&self) -> Vec<WeightMatrix> {
        self.layers
            .iter()
            .map(|l| crate::matrix::apply_mask(&l.weights, &l.bp_mask).expect("shapes checked"))
            .collect()
    }

    fn check_masks(&self, masks: &[Mask]) -> Result<()> {
        if masks.len() != self.layers.len()
            || masks
                .iter()
                .zip(&self.layers)
                .any(|(m, l)| m.shape() != l.weights.shape())
        {
            return Err(Error::ShapeMismatch(
                "one mask per layer with matching shape required".into(),
            ));
        }
        Ok(())
    }

    /// Class probabilities for one input under the given keep-masks.
    pub fn predict(&self, masks: &[Mask], x: &[f64]) -> Result<Vec<f64>> {
        self.check_masks(masks)?;
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for model expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.forward_trace(masks, x).pop().unwrap())
    }

    /// Activations of every layer, starting with the input itself.
    fn forward_trace(&self, masks: &[Mask], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (layer, mask) in self.layers.iter().zip(masks) {
            let input = acts.last().unwrap();
            let mut z = crate::matrix::masked_matvec(&layer.weights, mask, input);
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let out = match layer.activation {
                Activation::Relu => z.into_iter().map(|v| v.max(0.0)).collect(),
                Activation::Softmax => softmax(&z),
            };
            acts.push(out);
        }
        acts
    }

    /// Mean cross-entropy over a batch and its gradient with respect to every
    /// raw weight and bias. Weight gradients are zero wherever the mask is.
    pub fn loss_and_grad(
        &self,
        masks: &[Mask],
        inputs: &[Vec<f64>],
        labels: &[usize],
    ) -> Result<(f64, Gradients)> {
        self.check_masks(masks)?;
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs with {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let n = inputs.len() as f64;
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;

        for (x, &label) in inputs.iter().zip(labels) {
            let acts = self.forward_trace(masks, x);
            let probs = acts.last().unwrap();
            loss -= probs[label].max(f64::MIN_POSITIVE).ln();

            // Softmax + cross-entropy: dL/dz = p - onehot.
            let mut delta: Vec<f64> = probs.clone();
            delta[label] -= 1.0;
            for v in &mut delta {
                *v /= n;
            }

            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let mask = &masks[li];
                let input = &acts[li];
                let g = &mut grads.layers[li];
                for (o, d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    if *d == 0.0 {
                        continue;
                    }
                    for (i, a) in input.iter().enumerate() {
                        if mask.get(o, i) {
                            g.weights[o * layer.inputs() + i] += d * a;
                        }
                    }
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs()];
                for (o, d) in delta.iter().enumerate() {
                    for (i, p) in prev.iter_mut().enumerate() {
                        if mask.get(o, i) {
                            *p += layer.weights.get(o, i) * d;
                        }
                    }
                }
                // ReLU derivative on the previous layer's output.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss / n, grads))
    }

    /// Mean cross-entropy only.
    pub fn loss(&self, masks: &[Mask], inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        self.check_masks(masks)?;
        let mut total = 0.0;
        for (x, &label) in inputs.iter().zip(labels) {
            let probs = self.forward_trace(masks, x).pop().unwrap();
            total -= probs[label].max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / inputs.len().max(1) as f64)
    }

    /// `param -= lr * grad`. Returns `false` if any parameter became non-finite.
    pub(crate) fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> bool {
        let mut finite = true;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.data_mut().iter_mut().zip(&g.weights) {
                *w -= lr * gw;
                finite &= w.is_finite();
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
                finite &= b.is_finite();
            }
        }
        finite
    }

    /// Flat view of all parameters (weights then bias, layer by layer).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.num_parameters()
            )));
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            for w in layer.weights.data_mut() {
                *w = *it.next().unwrap();
            }
            for b in &mut layer.bias {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    /// Flattened in the same order as [`ToyModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
