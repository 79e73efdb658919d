//! Fully connected network with rectifier hidden layers, hand-written
//! backpropagation and momentum SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output activation, which also fixes the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Logistic output trained with binary cross-entropy.
    Logistic,
    /// Linear outputs trained with mean squared error.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub head: Head,
    pub seed: u64,
}

/// Per-sample activations kept for the backward pass.
struct Trace {
    /// Input then post-activation output of every layer.
    activations: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Mlp {
    /// He-normal hidden weights, Glorot-normal output weights, zero biases.
    pub fn new(sizes: &[usize], head: Head, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::validation(format!("invalid layer sizes {sizes:?}")));
        }
        if head == Head::Logistic && sizes[sizes.len() - 1] != 1 {
            return Err(Error::validation("logistic head must have one output"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (l, w) in sizes.windows(2).enumerate() {
            let mut layer = Layer::zeros(w[0], w[1]);
            let std = if l + 1 == n_layers {
                (2.0 / (w[0] + w[1]) as f64).sqrt()
            } else {
                (2.0 / w[0] as f64).sqrt()
            };
            for v in layer.weights.iter_mut() {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
            layers.push(layer);
        }
        Ok(Mlp { sizes: sizes.to_vec(), layers, head, seed })
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.forward(&activations[l], &mut z);
            let a: Vec<f64> = if l == last {
                match self.head {
                    Head::Logistic => z.iter().map(|&v| sigmoid(v)).collect(),
                    Head::Identity => z.clone(),
                }
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre.push(z);
            activations.push(a);
        }
        Trace { activations, pre }
    }

    /// Network output. A logistic head is kept strictly inside (0, 1).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.trace(x).activations.pop().expect("at least one layer");
        if self.head == Head::Logistic {
            for p in out.iter_mut() {
                *p = p.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
            }
        }
        out
    }

    /// Per-sample loss: cross-entropy for the logistic head, mean squared error otherwise.
    pub fn loss(&self, x: &[f64], target: &[f64]) -> f64 {
        let t = self.trace(x);
        self.loss_from(&t, target)
    }

    fn loss_from(&self, t: &Trace, target: &[f64]) -> f64 {
        match self.head {
            Head::Logistic => {
                let z = t.pre.last().expect("layer")[0];
                softplus(z) - target[0] * z
            }
            Head::Identity => {
                let out = t.activations.last().expect("layer");
                out.iter().zip(target).map(|(o, y)| (o - y).powi(2)).sum::<f64>() / out.len() as f64
            }
        }
    }

    /// Adds this sample's parameter gradient into `grad` and returns its loss.
    pub fn accumulate_gradient(&self, x: &[f64], target: &[f64], grad: &mut Gradient) -> f64 {
        let t = self.trace(x);
        let loss = self.loss_from(&t, target);
        let out = t.activations.last().expect("layer");
        let k = out.len() as f64;
        let mut delta: Vec<f64> = match self.head {
            Head::Logistic => vec![out[0] - target[0]],
            Head::Identity => out.iter().zip(target).map(|(o, y)| 2.0 * (o - y) / k).collect(),
        };
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &t.activations[l];
            let g = &mut grad.layers[l];
            for o in 0..layer.outputs {
                let d = delta[o];
                g.biases[o] += d;
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, v) in row.iter_mut().zip(input) {
                        *gw += d * v;
                    }
                }
            }
            if l > 0 {
                let below = &t.pre[l - 1];
                let mut next = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (n, w) in next.iter_mut().zip(row) {
                            *n += d * w;
                        }
                    }
                }
                for (n, z) in next.iter_mut().zip(below) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        loss
    }

    pub fn gradient(&self, x: &[f64], target: &[f64]) -> Gradient {
        let mut g = Gradient::zeros_like(self);
        self.accumulate_gradient(x, target, &mut g);
        g
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    /// Flat parameter view in (weights, biases) order per layer.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied()).collect()
    }

    fn set_parameter(&mut self, index: usize, value: f64) {
        *self.params_mut().nth(index).expect("index in range") = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradient { layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied()).collect()
    }

    fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            l.biases.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Compares backpropagation against central differences (step 1e-5) on every
/// parameter and returns the largest `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn grad_check(net: &Mlp, x: &[f64], target: &[f64]) -> f64 {
    const STEP: f64 = 1e-5;
    let analytic = net.gradient(x, target).flat();
    let base = net.parameters();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        probe.set_parameter(i, base[i] + STEP);
        let up = probe.loss(x, target);
        probe.set_parameter(i, base[i] - STEP);
        let down = probe.loss(x, target);
        probe.set_parameter(i, base[i]);
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

/// Mini-batch SGD with classical momentum. Sample order per epoch is a
/// ChaCha8 shuffle seeded from `cfg.seed`. Returns the mean loss of each epoch.
pub fn train_sgd(net: &mut Mlp, xs: &[Vec<f64>], ys: &[Vec<f64>], cfg: &SgdConfig) -> Vec<f64> {
    assert_eq!(xs.len(), ys.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grad = Gradient::zeros_like(net);
    let mut velocity: Vec<f64> = vec![0.0; net.parameter_count()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grad.reset();
            for &i in chunk {
                total += net.accumulate_gradient(&xs[i], &ys[i], &mut grad);
            }
            let scale = cfg.learning_rate / chunk.len() as f64;
            let g = grad.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()));
            for ((p, v), gi) in net.params_mut().zip(velocity.iter_mut()).zip(g) {
                *v = cfg.momentum * *v - scale * gi;
                *p += *v;
            }
        }
        history.push(if xs.is_empty() { 0.0 } else { total / xs.len() as f64 });
    }
    history
}
