//! Dense layers, activations and optimizers shared by the supervised heads.
//! Everything runs in `f64` with hand-written backpropagation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Fully connected layer `y = W x + b`, `W` stored row-major (out x in).
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Xavier/Glorot normal weights, variance `2 / (fan_in + fan_out)`,
    /// and a constant bias.
    pub fn xavier<R: Rng + ?Sized>(inputs: usize, outputs: usize, bias: f64, rng: &mut R) -> Self {
        let std = (2.0 / (inputs + outputs) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite standard deviation");
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![bias; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulate parameter gradients into `grad` and return the gradient
    /// with respect to the input.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for ((gw, &w), (&xi, gi)) in grow.iter_mut().zip(row).zip(x.iter().zip(grad_in.iter_mut())) {
                *gw += g * xi;
                *gi += g * w;
            }
        }
        grad_in
    }

    /// Like [`Dense::backward`] without computing the input gradient.
    pub fn backward_params(&self, x: &[f64], grad_out: &[f64], grad: &mut Dense) {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for (gw, &xi) in grow.iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
    }

    pub fn squared_weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Access to all parameter tensors of a model in a fixed order. Gradients
/// are stored in a value of the same type, so the orders line up.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Plain SGD: `p -= lr * g`.
pub fn sgd_step<P: Parameters>(params: &mut P, grads: &P, lr: f64) {
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (x, &d) in p.iter_mut().zip(g) {
            *x -= lr * d;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new<P: Parameters>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Adam {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        for ((p, g), (m, v)) in tensors.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
