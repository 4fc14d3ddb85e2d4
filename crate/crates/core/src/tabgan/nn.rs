//! Dense feed-forward nets with hand-written backprop and Adam.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Intermediate values of one forward pass.
pub struct Trace {
    /// Input of each layer, then the final output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output")
    }
}

impl Mlp {
    /// He-initialised net; hidden layers use `hidden_act`, the last layer is
    /// linear.
    pub fn new(dims: &[usize], hidden_act: Activation, rng: &mut SimRng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let (inputs, outputs) = (d[0], d[1]);
                let std = (2.0 / inputs.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Layer {
                    inputs,
                    outputs,
                    w: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
                    b: (0..outputs).map(|_| rng.random_range(-0.01..0.01)).collect(),
                    act: if i + 2 == dims.len() {
                        Activation::Identity
                    } else {
                        hidden_act
                    },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Trace {
        let mut acts = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let input = acts.last().expect("non-empty");
            let z: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let row = &l.w[o * l.inputs..(o + 1) * l.inputs];
                    row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + l.b[o]
                })
                .collect();
            acts.push(z.iter().map(|&v| l.act.apply(v)).collect());
            pre.push(z);
        }
        Trace { acts, pre }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).acts.pop().unwrap_or_default()
    }

    /// Accumulate parameter gradients of a scalar loss into `grads` given
    /// `d loss / d output`, and return `d loss / d input`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut Grads) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre[i]) {
                *d *= l.act.derivative(z);
            }
            let input = &trace.acts[i];
            let g = &mut grads.layers[i];
            for o in 0..l.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.b[o] += d;
                let row = &mut g.w[o * l.inputs..(o + 1) * l.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            let mut prev = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&l.w[o * l.inputs..(o + 1) * l.inputs]) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for w in l.w.iter_mut().chain(l.b.iter_mut()) {
                *w = it.next().expect("parameter vector too short");
            }
        }
    }

    /// Index of the first layer holding a non-finite parameter.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.w.iter().chain(&l.b).any(|v| !v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrads>,
}

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v *= k);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64, beta1: f64, beta2: f64) -> Self {
        let n = net.param_count();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut k = 0;
        for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
            for (p, &gv) in l
                .w
                .iter_mut()
                .chain(l.b.iter_mut())
                .zip(g.w.iter().chain(&g.b))
            {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gv;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gv * gv;
                *p -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
                k += 1;
            }
        }
    }
}
