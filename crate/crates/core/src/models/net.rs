//! Two-layer rectifier network with hand-written backpropagation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::RealDataset;
use crate::error::{Error, Result};
use crate::models::{ensure_finite, TrainConfig};
use crate::prob::Direction;

/// `out = W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    input: usize,
    hidden: usize,
    output: usize,
    /// hidden x input
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// output x hidden
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl NetGrads {
    fn zeros_like(net: &TwoLayerNet) -> Self {
        Self {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    fn scale(&mut self, s: f64) {
        for v in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    pub out: Vec<f64>,
}

impl TwoLayerNet {
    /// He-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::InvalidDimension(format!("net {input}-{hidden}-{output}")));
        }
        let n1 = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("positive stdev");
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("positive stdev");
        Ok(Self {
            input,
            hidden,
            output,
            w1: (0..hidden * input).map(|_| n1.sample(rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..output * hidden).map(|_| n2.sample(rng)).collect(),
            b2: vec![0.0; output],
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        debug_assert_eq!(x.len(), self.input);
        let mut pre = self.b1.clone();
        for (h, p) in pre.iter_mut().enumerate() {
            let row = &self.w1[h * self.input..(h + 1) * self.input];
            *p += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        let act: Vec<f64> = pre.iter().map(|p| p.max(0.0)).collect();
        let mut out = self.b2.clone();
        for (o, v) in out.iter_mut().enumerate() {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            *v += row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
        }
        Forward { pre, act, out }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).out
    }

    /// Scalar-in, scalar-out convenience.
    pub fn predict1(&self, x: f64) -> f64 {
        self.forward(&[x]).out[0]
    }

    /// Accumulate parameter gradients for upstream gradient `d_out` into
    /// `grads`; returns the gradient with respect to the input.
    pub fn backward(&self, x: &[f64], fwd: &Forward, d_out: &[f64], grads: &mut NetGrads) -> Vec<f64> {
        let mut d_act = vec![0.0; self.hidden];
        for (o, &g) in d_out.iter().enumerate() {
            grads.b2[o] += g;
            for h in 0..self.hidden {
                grads.w2[o * self.hidden + h] += g * fwd.act[h];
                d_act[h] += g * self.w2[o * self.hidden + h];
            }
        }
        let mut d_x = vec![0.0; self.input];
        for h in 0..self.hidden {
            if fwd.pre[h] <= 0.0 {
                continue;
            }
            let g = d_act[h];
            grads.b1[h] += g;
            for i in 0..self.input {
                grads.w1[h * self.input + i] += g * x[i];
                d_x[i] += g * self.w1[h * self.input + i];
            }
        }
        d_x
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads::zeros_like(self)
    }

    pub fn apply(&mut self, grads: &NetGrads, lr: f64) -> Result<()> {
        ensure_finite(&grads.flat(), "network gradient")?;
        for (p, g) in [
            (&mut self.w1, &grads.w1),
            (&mut self.b1, &grads.b1),
            (&mut self.w2, &grads.w2),
            (&mut self.b2, &grads.b2),
        ] {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= lr * gi;
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, v: &[f64]) {
        let mut off = 0;
        for p in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let n = p.len();
            p.copy_from_slice(&v[off..off + n]);
            off += n;
        }
    }

    /// Mean squared error of scalar predictions.
    pub fn mse(&self, xs: &[f64], ys: &[f64]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| (self.predict1(x) - y).powi(2))
            .sum::<f64>()
            / xs.len().max(1) as f64
    }

    /// Gradient of the batch MSE for scalar regression.
    pub fn mse_gradient(&self, xs: &[f64], ys: &[f64]) -> NetGrads {
        let mut g = self.zero_grads();
        for (&x, &y) in xs.iter().zip(ys) {
            let f = self.forward(&[x]);
            self.backward(&[x], &f, &[2.0 * (f.out[0] - y)], &mut g);
        }
        g.scale(1.0 / xs.len().max(1) as f64);
        g
    }
}

/// Mini-batch gradient descent on squared error, effect regressed on cause.
pub fn fit_net<R: Rng + ?Sized>(
    data: &RealDataset,
    direction: Direction,
    hidden: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TwoLayerNet> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("fit_net"));
    }
    let (xs, ys) = data.columns(direction);
    ensure_finite(&xs, "network input")?;
    ensure_finite(&ys, "network target")?;
    let mut net = TwoLayerNet::new(1, hidden, 1, rng)?;
    let batch = if cfg.batch_size == 0 { xs.len() } else { cfg.batch_size };
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let (mut bx, mut by) = (Vec::with_capacity(batch), Vec::with_capacity(batch));
    for _ in 0..cfg.steps {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            bx.clear();
            by.clear();
            bx.extend(chunk.iter().map(|&i| xs[i]));
            by.extend(chunk.iter().map(|&i| ys[i]));
            let g = net.mse_gradient(&bx, &by);
            net.apply(&g, cfg.learning_rate)?;
        }
    }
    Ok(net)
}
