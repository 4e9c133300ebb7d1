//! Mixture marginal `P(a) = sum_k softmax(theta)_k softmax(phi_k)_a`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::models::{ensure_finite, log_sum_exp, softmax_into};
use crate::prob::Categorical;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMarginal {
    components: usize,
    dim: usize,
    /// Mixing logits, length K.
    pub theta: Vec<f64>,
    /// Component logits, K x N row-major.
    pub phi: Vec<f64>,
}

impl MixtureMarginal {
    pub fn new(theta: Vec<f64>, phi: Vec<f64>, dim: usize) -> Result<Self> {
        let k = theta.len();
        if k == 0 || dim == 0 {
            return Err(Error::InvalidDimension(format!("mixture K={k}, N={dim}")));
        }
        if phi.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                actual: phi.len(),
            });
        }
        ensure_finite(&theta, "mixture theta")?;
        ensure_finite(&phi, "mixture phi")?;
        Ok(Self {
            components: k,
            dim,
            theta,
            phi,
        })
    }

    /// Uniform mixing weights and every component at `ln p` plus Gaussian
    /// jitter of stdev `jitter`; with zero jitter the mixture equals `p`.
    pub fn around<R: Rng + ?Sized>(p: &Categorical, components: usize, jitter: f64, rng: &mut R) -> Result<Self> {
        let logp: Vec<f64> = p.probs().iter().map(|x| x.ln()).collect();
        ensure_finite(&logp, "mixture initial marginal")?;
        let noise = Normal::new(0.0, jitter.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut phi = Vec::with_capacity(components * p.dim());
        for _ in 0..components {
            phi.extend(logp.iter().map(|l| l + if jitter > 0.0 { noise.sample(rng) } else { 0.0 }));
        }
        Self::new(vec![0.0; components], phi, p.dim())
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.components];
        softmax_into(&self.theta, &mut w);
        w
    }

    fn component_probs(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.phi.len()];
        for (src, dst) in self.phi.chunks(self.dim).zip(q.chunks_mut(self.dim)) {
            softmax_into(src, dst);
        }
        q
    }

    /// Implied marginal as a plain vector.
    pub fn probs(&self) -> Vec<f64> {
        let w = self.weights();
        let q = self.component_probs();
        let mut p = vec![0.0; self.dim];
        for (wk, qk) in w.iter().zip(q.chunks(self.dim)) {
            for (pa, qa) in p.iter_mut().zip(qk) {
                *pa += wk * qa;
            }
        }
        p
    }

    pub fn log_likelihood_sum(&self, values: &[usize]) -> f64 {
        let logp: Vec<f64> = self.log_probs();
        values.iter().map(|&a| logp[a]).sum()
    }

    fn log_probs(&self) -> Vec<f64> {
        // log sum_k w_k q_k(a), computed per a in log space.
        let lw_norm = log_sum_exp(&self.theta);
        let row_norms: Vec<f64> = self.phi.chunks(self.dim).map(log_sum_exp).collect();
        let mut terms = vec![0.0; self.components];
        (0..self.dim)
            .map(|a| {
                for k in 0..self.components {
                    terms[k] = self.theta[k] - lw_norm + self.phi[k * self.dim + a] - row_norms[k];
                }
                log_sum_exp(&terms)
            })
            .collect()
    }

    /// Average log-likelihood gradient `(d theta, d phi)` over `values`.
    pub fn log_likelihood_gradient(&self, values: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let (k, n) = (self.components, self.dim);
        let mut g_theta = vec![0.0; k];
        let mut g_phi = vec![0.0; k * n];
        if values.is_empty() {
            return (g_theta, g_phi);
        }
        let mut freq = vec![0.0; n];
        for &a in values {
            freq[a] += 1.0;
        }
        let total = values.len() as f64;
        let w = self.weights();
        let q = self.component_probs();
        let p = self.probs();
        for a in 0..n {
            if freq[a] == 0.0 {
                continue;
            }
            let fa = freq[a] / total;
            for c in 0..k {
                // Responsibility of component c for outcome a.
                let r = w[c] * q[c * n + a] / p[a];
                g_theta[c] += fa * (r - w[c]);
                let row = &q[c * n..(c + 1) * n];
                for (j, gj) in g_phi[c * n..(c + 1) * n].iter_mut().enumerate() {
                    let ind = if j == a { 1.0 } else { 0.0 };
                    *gj += fa * r * (ind - row[j]);
                }
            }
        }
        (g_theta, g_phi)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.extend_from_slice(&self.phi);
        v
    }

    pub fn set_params(&mut self, v: &[f64]) {
        let k = self.components;
        self.theta.copy_from_slice(&v[..k]);
        self.phi.copy_from_slice(&v[k..]);
    }
}

pub fn mixture_eval(m: &MixtureMarginal) -> Categorical {
    Categorical::from_weights(&m.probs()).expect("mixture of categoricals is a categorical")
}

/// One ascent step on the average log-likelihood of `values` through both
/// the mixing and component logits.
pub fn mixture_sgd_step(m: &mut MixtureMarginal, values: &[usize], lr: f64) -> Result<()> {
    let (gt, gp) = m.log_likelihood_gradient(values);
    ensure_finite(&gt, "mixture theta gradient")?;
    ensure_finite(&gp, "mixture phi gradient")?;
    for (t, g) in m.theta.iter_mut().zip(&gt) {
        *t += lr * g;
    }
    for (p, g) in m.phi.iter_mut().zip(&gp) {
        *p += lr * g;
    }
    ensure_finite(&m.theta, "mixture theta")?;
    ensure_finite(&m.phi, "mixture phi")
}
