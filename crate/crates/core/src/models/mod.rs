//! Trainable model families.
//!
//! Discrete: count-MLE tables and softmax-logit tabular modules, plus a
//! mixture marginal. Continuous: linear-Gaussian regression and a two-layer
//! rectifier network. Every gradient here is analytic and checked against
//! central finite differences in the tests.

pub mod gaussian;
pub mod mixture;
pub mod net;
pub mod params;
pub mod tabular;

pub use gaussian::{fit_linear, GaussianMarginal, LinearFit, LinearGaussian};
pub use mixture::{mixture_eval, mixture_sgd_step, MixtureMarginal};
pub use net::{fit_net, NetGrads, TwoLayerNet};
pub use params::{ParamEntry, ParamSet, Parameterized};
pub use tabular::{
    fit_counts, grad_norm, nll, nll_counts, sgd_fit, CountModel, DiscreteConditional,
    Factorization, MarginalModule, Role, TabularSoftmax,
};

use crate::error::{Error, Result};

/// Default pseudo-count added to every cell of a count estimate.
pub const DEFAULT_SMOOTHING: f64 = 1e-6;

/// Plain gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Full passes over the data.
    pub steps: usize,
    /// Mini-batch size; 0 means full batch.
    pub batch_size: usize,
    pub smoothing: f64,
}

impl TrainConfig {
    pub fn tabular() -> Self {
        Self {
            learning_rate: 0.1,
            steps: 100,
            batch_size: 0,
            smoothing: DEFAULT_SMOOTHING,
        }
    }

    /// Network defaults: lr 0.01, batch 32, 200 epochs.
    pub fn net() -> Self {
        Self {
            learning_rate: 0.01,
            steps: 200,
            batch_size: 32,
            smoothing: DEFAULT_SMOOTHING,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "smoothing must be non-negative, got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::tabular()
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} (component {i})")));
    }
    Ok(())
}

/// Numerically stable softmax of one row.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
