//! Homoscedastic Gaussian models for continuous variables.

use crate::data::RealDataset;
use crate::error::{Error, Result};
use crate::models::ensure_finite;
use crate::prob::Direction;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Smallest variance a fitted model may report.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// `y ~ N(weight * x + bias, exp(log_variance))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussian {
    pub weight: f64,
    pub bias: f64,
    pub log_variance: f64,
}

impl LinearGaussian {
    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    #[inline]
    pub fn predict(&self, x: f64) -> f64 {
        self.weight * x + self.bias
    }

    #[inline]
    pub fn nll_one(&self, x: f64, y: f64) -> f64 {
        let r = y - self.predict(x);
        0.5 * (LN_2PI + self.log_variance) + 0.5 * r * r * (-self.log_variance).exp()
    }

    /// Average NLL of `(x, y)` pairs.
    pub fn nll(&self, xs: &[f64], ys: &[f64]) -> f64 {
        xs.iter().zip(ys).map(|(&x, &y)| self.nll_one(x, y)).sum::<f64>() / xs.len() as f64
    }

    /// Gradient of the average NLL w.r.t. `(weight, bias, log_variance)`.
    pub fn nll_gradient(&self, xs: &[f64], ys: &[f64]) -> [f64; 3] {
        let inv_v = (-self.log_variance).exp();
        let mut g = [0.0; 3];
        for (&x, &y) in xs.iter().zip(ys) {
            let r = y - self.predict(x);
            g[0] -= r * x * inv_v;
            g[1] -= r * inv_v;
            g[2] += 0.5 - 0.5 * r * r * inv_v;
        }
        let n = xs.len().max(1) as f64;
        g.map(|v| v / n)
    }

    pub fn step(&mut self, xs: &[f64], ys: &[f64], lr: f64) -> Result<()> {
        let g = self.nll_gradient(xs, ys);
        ensure_finite(&g, "linear-gaussian gradient")?;
        self.weight -= lr * g[0];
        self.bias -= lr * g[1];
        self.log_variance -= lr * g[2];
        Ok(())
    }
}

/// `x ~ N(mean, exp(log_variance))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMarginal {
    pub mean: f64,
    pub log_variance: f64,
}

impl GaussianMarginal {
    pub fn fit(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            log_variance: var.max(VARIANCE_FLOOR).ln(),
        }
    }

    #[inline]
    pub fn nll_one(&self, x: f64) -> f64 {
        let r = x - self.mean;
        0.5 * (LN_2PI + self.log_variance) + 0.5 * r * r * (-self.log_variance).exp()
    }

    pub fn nll_gradient(&self, xs: &[f64]) -> [f64; 2] {
        let inv_v = (-self.log_variance).exp();
        let mut g = [0.0; 2];
        for &x in xs {
            let r = x - self.mean;
            g[0] -= r * inv_v;
            g[1] += 0.5 - 0.5 * r * r * inv_v;
        }
        let n = xs.len().max(1) as f64;
        g.map(|v| v / n)
    }

    pub fn step(&mut self, xs: &[f64], lr: f64) -> Result<()> {
        let g = self.nll_gradient(xs);
        ensure_finite(&g, "gaussian marginal gradient")?;
        self.mean -= lr * g[0];
        self.log_variance -= lr * g[1];
        Ok(())
    }
}

/// Result of a closed-form least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub model: LinearGaussian,
    /// Mean squared residual on the fitted data (unfloored).
    pub residual_mse: f64,
    /// The predictor column was constant; the model is intercept-only.
    pub degenerate: bool,
}

/// Least squares of effect on cause; variance = residual mean square.
pub fn fit_linear(data: &RealDataset, direction: Direction) -> Result<LinearFit> {
    if data.len() < 2 {
        return Err(Error::EmptyDataset("fit_linear needs at least two rows"));
    }
    let (xs, ys) = data.columns(direction);
    fit_linear_columns(&xs, &ys)
}

pub fn fit_linear_columns(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    ensure_finite(xs, "regression input")?;
    ensure_finite(ys, "regression target")?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let degenerate = sxx <= 1e-12 * n * (1.0 + mx * mx);
    let (weight, bias) = if degenerate { (0.0, my) } else { (sxy / sxx, my - sxy / sxx * mx) };
    let residual_mse = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - weight * x - bias).powi(2))
        .sum::<f64>()
        / n;
    Ok(LinearFit {
        model: LinearGaussian {
            weight,
            bias,
            log_variance: residual_mse.max(VARIANCE_FLOOR).ln(),
        },
        residual_mse,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fd;
    use crate::rng::run_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_line() {
        let d = RealDataset::from_pairs(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0), (-1.0, -1.0)]);
        let f = fit_linear(&d, Direction::AToB).unwrap();
        assert_abs_diff_eq!(f.model.weight, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.model.bias, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.residual_mse, 0.0, epsilon = 1e-24);
        assert!(f.model.variance() > 0.0);
        let r = fit_linear(&d, Direction::BToA).unwrap();
        assert_abs_diff_eq!(r.model.weight, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn constant_predictor_falls_back() {
        let d = RealDataset::from_pairs(&[(1.0, 1.0), (1.0, 3.0), (1.0, 5.0)]);
        let f = fit_linear(&d, Direction::AToB).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.model.weight, 0.0);
        assert_abs_diff_eq!(f.model.bias, 3.0, epsilon = 1e-12);
        assert!(fit_linear(&RealDataset::from_pairs(&[(1.0, 2.0)]), Direction::AToB).is_err());
    }

    #[test]
    fn independent_columns_give_small_slope() {
        let mut rng = run_rng(8, 0);
        let pairs: Vec<(f64, f64)> = (0..200_000)
            .map(|_| (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let f = fit_linear(&RealDataset::from_pairs(&pairs), Direction::AToB).unwrap();
        assert!(f.model.weight.abs() < 0.01);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = run_rng(9, 0);
        for _ in 0..20 {
            let m = LinearGaussian {
                weight: rng.random_range(-2.0..2.0),
                bias: rng.random_range(-1.0..1.0),
                log_variance: rng.random_range(-1.0..1.0),
            };
            let xs: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let ys: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = m.nll_gradient(&xs, &ys);
            let num = fd::central(&[m.weight, m.bias, m.log_variance], 1e-5, |p| {
                LinearGaussian { weight: p[0], bias: p[1], log_variance: p[2] }.nll(&xs, &ys)
            });
            for (a, b) in g.iter().zip(&num) {
                assert!(fd::rel_err(*a, *b) < 1e-4);
            }
            let gm = GaussianMarginal { mean: m.bias, log_variance: m.log_variance };
            let g = gm.nll_gradient(&xs);
            let num = fd::central(&[gm.mean, gm.log_variance], 1e-5, |p| {
                let u = GaussianMarginal { mean: p[0], log_variance: p[1] };
                xs.iter().map(|&x| u.nll_one(x)).sum::<f64>() / xs.len() as f64
            });
            for (a, b) in g.iter().zip(&num) {
                assert!(fd::rel_err(*a, *b) < 1e-4);
            }
        }
    }
}
