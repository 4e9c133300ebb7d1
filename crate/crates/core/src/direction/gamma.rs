//! Structural indicator `gamma` trained by minimizing the regret
//! `R = -log[s e^{ll_ab} + (1 - s) e^{ll_ba}]`, `s = sigmoid(gamma)`.

use crate::error::{Error, Result};

/// `gamma` is kept in `[-GAMMA_BOUND, GAMMA_BOUND]` so that `sigmoid(gamma)`
/// is strictly inside `(0, 1)` in `f64`.
pub const GAMMA_BOUND: f64 = 30.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x)`.
#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaState {
    pub gamma: f64,
    pub learning_rate: f64,
    /// `sigmoid(gamma)` after each update.
    pub history: Vec<f64>,
}

impl GammaState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            gamma: 0.0,
            learning_rate,
            history: Vec::new(),
        }
    }

    pub fn sigma(&self) -> f64 {
        sigmoid(self.gamma)
    }

    pub fn regret(&self, ll_ab: f64, ll_ba: f64) -> f64 {
        let a = log_sigmoid(self.gamma) + ll_ab;
        let b = log_sigmoid(-self.gamma) + ll_ba;
        -crate::models::log_sum_exp(&[a, b])
    }
}

/// One descent step on the regret. The derivative is
/// `dR/dgamma = sigma - w` with `w` the posterior weight of `A -> B`.
pub fn gamma_step(state: &mut GammaState, ll_ab: f64, ll_ba: f64) -> Result<()> {
    if !(ll_ab.is_finite() && ll_ba.is_finite()) {
        return Err(Error::NonFinite(format!("gamma_step inputs ({ll_ab}, {ll_ba})")));
    }
    let a = log_sigmoid(state.gamma) + ll_ab;
    let b = log_sigmoid(-state.gamma) + ll_ba;
    // w = e^a / (e^a + e^b)
    let w = sigmoid(a - b);
    let s = state.sigma();
    state.gamma = (state.gamma + state.learning_rate * (w - s)).clamp(-GAMMA_BOUND, GAMMA_BOUND);
    state.history.push(state.sigma());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hand_evaluated_step() {
        let mut s = GammaState::new(1.0);
        gamma_step(&mut s, -1.0, -2.0).unwrap();
        let (e1, e2) = ((-1.0f64).exp(), (-2.0f64).exp());
        let expect = 0.25 * (e1 - e2) / (0.5 * e1 + 0.5 * e2);
        assert_abs_diff_eq!(s.gamma, expect, epsilon = 1e-15);
        assert_abs_diff_eq!(s.gamma, 0.2311, epsilon = 1e-4);
        assert_eq!(s.history.len(), 1);
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = GammaState::new(1.0);
        assert!(gamma_step(&mut s, f64::NAN, 0.0).is_err());
        assert!(gamma_step(&mut s, 0.0, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn extreme_likelihoods_stay_finite() {
        let mut s = GammaState::new(10.0);
        for _ in 0..100 {
            gamma_step(&mut s, -1e4, -1e6).unwrap();
        }
        assert!(s.sigma() < 1.0 && s.sigma() > 0.0);
        let mut s = GammaState { gamma: 0.0, learning_rate: 1e6, history: vec![] };
        gamma_step(&mut s, -1.0, -1e6).unwrap();
        assert_eq!(s.gamma, GAMMA_BOUND);
        assert!(s.sigma() < 1.0);
    }

    proptest! {
        #[test]
        fn equal_inputs_are_a_fixed_point(g in -20.0f64..20.0, ll in -1e3f64..0.0) {
            let mut s = GammaState { gamma: g, learning_rate: 0.7, history: vec![] };
            gamma_step(&mut s, ll, ll).unwrap();
            prop_assert!((s.gamma - g).abs() < 1e-12);
        }

        #[test]
        fn higher_ab_likelihood_increases_gamma(g in -10.0f64..10.0, a in -50.0f64..0.0, d in 1e-3f64..10.0) {
            let mut s = GammaState { gamma: g, learning_rate: 0.5, history: vec![] };
            gamma_step(&mut s, a, a - d).unwrap();
            prop_assert!(s.gamma > g);
        }

        #[test]
        fn step_matches_regret_derivative(g in -5.0f64..5.0, a in -5.0f64..0.0, b in -5.0f64..0.0) {
            let h = 1e-6;
            let r = |x: f64| GammaState { gamma: x, learning_rate: 1.0, history: vec![] }.regret(a, b);
            let num = (r(g + h) - r(g - h)) / (2.0 * h);
            let mut s = GammaState { gamma: g, learning_rate: 1.0, history: vec![] };
            gamma_step(&mut s, a, b).unwrap();
            let analytic = -(s.gamma - g);
            prop_assert!((analytic - num).abs() <= 1e-4 * num.abs().max(1e-6));
        }
    }
}
