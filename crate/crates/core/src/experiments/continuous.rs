//! Linear-Gaussian direction inference with a Gaussian cause whose mean and
//! spread are redrawn at every episode.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::direction::{gamma_step, sigmoid, GammaState};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::gaussian::{fit_linear_columns, GaussianMarginal, LinearGaussian};
use crate::replearn::CauseLaw;
use crate::rng::{run_rng, RunRng};

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousConfig {
    pub seeds: usize,
    pub episodes: usize,
    pub base_seed: u64,
    pub train_samples: usize,
    /// Transfer samples scored by the gap method each episode.
    pub proposed_samples: usize,
    /// Transfer samples the baseline adapts on each episode.
    pub baseline_samples: usize,
    pub noise_sd: f64,
    /// Cause law before any intervention.
    pub train_cause: CauseLaw,
    /// `false` keeps the train cause law at every episode (no signal).
    pub intervene: bool,
    pub adapt_lr: f64,
    pub meta_lr: f64,
    pub exec: Exec,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            episodes: 50,
            base_seed: 0,
            train_samples: 1000,
            proposed_samples: 1,
            baseline_samples: 20,
            noise_sd: 1.0,
            train_cause: CauseLaw { mean: 0.0, sd: 1.0 },
            intervene: true,
            adapt_lr: 0.05,
            meta_lr: 0.5,
            exec: Exec::Parallel,
        }
    }
}

impl ContinuousConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("seeds", self.seeds),
            ("episodes", self.episodes),
            ("train_samples", self.train_samples),
            ("proposed_samples", self.proposed_samples),
            ("baseline_samples", self.baseline_samples),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("continuous {name} must be at least 1")));
            }
        }
        if !(self.train_cause.sd > 0.0 && self.train_cause.sd.is_finite()) {
            return Err(Error::InvalidConfig(format!("train cause sd must be positive, got {}", self.train_cause.sd)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sd must be non-negative, got {}", self.noise_sd)));
        }
        Ok(())
    }
}

/// Accuracy per episode (fraction of seeds with an A -> B verdict).
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousResult {
    pub proposed: Vec<f64>,
    pub baseline: Vec<f64>,
    pub baseline_sigma: Vec<f64>,
}

impl ContinuousResult {
    pub const CSV_HEADER: &'static str = "episode,proposed,baseline,baseline_sigma";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for i in 0..self.proposed.len() {
            s.push_str(&format!("{},{},{},{}\n", i + 1, self.proposed[i], self.baseline[i], self.baseline_sigma[i]));
        }
        s
    }

    /// First 1-based episode at which `curve` reaches `threshold`.
    pub fn first_at(curve: &[f64], threshold: f64) -> Option<usize> {
        curve.iter().position(|&a| a >= threshold).map(|i| i + 1)
    }
}

/// `B = weight * A + bias + N(0, noise_sd^2)`.
#[derive(Debug, Clone, Copy)]
struct AffineMechanism {
    weight: f64,
    bias: f64,
    noise_sd: f64,
}

impl AffineMechanism {
    fn draw(&self, law: CauseLaw, n: usize, rng: &mut RunRng) -> (Vec<f64>, Vec<f64>) {
        let cause = Normal::new(law.mean, law.sd).expect("positive stdev");
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let x: f64 = cause.sample(rng);
            let e: f64 = if self.noise_sd > 0.0 {
                self.noise_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
            } else {
                0.0
            };
            a.push(x);
            b.push(self.weight * x + self.bias + e);
        }
        (a, b)
    }
}

/// Marginal of the cause and conditional of the effect.
#[derive(Debug, Clone, Copy)]
struct GaussFactor {
    marginal: GaussianMarginal,
    conditional: LinearGaussian,
}

impl GaussFactor {
    fn nll_one(&self, x: f64, y: f64) -> f64 {
        self.marginal.nll_one(x) + self.conditional.nll_one(x, y)
    }

    fn step_one(&mut self, x: f64, y: f64, lr: f64) -> Result<()> {
        self.marginal.step(&[x], lr)?;
        self.conditional.step(&[x], &[y], lr)
    }
}

struct SeedCurves {
    proposed: Vec<bool>,
    baseline: Vec<bool>,
    sigma: Vec<f64>,
}

fn run_seed(cfg: &ContinuousConfig, seed: u64) -> Result<SeedCurves> {
    let mut rng = run_rng(seed, 0);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mech = AffineMechanism {
        weight: sign * rng.random_range(0.5..1.5),
        bias: rng.random_range(-1.0..1.0),
        noise_sd: cfg.noise_sd,
    };
    let train_law = cfg.train_cause;
    let (a, b) = mech.draw(train_law, cfg.train_samples, &mut rng);

    let ab = fit_linear_columns(&a, &b)?.model;
    let ba = fit_linear_columns(&b, &a)?.model;
    let l_train_ab = ab.nll(&a, &b);
    let l_train_ba = ba.nll(&b, &a);
    let fact_ab = GaussFactor { marginal: GaussianMarginal::fit(&a), conditional: ab };
    let fact_ba = GaussFactor { marginal: GaussianMarginal::fit(&b), conditional: ba };

    let mut gamma = GammaState::new(cfg.meta_lr);
    let mut running = 0.0;
    let mut out = SeedCurves {
        proposed: Vec::with_capacity(cfg.episodes),
        baseline: Vec::with_capacity(cfg.episodes),
        sigma: Vec::with_capacity(cfg.episodes),
    };
    let n = cfg.proposed_samples.max(cfg.baseline_samples);
    for episode in 1..=cfg.episodes {
        let law = if cfg.intervene { CauseLaw::random(&mut rng) } else { train_law };
        let (ta, tb) = mech.draw(law, n, &mut rng);

        let k = cfg.proposed_samples;
        let g_ab = ab.nll(&ta[..k], &tb[..k]) - l_train_ab;
        let g_ba = ba.nll(&tb[..k], &ta[..k]) - l_train_ba;
        running += ((g_ba - g_ab) - running) / episode as f64;
        out.proposed.push(running > 0.0);

        let (mut f_ab, mut f_ba) = (fact_ab, fact_ba);
        let (mut ll_ab, mut ll_ba) = (0.0, 0.0);
        for i in 0..cfg.baseline_samples {
            ll_ab -= f_ab.nll_one(ta[i], tb[i]);
            ll_ba -= f_ba.nll_one(tb[i], ta[i]);
            f_ab.step_one(ta[i], tb[i], cfg.adapt_lr)?;
            f_ba.step_one(tb[i], ta[i], cfg.adapt_lr)?;
        }
        gamma_step(&mut gamma, ll_ab, ll_ba)?;
        out.baseline.push(gamma.gamma > 0.0);
        out.sigma.push(sigmoid(gamma.gamma));
    }
    Ok(out)
}

/// Accuracy curves of the gap score (a few transfer samples per episode) and
/// the adaptation-speed baseline, over `seeds` independent mechanisms.
pub fn run_continuous(cfg: &ContinuousConfig) -> Result<ContinuousResult> {
    cfg.validate()?;
    let seeds = cfg
        .exec
        .try_map(cfg.seeds, |i| run_seed(cfg, cfg.base_seed.wrapping_add(i as u64)))?;
    let s = cfg.seeds as f64;
    let mean = |f: &dyn Fn(&SeedCurves, usize) -> f64| -> Vec<f64> {
        (0..cfg.episodes).map(|e| seeds.iter().map(|c| f(c, e)).sum::<f64>() / s).collect()
    };
    Ok(ContinuousResult {
        proposed: mean(&|c, e| c.proposed[e] as u8 as f64),
        baseline: mean(&|c, e| c.baseline[e] as u8 as f64),
        baseline_sigma: mean(&|c, e| c.sigma[e]),
    })
}
