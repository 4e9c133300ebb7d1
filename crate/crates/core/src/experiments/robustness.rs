//! Adaptation with a mixture marginal for the cause: the correct
//! factorization adapts slowly while the gap score is unaffected.

use crate::data::Dataset;
use crate::direction::GapEstimator;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::mixture::MixtureMarginal;
use crate::models::tabular::{fit_counts, Factorization, MarginalModule};
use crate::models::DEFAULT_SMOOTHING;
use crate::prob::{make_pair, Direction, JointSampler};
use crate::rng::{sub_rng, RunRng};

use super::{quartiles, Series};

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessConfig {
    pub n: usize,
    pub m: usize,
    pub components: usize,
    /// Stdev of the Gaussian jitter added to the mixture component logits.
    pub jitter: f64,
    pub seeds: usize,
    pub base_seed: u64,
    pub train_samples: usize,
    /// Transfer samples per budget step.
    pub chunk: usize,
    pub budgets: usize,
    pub batch: usize,
    pub adapt_lr: f64,
    pub heldout: usize,
    pub smoothing: f64,
    pub exec: Exec,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            n: 10,
            m: 10,
            components: 200,
            jitter: 0.1,
            seeds: 100,
            base_seed: 0,
            train_samples: 10_000,
            chunk: 100,
            budgets: 10,
            batch: 10,
            adapt_lr: 0.1,
            heldout: 1000,
            smoothing: DEFAULT_SMOOTHING,
            exec: Exec::Parallel,
        }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n", self.n),
            ("m", self.m),
            ("components", self.components),
            ("seeds", self.seeds),
            ("train_samples", self.train_samples),
            ("chunk", self.chunk),
            ("budgets", self.budgets),
            ("batch", self.batch),
            ("heldout", self.heldout),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("robustness {name} must be at least 1")));
            }
        }
        if !(self.adapt_lr > 0.0 && self.adapt_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("adapt_lr must be positive, got {}", self.adapt_lr)));
        }
        Ok(())
    }
}

/// Per seed and budget step (`budgets` columns): mean held-out
/// log-likelihood improvement of each factorization and the gap score on
/// the transfer samples seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessResult {
    pub chunk: usize,
    pub improvement_ab: Vec<Vec<f64>>,
    pub improvement_ba: Vec<Vec<f64>>,
    pub s_g: Vec<Vec<f64>>,
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

impl RobustnessResult {
    pub fn budgets(&self) -> usize {
        self.s_g.first().map_or(0, Vec::len)
    }

    /// `(q25, median, q75)` of a per-seed curve at budget step `j`.
    pub fn quartiles_at(rows: &[Vec<f64>], j: usize) -> (f64, f64, f64) {
        quartiles(&column(rows, j))
    }

    fn series(&self, name: &str, rows: &[Vec<f64>]) -> Series {
        let (mut lo, mut mid, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..self.budgets() {
            let (a, b, c) = Self::quartiles_at(rows, j);
            lo.push(a);
            mid.push(b);
            hi.push(c);
        }
        let x = (1..=self.budgets()).map(|j| (j * self.chunk) as f64).collect();
        Series::new(name, x, mid).with_band(lo, hi)
    }

    /// Median curves with quartile bands, x in transfer samples.
    pub fn plot_series(&self) -> Vec<Series> {
        vec![
            self.series("baseline_ab", &self.improvement_ab),
            self.series("baseline_ba", &self.improvement_ba),
            self.series("proposed_sg", &self.s_g),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,samples,improvement_ab,improvement_ba,s_g\n");
        for (i, row) in self.s_g.iter().enumerate() {
            for j in 0..row.len() {
                s.push_str(&format!(
                    "{i},{},{},{},{}\n",
                    (j + 1) * self.chunk,
                    self.improvement_ab[i][j],
                    self.improvement_ba[i][j],
                    row[j]
                ));
            }
        }
        s
    }
}

type SeedCurves = (Vec<f64>, Vec<f64>, Vec<f64>);

fn draw(sampler: &JointSampler, n: usize, dims: (usize, usize), rng: &mut RunRng) -> Dataset {
    let mut d = Dataset::new(dims.0, dims.1);
    sampler.fill(&mut d, n, rng);
    d
}

fn run_seed(cfg: &RobustnessConfig, seed: usize) -> Result<SeedCurves> {
    let s = seed as u64;
    let mut rng = sub_rng(cfg.base_seed, s, 0);
    let pair = make_pair(cfg.n, cfg.m, &mut rng)?;
    let dims = (cfg.n, cfg.m);
    let train = draw(&JointSampler::new(&pair.joint_train()), cfg.train_samples, dims, &mut rng);
    let transfer_sampler = JointSampler::new(&pair.joint_transfer());
    let heldout = draw(&transfer_sampler, cfg.heldout, dims, &mut rng);

    let est = GapEstimator::fit(&train, cfg.smoothing)?;
    let count_ab = fit_counts(&train, Direction::AToB, cfg.smoothing);
    let mut ab = Factorization::from_counts(&count_ab)?;
    let mut init_rng = sub_rng(cfg.base_seed, s, 1);
    ab.marginal = MarginalModule::Mixture(MixtureMarginal::around(
        &count_ab.marginal,
        cfg.components,
        cfg.jitter,
        &mut init_rng,
    )?);
    let mut ba = Factorization::from_counts(&fit_counts(&train, Direction::BToA, cfg.smoothing))?;

    let h = heldout.len() as f64;
    let ll0_ab = ab.log_likelihood_sum(&heldout) / h;
    let ll0_ba = ba.log_likelihood_sum(&heldout) / h;
    let mut seen = Dataset::new(cfg.n, cfg.m);
    let (mut imp_ab, mut imp_ba, mut s_g) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.budgets {
        let chunk = draw(&transfer_sampler, cfg.chunk, dims, &mut rng);
        for batch in chunk.samples().chunks(cfg.batch) {
            ab.step(batch, cfg.adapt_lr)?;
            ba.step(batch, cfg.adapt_lr)?;
        }
        seen.extend_from(&chunk)?;
        imp_ab.push(ab.log_likelihood_sum(&heldout) / h - ll0_ab);
        imp_ba.push(ba.log_likelihood_sum(&heldout) / h - ll0_ba);
        s_g.push(est.report(&seen)?.s_g());
    }
    Ok((imp_ab, imp_ba, s_g))
}

/// Baseline adaptation curves and the gap score over `budgets` chunks of
/// transfer samples, one row per seed.
pub fn run_robustness(cfg: &RobustnessConfig) -> Result<RobustnessResult> {
    cfg.validate()?;
    let rows = cfg.exec.try_map(cfg.seeds, |i| run_seed(cfg, i))?;
    let mut out = RobustnessResult { chunk: cfg.chunk, improvement_ab: vec![], improvement_ba: vec![], s_g: vec![] };
    for (a, b, g) in rows {
        out.improvement_ab.push(a);
        out.improvement_ba.push(b);
        out.s_g.push(g);
    }
    Ok(out)
}
