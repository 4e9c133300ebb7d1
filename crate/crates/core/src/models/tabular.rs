//! Count-MLE and softmax-logit tables over categorical variables.

use crate::data::{CountTable, Dataset};
use crate::error::{Error, Result};
use crate::models::mixture::MixtureMarginal;
use crate::models::{ensure_finite, softmax_into, TrainConfig};
use crate::prob::{Categorical, ConditionalTable, Direction};

/// Anything that scores `P(effect | cause)` in a fixed orientation.
pub trait DiscreteConditional {
    fn direction(&self) -> Direction;
    fn cond_prob(&self, cause: usize, effect: usize) -> f64;
}

/// Smoothed maximum-likelihood tables for one factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct CountModel {
    pub direction: Direction,
    pub marginal: Categorical,
    pub conditional: ConditionalTable,
    pub smoothing: f64,
}

impl CountModel {
    /// `(c_ij + eps) / (c_i. + M eps)`; an empty row with `eps == 0` falls
    /// back to uniform and is flagged.
    pub fn from_counts(counts: &CountTable, direction: Direction, smoothing: f64) -> Self {
        let (nc, ne) = counts.oriented_dims(direction);
        let mut cond = Vec::with_capacity(nc * ne);
        let mut cause_counts = Vec::with_capacity(nc);
        let mut degenerate = Vec::new();
        for c in 0..nc {
            let row: Vec<f64> = (0..ne).map(|e| counts.oriented(direction, c, e)).collect();
            let total: f64 = row.iter().sum();
            cause_counts.push(total);
            let denom = total + ne as f64 * smoothing;
            if denom > 0.0 {
                cond.extend(row.iter().map(|x| (x + smoothing) / denom));
            } else {
                degenerate.push(c);
                cond.extend(std::iter::repeat_n(1.0 / ne as f64, ne));
            }
        }
        let n: f64 = cause_counts.iter().sum();
        let denom = n + nc as f64 * smoothing;
        let marginal = if denom > 0.0 {
            cause_counts.iter().map(|x| (x + smoothing) / denom).collect()
        } else {
            vec![1.0 / nc as f64; nc]
        };
        let mut conditional =
            ConditionalTable::new(nc, ne, cond).expect("rows normalized by construction");
        conditional.mark_degenerate(degenerate);
        Self {
            direction,
            marginal: Categorical::new(marginal).expect("normalized by construction"),
            conditional,
            smoothing,
        }
    }

    pub fn joint_log_prob(&self, cause: usize, effect: usize) -> f64 {
        self.marginal.get(cause).ln() + self.cond_prob(cause, effect).ln()
    }
}

impl DiscreteConditional for CountModel {
    fn direction(&self) -> Direction {
        self.direction
    }

    #[inline]
    fn cond_prob(&self, cause: usize, effect: usize) -> f64 {
        self.conditional.get(cause, effect)
    }
}

/// Fit the `direction` factorization of `data` by counting.
pub fn fit_counts(data: &Dataset, direction: Direction, smoothing: f64) -> CountModel {
    CountModel::from_counts(&data.counts(), direction, smoothing)
}

/// Average `-log P(effect | cause)` over `data`.
pub fn nll<M: DiscreteConditional>(model: &M, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("nll"));
    }
    let dir = model.direction();
    let mut total = 0.0;
    for s in data.iter() {
        let (c, e) = s.oriented(dir);
        let p = model.cond_prob(c, e);
        if p <= 0.0 {
            return Err(Error::InfiniteLoss { cause: c, effect: e });
        }
        total -= p.ln();
    }
    Ok(total / data.len() as f64)
}

/// [`nll`] evaluated from a count table (same value, O(cells)).
pub fn nll_counts<M: DiscreteConditional>(model: &M, counts: &CountTable) -> Result<f64> {
    let n = counts.total();
    if n <= 0.0 {
        return Err(Error::EmptyDataset("nll"));
    }
    let dir = model.direction();
    let (nc, ne) = counts.oriented_dims(dir);
    let mut total = 0.0;
    for c in 0..nc {
        for e in 0..ne {
            let k = counts.oriented(dir, c, e);
            if k > 0.0 {
                let p = model.cond_prob(c, e);
                if p <= 0.0 {
                    return Err(Error::InfiniteLoss { cause: c, effect: e });
                }
                total -= k * p.ln();
            }
        }
    }
    Ok(total / n)
}

/// Whether a tabular module models the cause marginal or the conditional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Marginal,
    Conditional,
}

/// Row-softmax over unnormalized logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmax {
    rows: usize,
    cols: usize,
    logits: Vec<f64>,
    role: Role,
    direction: Direction,
}

impl TabularSoftmax {
    pub fn zeros(rows: usize, cols: usize, role: Role, direction: Direction) -> Self {
        let rows = if role == Role::Marginal { 1 } else { rows };
        Self {
            rows,
            cols,
            logits: vec![0.0; rows * cols],
            role,
            direction,
        }
    }

    pub fn from_logits(
        rows: usize,
        cols: usize,
        logits: Vec<f64>,
        role: Role,
        direction: Direction,
    ) -> Result<Self> {
        if logits.len() != rows * cols || (role == Role::Marginal && rows != 1) {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: logits.len(),
            });
        }
        ensure_finite(&logits, "logits")?;
        Ok(Self {
            rows,
            cols,
            logits,
            role,
            direction,
        })
    }

    /// Logits `ln p`; entries must be positive.
    pub fn from_marginal(p: &Categorical, direction: Direction) -> Result<Self> {
        Self::from_logits(1, p.dim(), p.probs().iter().map(|x| x.ln()).collect(), Role::Marginal, direction)
    }

    pub fn from_conditional(c: &ConditionalTable, direction: Direction) -> Result<Self> {
        Self::from_logits(
            c.rows(),
            c.cols(),
            c.as_slice().iter().map(|x| x.ln()).collect(),
            Role::Conditional,
            direction,
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn set_logits(&mut self, logits: &[f64]) {
        self.logits.copy_from_slice(logits);
    }

    pub fn row_probs(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        softmax_into(&self.logits[r * self.cols..(r + 1) * self.cols], &mut out);
        out
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.rows).flat_map(|r| self.row_probs(r)).collect()
    }

    #[inline]
    fn index(&self, cause: usize, effect: usize) -> (usize, usize) {
        match self.role {
            Role::Marginal => (0, cause),
            Role::Conditional => (cause, effect),
        }
    }

    fn row_log_norm(&self, r: usize) -> f64 {
        crate::models::log_sum_exp(&self.logits[r * self.cols..(r + 1) * self.cols])
    }

    /// Log-probability of one oriented sample under this module.
    pub fn log_prob(&self, cause: usize, effect: usize) -> f64 {
        let (r, o) = self.index(cause, effect);
        self.logits[r * self.cols + o] - self.row_log_norm(r)
    }

    /// Summed log-likelihood of `data`.
    pub fn log_likelihood_sum(&self, data: &Dataset) -> f64 {
        self.log_likelihood_samples(data.samples())
    }

    pub fn log_likelihood_samples(&self, samples: &[crate::data::SamplePair]) -> f64 {
        let norms: Vec<f64> = (0..self.rows).map(|r| self.row_log_norm(r)).collect();
        samples
            .iter()
            .map(|s| {
                let (c, e) = s.oriented(self.direction);
                let (r, o) = self.index(c, e);
                self.logits[r * self.cols + o] - norms[r]
            })
            .sum()
    }

    pub fn nll(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("nll"));
        }
        Ok(-self.log_likelihood_sum(data) / data.len() as f64)
    }

    /// Gradient of the average NLL with respect to the logits.
    ///
    /// Per visited row: `row_count * softmax(row) - outcome_counts`, over n.
    pub fn nll_gradient(&self, samples: &[crate::data::SamplePair]) -> Vec<f64> {
        let mut g = vec![0.0; self.logits.len()];
        if samples.is_empty() {
            return g;
        }
        let mut row_counts = vec![0.0; self.rows];
        for s in samples {
            let (c, e) = s.oriented(self.direction);
            let (r, o) = self.index(c, e);
            g[r * self.cols + o] -= 1.0;
            row_counts[r] += 1.0;
        }
        let mut p = vec![0.0; self.cols];
        let n = samples.len() as f64;
        for (r, &k) in row_counts.iter().enumerate() {
            if k > 0.0 {
                softmax_into(&self.logits[r * self.cols..(r + 1) * self.cols], &mut p);
                for (gi, pi) in g[r * self.cols..(r + 1) * self.cols].iter_mut().zip(&p) {
                    *gi += k * pi;
                }
            }
        }
        for gi in &mut g {
            *gi /= n;
        }
        g
    }

    /// One gradient-ascent step on the average log-likelihood of `batch`.
    pub fn step(&mut self, batch: &[crate::data::SamplePair], lr: f64) -> Result<()> {
        let g = self.nll_gradient(batch);
        ensure_finite(&g, "tabular gradient")?;
        for (l, gi) in self.logits.iter_mut().zip(&g) {
            *l -= lr * gi;
        }
        Ok(())
    }
}

impl DiscreteConditional for TabularSoftmax {
    fn direction(&self) -> Direction {
        self.direction
    }

    fn cond_prob(&self, cause: usize, effect: usize) -> f64 {
        self.log_prob(cause, effect).exp()
    }
}

/// Gradient descent on the average NLL; returns the full-data NLL before
/// each pass and after the last one.
pub fn sgd_fit(module: &mut TabularSoftmax, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("sgd_fit"));
    }
    let batch = if cfg.batch_size == 0 { data.len() } else { cfg.batch_size };
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(module.nll(data)?);
    for _ in 0..cfg.steps {
        for chunk in data.samples().chunks(batch) {
            module.step(chunk, cfg.learning_rate)?;
        }
        trace.push(module.nll(data)?);
    }
    Ok(trace)
}

/// L2 norm of the gradient of the average NLL of `data` with respect to the
/// module's own logits. No clipping.
pub fn grad_norm(module: &TabularSoftmax, data: &Dataset) -> f64 {
    module
        .nll_gradient(data.samples())
        .iter()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Marginal module of a factorization.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalModule {
    Tabular(TabularSoftmax),
    Mixture(MixtureMarginal),
}

/// `P(cause) P(effect | cause)` with independent trainable modules.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub direction: Direction,
    pub marginal: MarginalModule,
    pub conditional: TabularSoftmax,
}

impl Factorization {
    /// Modules initialized at the (smoothed) count estimates.
    pub fn from_counts(model: &CountModel) -> Result<Self> {
        Ok(Self {
            direction: model.direction,
            marginal: MarginalModule::Tabular(TabularSoftmax::from_marginal(&model.marginal, model.direction)?),
            conditional: TabularSoftmax::from_conditional(&model.conditional, model.direction)?,
        })
    }

    /// Summed joint log-likelihood of `data`.
    pub fn log_likelihood_sum(&self, data: &Dataset) -> f64 {
        self.log_likelihood_samples(data.samples())
    }

    pub fn log_likelihood_samples(&self, samples: &[crate::data::SamplePair]) -> f64 {
        let marg = match &self.marginal {
            MarginalModule::Tabular(t) => t.log_likelihood_samples(samples),
            MarginalModule::Mixture(m) => {
                let causes: Vec<usize> = samples.iter().map(|s| s.oriented(self.direction).0).collect();
                m.log_likelihood_sum(&causes)
            }
        };
        marg + self.conditional.log_likelihood_samples(samples)
    }

    /// One joint gradient step on `batch` for every module.
    pub fn step(&mut self, batch: &[crate::data::SamplePair], lr: f64) -> Result<()> {
        match &mut self.marginal {
            MarginalModule::Tabular(t) => t.step(batch, lr)?,
            MarginalModule::Mixture(m) => {
                let causes: Vec<usize> = batch.iter().map(|s| s.oriented(self.direction).0).collect();
                crate::models::mixture::mixture_sgd_step(m, &causes, lr)?;
            }
        }
        self.conditional.step(batch, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CountTable, SamplePair};
    use crate::models::fd;
    use crate::prob::{conditional_cross_entropy, oriented_conditional, make_pair, sample, DistributionPair};
    use crate::rng::run_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn counts(rows: &[Vec<f64>]) -> CountTable {
        CountTable::from_rows(rows).unwrap()
    }

    #[test]
    fn fit_counts_examples() {
        let m = CountModel::from_counts(&counts(&[vec![1.0, 1.0], vec![1.0, 1.0]]), Direction::AToB, 0.0);
        assert_eq!(m.conditional.as_slice(), &[0.5; 4]);
        let m = CountModel::from_counts(&counts(&[vec![3.0, 1.0], vec![0.0, 4.0]]), Direction::AToB, 0.0);
        assert_eq!(m.conditional.as_slice(), &[0.75, 0.25, 0.0, 1.0]);
        let m = CountModel::from_counts(&counts(&[vec![3.0, 1.0], vec![0.0, 0.0]]), Direction::AToB, 1e-6);
        assert_abs_diff_eq!(m.conditional.get(1, 0), 0.5, epsilon = 1e-15);
        let m = CountModel::from_counts(&counts(&[vec![3.0, 1.0], vec![0.0, 0.0]]), Direction::AToB, 0.0);
        assert_eq!(m.conditional.degenerate_rows(), &[1]);
        assert_eq!(m.conditional.row(1), &[0.5, 0.5]);
        // B->A reads columns as causes.
        let m = CountModel::from_counts(&counts(&[vec![3.0, 1.0], vec![1.0, 3.0]]), Direction::BToA, 0.0);
        assert_eq!(m.conditional.row(0), &[0.75, 0.25]);
        assert_eq!(m.marginal.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn smoothed_models_are_strictly_positive() {
        let data = Dataset::from_pairs(3, 3, &[(0, 0), (0, 0), (2, 1)]).unwrap();
        let m = fit_counts(&data, Direction::BToA, 1e-6);
        assert!(m.conditional.as_slice().iter().all(|p| *p > 0.0));
        assert!(m.marginal.probs().iter().all(|p| *p > 0.0));
    }

    #[test]
    fn nll_examples() {
        let data = Dataset::from_pairs(2, 2, &[(0, 0), (0, 1), (1, 1), (1, 1)]).unwrap();
        let m = fit_counts(&data, Direction::AToB, 0.0);
        // Empirical conditional entropy: 0.5 ln 2 + 0.5 * 0.
        assert_abs_diff_eq!(nll(&m, &data).unwrap(), 0.5 * std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(nll_counts(&m, &data.counts()).unwrap(), nll(&m, &data).unwrap(), epsilon = 1e-15);

        let det = Dataset::from_pairs(2, 2, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(nll(&fit_counts(&det, Direction::AToB, 0.0), &det).unwrap(), 0.0);

        let unseen = Dataset::from_pairs(2, 2, &[(0, 0)]).unwrap();
        assert!(matches!(
            nll(&fit_counts(&det, Direction::AToB, 0.0), &unseen),
            Err(Error::InfiniteLoss { .. })
        ));
        assert!(nll(&m, &Dataset::new(2, 2)).is_err());
    }

    #[test]
    fn population_nll_of_reverse_model_under_transfer() {
        // Train-conditional B->A evaluated on P2 = H_{B->A}(P2) + D_{B->A}.
        let pair = DistributionPair::counterexample();
        let j1 = pair.joint_train();
        let j2 = pair.joint_transfer();
        let c1 = oriented_conditional(&j1, Direction::BToA);
        let c2 = oriented_conditional(&j2, Direction::BToA);
        let ce = conditional_cross_entropy(&j2, &c1, Direction::BToA).unwrap();
        let h2 = conditional_cross_entropy(&j2, &c2, Direction::BToA).unwrap();
        // Brute-force enumeration.
        let mut oracle = 0.0f64;
        let p1b: [f64; 2] = [0.48, 0.52];
        let p1 = [[0.12, 0.28], [0.36, 0.24]];
        let p2 = [[0.06, 0.14], [0.48, 0.32]];
        for a in 0..2 {
            for b in 0..2 {
                oracle -= p2[a][b] * (p1[a][b] / p1b[b]).ln();
            }
        }
        assert_abs_diff_eq!(ce, oracle, epsilon = 1e-14);
        assert_abs_diff_eq!(ce - h2, 0.0844, epsilon = 1e-4);
    }

    #[test]
    fn stationary_at_empirical_distribution() {
        let data = Dataset::from_pairs(2, 3, &[(0, 0), (0, 1), (0, 1), (1, 2), (1, 0)]).unwrap();
        let m = fit_counts(&data, Direction::AToB, 0.0);
        let mut t = TabularSoftmax::from_conditional(
            &CountModel::from_counts(&data.counts(), Direction::AToB, 1e-300).conditional,
            Direction::AToB,
        )
        .unwrap();
        // Logits of zero cells are ~ -690, gradient there is ~0.
        assert!(grad_norm(&t, &data) < 1e-10);
        let before = t.logits().to_vec();
        t.step(data.samples(), 0.1).unwrap();
        for (a, b) in before.iter().zip(t.logits()) {
            assert!((a - b).abs() < 1e-10);
        }
        let _ = m;
    }

    #[test]
    fn single_step_increases_sample_probability() {
        let mut t = TabularSoftmax::zeros(3, 4, Role::Conditional, Direction::AToB);
        let s = [SamplePair::new(1, 2)];
        let before = t.log_prob(1, 2);
        t.step(&s, 0.5).unwrap();
        assert!(t.log_prob(1, 2) > before);
        assert_eq!(t.row_probs(0), vec![0.25; 4]);
    }

    #[test]
    fn long_run_matches_count_estimate() {
        let pairs: Vec<(usize, usize)> = (0..60).map(|i| (i % 2, (i / 2 + i % 3) % 3)).collect();
        let data = Dataset::from_pairs(2, 3, &pairs).unwrap();
        let target = fit_counts(&data, Direction::AToB, 0.0);
        let mut t = TabularSoftmax::zeros(2, 3, Role::Conditional, Direction::AToB);
        let cfg = TrainConfig { learning_rate: 1.0, steps: 3000, batch_size: 0, smoothing: 0.0 };
        sgd_fit(&mut t, &data, &cfg).unwrap();
        for (p, q) in t.probs().iter().zip(target.conditional.as_slice()) {
            assert!((p - q).abs() < 1e-3, "{p} vs {q}");
        }
    }

    #[test]
    fn training_nll_does_not_increase() {
        let mut rng = run_rng(11, 0);
        let pair = make_pair(5, 4, &mut rng).unwrap();
        let data = sample(&pair.joint_train(), 400, &mut rng);
        for dir in [Direction::AToB, Direction::BToA] {
            for batch in [0, 16] {
                let mut t = TabularSoftmax::zeros(data.oriented_dims(dir).0, data.oriented_dims(dir).1, Role::Conditional, dir);
                let cfg = TrainConfig { learning_rate: 0.1, steps: 50, batch_size: batch, smoothing: 0.0 };
                let trace = sgd_fit(&mut t, &data, &cfg).unwrap();
                for w in trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-6, "{:?}", w);
                }
            }
        }
    }

    #[test]
    fn count_mle_minimizes_nll() {
        let mut rng = run_rng(12, 0);
        let pair = make_pair(3, 3, &mut rng).unwrap();
        let data = sample(&pair.joint_train(), 300, &mut rng);
        let m = fit_counts(&data, Direction::BToA, 0.0);
        let base = nll(&m, &data).unwrap();
        for _ in 0..200 {
            let mut t = TabularSoftmax::from_conditional(
                &CountModel::from_counts(&data.counts(), Direction::BToA, 1e-12).conditional,
                Direction::BToA,
            )
            .unwrap();
            let noisy: Vec<f64> = t.logits().iter().map(|l| l + rng.random_range(-0.3..0.3)).collect();
            t.set_logits(&noisy);
            assert!(nll(&t, &data).unwrap() >= base - 1e-9);
        }
    }

    #[test]
    fn grad_norm_wrong_direction_is_positive() {
        let pair = DistributionPair::counterexample();
        let mut rng = run_rng(4, 0);
        let train = sample(&pair.joint_train(), 200_000, &mut rng);
        let transfer = sample(&pair.joint_transfer(), 200_000, &mut rng);
        let norms: Vec<f64> = [Direction::AToB, Direction::BToA]
            .iter()
            .map(|&d| {
                let m = fit_counts(&train, d, 1e-6);
                grad_norm(&TabularSoftmax::from_conditional(&m.conditional, d).unwrap(), &transfer)
            })
            .collect();
        // Population gradient of the B->A conditional under P2: per row b,
        // P2(b) (P1(a|b) - P2(a|b)); with P2(b)=(.54,.46), P2(a=0|b)=(1/9, 14/46).
        let pop = ((0.54f64 * (0.25 - 0.06 / 0.54)).powi(2) * 2.0
            + (0.46f64 * (0.28 / 0.52 - 0.14 / 0.46)).powi(2) * 2.0)
            .sqrt();
        assert!((norms[1] - pop).abs() < 0.01, "{} vs {pop}", norms[1]);
        assert!(norms[0] < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn tabular_gradient_matches_finite_differences(seed in 0u64..10_000, rows in 1usize..4, cols in 2usize..5) {
            let mut rng = run_rng(seed, 0);
            let logits: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = TabularSoftmax::from_logits(rows, cols, logits.clone(), Role::Conditional, Direction::AToB).unwrap();
            let pairs: Vec<(usize, usize)> = (0..7).map(|_| (rng.random_range(0..rows), rng.random_range(0..cols))).collect();
            let data = Dataset::from_pairs(rows, cols, &pairs).unwrap();
            let g = t.nll_gradient(data.samples());
            let num = fd::central(&logits, 1e-5, |x| {
                let mut u = t.clone();
                u.set_logits(x);
                u.nll(&data).unwrap()
            });
            for (a, b) in g.iter().zip(&num) {
                prop_assert!(fd::rel_err(*a, *b) < 1e-4, "{a} vs {b}");
            }
        }
    }
}
