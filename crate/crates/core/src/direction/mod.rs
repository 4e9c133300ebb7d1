//! Direction scores: generalization gaps, conditional-KL difference and
//! gradient-norm difference, plus the adaptation-speed meta-learner.
//!
//! Every score here is oriented so that a positive value means `A -> B`.

mod gamma;
mod harness;

pub use gamma::{gamma_step, sigmoid, GammaState, GAMMA_BOUND};
pub use harness::{
    episode_harness, episode_harness_with, AccuracyCurve, BaselineConfig, EpisodeRecord, HarnessConfig,
    HarnessResult, Method,
};

use crate::data::{CountTable, Dataset};
use crate::error::{Error, Result};
use crate::models::tabular::{fit_counts, grad_norm, nll_counts, CountModel, TabularSoftmax};
use crate::prob::{conditional_cross_entropy, oriented_conditional, Direction, DistributionPair};

/// Train/transfer losses of both factorizations' conditionals, per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub l_train_ab: f64,
    pub l_transfer_ab: f64,
    pub l_train_ba: f64,
    pub l_transfer_ba: f64,
    pub g_ab: f64,
    pub g_ba: f64,
}

impl GapReport {
    pub fn from_losses(l_train_ab: f64, l_transfer_ab: f64, l_train_ba: f64, l_transfer_ba: f64) -> Self {
        Self {
            l_train_ab,
            l_transfer_ab,
            l_train_ba,
            l_transfer_ba,
            g_ab: l_transfer_ab - l_train_ab,
            g_ba: l_transfer_ba - l_train_ba,
        }
    }

    /// `G_{B->A} - G_{A->B}`.
    pub fn s_g(&self) -> f64 {
        self.g_ba - self.g_ab
    }
}

/// Scores for one comparison and the verdict of the selected one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionScore {
    pub s_g: f64,
    pub s_dkl: Option<f64>,
    pub s_l2: Option<f64>,
    pub verdict: Direction,
}

/// `A -> B` iff `score > 0`; zero and NaN go to `B -> A`.
#[inline]
pub fn verdict(score: f64) -> Direction {
    if score > 0.0 {
        Direction::AToB
    } else {
        Direction::BToA
    }
}

pub fn score_sg(report: &GapReport) -> DirectionScore {
    let s_g = report.s_g();
    DirectionScore {
        s_g,
        s_dkl: None,
        s_l2: None,
        verdict: verdict(s_g),
    }
}

/// Count models of both directions fitted once on train data; reusable
/// against any number of transfer sets.
#[derive(Debug, Clone)]
pub struct GapEstimator {
    pub model_ab: CountModel,
    pub model_ba: CountModel,
    pub l_train_ab: f64,
    pub l_train_ba: f64,
}

impl GapEstimator {
    pub fn fit(train: &Dataset, smoothing: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("train"));
        }
        let counts = train.counts();
        let model_ab = CountModel::from_counts(&counts, Direction::AToB, smoothing);
        let model_ba = CountModel::from_counts(&counts, Direction::BToA, smoothing);
        Ok(Self {
            l_train_ab: nll_counts(&model_ab, &counts)?,
            l_train_ba: nll_counts(&model_ba, &counts)?,
            model_ab,
            model_ba,
        })
    }

    pub fn report(&self, transfer: &Dataset) -> Result<GapReport> {
        if transfer.is_empty() {
            return Err(Error::EmptyDataset("transfer"));
        }
        let counts = transfer.counts();
        Ok(GapReport::from_losses(
            self.l_train_ab,
            nll_counts(&self.model_ab, &counts)?,
            self.l_train_ba,
            nll_counts(&self.model_ba, &counts)?,
        ))
    }
}

/// Fit both directions on `train` and evaluate on both sets.
pub fn generalization_gaps(train: &Dataset, transfer: &Dataset, smoothing: f64) -> Result<GapReport> {
    if train.dims() != transfer.dims() {
        return Err(Error::DimensionMismatch {
            expected: train.dims().0 * train.dims().1,
            actual: transfer.dims().0 * transfer.dims().1,
        });
    }
    GapEstimator::fit(train, smoothing)?.report(transfer)
}

/// Gaps in the infinite-sample limit: the models are the exact train
/// conditionals and losses are expectations under the true joints.
pub fn population_gaps(pair: &DistributionPair) -> Result<GapReport> {
    let j1 = pair.joint_train();
    let j2 = pair.joint_transfer();
    let mut l = [0.0; 4];
    for (i, dir) in [Direction::AToB, Direction::BToA].into_iter().enumerate() {
        let c1 = oriented_conditional(&j1, dir);
        l[2 * i] = conditional_cross_entropy(&j1, &c1, dir)?;
        l[2 * i + 1] = conditional_cross_entropy(&j2, &c1, dir)?;
    }
    Ok(GapReport::from_losses(l[0], l[1], l[2], l[3]))
}

/// Per-direction conditional KL between transfer and train conditionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdklScore {
    pub d_ab: f64,
    pub d_ba: f64,
}

impl SdklScore {
    /// `D_{A->B} - D_{B->A}`: the formula as usually printed. Negative when
    /// `A -> B` is causal.
    pub fn printed(&self) -> f64 {
        self.d_ab - self.d_ba
    }

    /// `D_{B->A} - D_{A->B}`: positive when `A -> B` is causal.
    pub fn consistent(&self) -> f64 {
        self.d_ba - self.d_ab
    }
}

pub fn score_sdkl_population(pair: &DistributionPair) -> Result<SdklScore> {
    let (d_ab, d_ba) = crate::prob::pair_conditional_kls(pair)?;
    Ok(SdklScore { d_ab, d_ba })
}

/// Plug-in estimate: conditionals are count-fitted on each set and the
/// expectation is over the empirical transfer joint.
pub fn score_sdkl_samples(train: &Dataset, transfer: &Dataset, smoothing: f64) -> Result<SdklScore> {
    score_sdkl_counts(&train.counts(), &transfer.counts(), smoothing)
}

/// [`score_sdkl_samples`] from precomputed count tables.
pub fn score_sdkl_counts(c1: &CountTable, c2: &CountTable, smoothing: f64) -> Result<SdklScore> {
    let n2 = c2.total();
    if c1.total() <= 0.0 || n2 <= 0.0 {
        return Err(Error::EmptyDataset("score_sdkl_samples"));
    }
    let mut d = [0.0; 2];
    for (slot, dir) in d.iter_mut().zip([Direction::AToB, Direction::BToA]) {
        let m1 = CountModel::from_counts(c1, dir, smoothing);
        let m2 = CountModel::from_counts(c2, dir, smoothing);
        let (nc, ne) = c2.oriented_dims(dir);
        let mut acc = 0.0;
        for c in 0..nc {
            for e in 0..ne {
                let k = c2.oriented(dir, c, e);
                if k > 0.0 {
                    let q1 = m1.conditional.get(c, e);
                    if q1 <= 0.0 {
                        return Err(Error::InfiniteDivergence { row: c, col: e });
                    }
                    acc += k * (m2.conditional.get(c, e).ln() - q1.ln());
                }
            }
        }
        *slot = acc / n2;
    }
    Ok(SdklScore { d_ab: d[0], d_ba: d[1] })
}

/// Transfer-loss gradient norms of the two conditional modules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Score {
    pub norm_ab: f64,
    pub norm_ba: f64,
}

impl L2Score {
    pub fn printed(&self) -> f64 {
        self.norm_ab - self.norm_ba
    }

    pub fn consistent(&self) -> f64 {
        self.norm_ba - self.norm_ab
    }
}

pub fn score_l2(model_ab: &TabularSoftmax, model_ba: &TabularSoftmax, transfer: &Dataset) -> L2Score {
    L2Score {
        norm_ab: grad_norm(model_ab, transfer),
        norm_ba: grad_norm(model_ba, transfer),
    }
}

/// Softmax conditionals initialized at the train count estimates.
pub fn conditional_modules(train: &Dataset, smoothing: f64) -> Result<(TabularSoftmax, TabularSoftmax)> {
    let ab = fit_counts(train, Direction::AToB, smoothing);
    let ba = fit_counts(train, Direction::BToA, smoothing);
    Ok((
        TabularSoftmax::from_conditional(&ab.conditional, Direction::AToB)?,
        TabularSoftmax::from_conditional(&ba.conditional, Direction::BToA)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{entropy_deltas, make_pair, pair_conditional_kls, sample};
    use crate::rng::run_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn verdict_tie_goes_to_b_to_a() {
        assert_eq!(verdict(0.1), Direction::AToB);
        assert_eq!(verdict(-0.1), Direction::BToA);
        assert_eq!(verdict(0.0), Direction::BToA);
        assert_eq!(verdict(f64::NAN), Direction::BToA);
    }

    #[test]
    fn identical_sets_have_zero_gaps() {
        let pair = make_pair(4, 3, &mut run_rng(1, 0)).unwrap();
        let d = sample(&pair.joint_train(), 500, &mut run_rng(1, 1));
        let r = generalization_gaps(&d, &d, 1e-6).unwrap();
        assert_eq!(r.g_ab, 0.0);
        assert_eq!(r.g_ba, 0.0);
        assert!(generalization_gaps(&d, &Dataset::new(4, 3), 1e-6).is_err());
    }

    #[test]
    fn counterexample_population_score() {
        let r = population_gaps(&DistributionPair::counterexample()).unwrap();
        assert_abs_diff_eq!(r.s_g(), -0.085896, epsilon = 1e-6);
        assert_eq!(score_sg(&r).verdict, Direction::BToA);
    }

    #[test]
    fn population_gaps_decompose() {
        for seed in 0..50 {
            let pair = make_pair(3, 4, &mut run_rng(seed, 0)).unwrap();
            let r = population_gaps(&pair).unwrap();
            let (d_ab, d_ba) = pair_conditional_kls(&pair).unwrap();
            let dh = entropy_deltas(&pair);
            assert_abs_diff_eq!(r.g_ab, d_ab + dh.dh_ab - dh.dh_a, epsilon = 1e-12);
            assert_abs_diff_eq!(r.g_ba, d_ba + dh.dh_ab - dh.dh_b, epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_score_approaches_population() {
        let pair = DistributionPair::counterexample();
        let mut rng = run_rng(11, 0);
        let train = sample(&pair.joint_train(), 1_000_000, &mut rng);
        let transfer = sample(&pair.joint_transfer(), 1_000_000, &mut rng);
        let r = generalization_gaps(&train, &transfer, 1e-6).unwrap();
        assert!((r.s_g() - (-0.086)).abs() < 0.01, "{}", r.s_g());
    }

    #[test]
    fn shifting_train_losses_keeps_verdict() {
        let r = GapReport::from_losses(1.0, 1.3, 2.0, 2.1);
        let shifted = GapReport::from_losses(1.0 + 5.0, 1.3, 2.0 + 5.0, 2.1);
        assert_eq!(score_sg(&r).verdict, score_sg(&shifted).verdict);
        assert_abs_diff_eq!(r.s_g(), shifted.s_g(), epsilon = 1e-12);
    }

    #[test]
    fn sdkl_orientations() {
        let s = score_sdkl_population(&DistributionPair::counterexample()).unwrap();
        assert!(s.d_ab.abs() < 1e-12);
        assert_abs_diff_eq!(s.d_ba, 0.0844, epsilon = 1e-4);
        assert_eq!(s.printed(), -s.consistent());
        let pair = make_pair(3, 3, &mut run_rng(2, 0)).unwrap();
        let same = pair.with_transfer(pair.marginal_a_train.clone()).unwrap();
        let s = score_sdkl_population(&same).unwrap();
        assert_eq!((s.d_ab, s.d_ba), (0.0, 0.0));
    }

    #[test]
    fn sdkl_samples_identical_sets_is_zero() {
        let pair = make_pair(3, 3, &mut run_rng(3, 0)).unwrap();
        let d = sample(&pair.joint_train(), 300, &mut run_rng(3, 1));
        let s = score_sdkl_samples(&d, &d, 1e-6).unwrap();
        assert_abs_diff_eq!(s.d_ab, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.d_ba, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn l2_correct_direction_norm_vanishes_with_samples() {
        let pair = make_pair(5, 5, &mut run_rng(4, 0)).unwrap();
        let mut rng = run_rng(4, 1);
        let train = sample(&pair.joint_train(), 2_000_000, &mut rng);
        let (ab, ba) = conditional_modules(&train, 1e-6).unwrap();
        let small = score_l2(&ab, &ba, &sample(&pair.joint_transfer(), 1_000, &mut rng));
        let large = score_l2(&ab, &ba, &sample(&pair.joint_transfer(), 1_000_000, &mut rng));
        assert!(large.norm_ab < small.norm_ab);
        assert!(large.norm_ab < 2e-3, "{}", large.norm_ab);
        assert!(large.norm_ba > 10.0 * large.norm_ab);
        let same = score_l2(&ab, &ba, &train);
        assert!(same.norm_ab < 1e-6 && same.norm_ba < 1e-6);
    }
}
