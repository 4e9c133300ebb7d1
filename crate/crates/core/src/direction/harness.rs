//! Repeated-intervention accuracy harness.
//!
//! For each seed a fresh ground-truth pair is drawn and models are fitted on
//! a large train sample. Every episode then draws a new intervention on the
//! cause marginal plus a small transfer sample, and each method updates its
//! running decision from that sample alone. All methods see the same draws.

use std::time::Instant;

use crate::data::Dataset;
use crate::direction::{gamma_step, score_l2, score_sdkl_counts, GammaState, GapEstimator};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::tabular::{Factorization, TabularSoftmax};
use crate::models::DEFAULT_SMOOTHING;
use crate::prob::{make_pair, random_categorical, sample, Direction, DistributionPair, JointSampler};
use crate::rng::{run_rng, RunRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Running mean of the per-episode gap score.
    ProposedSg,
    /// Indicator trained on the adaptation log-likelihood of each factorization.
    BaselineGamma,
    /// Same indicator trained on negated summed gaps.
    ProposedGamma,
    Sdkl,
    L2,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ProposedSg,
        Method::BaselineGamma,
        Method::ProposedGamma,
        Method::Sdkl,
        Method::L2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ProposedSg => "proposed_sg",
            Method::BaselineGamma => "baseline_gamma",
            Method::ProposedGamma => "proposed_gamma",
            Method::Sdkl => "sdkl",
            Method::L2 => "l2",
        }
    }

    pub fn uses_gamma(self) -> bool {
        matches!(self, Method::BaselineGamma | Method::ProposedGamma)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Adaptation settings of the likelihood meta-learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    /// Step size of the per-episode module adaptation.
    pub adapt_lr: f64,
    /// Transfer samples per adaptation step.
    pub adapt_batch: usize,
    /// Step size of the indicator update.
    pub meta_lr: f64,
    /// Keep adapted modules across episodes instead of restarting each
    /// episode from the train fit.
    pub persist_modules: bool,
    /// Feed per-sample mean log-likelihoods to the indicator instead of sums.
    pub mean_likelihood: bool,
    /// Full-batch gradient passes used to pretrain the modules from uniform
    /// logits; 0 starts them at the count estimates.
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            adapt_lr: 0.1,
            adapt_batch: 8,
            meta_lr: 1.0,
            persist_modules: true,
            mean_likelihood: false,
            pretrain_steps: 200,
            pretrain_lr: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub n_a: usize,
    pub n_b: usize,
    pub seeds: usize,
    pub episodes: usize,
    pub base_seed: u64,
    pub samples_per_episode: usize,
    pub train_samples: usize,
    pub smoothing: f64,
    pub methods: Vec<Method>,
    pub baseline: BaselineConfig,
    /// Indicator step size for [`Method::ProposedGamma`].
    pub proposed_gamma_lr: f64,
    pub exec: Exec,
}

impl HarnessConfig {
    /// `N x N` categorical setting with 100 train samples per cell.
    pub fn discrete(n: usize) -> Self {
        Self {
            n_a: n,
            n_b: n,
            seeds: 100,
            episodes: 50,
            base_seed: 0,
            samples_per_episode: 64,
            train_samples: 100 * n * n,
            smoothing: DEFAULT_SMOOTHING,
            methods: vec![Method::ProposedSg, Method::BaselineGamma, Method::ProposedGamma],
            baseline: BaselineConfig::default(),
            proposed_gamma_lr: 0.1,
            exec: Exec::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_a", self.n_a),
            ("n_b", self.n_b),
            ("seeds", self.seeds),
            ("episodes", self.episodes),
            ("samples_per_episode", self.samples_per_episode),
            ("train_samples", self.train_samples),
            ("adapt_batch", self.baseline.adapt_batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        for (name, v) in [
            ("adapt_lr", self.baseline.adapt_lr),
            ("meta_lr", self.baseline.meta_lr),
            ("proposed_gamma_lr", self.proposed_gamma_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::InvalidConfig(format!("smoothing must be non-negative, got {}", self.smoothing)));
        }
        Ok(())
    }
}

/// One method's state after one episode of one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    /// 1-based.
    pub episode: usize,
    pub method: Method,
    /// The quantity whose sign is the verdict (running mean or `gamma`).
    pub score: f64,
    pub sigma_gamma: Option<f64>,
    pub verdict: Direction,
    /// Inner-loop time of this episode only.
    pub elapsed_ns: u64,
}

impl EpisodeRecord {
    pub const CSV_HEADER: &'static str = "seed,episode,method,score,sigma_gamma,verdict,elapsed_ns";

    pub fn csv_row(&self) -> String {
        let sigma = self.sigma_gamma.map(|s| format!("{s}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.seed,
            self.episode,
            self.method,
            self.score,
            sigma,
            self.verdict.label(),
            self.elapsed_ns
        )
    }
}

/// Per-episode aggregate for one method over all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub method: Method,
    /// Fraction of seeds whose verdict is the true direction.
    pub accuracy: Vec<f64>,
    pub mean_sigma: Option<Vec<f64>>,
    /// Mean over seeds of the inner-loop time accumulated up to each episode.
    pub mean_cumulative_ns: Vec<f64>,
}

impl AccuracyCurve {
    /// First 1-based episode from which accuracy stays at or above
    /// `threshold` until the end of the run.
    pub fn episodes_to_reach(&self, threshold: f64) -> Option<usize> {
        let last_below = self.accuracy.iter().rposition(|&a| a < threshold);
        match last_below {
            None => Some(1),
            Some(i) if i + 1 < self.accuracy.len() => Some(i + 2),
            Some(_) => None,
        }
    }

    /// First 1-based episode whose accuracy is at least `threshold`.
    pub fn first_episode_at(&self, threshold: f64) -> Option<usize> {
        self.accuracy.iter().position(|&a| a >= threshold).map(|i| i + 1)
    }

    /// Mean inner-loop seconds spent up to `episode` (1-based).
    pub fn seconds_to(&self, episode: usize) -> f64 {
        self.mean_cumulative_ns[episode - 1] * 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessResult {
    /// Sorted by seed, then episode, then method.
    pub records: Vec<EpisodeRecord>,
    pub curves: Vec<AccuracyCurve>,
}

impl HarnessResult {
    pub fn curve(&self, method: Method) -> Option<&AccuracyCurve> {
        self.curves.iter().find(|c| c.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.records.len() + 1));
        s.push_str(EpisodeRecord::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// [`episode_harness_with`] on random `n_a x n_b` pairs.
pub fn episode_harness(cfg: &HarnessConfig) -> Result<HarnessResult> {
    let (n_a, n_b) = (cfg.n_a, cfg.n_b);
    episode_harness_with(cfg, |rng| make_pair(n_a, n_b, rng))
}

/// Run every seed with pairs from `generate`. Interventions redraw the
/// cause marginal uniformly at random each episode.
pub fn episode_harness_with<G>(cfg: &HarnessConfig, generate: G) -> Result<HarnessResult>
where
    G: Fn(&mut RunRng) -> Result<DistributionPair> + Sync + Send,
{
    cfg.validate()?;
    let per_seed = cfg
        .exec
        .try_map(cfg.seeds, |i| run_seed(cfg, cfg.base_seed.wrapping_add(i as u64), &generate))?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let curves = methods
        .iter()
        .map(|&m| aggregate(m, cfg, &per_seed))
        .collect();
    Ok(HarnessResult {
        records: per_seed.into_iter().flatten().collect(),
        curves,
    })
}

fn aggregate(method: Method, cfg: &HarnessConfig, per_seed: &[Vec<EpisodeRecord>]) -> AccuracyCurve {
    let mut correct = vec![0usize; cfg.episodes];
    let mut sigma = vec![0.0; cfg.episodes];
    let mut cumulative = vec![0.0; cfg.episodes];
    for seed in per_seed {
        let mut acc_ns = 0.0;
        for r in seed.iter().filter(|r| r.method == method) {
            let e = r.episode - 1;
            acc_ns += r.elapsed_ns as f64;
            cumulative[e] += acc_ns;
            if r.verdict == Direction::AToB {
                correct[e] += 1;
            }
            sigma[e] += r.sigma_gamma.unwrap_or(0.0);
        }
    }
    let n = per_seed.len().max(1) as f64;
    AccuracyCurve {
        method,
        accuracy: correct.iter().map(|&c| c as f64 / n).collect(),
        mean_sigma: method.uses_gamma().then(|| sigma.iter().map(|s| s / n).collect()),
        mean_cumulative_ns: cumulative.iter().map(|c| c / n).collect(),
    }
}

struct SeedModels {
    gaps: GapEstimator,
    train_counts: crate::data::CountTable,
    cond_ab: TabularSoftmax,
    cond_ba: TabularSoftmax,
    fact_ab: Factorization,
    fact_ba: Factorization,
}

fn run_seed<G>(cfg: &HarnessConfig, seed: u64, generate: &G) -> Result<Vec<EpisodeRecord>>
where
    G: Fn(&mut RunRng) -> Result<DistributionPair>,
{
    let mut rng = run_rng(seed, 0);
    let pair = generate(&mut rng)?;
    if pair.true_direction != Direction::AToB {
        return Err(Error::InvalidConfig("harness expects A->B ground truth".into()));
    }
    let train = sample(&pair.joint_train(), cfg.train_samples, &mut rng);
    let gaps = GapEstimator::fit(&train, cfg.smoothing)?;
    let mut models = SeedModels {
        train_counts: train.counts(),
        cond_ab: TabularSoftmax::from_conditional(&gaps.model_ab.conditional, Direction::AToB)?,
        cond_ba: TabularSoftmax::from_conditional(&gaps.model_ba.conditional, Direction::BToA)?,
        fact_ab: pretrain(&gaps.model_ab, &train, &cfg.baseline)?,
        fact_ba: pretrain(&gaps.model_ba, &train, &cfg.baseline)?,
        gaps,
    };
    drop(train);

    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut running = vec![0.0; methods.len()];
    let mut gammas: Vec<GammaState> = methods
        .iter()
        .map(|m| {
            GammaState::new(match m {
                Method::BaselineGamma => cfg.baseline.meta_lr,
                _ => cfg.proposed_gamma_lr,
            })
        })
        .collect();

    let mut out = Vec::with_capacity(cfg.episodes * methods.len());
    let mut transfer = Dataset::new(pair.n_a(), pair.n_b());
    for episode in 1..=cfg.episodes {
        let p2 = random_categorical(pair.n_a(), &mut rng)?;
        let joint = pair.with_transfer(p2)?.joint_transfer();
        transfer.clear();
        JointSampler::new(&joint).fill(&mut transfer, cfg.samples_per_episode, &mut rng);

        for (k, &method) in methods.iter().enumerate() {
            let t0 = Instant::now();
            let (score, sigma) = match method {
                Method::ProposedSg => {
                    let s = models.gaps.report(&transfer)?.s_g();
                    running[k] += (s - running[k]) / episode as f64;
                    (running[k], None)
                }
                Method::Sdkl => {
                    let s = score_sdkl_counts(&models.train_counts, &transfer.counts(), cfg.smoothing)?.consistent();
                    running[k] += (s - running[k]) / episode as f64;
                    (running[k], None)
                }
                Method::L2 => {
                    let s = score_l2(&models.cond_ab, &models.cond_ba, &transfer).consistent();
                    running[k] += (s - running[k]) / episode as f64;
                    (running[k], None)
                }
                Method::ProposedGamma => {
                    let r = models.gaps.report(&transfer)?;
                    let n = transfer.len() as f64;
                    gamma_step(&mut gammas[k], -n * r.g_ab, -n * r.g_ba)?;
                    (gammas[k].gamma, Some(gammas[k].sigma()))
                }
                Method::BaselineGamma => {
                    let (ll_ab, ll_ba) = adapt_online(&mut models, &transfer, &cfg.baseline)?;
                    gamma_step(&mut gammas[k], ll_ab, ll_ba)?;
                    (gammas[k].gamma, Some(gammas[k].sigma()))
                }
            };
            let elapsed_ns = t0.elapsed().as_nanos() as u64;
            out.push(EpisodeRecord {
                seed,
                episode,
                method,
                score,
                sigma_gamma: sigma,
                verdict: super::verdict(score),
                elapsed_ns,
            });
        }
    }
    Ok(out)
}

fn pretrain(model: &crate::models::tabular::CountModel, train: &Dataset, cfg: &BaselineConfig) -> Result<Factorization> {
    let mut f = Factorization::from_counts(model)?;
    if cfg.pretrain_steps == 0 {
        return Ok(f);
    }
    let (nc, ne) = train.oriented_dims(model.direction);
    f.marginal = crate::models::tabular::MarginalModule::Tabular(TabularSoftmax::zeros(1, nc, crate::models::tabular::Role::Marginal, model.direction));
    f.conditional = TabularSoftmax::zeros(nc, ne, crate::models::tabular::Role::Conditional, model.direction);
    for _ in 0..cfg.pretrain_steps {
        f.step(train.samples(), cfg.pretrain_lr)?;
    }
    Ok(f)
}

/// Adapt fresh copies of both pretrained factorizations on the transfer
/// stream; each batch is scored before the step that uses it.
fn adapt_online(models: &mut SeedModels, transfer: &Dataset, cfg: &BaselineConfig) -> Result<(f64, f64)> {
    let mut ab = models.fact_ab.clone();
    let mut ba = models.fact_ba.clone();
    let (mut ll_ab, mut ll_ba) = (0.0, 0.0);
    for batch in transfer.samples().chunks(cfg.adapt_batch) {
        ll_ab += ab.log_likelihood_samples(batch);
        ll_ba += ba.log_likelihood_samples(batch);
        ab.step(batch, cfg.adapt_lr)?;
        ba.step(batch, cfg.adapt_lr)?;
    }
    if cfg.persist_modules {
        models.fact_ab = ab;
        models.fact_ba = ba;
    }
    if cfg.mean_likelihood {
        let n = transfer.len() as f64;
        Ok((ll_ab / n, ll_ba / n))
    } else {
        Ok((ll_ab, ll_ba))
    }
}
