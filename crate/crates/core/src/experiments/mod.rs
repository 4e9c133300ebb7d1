//! Scenario runners: discrete and continuous direction curves, the
//! mixture-marginal robustness study, the real-data noise sweep, the
//! population-level edge analysis and representation learning.

mod continuous;
mod edge;
mod plot;
mod realdata;
mod replearn_runs;
mod robustness;

use std::fmt;
use std::str::FromStr;

pub use continuous::{run_continuous, ContinuousConfig, ContinuousResult};
pub use edge::{run_edge_analysis, EdgeRow, EdgeSummary};
pub use plot::{long_csv, svg_plot, Series};
pub use realdata::{
    ingest_pair_file, parse_pair_text, run_realdata, split_train_transfer, PairDataset, RealDataConfig,
    RealDataRecord, RealDataResult, RealModel,
};
pub use replearn_runs::{run_replearn, ReplearnRun, ReplearnRunConfig, ReplearnSummary};
pub use robustness::{run_robustness, RobustnessConfig, RobustnessResult};

use crate::data::Dataset;
use crate::direction::{
    conditional_modules, episode_harness, score_l2, score_sdkl_counts, HarnessConfig, HarnessResult,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::prob::{make_pair, random_categorical, sample, JointSampler};
use crate::rng::run_rng;

/// Registered scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Discrete,
    Continuous,
    AltMetrics,
    Robustness,
    RealData,
    Edge,
    Replearn,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Discrete,
        Scenario::Continuous,
        Scenario::AltMetrics,
        Scenario::Robustness,
        Scenario::RealData,
        Scenario::Edge,
        Scenario::Replearn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Discrete => "discrete",
            Scenario::Continuous => "continuous",
            Scenario::AltMetrics => "alt_metrics",
            Scenario::Robustness => "robustness",
            Scenario::RealData => "realdata",
            Scenario::Edge => "edge",
            Scenario::Replearn => "replearn",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario '{s}'")))
    }
}

/// Counts and output location shared by scenario runners.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub scenario: Scenario,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub seeds: usize,
    pub steps: usize,
    pub base_seed: u64,
    pub output: Option<std::path::PathBuf>,
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("n", self.n), ("m", self.m), ("k", self.k), ("seeds", self.seeds), ("steps", self.steps)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{} {name} must be at least 1", self.scenario)));
            }
        }
        Ok(())
    }
}

/// One scored step of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub seed: u64,
    pub step: usize,
    pub method: String,
    pub score: f64,
    pub correct: bool,
    pub elapsed_ns: u64,
}

impl RunRecord {
    pub const CSV_HEADER: &'static str = "scenario,seed,step,method,score,correct,elapsed_ns";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.scenario, self.seed, self.step, self.method, self.score, self.correct as u8, self.elapsed_ns
        )
    }
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(RunRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Linearly interpolated quantile of unsorted values; NaN when empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `(q25, median, q75)`.
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    (quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75))
}

/// N x N discrete accuracy curves for the gap score, the adaptation-speed
/// baseline and the indicator fed with gaps.
pub fn run_discrete(n: usize, seeds: usize, episodes: usize, base_seed: u64, exec: Exec) -> Result<HarnessResult> {
    let cfg = HarnessConfig {
        seeds,
        episodes,
        base_seed,
        exec,
        ..HarnessConfig::discrete(n)
    };
    episode_harness(&cfg)
}

/// Per-run verdicts of the KL and gradient-norm scores after one transfer
/// set.
#[derive(Debug, Clone, PartialEq)]
pub struct AltMetricsResult {
    pub sdkl_scores: Vec<f64>,
    pub l2_scores: Vec<f64>,
}

impl AltMetricsResult {
    pub fn sdkl_correct(&self) -> usize {
        self.sdkl_scores.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn l2_correct(&self) -> usize {
        self.l2_scores.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,sdkl,l2\n");
        for (i, (a, b)) in self.sdkl_scores.iter().zip(&self.l2_scores).enumerate() {
            s.push_str(&format!("{i},{a},{b}\n"));
        }
        s
    }
}

/// Train on `100 n^2` samples, score one transfer set of `transfer_samples`
/// draws with both alternative metrics (oriented so positive means A -> B).
pub fn run_alt_metrics(
    n: usize,
    seeds: usize,
    transfer_samples: usize,
    smoothing: f64,
    base_seed: u64,
    exec: Exec,
) -> Result<AltMetricsResult> {
    if n == 0 || seeds == 0 || transfer_samples == 0 {
        return Err(Error::InvalidConfig("alt metrics: n, seeds and samples must be positive".into()));
    }
    let per_seed = exec.try_map(seeds, |i| -> Result<(f64, f64)> {
        let mut rng = run_rng(base_seed.wrapping_add(i as u64), 0);
        let pair = make_pair(n, n, &mut rng)?;
        let train = sample(&pair.joint_train(), 100 * n * n, &mut rng);
        let p2 = random_categorical(n, &mut rng)?;
        let joint = pair.with_transfer(p2)?.joint_transfer();
        let mut transfer = Dataset::new(n, n);
        JointSampler::new(&joint).fill(&mut transfer, transfer_samples, &mut rng);
        let sdkl = score_sdkl_counts(&train.counts(), &transfer.counts(), smoothing)?.consistent();
        let (ab, ba) = conditional_modules(&train, smoothing)?;
        let l2 = score_l2(&ab, &ba, &transfer).consistent();
        Ok((sdkl, l2))
    })?;
    let (sdkl_scores, l2_scores) = per_seed.into_iter().unzip();
    Ok(AltMetricsResult { sdkl_scores, l2_scores })
}
