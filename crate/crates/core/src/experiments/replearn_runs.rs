//! Multi-seed representation-learning runs of both encoder learners.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::replearn::{baseline_replearn, train_representation, EncoderState, GenProcess, ReplearnConfig, ThetaTrajectory};
use crate::rng::run_rng;

use super::quantile;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplearnRunConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub tolerance: f64,
    pub hold: usize,
    pub run_baseline: bool,
    pub model: ReplearnConfig,
    pub exec: Exec,
}

impl Default for ReplearnRunConfig {
    fn default() -> Self {
        Self {
            seeds: 10,
            base_seed: 0,
            tolerance: 0.05,
            hold: 100,
            run_baseline: true,
            model: ReplearnConfig::default(),
            exec: Exec::Parallel,
        }
    }
}

/// One seed of one learner.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplearnRun {
    pub method: &'static str,
    pub seed: u64,
    pub trajectory: ThetaTrajectory,
    pub converged_at: Option<usize>,
}

impl ReplearnRun {
    /// Iterations to convergence; the full budget when it never converged.
    pub fn iterations_censored(&self) -> f64 {
        self.converged_at.unwrap_or(self.trajectory.points.len()) as f64
    }

    /// Inner-loop seconds to convergence; total inner-loop time otherwise.
    pub fn seconds_censored(&self) -> f64 {
        let it = self.converged_at.unwrap_or(self.trajectory.points.len());
        if it == 0 {
            0.0
        } else {
            self.trajectory.seconds_to(it)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplearnSummary {
    pub proposed: Vec<ReplearnRun>,
    pub baseline: Vec<ReplearnRun>,
}

fn median_of(runs: &[ReplearnRun], f: impl Fn(&ReplearnRun) -> f64) -> f64 {
    quantile(&runs.iter().map(f).collect::<Vec<_>>(), 0.5)
}

impl ReplearnSummary {
    pub fn converged(runs: &[ReplearnRun]) -> usize {
        runs.iter().filter(|r| r.converged_at.is_some()).count()
    }

    pub fn median_iterations(runs: &[ReplearnRun]) -> f64 {
        median_of(runs, ReplearnRun::iterations_censored)
    }

    pub fn median_seconds(runs: &[ReplearnRun]) -> f64 {
        median_of(runs, ReplearnRun::seconds_censored)
    }

    /// `baseline / proposed` median iterations (censored).
    pub fn iteration_ratio(&self) -> f64 {
        Self::median_iterations(&self.baseline) / Self::median_iterations(&self.proposed)
    }

    pub fn time_ratio(&self) -> f64 {
        Self::median_seconds(&self.baseline) / Self::median_seconds(&self.proposed)
    }

    /// `method,seed,converged_at,iterations_censored,seconds_censored,final_theta`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,seed,converged_at,iterations_censored,seconds_censored,final_theta\n");
        for r in self.proposed.iter().chain(&self.baseline) {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method,
                r.seed,
                r.converged_at.map_or(String::from(""), |c| c.to_string()),
                r.iterations_censored(),
                r.seconds_censored(),
                r.trajectory.final_theta().unwrap_or(f64::NAN)
            ));
        }
        s
    }

    /// All trajectories in one long table with `method,seed` prefixed.
    pub fn trajectories_csv(&self) -> String {
        let mut s = format!("method,seed,{}\n", ThetaTrajectory::CSV_HEADER);
        for r in self.proposed.iter().chain(&self.baseline) {
            for line in r.trajectory.to_csv().lines().skip(1) {
                s.push_str(&format!("{},{},{line}\n", r.method, r.seed));
            }
        }
        s
    }
}

fn one_run(cfg: &ReplearnRunConfig, seed: u64, baseline: bool) -> Result<ReplearnRun> {
    let mut rng = run_rng(seed, 0);
    let mut process = GenProcess::new(cfg.model.theta_d, &mut rng);
    let mut state = EncoderState::new(cfg.model.theta_init, &cfg.model, &mut rng)?;
    let trajectory = if baseline {
        baseline_replearn(&mut process, &mut state, &cfg.model, &mut rng)?
    } else {
        train_representation(&mut process, &mut state, &cfg.model, &mut rng)?
    };
    Ok(ReplearnRun {
        method: if baseline { "baseline" } else { "proposed" },
        seed,
        converged_at: trajectory.converged_at(cfg.tolerance, cfg.hold),
        trajectory,
    })
}

/// Both learners on the same per-seed data streams and initial weights.
pub fn run_replearn(cfg: &ReplearnRunConfig) -> Result<ReplearnSummary> {
    cfg.model.validate()?;
    if cfg.seeds == 0 || cfg.hold == 0 {
        return Err(Error::InvalidConfig("replearn needs seeds and hold of at least 1".into()));
    }
    let jobs = if cfg.run_baseline { 2 * cfg.seeds } else { cfg.seeds };
    let runs = cfg.exec.try_map(jobs, |j| {
        let seed = cfg.base_seed.wrapping_add((j % cfg.seeds) as u64);
        one_run(cfg, seed, j >= cfg.seeds)
    })?;
    let (baseline, proposed): (Vec<_>, Vec<_>) = runs.into_iter().partition(|r| r.method == "baseline");
    Ok(ReplearnSummary { proposed, baseline })
}
