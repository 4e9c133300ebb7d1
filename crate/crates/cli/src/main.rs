mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use causal_gap::direction::Method;
use causal_gap::experiments::{
    ingest_pair_file, long_csv, run_alt_metrics, run_continuous, run_discrete, run_edge_analysis, run_realdata,
    run_replearn, run_robustness, svg_plot, ContinuousConfig, ContinuousResult, RealDataConfig, RealModel,
    ReplearnRunConfig, ReplearnSummary, RobustnessConfig, Series,
};
use causal_gap::replearn::ReplearnConfig;
use causal_gap::Exec;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{load_config, ConfigError, FileConfig, Resolver};

#[derive(Debug, Parser)]
#[command(name = "causal-gap", version, about = "Causal direction from generalization gaps")]
struct Cli {
    /// `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Also write SVG line plots.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Direction accuracy curves (discrete, continuous or alternative metrics).
    Direction(DirectionArgs),
    /// Rotation-encoder training, gap learner against adaptation learner.
    Replearn(ReplearnArgs),
    /// Mixture-marginal adaptation curves.
    Robustness(RobustnessArgs),
    /// Noise sweep on a two-column cause/effect file.
    Realdata(RealdataArgs),
    /// Population-level scatter of scores and entropy changes.
    Edge(EdgeArgs),
    /// Every scenario with its defaults.
    All(AllArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Discrete,
    Continuous,
    AltMetrics,
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

impl std::str::FromStr for Kind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Kind as ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Linear,
    Net,
    Both,
}

impl std::fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

impl std::str::FromStr for ModelChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <ModelChoice as ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Args)]
struct DirectionArgs {
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Transfer samples scored by the alternative metrics.
    #[arg(long)]
    transfer_samples: Option<usize>,
    /// Mechanism noise of the continuous setting.
    #[arg(long)]
    noise_sd: Option<f64>,
}

#[derive(Debug, Args)]
struct ReplearnArgs {
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    #[arg(long)]
    lr_predictor: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Also train the adaptation-speed encoder.
    #[arg(long)]
    run_baseline: Option<bool>,
}

#[derive(Debug, Args)]
struct RobustnessArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    budgets: Option<usize>,
    #[arg(long)]
    adapt_lr: Option<f64>,
}

#[derive(Debug, Args)]
struct RealdataArgs {
    #[arg(long)]
    file: Option<PathBuf>,
    /// Comma-separated noise stdevs.
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
}

#[derive(Debug, Args)]
struct EdgeArgs {
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Args)]
struct AllArgs {
    /// Pair file for the real-data sweep.
    #[arg(long)]
    file: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<causal_gap::Error> for Failure {
    fn from(e: causal_gap::Error) -> Self {
        match e {
            causal_gap::Error::InvalidConfig(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other.into()),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

struct Ctx {
    out: PathBuf,
    seed: u64,
    svg: bool,
    resolver: Resolver,
    timing: Vec<(String, f64)>,
}

impl Ctx {
    fn write(&self, name: &str, content: &str) -> Outcome<()> {
        let path = self.out.join(name);
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn plot(&self, name: &str, title: &str, x: &str, y: &str, series: &[Series]) -> Outcome<()> {
        self.write(&format!("{name}_long.csv"), &long_csv(series))?;
        if self.svg {
            self.write(&format!("{name}.svg"), &svg_plot(title, x, y, series))?;
        }
        Ok(())
    }
}

/// Remove named columns from a CSV whose fields contain no commas.
fn drop_columns(csv: &str, names: &[&str]) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else { return String::new() };
    let keep: Vec<bool> = header.split(',').map(|h| !names.contains(&h)).collect();
    let filter = |line: &str| {
        line.split(',')
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(f, _)| f)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut s = filter(header);
    s.push('\n');
    for line in lines {
        s.push_str(&filter(line));
        s.push('\n');
    }
    s
}

fn run_direction(ctx: &mut Ctx, a: &DirectionArgs) -> Outcome<()> {
    let r = &mut ctx.resolver;
    let kind = r.get("kind", a.kind, Kind::Discrete)?;
    let seeds = r.get("seeds", a.seeds, 100usize)?;
    match kind {
        Kind::Discrete => {
            let n = r.get("n", a.n, 10usize)?;
            let episodes = r.get("episodes", a.episodes, 50usize)?;
            let res = run_discrete(n, seeds, episodes, ctx.seed, Exec::Parallel)?;
            ctx.write("direction_records.csv", &drop_columns(&res.to_csv(), &["elapsed_ns"]))?;
            let mut curves = String::from("episode,method,accuracy,mean_sigma\n");
            let mut series = Vec::new();
            for c in &res.curves {
                for (e, acc) in c.accuracy.iter().enumerate() {
                    let sigma = c.mean_sigma.as_ref().map(|s| s[e].to_string()).unwrap_or_default();
                    curves.push_str(&format!("{},{},{acc},{sigma}\n", e + 1, c.method));
                }
                series.push(Series::indexed(c.method.name(), c.accuracy.clone()));
                if let Some(s) = &c.mean_sigma {
                    series.push(Series::indexed(format!("{}_sigma", c.method), s.clone()));
                }
                ctx.timing
                    .push((format!("direction/{}", c.method), c.seconds_to(c.accuracy.len())));
            }
            ctx.write("direction_curves.csv", &curves)?;
            ctx.plot("direction", &format!("Discrete N={n}"), "episode", "accuracy", &series)?;
            for m in [Method::ProposedSg, Method::BaselineGamma] {
                if let Some(c) = res.curve(m) {
                    let hit = c.first_episode_at(1.0).map_or("never".to_string(), |e| e.to_string());
                    eprintln!("{m}: first episode at 100% = {hit}");
                }
            }
        }
        Kind::Continuous => {
            let episodes = r.get("episodes", a.episodes, 50usize)?;
            let defaults = ContinuousConfig::default();
            let cfg = ContinuousConfig {
                seeds,
                episodes,
                base_seed: ctx.seed,
                noise_sd: r.get("noise_sd", a.noise_sd, defaults.noise_sd)?,
                ..defaults
            };
            let res = run_continuous(&cfg)?;
            ctx.write("continuous_curves.csv", &res.to_csv())?;
            let series = [
                Series::indexed("proposed", res.proposed.clone()),
                Series::indexed("baseline", res.baseline.clone()),
                Series::indexed("baseline_sigma", res.baseline_sigma.clone()),
            ];
            ctx.plot("continuous", "Continuous", "episode", "accuracy", &series)?;
            let p = ContinuousResult::first_at(&res.proposed, 0.9);
            let b = ContinuousResult::first_at(&res.baseline, 0.9);
            eprintln!("first episode at 90%: proposed {p:?}, baseline {b:?}");
        }
        Kind::AltMetrics => {
            let n = r.get("n", a.n, 10usize)?;
            let samples = r.get("transfer_samples", a.transfer_samples, 50usize)?;
            let res = run_alt_metrics(n, seeds, samples, causal_gap::models::DEFAULT_SMOOTHING, ctx.seed, Exec::Parallel)?;
            ctx.write("alt_metrics.csv", &res.to_csv())?;
            eprintln!("correct: sdkl {}/{seeds}, l2 {}/{seeds}", res.sdkl_correct(), res.l2_correct());
        }
    }
    Ok(())
}

fn replearn_config(r: &mut Resolver, a: Option<&ReplearnArgs>, seed: u64) -> Result<ReplearnRunConfig, ConfigError> {
    let d = ReplearnRunConfig::default();
    let m = ReplearnConfig::default();
    Ok(ReplearnRunConfig {
        seeds: r.get("seeds", a.and_then(|a| a.seeds), d.seeds)?,
        base_seed: seed,
        run_baseline: r.get("run_baseline", a.and_then(|a| a.run_baseline), d.run_baseline)?,
        model: ReplearnConfig {
            iterations: r.get("iterations", a.and_then(|a| a.iterations), m.iterations)?,
            lr_encoder: r.get("lr_encoder", a.and_then(|a| a.lr_encoder), m.lr_encoder)?,
            lr_predictor: r.get("lr_predictor", a.and_then(|a| a.lr_predictor), m.lr_predictor)?,
            lambda: r.get("lambda", a.and_then(|a| a.lambda), m.lambda)?,
            ..m
        },
        ..d
    })
}

fn run_replearn_cmd(ctx: &mut Ctx, cfg: &ReplearnRunConfig) -> Outcome<()> {
    let res = run_replearn(cfg)?;
    ctx.write("replearn_runs.csv", &drop_columns(&res.summary_csv(), &["seconds_censored"]))?;
    ctx.write("replearn_trajectories.csv", &drop_columns(&res.trajectories_csv(), &["elapsed_s"]))?;
    let series: Vec<Series> = res
        .proposed
        .iter()
        .chain(&res.baseline)
        .map(|run| {
            let (x, y) = run.trajectory.points.iter().map(|p| (p.iteration as f64, p.theta_e)).unzip();
            Series::new(format!("{}_{}", run.method, run.seed), x, y)
        })
        .collect();
    ctx.plot("replearn", "Encoder angle", "iteration", "theta_e", &series)?;
    ctx.timing.push(("replearn/proposed_median".into(), ReplearnSummary::median_seconds(&res.proposed)));
    eprintln!(
        "proposed converged {}/{} (median iterations {})",
        ReplearnSummary::converged(&res.proposed),
        res.proposed.len(),
        ReplearnSummary::median_iterations(&res.proposed)
    );
    if !res.baseline.is_empty() {
        ctx.timing.push(("replearn/baseline_median".into(), ReplearnSummary::median_seconds(&res.baseline)));
        eprintln!(
            "baseline converged {}/{} (median iterations {})",
            ReplearnSummary::converged(&res.baseline),
            res.baseline.len(),
            ReplearnSummary::median_iterations(&res.baseline)
        );
    }
    Ok(())
}

fn robustness_config(r: &mut Resolver, a: Option<&RobustnessArgs>, seed: u64) -> Result<RobustnessConfig, ConfigError> {
    let d = RobustnessConfig::default();
    Ok(RobustnessConfig {
        n: r.get("n", a.and_then(|a| a.n), d.n)?,
        m: r.get("m", a.and_then(|a| a.m), d.m)?,
        components: r.get("components", a.and_then(|a| a.components), d.components)?,
        seeds: r.get("seeds", a.and_then(|a| a.seeds), d.seeds)?,
        budgets: r.get("budgets", a.and_then(|a| a.budgets), d.budgets)?,
        adapt_lr: r.get("adapt_lr", a.and_then(|a| a.adapt_lr), d.adapt_lr)?,
        base_seed: seed,
        ..d
    })
}

fn run_robustness_cmd(ctx: &mut Ctx, cfg: &RobustnessConfig) -> Outcome<()> {
    let res = run_robustness(cfg)?;
    ctx.write("robustness_runs.csv", &res.to_csv())?;
    ctx.plot("robustness", "Mixture marginal", "transfer samples", "median", &res.plot_series())?;
    Ok(())
}

fn realdata_config(
    r: &mut Resolver,
    a: Option<&RealdataArgs>,
    all_file: Option<&PathBuf>,
    seed: u64,
) -> Result<(PathBuf, RealDataConfig), ConfigError> {
    let d = RealDataConfig::default();
    let flag_file = a.and_then(|a| a.file.clone()).or_else(|| all_file.cloned());
    let file: String = r.get(
        "file",
        flag_file.map(|p| p.display().to_string()),
        "data/altitude_temperature.txt".to_string(),
    )?;
    let models = match r.get("model", a.and_then(|a| a.model), ModelChoice::Linear)? {
        ModelChoice::Linear => vec![RealModel::Linear],
        ModelChoice::Net => vec![RealModel::Net],
        ModelChoice::Both => vec![RealModel::Linear, RealModel::Net],
    };
    Ok((
        PathBuf::from(file),
        RealDataConfig {
            seeds: r.get("seeds", a.and_then(|a| a.seeds), d.seeds)?,
            noise_levels: r.get_list("noise", a.and_then(|a| a.noise.clone()), d.noise_levels.clone())?,
            models,
            base_seed: seed,
            ..d
        },
    ))
}

fn run_realdata_cmd(ctx: &mut Ctx, file: &Path, cfg: &RealDataConfig) -> Outcome<()> {
    let data = ingest_pair_file(file).map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", file.display())))?;
    let res = run_realdata(&data, cfg)?;
    ctx.write("realdata_runs.csv", &res.to_csv())?;
    let summary = res.summary_csv();
    ctx.write("realdata_summary.csv", &summary)?;
    eprint!("{summary}");
    Ok(())
}

fn run_edge_cmd(ctx: &mut Ctx, a: Option<&EdgeArgs>) -> Outcome<()> {
    let r = &mut ctx.resolver;
    let instances = r.get("instances", a.and_then(|a| a.instances), 10_000usize)?;
    let dim = r.get("dim", a.and_then(|a| a.dim), 2usize)?;
    let s = run_edge_analysis(instances, dim, ctx.seed, Exec::Parallel)?;
    ctx.write("edge.csv", &s.to_csv())?;
    let summary = format!(
        "key,value\ninstances,{instances}\nnegative,{}\nnegative_with_nonneg_dh_a,{}\npositive_p90,{}\nlarge_negative,{}\nmax_identity_residual,{}\n",
        s.negative, s.negative_with_nonneg_dh_a, s.positive_p90, s.large_negative, s.max_identity_residual
    );
    ctx.write("edge_summary.csv", &summary)?;
    if ctx.svg {
        let x: Vec<f64> = s.rows.iter().map(|r| r.dh_a).collect();
        let y: Vec<f64> = s.rows.iter().map(|r| r.s_g).collect();
        ctx.write("edge.svg", &svg_plot("S_G against dH(A)", "dH(A)", "S_G", &[Series::new("instances", x, y)]))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome<()> {
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let mut resolver = Resolver::new(file);
    let default_workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = resolver.get("workers", cli.workers, default_workers)?;
    if workers == 0 {
        return Err(Failure::Usage("workers must be at least 1".into()));
    }
    let out: String = resolver.get("out", cli.out.map(|p| p.display().to_string()), "out".to_string())?;
    let seed = resolver.get("seed", cli.seed, 0u64)?;
    let svg = resolver.get("svg", cli.svg.then_some(true), false)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .context("starting worker pool")?;
    let out = PathBuf::from(out);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut ctx = Ctx { out, seed, svg, resolver, timing: Vec::new() };

    let name = match &cli.command {
        Command::Direction(a) => {
            run_direction(&mut ctx, a)?;
            "direction"
        }
        Command::Replearn(a) => {
            let cfg = replearn_config(&mut ctx.resolver, Some(a), seed)?;
            run_replearn_cmd(&mut ctx, &cfg)?;
            "replearn"
        }
        Command::Robustness(a) => {
            let cfg = robustness_config(&mut ctx.resolver, Some(a), seed)?;
            run_robustness_cmd(&mut ctx, &cfg)?;
            "robustness"
        }
        Command::Realdata(a) => {
            let (file, cfg) = realdata_config(&mut ctx.resolver, Some(a), None, seed)?;
            run_realdata_cmd(&mut ctx, &file, &cfg)?;
            "realdata"
        }
        Command::Edge(a) => {
            run_edge_cmd(&mut ctx, Some(a))?;
            "edge"
        }
        Command::All(a) => {
            // Scenario defaults apply; only global keys and the file are shared.
            ctx.resolver.set_scope(Some("realdata"));
            let (file, rd) = realdata_config(&mut ctx.resolver, None, a.file.as_ref(), seed)?;
            if !file.exists() {
                return Err(Failure::Runtime(anyhow::anyhow!("pair file not found: {}", file.display())));
            }
            let d = DirectionArgs { kind: None, n: None, seeds: None, episodes: None, transfer_samples: None, noise_sd: None };
            for kind in [Kind::Discrete, Kind::Continuous, Kind::AltMetrics] {
                ctx.resolver.set_scope(Some(&kind.to_string()));
                run_direction(&mut ctx, &DirectionArgs { kind: Some(kind), ..d })?;
            }
            ctx.resolver.set_scope(Some("replearn"));
            let cfg = replearn_config(&mut ctx.resolver, None, seed)?;
            run_replearn_cmd(&mut ctx, &cfg)?;
            ctx.resolver.set_scope(Some("robustness"));
            let cfg = robustness_config(&mut ctx.resolver, None, seed)?;
            run_robustness_cmd(&mut ctx, &cfg)?;
            run_realdata_cmd(&mut ctx, &file, &rd)?;
            ctx.resolver.set_scope(Some("edge"));
            run_edge_cmd(&mut ctx, None)?;
            ctx.resolver.set_scope(None);
            "all"
        }
    };
    ctx.write("manifest.txt", &ctx.resolver.manifest(name))?;
    if !ctx.timing.is_empty() {
        let mut t = String::from("key,seconds\n");
        for (k, v) in &ctx.timing {
            t.push_str(&format!("{k},{v}\n"));
        }
        ctx.write("timing.csv", &t)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
