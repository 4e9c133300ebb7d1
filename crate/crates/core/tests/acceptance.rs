//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Built with `harness = false`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use causal_gap::data::{Dataset, SamplePair};
use causal_gap::direction::{population_gaps, score_sdkl_population, HarnessConfig, Method};
use causal_gap::experiments::{
    ingest_pair_file, run_alt_metrics, run_edge_analysis, run_realdata, run_replearn, run_robustness, RealDataConfig,
    RealModel, ReplearnRunConfig, ReplearnSummary, RobustnessConfig, RobustnessResult,
};
use causal_gap::models::{MixtureMarginal, Role, TabularSoftmax, TwoLayerNet, DEFAULT_SMOOTHING};
use causal_gap::prob::{entropy_deltas, make_pair, pair_conditional_kls, Direction, DistributionPair};
use causal_gap::replearn::{branch_loss_and_dtheta, Branch, EncoderState, Predictor, ReplearnConfig};
use causal_gap::rng::run_rng;
use causal_gap::Exec;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn c1() -> Outcome {
    let t = Instant::now();
    let s_g = population_gaps(&DistributionPair::counterexample()).unwrap().s_g();
    let el = t.elapsed();
    let ok = (s_g + 0.086).abs() <= 1e-3 && within(el, Duration::from_millis(1));
    outcome(ok, format!("S_G = {s_g:.6}, runtime {el:?}"))
}

fn random_pairs(count: usize, seed: u64) -> Vec<DistributionPair> {
    let mut rng = run_rng(seed, 0);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=6);
            let m = rng.random_range(2..=6);
            make_pair(n, m, &mut rng).unwrap()
        })
        .collect()
}

fn c2() -> Outcome {
    let pairs = random_pairs(1000, 2);
    let t = Instant::now();
    let (mut worst_true, mut min_false) = (0.0f64, f64::INFINITY);
    for p in &pairs {
        let (d_ab, d_ba) = pair_conditional_kls(p).unwrap();
        worst_true = worst_true.max(d_ab.abs());
        min_false = min_false.min(d_ba);
    }
    let el = t.elapsed();
    let ok = worst_true <= 1e-12 && min_false >= 0.0 && within(el, Duration::from_secs(1));
    outcome(ok, format!("max |D_true| = {worst_true:.2e}, min D_false = {min_false:.2e}, runtime {el:?}"))
}

fn c3() -> Outcome {
    let pairs = random_pairs(1000, 3);
    let t = Instant::now();
    let mut worst = 0.0f64;
    for p in &pairs {
        let s_g = population_gaps(p).unwrap().s_g();
        let s_dkl = score_sdkl_population(p).unwrap().consistent();
        let dh = entropy_deltas(p);
        worst = worst.max((s_g - (s_dkl - (dh.dh_b - dh.dh_a))).abs());
    }
    let el = t.elapsed();
    let ok = worst <= 1e-10 && within(el, Duration::from_secs(1));
    outcome(ok, format!("max residual {worst:.2e}, runtime {el:?}"))
}

fn c4() -> Outcome {
    let t = Instant::now();
    let cfg = HarnessConfig {
        methods: vec![Method::ProposedSg, Method::BaselineGamma],
        ..HarnessConfig::discrete(10)
    };
    let r = causal_gap::direction::episode_harness(&cfg).unwrap();
    let el = t.elapsed();
    let p = r.curve(Method::ProposedSg).unwrap();
    let b = r.curve(Method::BaselineGamma).unwrap();
    let (Some(pe), Some(be)) = (p.first_episode_at(1.0), b.first_episode_at(1.0)) else {
        return outcome(false, format!("proposed {:?}, baseline {:?}", p.first_episode_at(1.0), b.first_episode_at(1.0)));
    };
    let episode_ratio = be as f64 / pe as f64;
    let time_ratio = b.seconds_to(be) / p.seconds_to(pe);
    let early_low = b.accuracy.iter().take(10).any(|&a| a < 0.5);
    let ok = pe <= 5 && episode_ratio >= 4.0 && time_ratio >= 5.0 && early_low && within(el, Duration::from_secs(120));
    outcome(
        ok,
        format!(
            "proposed 100% at episode {pe}, baseline at {be} (samples {episode_ratio:.1}x, time {time_ratio:.1}x), baseline early min {:.2}, runtime {el:.1?}",
            b.accuracy.iter().take(10).cloned().fold(1.0, f64::min)
        ),
    )
}

fn c5() -> Outcome {
    let t = Instant::now();
    let cfg = HarnessConfig {
        methods: vec![Method::ProposedSg, Method::BaselineGamma],
        ..HarnessConfig::discrete(100)
    };
    let r = causal_gap::direction::episode_harness(&cfg).unwrap();
    let el = t.elapsed();
    let p = &r.curve(Method::ProposedSg).unwrap().accuracy;
    let b = &r.curve(Method::BaselineGamma).unwrap().accuracy;
    let violations = p.iter().zip(b).filter(|(p, b)| p < b).count();
    let ok = violations == 0 && within(el, Duration::from_secs(600));
    outcome(
        ok,
        format!(
            "episodes with proposed < baseline: {violations}/{}; proposed final {:.2}, baseline final {:.2}, runtime {el:.1?}",
            p.len(),
            p.last().unwrap(),
            b.last().unwrap()
        ),
    )
}

fn c6() -> Outcome {
    let t = Instant::now();
    let s = run_replearn(&ReplearnRunConfig::default()).unwrap();
    let el = t.elapsed();
    let conv = ReplearnSummary::converged(&s.proposed);
    let (ir, tr) = (s.iteration_ratio(), s.time_ratio());
    let ok = conv >= 9 && ir >= 1.5 && tr >= 2.0 && within(el, Duration::from_secs(900));
    outcome(
        ok,
        format!(
            "proposed converged {conv}/10 (median {} it), baseline {}/10 (median {} it, censored); iterations {ir:.2}x, time {tr:.2}x, runtime {el:.1?}",
            ReplearnSummary::median_iterations(&s.proposed),
            ReplearnSummary::converged(&s.baseline),
            ReplearnSummary::median_iterations(&s.baseline)
        ),
    )
}

fn c7() -> Outcome {
    let t = Instant::now();
    let r = run_robustness(&RobustnessConfig::default()).unwrap();
    let el = t.elapsed();
    let j = r.budgets() - 1;
    let (_, ab, _) = RobustnessResult::quartiles_at(&r.improvement_ab, j);
    let (_, ba, _) = RobustnessResult::quartiles_at(&r.improvement_ba, j);
    let (q25, med, _) = RobustnessResult::quartiles_at(&r.s_g, j);
    let ok = ab < ba && med > 0.0 && q25 > 0.0 && within(el, Duration::from_secs(1200));
    outcome(
        ok,
        format!("median improvement correct {ab:.4} vs incorrect {ba:.4}; S_G median {med:.4}, q25 {q25:.4}; runtime {el:.1?}"),
    )
}

fn c8() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/altitude_temperature.txt");
    let data = match ingest_pair_file(&path) {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("{}: {e}", path.display())),
    };
    let t = Instant::now();
    let lin = run_realdata(&data, &RealDataConfig::default()).unwrap();
    let net = run_realdata(
        &data,
        &RealDataConfig { models: vec![RealModel::Net], noise_levels: vec![0.0], ..RealDataConfig::default() },
    )
    .unwrap();
    let el = t.elapsed();
    let rate = |noise: f64| lin.success_rate(RealModel::Linear, noise).unwrap();
    let bands = [(0.0, 1.0, 1.0), (1.0, 0.94, 1.0), (5.0, 0.55, 0.75), (10.0, 0.48, 0.62), (50.0, 0.44, 0.56)];
    let mut ok = within(el, Duration::from_secs(600));
    let mut parts = Vec::new();
    for (noise, lo, hi) in bands {
        let r = rate(noise);
        let inside = r >= lo && r <= hi;
        ok &= inside;
        parts.push(format!("sigma {noise}: {:.1}%{}", 100.0 * r, if inside { "" } else { " (out of band)" }));
    }
    let net0 = net.success_rate(RealModel::Net, 0.0).unwrap();
    ok &= net0 == 1.0;
    outcome(ok, format!("linear {}; net sigma 0: {:.1}%; runtime {el:.1?}", parts.join(", "), 100.0 * net0))
}

fn c9() -> Outcome {
    let t = Instant::now();
    let s = run_edge_analysis(10_000, 2, 0, Exec::Parallel).unwrap();
    let el = t.elapsed();
    let ok = s.negative_with_nonneg_dh_a == 0 && s.large_negative == 0 && within(el, Duration::from_secs(10));
    outcome(
        ok,
        format!(
            "S_G<0 with dH(A)>=0: {} of {} negative; negative with |S_G| >= p90 of positives ({:.4}): {}; runtime {el:.1?}",
            s.negative_with_nonneg_dh_a, s.negative, s.positive_p90, s.large_negative
        ),
    )
}

fn c10() -> Outcome {
    let t = Instant::now();
    let r = run_alt_metrics(10, 100, 50, DEFAULT_SMOOTHING, 0, Exec::Parallel).unwrap();
    let el = t.elapsed();
    let (sd, l2) = (r.sdkl_correct(), r.l2_correct());
    let ok = sd >= 95 && l2 >= 90 && within(el, Duration::from_secs(120));
    outcome(ok, format!("S_DKL correct {sd}/100, gradient norm correct {l2}/100, runtime {el:.1?}"))
}

fn central<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn c11() -> Outcome {
    let t = Instant::now();
    let h = 1e-5;
    let mut worst = [0.0f64; 5];
    for seed in 0..20u64 {
        let mut rng = run_rng(seed, 11);

        let (rows, cols) = (rng.random_range(2..5), rng.random_range(2..5));
        let logits: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tab = TabularSoftmax::from_logits(rows, cols, logits.clone(), Role::Conditional, Direction::AToB).unwrap();
        let pairs: Vec<(usize, usize)> = (0..12).map(|_| (rng.random_range(0..rows), rng.random_range(0..cols))).collect();
        let data = Dataset::from_pairs(rows, cols, &pairs).unwrap();
        let samples: Vec<SamplePair> = data.samples().to_vec();
        let num = central(&logits, h, |p| {
            let mut m = tab.clone();
            m.set_logits(p);
            m.nll(&data).unwrap()
        });
        worst[0] = worst[0].max(max_rel(&tab.nll_gradient(&samples), &num));

        let (k, n) = (rng.random_range(1..5), rng.random_range(2..5));
        let theta: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix = MixtureMarginal::new(theta, phi, n).unwrap();
        let values: Vec<usize> = (0..10).map(|_| rng.random_range(0..n)).collect();
        let (gt, gp) = mix.log_likelihood_gradient(&values);
        let num = central(&mix.params(), h, |p| {
            let mut m = mix.clone();
            m.set_params(p);
            m.log_likelihood_sum(&values) / values.len() as f64
        });
        worst[1] = worst[1].max(max_rel(&[gt, gp].concat(), &num));

        let net = TwoLayerNet::new(1, 6, 1, &mut rng).unwrap();
        let xs: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let num = central(&net.params(), h, |p| {
            let mut m = net.clone();
            m.set_params(p);
            m.mse(&xs, &ys)
        });
        worst[2] = worst[2].max(max_rel(&net.mse_gradient(&xs, &ys).flat(), &num));

        let mut pred = Predictor::new(6, &mut rng).unwrap();
        pred.log_variance = rng.random_range(-1.0..1.0);
        let num = central(&pred.params(), h, |p| {
            let mut m = pred.clone();
            m.set_params(p);
            m.loss(&xs, &ys)
        });
        worst[3] = worst[3].max(max_rel(&pred.eval(&xs, &ys).grad, &num));

        let state = EncoderState::new(0.0, &ReplearnConfig::default(), &mut rng).unwrap();
        let batch: Vec<(f64, f64)> = xs.iter().zip(&ys).map(|(&x, &y)| (x, y)).collect();
        let theta = rng.random_range(-3.0..3.0);
        for branch in [Branch::UV, Branch::VU] {
            let (_, d) = branch_loss_and_dtheta(&state, branch, theta, &batch);
            let num = central(&[theta], h, |p| branch_loss_and_dtheta(&state, branch, p[0], &batch).0);
            worst[4] = worst[4].max(max_rel(&[d], &num));
        }
    }
    let el = t.elapsed();
    let ok = worst.iter().all(|&w| w <= 1e-4) && within(el, Duration::from_secs(30));
    outcome(
        ok,
        format!(
            "max relative error: tabular {:.1e}, mixture {:.1e}, net {:.1e}, predictor {:.1e}, encoder angle {:.1e}; runtime {el:.1?}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("counterexample exactness", c1),
        ("true-direction conditional KL is zero", c2),
        ("gap / KL / entropy identity", c3),
        ("discrete N=10 curves", c4),
        ("discrete N=100 dominance", c5),
        ("representation learning", c6),
        ("mixture-marginal robustness", c7),
        ("real-data noise sweep", c8),
        ("edge analysis", c9),
        ("alternative metrics", c10),
        ("gradient checks", c11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let o = f();
        println!("{} criterion {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
