//! Rotation encoder that disentangles two causal variables.
//!
//! Observations are `(X, Y) = R(theta_d) (A, B)`; the encoder produces
//! `(U, V) = R(theta_e) (X, Y)`. Two predictors model `V | U` and `U | V` on
//! train data, and the encoder angle is moved to shrink the smaller of the two
//! generalization gaps measured on transfer data. The angle is recovered when
//! `theta_e = +-theta_d` (modulo `2 pi`).

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::direction::{gamma_step, GammaState};
use crate::error::{Error, Result};
use crate::models::net::TwoLayerNet;
use crate::models::ensure_finite;
use crate::rng::RunRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Predictor variance is `exp(log_variance) + VARIANCE_FLOOR`.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// `|theta_e|` beyond this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 10.0 * PI;

/// 2-D rotation by `theta` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub theta: f64,
}

impl Rotation {
    pub fn new(theta: f64) -> Self {
        Self { theta }
    }

    /// Row-major `[[c, -s], [s, c]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        [[c, -s], [s, c]]
    }

    #[inline]
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        rotate(self.theta, p)
    }
}

#[inline]
pub fn rotate(theta: f64, (x, y): (f64, f64)) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Smallest angular distance from `theta_e` to `{-theta_d, +theta_d}`
/// modulo `2 pi`.
pub fn theta_error(theta_e: f64, theta_d: f64) -> f64 {
    let wrap = |d: f64| {
        let r = d.rem_euclid(2.0 * PI);
        r.min(2.0 * PI - r)
    };
    wrap(theta_e + theta_d).min(wrap(theta_e - theta_d))
}

/// `B = linear * A + scale * tanh(slope * A + offset) + N(0, noise_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mechanism {
    pub linear: f64,
    pub scale: f64,
    pub slope: f64,
    pub offset: f64,
    pub noise_sd: f64,
}

impl Mechanism {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            linear: 0.0,
            scale: rng.random_range(0.7..0.9),
            slope: rng.random_range(0.5..1.5),
            offset: rng.random_range(-0.5..0.5),
            noise_sd: 0.1,
        }
    }

    #[inline]
    pub fn mean(&self, a: f64) -> f64 {
        self.linear * a + self.scale * (self.slope * a + self.offset).tanh()
    }
}

/// Gaussian law of the cause.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauseLaw {
    pub mean: f64,
    pub sd: f64,
}

impl CauseLaw {
    /// Intervention: mean `U(-2, 2)`, stdev `U(0.5, 2)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            mean: rng.random_range(-2.0..2.0),
            sd: rng.random_range(0.5..2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Transfer,
}

/// Data-generating process shared by train and transfer draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GenProcess {
    pub theta_d: f64,
    pub train_cause: CauseLaw,
    pub transfer_cause: CauseLaw,
    pub mechanism: Mechanism,
}

impl GenProcess {
    /// Random mechanism, train cause `N(0, 2^2)`, random first intervention.
    pub fn new<R: Rng + ?Sized>(theta_d: f64, rng: &mut R) -> Self {
        let mechanism = Mechanism::random(rng);
        Self {
            theta_d,
            train_cause: CauseLaw { mean: 0.0, sd: 2.0 },
            transfer_cause: CauseLaw::random(rng),
            mechanism,
        }
    }

    pub fn redraw_transfer<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.transfer_cause = CauseLaw::random(rng);
    }

    /// Latent `(A, B)` pairs.
    pub fn latent_batch<R: Rng + ?Sized>(&self, which: Split, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        let law = match which {
            Split::Train => self.train_cause,
            Split::Transfer => self.transfer_cause,
        };
        let cause = Normal::new(law.mean, law.sd).expect("positive stdev");
        let noise = Normal::new(0.0, self.mechanism.noise_sd).expect("non-negative stdev");
        (0..n)
            .map(|_| {
                let a = cause.sample(rng);
                (a, self.mechanism.mean(a) + noise.sample(rng))
            })
            .collect()
    }

    /// Observed `(X, Y)` pairs.
    pub fn gen_batch<R: Rng + ?Sized>(&self, which: Split, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        self.latent_batch(which, n, rng)
            .into_iter()
            .map(|p| rotate(self.theta_d, p))
            .collect()
    }
}

/// Gaussian conditional `y ~ N(net(x), exp(log_variance) + floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub net: TwoLayerNet,
    pub log_variance: f64,
}

/// Average loss of a predictor on a batch plus its gradients.
#[derive(Debug, Clone)]
pub struct PredictorEval {
    pub loss: f64,
    /// Parameter gradient of the net followed by `d/d log_variance`.
    pub grad: Vec<f64>,
    /// `d loss_i / d x_i` and `d loss_i / d y_i` for each sample, already
    /// divided by the batch size.
    pub d_x: Vec<f64>,
    pub d_y: Vec<f64>,
}

impl Predictor {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: TwoLayerNet::new(1, hidden, 1, rng)?,
            log_variance: 0.0,
        })
    }

    #[inline]
    pub fn variance(&self) -> f64 {
        self.log_variance.exp() + VARIANCE_FLOOR
    }

    pub fn loss(&self, xs: &[f64], ys: &[f64]) -> f64 {
        let v = self.variance();
        let n = xs.len().max(1) as f64;
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - self.net.predict1(x);
                0.5 * (LN_2PI + v.ln()) + 0.5 * r * r / v
            })
            .sum::<f64>()
            / n
    }

    pub fn eval(&self, xs: &[f64], ys: &[f64]) -> PredictorEval {
        let v = self.variance();
        let ev = self.log_variance.exp();
        let n = xs.len().max(1) as f64;
        let mut grads = self.net.zero_grads();
        let mut d_lv = 0.0;
        let mut loss = 0.0;
        let mut d_x = Vec::with_capacity(xs.len());
        let mut d_y = Vec::with_capacity(xs.len());
        for (&x, &y) in xs.iter().zip(ys) {
            let f = self.net.forward(&[x]);
            let r = y - f.out[0];
            loss += 0.5 * (LN_2PI + v.ln()) + 0.5 * r * r / v;
            // d/d out = -r / v
            let dx = self.net.backward(&[x], &f, &[-r / (v * n)], &mut grads);
            d_x.push(dx[0]);
            d_y.push(r / (v * n));
            d_lv += (0.5 / v - 0.5 * r * r / (v * v)) * ev;
        }
        let mut grad = grads.flat();
        grad.push(d_lv / n);
        PredictorEval {
            loss: loss / n,
            grad,
            d_x,
            d_y,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.net.params();
        p.push(self.log_variance);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (net, lv) = p.split_at(p.len() - 1);
        self.net.set_params(net);
        self.log_variance = lv[0];
    }

    fn descend(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        ensure_finite(grad, "predictor gradient")?;
        let p: Vec<f64> = self.params().iter().zip(grad).map(|(p, g)| p - lr * g).collect();
        self.set_params(&p);
        Ok(())
    }

    /// Plain step with the net part of `grad` multiplied by the variance,
    /// i.e. a squared-error step on the mean and a likelihood step on the
    /// log-variance.
    fn descend_scaled(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        ensure_finite(grad, "predictor gradient")?;
        let v = self.variance();
        let last = grad.len() - 1;
        let p: Vec<f64> = self
            .params()
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (p, g))| if i == last { p - lr * g } else { p - lr * v * g })
            .collect();
        self.set_params(&p);
        Ok(())
    }
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    /// Bias-corrected update direction for `grad`.
    pub fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        if self.m.len() != grad.len() {
            *self = Self { m: vec![0.0; grad.len()], v: vec![0.0; grad.len()], t: 0 };
        }
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS)
            })
            .collect()
    }
}

/// Encoder angle, predictors and step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub theta_e: f64,
    pub predictor_uv: Predictor,
    pub predictor_vu: Predictor,
    pub lambda: f64,
    pub lr_encoder: f64,
    pub lr_predictor: f64,
    pub adam_uv: Adam,
    pub adam_vu: Adam,
    pub adam_theta: Adam,
}

impl EncoderState {
    pub fn new<R: Rng + ?Sized>(theta_e: f64, cfg: &ReplearnConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            theta_e,
            predictor_uv: Predictor::new(cfg.hidden, rng)?,
            predictor_vu: Predictor::new(cfg.hidden, rng)?,
            lambda: cfg.lambda,
            lr_encoder: cfg.lr_encoder,
            lr_predictor: cfg.lr_predictor,
            adam_uv: Adam::default(),
            adam_vu: Adam::default(),
            adam_theta: Adam::default(),
        })
    }
}

/// Encoded columns `(U, V)` of a batch.
pub fn encode(theta_e: f64, batch: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    batch.iter().map(|&p| rotate(theta_e, p)).unzip()
}

/// Which conditional a loss or gap belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `V | U`
    UV,
    /// `U | V`
    VU,
}

/// Loss of one branch at angle `theta` and its derivative in `theta`.
///
/// With `U' = -V` and `V' = U`, the chain rule gives
/// `dL/dtheta = sum_i dL/dU_i * (-V_i) + dL/dV_i * U_i`.
pub fn branch_loss_and_dtheta(state: &EncoderState, branch: Branch, theta: f64, batch: &[(f64, f64)]) -> (f64, f64) {
    let (u, v) = encode(theta, batch);
    let (pred, xs, ys) = match branch {
        Branch::UV => (&state.predictor_uv, &u, &v),
        Branch::VU => (&state.predictor_vu, &v, &u),
    };
    let e = pred.eval(xs, ys);
    let (d_u, d_v) = match branch {
        Branch::UV => (&e.d_x, &e.d_y),
        Branch::VU => (&e.d_y, &e.d_x),
    };
    let d: f64 = (0..u.len()).map(|i| -d_u[i] * v[i] + d_v[i] * u[i]).sum();
    (e.loss, d)
}

/// Losses before the step, per branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorLosses {
    pub loss_uv: f64,
    pub loss_vu: f64,
}

/// One Adam step of both predictors on the train batch; the encoder is
/// held fixed.
pub fn predictor_step(state: &mut EncoderState, train_batch: &[(f64, f64)]) -> Result<PredictorLosses> {
    if train_batch.is_empty() {
        return Err(Error::EmptyDataset("predictor_step"));
    }
    let (u, v) = encode(state.theta_e, train_batch);
    let e_uv = state.predictor_uv.eval(&u, &v);
    let e_vu = state.predictor_vu.eval(&v, &u);
    if !(e_uv.loss.is_finite() && e_vu.loss.is_finite()) {
        return Err(Error::NonFinite("predictor loss".into()));
    }
    ensure_finite(&e_uv.grad, "predictor gradient")?;
    ensure_finite(&e_vu.grad, "predictor gradient")?;
    let d_uv = state.adam_uv.direction(&e_uv.grad);
    let d_vu = state.adam_vu.direction(&e_vu.grad);
    state.predictor_uv.descend(&d_uv, state.lr_predictor)?;
    state.predictor_vu.descend(&d_vu, state.lr_predictor)?;
    Ok(PredictorLosses {
        loss_uv: e_uv.loss,
        loss_vu: e_vu.loss,
    })
}

/// Gaps seen by one encoder step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderStepInfo {
    pub gap_uv: f64,
    pub gap_vu: f64,
    pub branch: Branch,
    pub d_theta: f64,
}

/// `lambda * min(G_uv, G_vu)` and its derivative in `theta`, where each gap is
/// the transfer loss minus the train loss at the same angle. With
/// `through_reference` false the train loss is a constant.
pub fn encoder_objective(
    state: &EncoderState,
    theta: f64,
    transfer: &[(f64, f64)],
    train: &[(f64, f64)],
    through_reference: bool,
) -> (f64, EncoderStepInfo) {
    let mut gaps = [0.0; 2];
    let mut grads = [0.0; 2];
    for (i, b) in [Branch::UV, Branch::VU].into_iter().enumerate() {
        let (lt, dt) = branch_loss_and_dtheta(state, b, theta, transfer);
        let (lr, dr) = branch_loss_and_dtheta(state, b, theta, train);
        gaps[i] = lt - lr;
        grads[i] = if through_reference { dt - dr } else { dt };
    }
    let (branch, k) = if gaps[0] <= gaps[1] { (Branch::UV, 0) } else { (Branch::VU, 1) };
    (
        state.lambda * gaps[k],
        EncoderStepInfo {
            gap_uv: gaps[0],
            gap_vu: gaps[1],
            branch,
            d_theta: state.lambda * grads[k],
        },
    )
}

/// One Adam step on the encoder angle; predictors are not touched.
pub fn encoder_step(
    state: &mut EncoderState,
    transfer: &[(f64, f64)],
    train: &[(f64, f64)],
    through_reference: bool,
) -> Result<EncoderStepInfo> {
    if transfer.is_empty() || train.is_empty() {
        return Err(Error::EmptyDataset("encoder_step"));
    }
    let (_, info) = encoder_objective(state, state.theta_e, transfer, train, through_reference);
    if !info.d_theta.is_finite() {
        return Err(Error::NonFinite("encoder gradient".into()));
    }
    state.theta_e -= state.lr_encoder * state.adam_theta.direction(&[info.d_theta])[0];
    Ok(info)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplearnConfig {
    pub theta_d: f64,
    pub theta_init: f64,
    pub lambda: f64,
    pub lr_encoder: f64,
    pub lr_predictor: f64,
    pub batch: usize,
    pub redraw_every: usize,
    pub iterations: usize,
    pub hidden: usize,
    /// Differentiate the train-side loss of each gap as well.
    pub through_reference: bool,
    /// Predictor-only iterations before the encoder starts moving.
    pub warmup: usize,
    pub baseline: ReplearnBaseline,
}

/// Settings of the adaptation-speed encoder learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplearnBaseline {
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub gamma_lr: f64,
}

impl Default for ReplearnConfig {
    fn default() -> Self {
        Self {
            theta_d: -PI / 4.0,
            theta_init: 0.0,
            lambda: 1.0,
            lr_encoder: 0.01,
            lr_predictor: 0.05,
            batch: 64,
            redraw_every: 5,
            iterations: 3000,
            hidden: 16,
            through_reference: false,
            warmup: 0,
            baseline: ReplearnBaseline {
                inner_steps: 5,
                inner_lr: 0.05,
                gamma_lr: 0.1,
            },
        }
    }
}

impl ReplearnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("batch", self.batch), ("redraw_every", self.redraw_every), ("iterations", self.iterations), ("hidden", self.hidden)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_predictor", self.lr_predictor),
            ("inner_lr", self.baseline.inner_lr),
            ("gamma_lr", self.baseline.gamma_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        for (name, v) in [("theta_d", self.theta_d), ("theta_init", self.theta_init)] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// One row of a training trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    /// 1-based.
    pub iteration: usize,
    pub theta_e: f64,
    pub theta_error: f64,
    pub loss_uv: f64,
    pub loss_vu: f64,
    pub gap_uv: f64,
    pub gap_vu: f64,
    /// Inner-loop time accumulated so far.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThetaTrajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl ThetaTrajectory {
    pub const CSV_HEADER: &'static str = "iteration,theta_e,theta_error,loss_uv,loss_vu,gap_uv,gap_vu,elapsed_s";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.iteration, p.theta_e, p.theta_error, p.loss_uv, p.loss_vu, p.gap_uv, p.gap_vu, p.elapsed_s
            ));
        }
        s
    }

    /// First 1-based iteration from which the error stays within `tol` for
    /// at least `hold` consecutive iterations (or until the end, if that is
    /// sooner than `hold` but the run ends inside the band).
    pub fn converged_at(&self, tol: f64, hold: usize) -> Option<usize> {
        let mut start = None;
        for (i, p) in self.points.iter().enumerate() {
            if p.theta_error <= tol {
                let s = *start.get_or_insert(i);
                if i + 1 - s >= hold {
                    return Some(self.points[s].iteration);
                }
            } else {
                start = None;
            }
        }
        None
    }

    pub fn final_theta(&self) -> Option<f64> {
        self.points.last().map(|p| p.theta_e)
    }

    /// Inner-loop seconds spent up to `iteration` (1-based).
    pub fn seconds_to(&self, iteration: usize) -> f64 {
        self.points[iteration - 1].elapsed_s
    }
}

fn check_divergence(theta: f64, traj: &ThetaTrajectory) -> Result<()> {
    if !theta.is_finite() || theta.abs() > DIVERGENCE_LIMIT {
        let tail: Vec<String> = traj
            .points
            .iter()
            .rev()
            .take(5)
            .map(|p| format!("{}:{:.4}", p.iteration, p.theta_e))
            .collect();
        return Err(Error::Diverged(format!("theta_e = {theta}; recent {}", tail.join(" "))));
    }
    Ok(())
}

/// Alternate predictor and encoder steps. The transfer intervention is
/// redrawn every `redraw_every` iterations.
pub fn train_representation(
    process: &mut GenProcess,
    state: &mut EncoderState,
    cfg: &ReplearnConfig,
    rng: &mut RunRng,
) -> Result<ThetaTrajectory> {
    cfg.validate()?;
    let mut traj = ThetaTrajectory::default();
    let mut elapsed = 0.0;
    for it in 1..=cfg.iterations {
        if (it - 1) % cfg.redraw_every == 0 && it > 1 {
            process.redraw_transfer(rng);
        }
        let train = process.gen_batch(Split::Train, cfg.batch, rng);
        let transfer = process.gen_batch(Split::Transfer, cfg.batch, rng);
        let t0 = Instant::now();
        let losses = predictor_step(state, &train)?;
        let info = if it > cfg.warmup {
            encoder_step(state, &transfer, &train, cfg.through_reference)?
        } else {
            encoder_objective(state, state.theta_e, &transfer, &train, cfg.through_reference).1
        };
        elapsed += t0.elapsed().as_secs_f64();
        traj.points.push(TrajectoryPoint {
            iteration: it,
            theta_e: state.theta_e,
            theta_error: theta_error(state.theta_e, cfg.theta_d),
            loss_uv: losses.loss_uv,
            loss_vu: losses.loss_vu,
            gap_uv: info.gap_uv,
            gap_vu: info.gap_vu,
            elapsed_s: elapsed,
        });
        check_divergence(state.theta_e, &traj)?;
    }
    Ok(traj)
}

/// Gaussian marginal `N(mean, exp(log_variance) + floor)` of one encoded
/// coordinate, used by the adaptation-speed learner's joint likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Marginal {
    mean: f64,
    log_variance: f64,
}

impl Marginal {
    fn variance(&self) -> f64 {
        self.log_variance.exp() + VARIANCE_FLOOR
    }

    /// Summed NLL, gradient in `(mean, log_variance)` of the average, and
    /// per-sample `d/dx` of the sum.
    fn eval(&self, xs: &[f64]) -> (f64, [f64; 2], Vec<f64>) {
        let v = self.variance();
        let ev = self.log_variance.exp();
        let n = xs.len().max(1) as f64;
        let mut nll = 0.0;
        let mut g = [0.0; 2];
        let mut dx = Vec::with_capacity(xs.len());
        for &x in xs {
            let r = x - self.mean;
            nll += 0.5 * (LN_2PI + v.ln()) + 0.5 * r * r / v;
            g[0] -= r / v;
            g[1] += (0.5 / v - 0.5 * r * r / (v * v)) * ev;
            dx.push(r / v);
        }
        (nll, [g[0] / n, g[1] / n], dx)
    }

    fn step(&mut self, xs: &[f64], lr: f64) {
        let (_, g, _) = self.eval(xs);
        self.mean -= lr * self.variance() * g[0];
        self.log_variance -= lr * g[1];
    }
}

/// One factorization `P(cause) P(effect | cause)` of the encoded pair.
#[derive(Debug, Clone)]
struct Factor {
    branch: Branch,
    marginal: Marginal,
    conditional: Predictor,
}

impl Factor {
    /// Summed joint NLL of `batch` at angle `theta` and its `theta`
    /// derivative; parameters held fixed.
    fn nll_and_dtheta(&self, theta: f64, batch: &[(f64, f64)]) -> (f64, f64) {
        let (u, v) = encode(theta, batch);
        let n = batch.len() as f64;
        let (cause, effect) = match self.branch {
            Branch::UV => (&u, &v),
            Branch::VU => (&v, &u),
        };
        let (m_nll, _, m_dx) = self.marginal.eval(cause);
        let e = self.conditional.eval(cause, effect);
        let c_nll = e.loss * n;
        let mut d = 0.0;
        for i in 0..batch.len() {
            let d_cause = m_dx[i] + e.d_x[i] * n;
            let d_effect = e.d_y[i] * n;
            let (d_u, d_v) = match self.branch {
                Branch::UV => (d_cause, d_effect),
                Branch::VU => (d_effect, d_cause),
            };
            d += -d_u * v[i] + d_v * u[i];
        }
        (m_nll + c_nll, d)
    }

    fn adapt(&mut self, theta: f64, batch: &[(f64, f64)], lr: f64) -> Result<()> {
        let (u, v) = encode(theta, batch);
        let (cause, effect) = match self.branch {
            Branch::UV => (&u, &v),
            Branch::VU => (&v, &u),
        };
        self.marginal.step(cause, lr);
        let e = self.conditional.eval(cause, effect);
        self.conditional.descend_scaled(&e.grad, lr)
    }
}

/// Adaptation-speed counterpart of [`train_representation`]: every
/// iteration both factorizations are cloned and adapted on the transfer
/// batch for `inner_steps` steps; the online log-likelihoods form the regret
/// `-log[s e^{LL_uv} + (1 - s) e^{LL_vu}]`, whose first-order gradient moves
/// `theta_e` and whose indicator gradient moves `gamma`.
pub fn baseline_replearn(
    process: &mut GenProcess,
    state: &mut EncoderState,
    cfg: &ReplearnConfig,
    rng: &mut RunRng,
) -> Result<ThetaTrajectory> {
    cfg.validate()?;
    let mut gamma = GammaState::new(cfg.baseline.gamma_lr);
    let mut m_u = Marginal { mean: 0.0, log_variance: 0.0 };
    let mut m_v = m_u;
    let mut traj = ThetaTrajectory::default();
    let mut elapsed = 0.0;
    let inner = cfg.baseline.inner_steps;
    for it in 1..=cfg.iterations {
        if (it - 1) % cfg.redraw_every == 0 && it > 1 {
            process.redraw_transfer(rng);
        }
        let train = process.gen_batch(Split::Train, cfg.batch, rng);
        let transfer = process.gen_batch(Split::Transfer, cfg.batch, rng);
        let t0 = Instant::now();
        let losses = predictor_step(state, &train)?;
        let (u, v) = encode(state.theta_e, &train);
        m_u.step(&u, state.lr_predictor);
        m_v.step(&v, state.lr_predictor);

        let mut factors = [
            Factor { branch: Branch::UV, marginal: m_u, conditional: state.predictor_uv.clone() },
            Factor { branch: Branch::VU, marginal: m_v, conditional: state.predictor_vu.clone() },
        ];
        let mut ll = [0.0; 2];
        let mut dll = [0.0; 2];
        for step in 0..=inner {
            for (k, f) in factors.iter_mut().enumerate() {
                let (nll, d) = f.nll_and_dtheta(state.theta_e, &transfer);
                ll[k] -= nll;
                dll[k] -= d;
                if step < inner {
                    f.adapt(state.theta_e, &transfer, cfg.baseline.inner_lr)?;
                }
            }
        }
        let steps = (inner + 1) as f64;
        let (ll_uv, ll_vu) = (ll[0] / steps, ll[1] / steps);
        // Posterior weight of U -> V; the regret gradient is a weighted
        // sum of the branch gradients.
        let s = gamma.sigma();
        let w = crate::direction::sigmoid((s.ln() + ll_uv) - ((1.0 - s).ln() + ll_vu));
        let d_theta = -(w * dll[0] + (1.0 - w) * dll[1]) / steps;
        if it > cfg.warmup {
            state.theta_e -= state.lr_encoder * state.adam_theta.direction(&[state.lambda * d_theta])[0];
            gamma_step(&mut gamma, ll_uv, ll_vu)?;
        }
        elapsed += t0.elapsed().as_secs_f64();
        let gap_uv = -ll_uv / transfer.len() as f64 - losses.loss_uv;
        let gap_vu = -ll_vu / transfer.len() as f64 - losses.loss_vu;
        traj.points.push(TrajectoryPoint {
            iteration: it,
            theta_e: state.theta_e,
            theta_error: theta_error(state.theta_e, cfg.theta_d),
            loss_uv: losses.loss_uv,
            loss_vu: losses.loss_vu,
            gap_uv,
            gap_vu,
            elapsed_s: elapsed,
        });
        check_divergence(state.theta_e, &traj)?;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::run_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotate(0.0, (1.5, -2.0)), (1.5, -2.0));
        let (x, y) = rotate(PI / 2.0, (1.0, 0.0));
        assert_abs_diff_eq!(x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y, 1.0, epsilon = 1e-15);
        let p = (0.3, -1.7);
        let back = rotate(PI / 4.0, rotate(-PI / 4.0, p));
        assert_abs_diff_eq!(back.0, p.0, epsilon = 1e-15);
        assert_abs_diff_eq!(back.1, p.1, epsilon = 1e-15);
    }

    #[test]
    fn theta_error_examples() {
        assert_abs_diff_eq!(theta_error(PI / 4.0, -PI / 4.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(theta_error(0.0, -PI / 4.0), PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(theta_error(PI / 4.0 + 2.0 * PI, -PI / 4.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(theta_error(-PI / 4.0, -PI / 4.0), 0.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(theta in -40.0f64..40.0, x in -1e3f64..1e3, y in -1e3f64..1e3) {
            let m = Rotation::new(theta).matrix();
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            prop_assert!((det - 1.0).abs() < 1e-12);
            let dot = m[0][0] * m[0][1] + m[1][0] * m[1][1];
            prop_assert!(dot.abs() < 1e-12);
            let (u, v) = rotate(theta, (x, y));
            let n0 = (x * x + y * y).sqrt();
            prop_assert!(((u * u + v * v).sqrt() - n0).abs() <= 1e-12 * n0.max(1.0));
        }
    }

    #[test]
    fn identity_decoder_returns_latents() {
        let mut p = GenProcess::new(0.0, &mut run_rng(1, 0));
        p.theta_d = 0.0;
        let obs = p.gen_batch(Split::Train, 10, &mut run_rng(2, 0));
        let lat = p.latent_batch(Split::Train, 10, &mut run_rng(2, 0));
        assert_eq!(obs, lat);
    }

    #[test]
    fn point_mass_cause_lies_on_rotated_curve() {
        let mut p = GenProcess::new(-PI / 4.0, &mut run_rng(3, 0));
        p.transfer_cause = CauseLaw { mean: 0.7, sd: 1e-300 };
        p.mechanism.noise_sd = 0.0;
        let b = p.mechanism.mean(0.7);
        let expect = rotate(-PI / 4.0, (0.7, b));
        for (x, y) in p.gen_batch(Split::Transfer, 20, &mut run_rng(3, 1)) {
            assert_abs_diff_eq!(x, expect.0, epsilon = 1e-12);
            assert_abs_diff_eq!(y, expect.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn mechanism_is_shared_between_splits() {
        // Residual spread of B around the mechanism is the same under train
        // and transfer cause laws.
        let p = GenProcess::new(0.0, &mut run_rng(4, 0));
        let mut rng = run_rng(4, 1);
        let mut resid_sd = |which| {
            let lat = p.latent_batch(which, 50_000, &mut rng);
            let r: Vec<f64> = lat.iter().map(|&(a, b)| b - p.mechanism.mean(a)).collect();
            (r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64).sqrt()
        };
        let (s1, s2) = (resid_sd(Split::Train), resid_sd(Split::Transfer));
        assert!((s1 - 0.1).abs() < 0.002 && (s2 - 0.1).abs() < 0.002, "{s1} {s2}");
    }

    fn state(seed: u64) -> (EncoderState, Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let mut rng = run_rng(seed, 0);
        let p = GenProcess::new(-PI / 4.0, &mut rng);
        let cfg = ReplearnConfig::default();
        let s = EncoderState::new(rand::Rng::random_range(&mut rng, -1.0..1.0), &cfg, &mut rng).unwrap();
        let train = p.gen_batch(Split::Train, 16, &mut rng);
        let transfer = p.gen_batch(Split::Transfer, 16, &mut rng);
        (s, train, transfer)
    }

    #[test]
    fn predictor_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (mut s, train, _) = state(seed);
            s.predictor_uv.log_variance = 0.3;
            let (u, v) = encode(s.theta_e, &train);
            let e = s.predictor_uv.eval(&u, &v);
            let p0 = s.predictor_uv.params();
            let h = 1e-6;
            for i in 0..p0.len() {
                let mut q = s.predictor_uv.clone();
                let mut p = p0.clone();
                p[i] += h;
                q.set_params(&p);
                let up = q.loss(&u, &v);
                p[i] -= 2.0 * h;
                q.set_params(&p);
                let down = q.loss(&u, &v);
                let num = (up - down) / (2.0 * h);
                assert!(rel_err(e.grad[i], num) < 1e-4, "param {i}: {} vs {num}", e.grad[i]);
            }
        }
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let (s, train, transfer) = state(seed);
            for through in [false, true] {
                let (_, info) = encoder_objective(&s, s.theta_e, &transfer, &train, through);
                let h = 1e-5;
                let f = |t: f64| {
                    let mut g = [0.0; 2];
                    for (k, b) in [Branch::UV, Branch::VU].into_iter().enumerate() {
                        let lt = branch_loss_and_dtheta(&s, b, t, &transfer).0;
                        let lr = if through {
                            branch_loss_and_dtheta(&s, b, t, &train).0
                        } else {
                            branch_loss_and_dtheta(&s, b, s.theta_e, &train).0
                        };
                        g[k] = lt - lr;
                    }
                    let k = if info.branch == Branch::UV { 0 } else { 1 };
                    s.lambda * g[k]
                };
                let num = (f(s.theta_e + h) - f(s.theta_e - h)) / (2.0 * h);
                assert!(rel_err(info.d_theta, num) < 1e-4, "{} vs {num}", info.d_theta);
            }
        }
    }

    #[test]
    fn baseline_factor_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (s, _, transfer) = state(seed);
            for branch in [Branch::UV, Branch::VU] {
                let f = Factor {
                    branch,
                    marginal: Marginal { mean: 0.2, log_variance: 0.4 },
                    conditional: s.predictor_vu.clone(),
                };
                let (_, d) = f.nll_and_dtheta(s.theta_e, &transfer);
                let h = 1e-5;
                let num = (f.nll_and_dtheta(s.theta_e + h, &transfer).0 - f.nll_and_dtheta(s.theta_e - h, &transfer).0)
                    / (2.0 * h);
                assert!(rel_err(d, num) < 1e-4, "{d} vs {num}");
            }
        }
    }

    #[test]
    fn zero_lambda_freezes_encoder() {
        let (mut s, train, transfer) = state(5);
        s.lambda = 0.0;
        let before = s.theta_e;
        encoder_step(&mut s, &transfer, &train, true).unwrap();
        assert_eq!(s.theta_e, before);
    }

    #[test]
    fn tie_goes_to_uv_branch() {
        let (mut s, train, _) = state(6);
        s.predictor_vu = s.predictor_uv.clone();
        // A symmetric batch under the swap (u, v) -> (v, u) at theta = 0.
        let sym: Vec<(f64, f64)> = train.iter().flat_map(|&(x, y)| [(x, y), (y, x)]).collect();
        let (_, info) = encoder_objective(&s, 0.0, &sym, &sym, true);
        assert_eq!(info.gap_uv, info.gap_vu);
        assert_eq!(info.branch, Branch::UV);
    }

    #[test]
    fn predictor_losses_decrease_on_fixed_batch() {
        let (mut s, train, _) = state(7);
        let first = predictor_step(&mut s, &train).unwrap();
        let mut last = first;
        for _ in 0..100 {
            last = predictor_step(&mut s, &train).unwrap();
        }
        assert!(last.loss_uv < first.loss_uv && last.loss_vu < first.loss_vu);
    }

    #[test]
    fn constant_batch_stays_finite() {
        let (mut s, _, _) = state(8);
        let flat = vec![(1.0, 1.0); 32];
        for _ in 0..200 {
            predictor_step(&mut s, &flat).unwrap();
        }
        assert!(s.predictor_uv.variance() >= VARIANCE_FLOOR);
        assert!(s.predictor_uv.params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn predictor_at_optimum_barely_moves() {
        let (mut s, _, _) = state(9);
        let xs = [0.0, 1.0, 2.0];
        // Zero network output and variance matched to the targets' scale.
        s.predictor_uv.net.w2.iter_mut().for_each(|w| *w = 0.0);
        s.predictor_uv.net.b2[0] = 0.0;
        let ys = [0.0, 0.0, 0.0];
        s.predictor_uv.log_variance = -50.0;
        let e = s.predictor_uv.eval(&xs, &ys);
        assert!(e.grad.iter().all(|g| g.abs() * s.lr_predictor < s.lr_predictor * 1e-6));
    }

    #[test]
    fn adam_first_step_is_unit_sign() {
        let mut a = Adam::default();
        let d = a.direction(&[3.0, -1e-3, 0.0]);
        assert_abs_diff_eq!(d[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(d[1], -1.0, epsilon = 1e-4);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn zero_inner_steps_scores_unadapted_factors() {
        let (s, _, transfer) = state(11);
        let mut f = Factor {
            branch: Branch::UV,
            marginal: Marginal { mean: 0.1, log_variance: 0.2 },
            conditional: s.predictor_uv.clone(),
        };
        let before = f.nll_and_dtheta(s.theta_e, &transfer);
        let (u, v) = encode(s.theta_e, &transfer);
        let direct = f.marginal.eval(&u).0 + s.predictor_uv.loss(&u, &v) * transfer.len() as f64;
        assert_abs_diff_eq!(before.0, direct, epsilon = 1e-9);
        f.adapt(s.theta_e, &transfer, 0.05).unwrap();
        assert!(f.nll_and_dtheta(s.theta_e, &transfer).0 < before.0);
    }

    #[test]
    fn diverging_run_aborts() {
        let mut rng = run_rng(10, 0);
        let mut p = GenProcess::new(-PI / 4.0, &mut rng);
        let cfg = ReplearnConfig {
            lr_encoder: 1e9,
            iterations: 50,
            ..ReplearnConfig::default()
        };
        let mut s = EncoderState::new(0.1, &cfg, &mut rng).unwrap();
        assert!(matches!(train_representation(&mut p, &mut s, &cfg, &mut rng), Err(Error::Diverged(_))));
    }

    #[test]
    fn converged_at_requires_a_hold() {
        let mk = |errs: &[f64]| ThetaTrajectory {
            points: errs
                .iter()
                .enumerate()
                .map(|(i, &e)| TrajectoryPoint {
                    iteration: i + 1,
                    theta_e: 0.0,
                    theta_error: e,
                    loss_uv: 0.0,
                    loss_vu: 0.0,
                    gap_uv: 0.0,
                    gap_vu: 0.0,
                    elapsed_s: 0.0,
                })
                .collect(),
        };
        assert_eq!(mk(&[0.5, 0.01, 0.5, 0.01, 0.01, 0.01]).converged_at(0.05, 3), Some(4));
        assert_eq!(mk(&[0.5, 0.01, 0.01]).converged_at(0.05, 3), None);
    }
}
