//! Exact categorical arithmetic over bivariate tables.
//!
//! All information quantities are in nats. Tables are small (at most a few
//! hundred cells per side) and are stored as linear probabilities; logs are
//! taken on demand.

use rand::Rng;

use crate::data::{Dataset, SamplePair};
use crate::error::{Error, Result};

/// Tolerance for "sums to one" checks on user-supplied vectors.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Candidate causal orientation between the two variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    AToB,
    BToA,
}

impl Direction {
    pub fn reverse(self) -> Direction {
        match self {
            Direction::AToB => Direction::BToA,
            Direction::BToA => Direction::AToB,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::AToB => "A->B",
            Direction::BToA => "B->A",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Table axis: `A` indexes rows, `B` indexes columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    A,
    B,
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDimension("empty probability vector".into()));
    }
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidProbabilities(format!("entry {x}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidProbabilities(format!("sum {s}")));
    }
    Ok(())
}

fn normalize(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::InvalidDimension("dimension must be positive".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidProbabilities("negative or non-finite weight".into()));
    }
    let s: f64 = weights.iter().sum();
    if s <= 0.0 {
        return Err(Error::InvalidProbabilities("weights sum to zero".into()));
    }
    Ok(weights.iter().map(|w| w / s).collect())
}

/// A probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs)?;
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        Ok(Self {
            probs: normalize(weights)?,
        })
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }
}

/// Row-stochastic table `P(col | row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
    degenerate_rows: Vec<usize>,
}

impl ConditionalTable {
    pub fn new(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimension(format!("{rows}x{cols} table")));
        }
        if probs.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: probs.len(),
            });
        }
        for r in probs.chunks(cols) {
            check_probs(r)?;
        }
        Ok(Self {
            rows,
            cols,
            probs,
            degenerate_rows: Vec::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_categoricals(rows: &[Categorical]) -> Result<Self> {
        let v: Vec<Vec<f64>> = rows.iter().map(|c| c.probs.clone()).collect();
        Self::from_rows(&v)
    }

    /// Table whose every row is the identity one-hot (`rows == cols`).
    pub fn identity(dim: usize) -> Result<Self> {
        let mut p = vec![0.0; dim * dim];
        for i in 0..dim {
            p[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, p)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.probs[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Rows that had no mass when this table was derived and were replaced
    /// by the uniform distribution.
    pub fn degenerate_rows(&self) -> &[usize] {
        &self.degenerate_rows
    }

    pub(crate) fn mark_degenerate(&mut self, rows: Vec<usize>) {
        self.degenerate_rows = rows;
    }

    /// Probability of `effect` given `cause` where the table is read in the
    /// orientation of `direction`: for `AToB` rows are `a`, for `BToA` rows
    /// are `b`.
    #[inline]
    pub(crate) fn oriented(&self, cause: usize, effect: usize) -> f64 {
        self.get(cause, effect)
    }
}

/// Joint table `P(a, b)`, row = a.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn new(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimension(format!("{rows}x{cols} table")));
        }
        if probs.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: probs.len(),
            });
        }
        check_probs(&probs)?;
        Ok(Self { rows, cols, probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.probs[a * self.cols + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// `P(cause, effect)` in the orientation of `direction`.
    #[inline]
    pub fn oriented(&self, direction: Direction, cause: usize, effect: usize) -> f64 {
        match direction {
            Direction::AToB => self.get(cause, effect),
            Direction::BToA => self.get(effect, cause),
        }
    }

    pub fn oriented_dims(&self, direction: Direction) -> (usize, usize) {
        match direction {
            Direction::AToB => (self.rows, self.cols),
            Direction::BToA => (self.cols, self.rows),
        }
    }

    pub fn entropy(&self) -> f64 {
        entropy_of(&self.probs)
    }
}

/// Ground-truth train/transfer pair sharing the mechanism `P(B|A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionPair {
    pub cond_b_given_a: ConditionalTable,
    pub marginal_a_train: Categorical,
    pub marginal_a_transfer: Categorical,
    pub true_direction: Direction,
}

impl DistributionPair {
    pub fn new(
        cond_b_given_a: ConditionalTable,
        marginal_a_train: Categorical,
        marginal_a_transfer: Categorical,
    ) -> Result<Self> {
        for m in [&marginal_a_train, &marginal_a_transfer] {
            if m.dim() != cond_b_given_a.rows() {
                return Err(Error::DimensionMismatch {
                    expected: cond_b_given_a.rows(),
                    actual: m.dim(),
                });
            }
        }
        Ok(Self {
            cond_b_given_a,
            marginal_a_train,
            marginal_a_transfer,
            true_direction: Direction::AToB,
        })
    }

    /// The worked 2x2 instance whose generalization-gap score is negative.
    pub fn counterexample() -> Self {
        let cond = ConditionalTable::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4]])
            .expect("valid conditional");
        Self::new(
            cond,
            Categorical::new(vec![0.4, 0.6]).expect("valid"),
            Categorical::new(vec![0.2, 0.8]).expect("valid"),
        )
        .expect("matching dims")
    }

    pub fn n_a(&self) -> usize {
        self.cond_b_given_a.rows()
    }

    pub fn n_b(&self) -> usize {
        self.cond_b_given_a.cols()
    }

    pub fn joint_train(&self) -> JointTable {
        joint_from_factorization(&self.marginal_a_train, &self.cond_b_given_a)
            .expect("dimensions checked at construction")
    }

    pub fn joint_transfer(&self) -> JointTable {
        joint_from_factorization(&self.marginal_a_transfer, &self.cond_b_given_a)
            .expect("dimensions checked at construction")
    }

    /// Same mechanism and train marginal, new intervention.
    pub fn with_transfer(&self, marginal_a_transfer: Categorical) -> Result<Self> {
        Self::new(
            self.cond_b_given_a.clone(),
            self.marginal_a_train.clone(),
            marginal_a_transfer,
        )
    }
}

/// Entropy change from the train to the transfer distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyDelta {
    pub dh_a: f64,
    pub dh_b: f64,
    pub dh_ab: f64,
}

/// Draw `u_i ~ U(0,1)` per outcome and normalize.
pub fn random_categorical<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Categorical> {
    if dim == 0 {
        return Err(Error::InvalidDimension("dimension must be positive".into()));
    }
    let raw: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    categorical_from_draws(&raw)
}

/// Normalization step of [`random_categorical`] for explicit raw draws.
pub fn categorical_from_draws(raw: &[f64]) -> Result<Categorical> {
    Categorical::from_weights(raw)
}

/// Random mechanism (row by row) followed by two independent cause marginals.
pub fn make_pair<R: Rng + ?Sized>(n_dim: usize, m_dim: usize, rng: &mut R) -> Result<DistributionPair> {
    if n_dim == 0 || m_dim == 0 {
        return Err(Error::InvalidDimension(format!("{n_dim}x{m_dim} pair")));
    }
    let rows = (0..n_dim)
        .map(|_| random_categorical(m_dim, rng))
        .collect::<Result<Vec<_>>>()?;
    let cond = ConditionalTable::from_categoricals(&rows)?;
    let p1 = random_categorical(n_dim, rng)?;
    let p2 = random_categorical(n_dim, rng)?;
    DistributionPair::new(cond, p1, p2)
}

pub fn joint_from_factorization(marginal: &Categorical, cond: &ConditionalTable) -> Result<JointTable> {
    if marginal.dim() != cond.rows() {
        return Err(Error::DimensionMismatch {
            expected: cond.rows(),
            actual: marginal.dim(),
        });
    }
    let mut probs = Vec::with_capacity(cond.rows() * cond.cols());
    for (i, &pm) in marginal.probs().iter().enumerate() {
        probs.extend(cond.row(i).iter().map(|c| pm * c));
    }
    Ok(JointTable {
        rows: cond.rows(),
        cols: cond.cols(),
        probs,
    })
}

/// Distribution of the `keep` variable.
pub fn marginalize(joint: &JointTable, keep: Axis) -> Categorical {
    let probs = match keep {
        Axis::A => joint
            .probs
            .chunks(joint.cols)
            .map(|r| r.iter().sum())
            .collect(),
        Axis::B => {
            let mut out = vec![0.0; joint.cols];
            for r in joint.probs.chunks(joint.cols) {
                for (o, p) in out.iter_mut().zip(r) {
                    *o += p;
                }
            }
            out
        }
    };
    Categorical { probs }
}

/// `P(other | given)`, one row per value of `given`. Values of `given` with
/// zero mass get a uniform row and are listed in `degenerate_rows`.
pub fn condition(joint: &JointTable, given: Axis) -> ConditionalTable {
    let marg = marginalize(joint, given);
    let (rows, cols) = match given {
        Axis::A => (joint.rows, joint.cols),
        Axis::B => (joint.cols, joint.rows),
    };
    let mut probs = Vec::with_capacity(rows * cols);
    let mut degenerate_rows = Vec::new();
    for g in 0..rows {
        let m = marg.probs[g];
        if m > 0.0 {
            probs.extend((0..cols).map(|o| {
                let p = match given {
                    Axis::A => joint.get(g, o),
                    Axis::B => joint.get(o, g),
                };
                p / m
            }));
        } else {
            degenerate_rows.push(g);
            probs.extend(std::iter::repeat_n(1.0 / cols as f64, cols));
        }
    }
    ConditionalTable {
        rows,
        cols,
        probs,
        degenerate_rows,
    }
}

/// Conditional of the effect given the cause for a chosen orientation.
pub fn oriented_conditional(joint: &JointTable, direction: Direction) -> ConditionalTable {
    match direction {
        Direction::AToB => condition(joint, Axis::A),
        Direction::BToA => condition(joint, Axis::B),
    }
}

fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

pub fn entropy(p: &Categorical) -> f64 {
    entropy_of(&p.probs)
}

pub fn cross_entropy(p: &Categorical, q: &Categorical) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            actual: q.dim(),
        });
    }
    let mut h = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::InfiniteDivergence { row: 0, col: i });
            }
            h -= pi * qi.ln();
        }
    }
    Ok(h)
}

/// `KL(p || q)`.
pub fn kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            actual: q.dim(),
        });
    }
    let mut d = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::InfiniteDivergence { row: 0, col: i });
            }
            d += pi * (pi.ln() - qi.ln());
        }
    }
    Ok(d.max(0.0))
}

fn check_oriented_shape(joint: &JointTable, cond: &ConditionalTable, direction: Direction) -> Result<()> {
    let (nc, ne) = joint.oriented_dims(direction);
    if cond.rows() != nc || cond.cols() != ne {
        return Err(Error::DimensionMismatch {
            expected: nc * ne,
            actual: cond.rows() * cond.cols(),
        });
    }
    Ok(())
}

/// `E_{joint}[-log cond(effect | cause)]` in the given orientation.
pub fn conditional_cross_entropy(
    joint: &JointTable,
    cond: &ConditionalTable,
    direction: Direction,
) -> Result<f64> {
    check_oriented_shape(joint, cond, direction)?;
    let (nc, ne) = joint.oriented_dims(direction);
    let mut h = 0.0;
    for c in 0..nc {
        for e in 0..ne {
            let p = joint.oriented(direction, c, e);
            if p > 0.0 {
                let q = cond.oriented(c, e);
                if q <= 0.0 {
                    return Err(Error::InfiniteDivergence { row: c, col: e });
                }
                h -= p * q.ln();
            }
        }
    }
    Ok(h)
}

/// `E_{p2}[log cond2(effect|cause) - log cond1(effect|cause)]`.
///
/// Both conditionals are indexed `[cause][effect]` for the chosen
/// orientation. Cells where `cond2` and `cond1` agree contribute exactly zero.
pub fn conditional_kl(
    p2: &JointTable,
    cond2: &ConditionalTable,
    cond1: &ConditionalTable,
    direction: Direction,
) -> Result<f64> {
    check_oriented_shape(p2, cond2, direction)?;
    check_oriented_shape(p2, cond1, direction)?;
    let (nc, ne) = p2.oriented_dims(direction);
    let mut d = 0.0;
    for c in 0..nc {
        for e in 0..ne {
            let p = p2.oriented(direction, c, e);
            if p > 0.0 {
                let q2 = cond2.oriented(c, e);
                let q1 = cond1.oriented(c, e);
                if q1 <= 0.0 {
                    return Err(Error::InfiniteDivergence { row: c, col: e });
                }
                if q2 != q1 {
                    d += p * (q2.ln() - q1.ln());
                }
            }
        }
    }
    Ok(d.max(0.0))
}

/// Conditional KL of both orientations for a pair, computed from the
/// ground-truth joints: `(D_{A->B}, D_{B->A})`.
pub fn pair_conditional_kls(pair: &DistributionPair) -> Result<(f64, f64)> {
    let j1 = pair.joint_train();
    let j2 = pair.joint_transfer();
    let mut out = [0.0; 2];
    for (slot, dir) in out.iter_mut().zip([Direction::AToB, Direction::BToA]) {
        let c1 = oriented_conditional(&j1, dir);
        let c2 = oriented_conditional(&j2, dir);
        *slot = conditional_kl(&j2, &c2, &c1, dir)?;
    }
    Ok((out[0], out[1]))
}

pub fn entropy_deltas(pair: &DistributionPair) -> EntropyDelta {
    let j1 = pair.joint_train();
    let j2 = pair.joint_transfer();
    EntropyDelta {
        dh_a: entropy(&marginalize(&j2, Axis::A)) - entropy(&marginalize(&j1, Axis::A)),
        dh_b: entropy(&marginalize(&j2, Axis::B)) - entropy(&marginalize(&j1, Axis::B)),
        dh_ab: j2.entropy() - j1.entropy(),
    }
}

/// Inverse-CDF sampler over the flattened joint.
#[derive(Debug, Clone)]
pub struct JointSampler {
    cols: usize,
    cdf: Vec<f64>,
}

impl JointSampler {
    pub fn new(joint: &JointTable) -> Self {
        let mut acc = 0.0;
        let cdf = joint
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self {
            cols: joint.cols,
            cdf,
        }
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SamplePair {
        let total = *self.cdf.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        // First cell whose cumulative mass exceeds u; zero-mass cells are
        // never selected because their cdf equals their predecessor's.
        let mut idx = self.cdf.partition_point(|&c| c <= u);
        if idx >= self.cdf.len() {
            // u == total after rounding: last cell with positive mass.
            idx = self.cdf.partition_point(|&c| c < total);
        }
        SamplePair::new(idx / self.cols, idx % self.cols)
    }

    pub fn fill<R: Rng + ?Sized>(&self, data: &mut Dataset, n: usize, rng: &mut R) {
        for _ in 0..n {
            data.push_unchecked(self.draw(rng));
        }
    }
}

/// `n` i.i.d. draws from `joint`.
pub fn sample<R: Rng + ?Sized>(joint: &JointTable, n: usize, rng: &mut R) -> Dataset {
    let sampler = JointSampler::new(joint);
    let mut data = Dataset::new(joint.rows, joint.cols);
    sampler.fill(&mut data, n, rng);
    data
}
