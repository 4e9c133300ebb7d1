//! Sample containers shared by the discrete and continuous pipelines.

use crate::error::{Error, Result};
use crate::prob::Direction;

/// One discrete observation `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SamplePair {
    pub a: usize,
    pub b: usize,
}

impl SamplePair {
    pub fn new(a: usize, b: usize) -> Self {
        Self { a, b }
    }

    /// `(cause, effect)` as seen by a model of the given direction.
    #[inline]
    pub fn oriented(self, direction: Direction) -> (usize, usize) {
        match direction {
            Direction::AToB => (self.a, self.b),
            Direction::BToA => (self.b, self.a),
        }
    }
}

/// Ordered discrete samples over an `n_a x n_b` outcome grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    n_a: usize,
    n_b: usize,
    samples: Vec<SamplePair>,
}

impl Dataset {
    pub fn new(n_a: usize, n_b: usize) -> Self {
        Self {
            n_a,
            n_b,
            samples: Vec::new(),
        }
    }

    pub fn from_pairs(n_a: usize, n_b: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut data = Self::new(n_a, n_b);
        for &(a, b) in pairs {
            data.push(SamplePair::new(a, b))?;
        }
        Ok(data)
    }

    pub fn push(&mut self, s: SamplePair) -> Result<()> {
        if s.a >= self.n_a || s.b >= self.n_b {
            return Err(Error::InvalidDimension(format!(
                "sample ({}, {}) outside {}x{} grid",
                s.a, s.b, self.n_a, self.n_b
            )));
        }
        self.samples.push(s);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub(crate) fn push_unchecked(&mut self, s: SamplePair) {
        debug_assert!(s.a < self.n_a && s.b < self.n_b);
        self.samples.push(s);
    }

    pub fn extend_from(&mut self, other: &Dataset) -> Result<()> {
        if other.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.n_a * self.n_b,
                actual: other.n_a * other.n_b,
            });
        }
        self.samples.extend_from_slice(&other.samples);
        Ok(())
    }

    /// The first `n` samples (or all of them).
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            n_a: self.n_a,
            n_b: self.n_b,
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    /// `(cause dim, effect dim)` for the given orientation.
    pub fn oriented_dims(&self, direction: Direction) -> (usize, usize) {
        match direction {
            Direction::AToB => (self.n_a, self.n_b),
            Direction::BToA => (self.n_b, self.n_a),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[SamplePair] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &SamplePair> {
        self.samples.iter()
    }

    pub fn counts(&self) -> CountTable {
        let mut t = CountTable::zeros(self.n_a, self.n_b);
        for s in &self.samples {
            t.counts[s.a * self.n_b + s.b] += 1.0;
        }
        t
    }
}

/// Cell counts over the `(a, b)` grid, row = a.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    rows: usize,
    cols: usize,
    counts: Vec<f64>,
}

impl CountTable {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            counts: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidDimension("empty count table".into()));
        }
        let mut counts = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            if r.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(Error::InvalidProbabilities("negative count".into()));
            }
            counts.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            counts,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.counts[a * self.cols + b]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Count of `(cause, effect)` under an orientation.
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
}

/// One continuous observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealPair {
    pub a: f64,
    pub b: f64,
}

impl RealPair {
    #[inline]
    pub fn oriented(self, direction: Direction) -> (f64, f64) {
        match direction {
            Direction::AToB => (self.a, self.b),
            Direction::BToA => (self.b, self.a),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RealDataset {
    pub samples: Vec<RealPair>,
}

impl RealDataset {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self {
            samples: pairs.iter().map(|&(a, b)| RealPair { a, b }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(inputs, targets)` columns for a regression of effect on cause.
    pub fn columns(&self, direction: Direction) -> (Vec<f64>, Vec<f64>) {
        self.samples.iter().map(|s| s.oriented(direction)).unzip()
    }
}
