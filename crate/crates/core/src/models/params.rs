//! Flat, versioned text format for model parameters.
//!
//! ```text
//! causal-gap-params 1
//! param logits 2 3
//! 0.1 0.2 0.3
//! -1 0 1
//! ```
//!
//! One `param <name> <rows> <cols>` header per tensor followed by `rows`
//! lines of `cols` whitespace-separated values (row-major). Floats are written
//! in shortest round-trip form, so save/load is exact.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::models::{GaussianMarginal, LinearGaussian, MixtureMarginal, Role, TabularSoftmax, TwoLayerNet};
use crate::prob::Direction;

pub const FORMAT_MAGIC: &str = "causal-gap-params";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn push(&mut self, name: &str, rows: usize, cols: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), rows * cols);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            values: values.to_vec(),
        });
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{name}`")))
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let e = self.get(name)?;
        if e.values.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: e.values.len(),
            });
        }
        Ok(e.values[0])
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{FORMAT_MAGIC} {FORMAT_VERSION}\n");
        for e in &self.entries {
            let _ = writeln!(s, "param {} {} {}", e.name, e.rows, e.cols);
            for row in e.values.chunks(e.cols.max(1)) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: "<params>".into(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
        let mut h = header.split_whitespace();
        if h.next() != Some(FORMAT_MAGIC) {
            return Err(err(1, "bad magic".into()));
        }
        let version: u32 = h
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(1, "missing version".into()))?;
        if version != FORMAT_VERSION {
            return Err(err(1, format!("unsupported version {version}")));
        }
        let mut set = ParamSet::default();
        while let Some((ln, line)) = lines.next() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 || f[0] != "param" {
                return Err(err(ln + 1, format!("expected `param <name> <rows> <cols>`, got `{line}`")));
            }
            let rows: usize = f[2].parse().map_err(|_| err(ln + 1, "bad rows".into()))?;
            let cols: usize = f[3].parse().map_err(|_| err(ln + 1, "bad cols".into()))?;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (vl, vline) = lines
                    .next()
                    .ok_or_else(|| err(ln + 1, format!("truncated parameter `{}`", f[1])))?;
                let row: Vec<f64> = vline
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(vl + 1, e.to_string()))?;
                if row.len() != cols {
                    return Err(err(vl + 1, format!("expected {cols} values, got {}", row.len())));
                }
                values.extend(row);
            }
            set.entries.push(ParamEntry {
                name: f[1].to_string(),
                rows,
                cols,
                values,
            });
        }
        Ok(set)
    }
}

/// Models that round-trip through [`ParamSet`].
pub trait Parameterized: Sized {
    fn to_params(&self) -> ParamSet;
    fn from_params(p: &ParamSet) -> Result<Self>;
}

fn direction_code(d: Direction) -> f64 {
    match d {
        Direction::AToB => 0.0,
        Direction::BToA => 1.0,
    }
}

fn direction_from(code: f64) -> Result<Direction> {
    match code as i64 {
        0 => Ok(Direction::AToB),
        1 => Ok(Direction::BToA),
        _ => Err(Error::InvalidConfig(format!("bad direction code {code}"))),
    }
}

impl Parameterized for TabularSoftmax {
    fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::default();
        p.push("logits", self.rows(), self.cols(), self.logits());
        let role = if self.role() == Role::Marginal { 0.0 } else { 1.0 };
        p.push("role", 1, 1, &[role]);
        p.push("direction", 1, 1, &[direction_code(crate::models::DiscreteConditional::direction(self))]);
        p
    }

    fn from_params(p: &ParamSet) -> Result<Self> {
        let l = p.get("logits")?;
        let role = if p.scalar("role")? == 0.0 { Role::Marginal } else { Role::Conditional };
        TabularSoftmax::from_logits(l.rows, l.cols, l.values.clone(), role, direction_from(p.scalar("direction")?)?)
    }
}

impl Parameterized for MixtureMarginal {
    fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::default();
        p.push("theta", 1, self.components(), &self.theta);
        p.push("phi", self.components(), self.dim(), &self.phi);
        p
    }

    fn from_params(p: &ParamSet) -> Result<Self> {
        let phi = p.get("phi")?;
        MixtureMarginal::new(p.get("theta")?.values.clone(), phi.values.clone(), phi.cols)
    }
}

impl Parameterized for LinearGaussian {
    fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::default();
        p.push("weight", 1, 1, &[self.weight]);
        p.push("bias", 1, 1, &[self.bias]);
        p.push("log_variance", 1, 1, &[self.log_variance]);
        p
    }

    fn from_params(p: &ParamSet) -> Result<Self> {
        Ok(Self {
            weight: p.scalar("weight")?,
            bias: p.scalar("bias")?,
            log_variance: p.scalar("log_variance")?,
        })
    }
}

impl Parameterized for GaussianMarginal {
    fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::default();
        p.push("mean", 1, 1, &[self.mean]);
        p.push("log_variance", 1, 1, &[self.log_variance]);
        p
    }

    fn from_params(p: &ParamSet) -> Result<Self> {
        Ok(Self {
            mean: p.scalar("mean")?,
            log_variance: p.scalar("log_variance")?,
        })
    }
}

impl Parameterized for TwoLayerNet {
    fn to_params(&self) -> ParamSet {
        let hidden = self.hidden();
        let input = self.w1.len() / hidden;
        let output = self.b2.len();
        let mut p = ParamSet::default();
        p.push("w1", hidden, input, &self.w1);
        p.push("b1", 1, hidden, &self.b1);
        p.push("w2", output, hidden, &self.w2);
        p.push("b2", 1, output, &self.b2);
        p
    }

    fn from_params(p: &ParamSet) -> Result<Self> {
        let w1 = p.get("w1")?;
        let w2 = p.get("w2")?;
        let mut rng = crate::rng::run_rng(0, 0);
        let mut net = TwoLayerNet::new(w1.cols, w1.rows, w2.rows, &mut rng)?;
        let b1 = p.get("b1")?;
        let b2 = p.get("b2")?;
        if b1.values.len() != w1.rows || b2.values.len() != w2.rows || w2.cols != w1.rows {
            return Err(Error::InvalidConfig("inconsistent network shapes".into()));
        }
        net.set_params(&[&w1.values[..], &b1.values, &w2.values, &b2.values].concat());
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::run_rng;
    use proptest::prelude::*;

    #[test]
    fn fixture_parses() {
        let text = "causal-gap-params 1\nparam logits 2 3\n0.1 0.2 0.3\n-1 0 1\nparam role 1 1\n1\nparam direction 1 1\n1\n";
        let t = TabularSoftmax::from_params(&ParamSet::from_text(text).unwrap()).unwrap();
        assert_eq!(t.logits(), &[0.1, 0.2, 0.3, -1.0, 0.0, 1.0]);
        assert_eq!(crate::models::DiscreteConditional::direction(&t), Direction::BToA);
    }

    #[test]
    fn malformed_inputs() {
        assert!(ParamSet::from_text("").is_err());
        assert!(ParamSet::from_text("causal-gap-params 2\n").is_err());
        assert!(ParamSet::from_text("causal-gap-params 1\nparam w 1 2\n1\n").is_err());
        assert!(ParamSet::from_text("causal-gap-params 1\nparam w 2 1\n1\n").is_err());
        assert!(ParamSet::from_text("causal-gap-params 1\nparam w 1 1\nx\n").is_err());
    }

    #[test]
    fn net_round_trip() {
        let net = TwoLayerNet::new(1, 7, 1, &mut run_rng(1, 1)).unwrap();
        let back = TwoLayerNet::from_params(&ParamSet::from_text(&net.to_params().to_text()).unwrap()).unwrap();
        assert_eq!(net, back);
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(values in prop::collection::vec(-1e6f64..1e6, 1..24), cols in 1usize..5) {
            let n = values.len() / cols * cols;
            prop_assume!(n > 0);
            let mut set = ParamSet::default();
            set.push("x", n / cols, cols, &values[..n]);
            let back = ParamSet::from_text(&set.to_text()).unwrap();
            prop_assert_eq!(back, set);
        }
    }
}
