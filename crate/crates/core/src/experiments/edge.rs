//! Population-level relation between the gap score, the KL score and the
//! entropy changes on random small instances.

use crate::direction::{population_gaps, score_sdkl_population};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::prob::{entropy_deltas, make_pair, DistributionPair};
use crate::rng::run_rng;

use super::quantile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRow {
    pub s_dkl: f64,
    pub s_g: f64,
    pub dh_a: f64,
    pub dh_b: f64,
    /// `S_G - (S_DKL - (dH(B) - dH(A)))`.
    pub identity_residual: f64,
}

impl EdgeRow {
    pub const CSV_HEADER: &'static str = "instance,s_dkl,abs_s_dkl,s_g,dh_a,dh_b,identity_residual";

    pub fn from_pair(pair: &DistributionPair) -> Result<Self> {
        let s_dkl = score_sdkl_population(pair)?.consistent();
        let s_g = population_gaps(pair)?.s_g();
        let dh = entropy_deltas(pair);
        Ok(Self {
            s_dkl,
            s_g,
            dh_a: dh.dh_a,
            dh_b: dh.dh_b,
            identity_residual: s_g - (s_dkl - (dh.dh_b - dh.dh_a)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSummary {
    pub rows: Vec<EdgeRow>,
    /// Instances with `S_G < 0` and `dH(A) >= 0`.
    pub negative_with_nonneg_dh_a: usize,
    pub negative: usize,
    /// 90th percentile of `|S_G|` over instances with `S_G > 0`.
    pub positive_p90: f64,
    /// Negative instances with `|S_G|` at or above `positive_p90`.
    pub large_negative: usize,
    pub max_identity_residual: f64,
}

impl EdgeSummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(EdgeRow::CSV_HEADER);
        s.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            s.push_str(&format!(
                "{i},{},{},{},{},{},{}\n",
                r.s_dkl,
                r.s_dkl.abs(),
                r.s_g,
                r.dh_a,
                r.dh_b,
                r.identity_residual
            ));
        }
        s
    }

    fn from_rows(rows: Vec<EdgeRow>) -> Self {
        let positives: Vec<f64> = rows.iter().filter(|r| r.s_g > 0.0).map(|r| r.s_g).collect();
        let positive_p90 = quantile(&positives, 0.9);
        let neg = rows.iter().filter(|r| r.s_g < 0.0);
        Self {
            negative_with_nonneg_dh_a: neg.clone().filter(|r| r.dh_a >= 0.0).count(),
            negative: neg.clone().count(),
            large_negative: neg.filter(|r| !(r.s_g.abs() < positive_p90)).count(),
            max_identity_residual: rows.iter().map(|r| r.identity_residual.abs()).fold(0.0, f64::max),
            positive_p90,
            rows,
        }
    }
}

/// `instances` random `dim x dim` pairs; instance `i` uses stream `i` of
/// `base_seed`.
pub fn run_edge_analysis(instances: usize, dim: usize, base_seed: u64, exec: Exec) -> Result<EdgeSummary> {
    if instances == 0 {
        return Err(Error::InvalidConfig("edge analysis needs at least one instance".into()));
    }
    let rows = exec.try_map(instances, |i| {
        let mut rng = run_rng(base_seed, i as u64);
        EdgeRow::from_pair(&make_pair(dim, dim, &mut rng)?)
    })?;
    Ok(EdgeSummary::from_rows(rows))
}
