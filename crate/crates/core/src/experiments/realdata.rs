//! Ingestion of two-column cause/effect files and the noise-robustness sweep.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::data::RealDataset;
use crate::direction::GapReport;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::gaussian::fit_linear_columns;
use crate::models::net::fit_net;
use crate::models::TrainConfig;
use crate::prob::Direction;
use crate::rng::{run_rng, RunRng};

/// Standardized rows; column 0 is the cause.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub data: RealDataset,
    pub source: String,
    pub scaled: bool,
}

fn is_separator(c: char) -> bool {
    c == ',' || c == ';' || c.is_whitespace()
}

/// Parse two numeric columns separated by whitespace, commas or semicolons.
/// A first line with non-numeric fields is a header. Extra columns are
/// ignored.
pub fn parse_pair_text(text: &str, source: &str) -> Result<PairDataset> {
    let err = |line: usize, msg: String| Error::Parse { path: source.to_string(), line, msg };
    let mut rows = Vec::new();
    let mut seen_content = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(is_separator).filter(|f| !f.is_empty()).collect();
        if fields.len() < 2 {
            return Err(err(i + 1, format!("expected 2 columns, found {}", fields.len())));
        }
        let parsed: std::result::Result<Vec<f64>, _> = fields[..2].iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.iter().all(|x| x.is_finite()) => rows.push((v[0], v[1])),
            Ok(_) => return Err(err(i + 1, "non-finite value".into())),
            Err(_) if !seen_content => {}
            Err(e) => return Err(err(i + 1, format!("not a number: {e}"))),
        }
        seen_content = true;
    }
    if rows.len() < 2 {
        return Err(Error::EmptyDataset("pair file needs at least two data rows"));
    }
    let mut ds = PairDataset { data: RealDataset::from_pairs(&rows), source: source.to_string(), scaled: false };
    ds.standardize()?;
    Ok(ds)
}

pub fn ingest_pair_file(path: &Path) -> Result<PairDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_pair_text(&text, &path.display().to_string())
}

impl PairDataset {
    /// Zero mean, unit (population) variance per column.
    fn standardize(&mut self) -> Result<()> {
        let n = self.data.len() as f64;
        for col in 0..2 {
            let get = |p: &crate::data::RealPair| if col == 0 { p.a } else { p.b };
            let mean = self.data.samples.iter().map(get).sum::<f64>() / n;
            let var = self.data.samples.iter().map(|p| (get(p) - mean).powi(2)).sum::<f64>() / n;
            if var <= 1e-12 * (1.0 + mean * mean) {
                return Err(Error::DegenerateColumn(col));
            }
            let sd = var.sqrt();
            for p in &mut self.data.samples {
                let v = if col == 0 { &mut p.a } else { &mut p.b };
                *v = (*v - mean) / sd;
            }
        }
        self.scaled = true;
        Ok(())
    }
}

/// Split on the cause at its median (rows `>= median` form `D1`), shuffle
/// each half and cut it 9:1. Train is `D1_1 + D2_2`, transfer `D2_1 + D1_2`.
pub fn split_train_transfer(data: &RealDataset, rng: &mut RunRng) -> (RealDataset, RealDataset) {
    let mut causes: Vec<f64> = data.samples.iter().map(|p| p.a).collect();
    causes.sort_by(|a, b| a.total_cmp(b));
    let median = super::quantile(&causes, 0.5);
    let (mut d1, mut d2): (Vec<_>, Vec<_>) = data.samples.iter().copied().partition(|p| p.a >= median);
    d1.shuffle(rng);
    d2.shuffle(rng);
    let cut = |v: &Vec<_>| (v.len() * 9).div_ceil(10);
    let (c1, c2) = (cut(&d1), cut(&d2));
    let mut train = d1[..c1].to_vec();
    train.extend_from_slice(&d2[c2..]);
    let mut transfer = d2[..c2].to_vec();
    transfer.extend_from_slice(&d1[c1..]);
    (RealDataset { samples: train }, RealDataset { samples: transfer })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RealModel {
    Linear,
    Net,
}

impl RealModel {
    pub fn name(self) -> &'static str {
        match self {
            RealModel::Linear => "linear",
            RealModel::Net => "net",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub noise_levels: Vec<f64>,
    pub models: Vec<RealModel>,
    pub hidden: usize,
    pub net_train: TrainConfig,
    pub exec: Exec,
}

impl Default for RealDataConfig {
    fn default() -> Self {
        Self {
            seeds: 200,
            base_seed: 0,
            noise_levels: vec![0.0, 0.5, 1.0, 5.0, 10.0, 50.0],
            models: vec![RealModel::Linear],
            hidden: 16,
            net_train: TrainConfig::net(),
            exec: Exec::Parallel,
        }
    }
}

impl RealDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 || self.noise_levels.is_empty() || self.models.is_empty() {
            return Err(Error::InvalidConfig("realdata needs seeds, noise levels and models".into()));
        }
        if let Some(s) = self.noise_levels.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("noise level must be non-negative, got {s}")));
        }
        self.net_train.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealDataRecord {
    pub model: RealModel,
    pub noise: f64,
    pub seed: u64,
    pub s_g: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataResult {
    pub records: Vec<RealDataRecord>,
}

impl RealDataResult {
    pub fn success_rate(&self, model: RealModel, noise: f64) -> Option<f64> {
        let sel: Vec<_> = self.records.iter().filter(|r| r.model == model && r.noise == noise).collect();
        if sel.is_empty() {
            return None;
        }
        Some(sel.iter().filter(|r| r.correct).count() as f64 / sel.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,noise,seed,s_g,correct\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{},{}\n", r.model.name(), r.noise, r.seed, r.s_g, r.correct as u8));
        }
        s
    }

    /// `model,noise,seeds,success_rate`.
    pub fn summary_csv(&self) -> String {
        let mut keys: Vec<(RealModel, f64)> = Vec::new();
        for r in &self.records {
            if !keys.contains(&(r.model, r.noise)) {
                keys.push((r.model, r.noise));
            }
        }
        let mut s = String::from("model,noise,seeds,success_rate\n");
        for (m, noise) in keys {
            let n = self.records.iter().filter(|r| r.model == m && r.noise == noise).count();
            let rate = self.success_rate(m, noise).unwrap_or(f64::NAN);
            s.push_str(&format!("{},{noise},{n},{rate}\n", m.name()));
        }
        s
    }
}

fn add_noise(data: &RealDataset, sd: f64, rng: &mut RunRng) -> RealDataset {
    let mut out = data.clone();
    if sd > 0.0 {
        for p in &mut out.samples {
            let (ea, eb): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            p.a += sd * ea;
            p.b += sd * eb;
        }
    }
    out
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt().max(1e-12))
}

fn mse_gap(model: RealModel, train: &RealDataset, transfer: &RealDataset, cfg: &RealDataConfig, rng: &mut RunRng) -> Result<GapReport> {
    let mut l = [0.0; 4];
    for (i, dir) in [Direction::AToB, Direction::BToA].into_iter().enumerate() {
        let (xs, ys) = train.columns(dir);
        let (tx, ty) = transfer.columns(dir);
        let (tr, te) = match model {
            RealModel::Linear => {
                let m = fit_linear_columns(&xs, &ys)?.model;
                let mse = |a: &[f64], b: &[f64]| {
                    a.iter().zip(b).map(|(x, y)| (y - m.predict(*x)).powi(2)).sum::<f64>() / a.len() as f64
                };
                (mse(&xs, &ys), mse(&tx, &ty))
            }
            RealModel::Net => {
                // Fit on train-standardized columns; losses back in target units.
                let (mx, sx) = mean_sd(&xs);
                let (my, sy) = mean_sd(&ys);
                let z = |v: &[f64], m: f64, s: f64| v.iter().map(|x| (x - m) / s).collect::<Vec<f64>>();
                let (zx, zy) = (z(&xs, mx, sx), z(&ys, my, sy));
                let pairs: Vec<(f64, f64)> = zx.iter().copied().zip(zy.iter().copied()).collect();
                let net = fit_net(&RealDataset::from_pairs(&pairs), Direction::AToB, cfg.hidden, &cfg.net_train, rng)?;
                let scale = sy * sy;
                (scale * net.mse(&zx, &zy), scale * net.mse(&z(&tx, mx, sx), &z(&ty, my, sy)))
            }
        };
        l[2 * i] = tr;
        l[2 * i + 1] = te;
    }
    Ok(GapReport::from_losses(l[0], l[1], l[2], l[3]))
}

/// Per seed: split the clean data, add noise of every level to both parts,
/// fit both directions and score with squared-error gaps.
pub fn run_realdata(data: &PairDataset, cfg: &RealDataConfig) -> Result<RealDataResult> {
    cfg.validate()?;
    if data.data.len() < 100 {
        return Err(Error::EmptyDataset("realdata needs at least 100 rows"));
    }
    let per_seed = cfg.exec.try_map(cfg.seeds, |i| -> Result<Vec<RealDataRecord>> {
        let seed = cfg.base_seed.wrapping_add(i as u64);
        let mut rng = run_rng(seed, 0);
        let (train, transfer) = split_train_transfer(&data.data, &mut rng);
        let mut out = Vec::new();
        for &noise in &cfg.noise_levels {
            let tr = add_noise(&train, noise, &mut rng);
            let te = add_noise(&transfer, noise, &mut rng);
            for &model in &cfg.models {
                let s_g = mse_gap(model, &tr, &te, cfg, &mut rng)?.s_g();
                out.push(RealDataRecord { model, noise, seed, s_g, correct: s_g > 0.0 });
            }
        }
        Ok(out)
    })?;
    let mut records: Vec<RealDataRecord> = per_seed.into_iter().flatten().collect();
    records.sort_by_key(|r| (cfg.models.iter().position(|m| *m == r.model), cfg.noise_levels.iter().position(|n| *n == r.noise)));
    Ok(RealDataResult { records })
}
