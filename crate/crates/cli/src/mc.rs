//! Monte Carlo runner over a grid of (N, T, q) cells.
//!
//! Replication `r` of cell `(N, T, q)` uses the seed
//! `derive_seed(master, [N, T, q, r])`, so a cell's results do not depend
//! on which other cells are in the grid or on how work is scheduled.

use std::path::Path;
use std::time::Instant;

use afm_core::estimator::fit;
use afm_core::metrics::{align, ar1_ols, median_and_mad, mse_f, mse_g, retarget_values, StandardNormalTarget};
use afm_core::rng::derive_seed;
use afm_core::simulate::gen_panel;
use afm_core::{DgpSpec, EstimatorConfig, FactorSource, FunctionSource};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n: Vec<usize>,
    pub t: Vec<usize>,
    pub q: Vec<usize>,
    pub replications: usize,
    pub function_source: FunctionSource,
    pub noise_sd: f64,
    pub factor_source: FactorSource,
    pub theta: f64,
    pub burn_in: usize,
    /// `q` and `seed` are set per replication.
    pub estimator: EstimatorConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        let dgp = DgpSpec::default();
        Self {
            n: vec![10],
            t: vec![100],
            q: vec![1],
            replications: 10,
            function_source: dgp.function_source,
            noise_sd: dgp.noise_sd,
            factor_source: dgp.factor_source,
            theta: dgp.theta,
            burn_in: dgp.burn_in,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(CliError::Config("replications must be at least 1".into()));
        }
        if self.n.is_empty() || self.t.is_empty() || self.q.is_empty() {
            return Err(CliError::Config("the n, t and q grids must be non-empty".into()));
        }
        Ok(())
    }

    /// Cells in table order: q, then N, then T.
    pub fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &q in &self.q {
            for &n in &self.n {
                for &t in &self.t {
                    out.push((n, t, q));
                }
            }
        }
        out
    }

    fn dgp(&self, n: usize, t: usize, q: usize, seed: u64) -> DgpSpec {
        DgpSpec {
            n,
            t,
            q,
            function_source: self.function_source,
            noise_sd: self.noise_sd,
            factor_source: self.factor_source,
            theta: self.theta,
            burn_in: self.burn_in,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub cell: usize,
    pub n: usize,
    pub t: usize,
    pub q: usize,
    pub rep: usize,
    pub seed: u64,
    pub outcome: std::result::Result<Metrics, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse_g: f64,
    pub mse_f: f64,
    /// AR(1) slope of `Phi^{-1}` of the first estimated factor (AR factor designs only).
    pub theta_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub n: usize,
    pub t: usize,
    pub q: usize,
    pub mse_g: Option<(f64, f64)>,
    pub mse_f: Option<(f64, f64)>,
    pub failed: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub replications: Vec<Replication>,
    pub cells: Vec<CellSummary>,
}

pub fn replication_seed(master: u64, n: usize, t: usize, q: usize, rep: usize) -> u64 {
    derive_seed(master, &[n as u64, t as u64, q as u64, rep as u64])
}

fn run_one(cfg: &McConfig, n: usize, t: usize, q: usize, seed: u64) -> afm_core::Result<Metrics> {
    let truth = gen_panel(&cfg.dgp(n, t, q, seed))?;
    let est = EstimatorConfig {
        q,
        seed,
        ..cfg.estimator.clone()
    };
    let (model, _) = fit(&truth.panel, &est)?;
    let alignment = align(model.factors.values().view(), truth.factors.view())?;
    let theta_hat = match cfg.factor_source {
        FactorSource::Ar1Copula => {
            let z = retarget_values(model.factors.values().view(), &StandardNormalTarget)?;
            Some(ar1_ols(&z.column(0).to_vec())?)
        }
        FactorSource::IidUniform => None,
    };
    Ok(Metrics {
        mse_g: mse_g(&model, &truth, &alignment)?,
        mse_f: mse_f(model.factors.values().view(), truth.factors.view(), &alignment)?,
        theta_hat,
    })
}

/// Runs every replication on the current rayon pool; failures are recorded, not raised.
pub fn run_mc(cfg: &McConfig, master: u64) -> Result<McResult> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    let replications: Vec<Replication> = jobs
        .par_iter()
        .map(|&(cell, rep)| {
            let (n, t, q) = cells[cell];
            let seed = replication_seed(master, n, t, q, rep);
            let start = Instant::now();
            let outcome = run_one(cfg, n, t, q, seed).map_err(|e| e.to_string());
            Replication {
                cell,
                n,
                t,
                q,
                rep,
                seed,
                outcome,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    let summaries = cells
        .iter()
        .enumerate()
        .map(|(c, &(n, t, q))| {
            let reps: Vec<&Replication> = replications.iter().filter(|r| r.cell == c).collect();
            let ok: Vec<Metrics> = reps.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect();
            let g: Vec<f64> = ok.iter().map(|m| m.mse_g).collect();
            let f: Vec<f64> = ok.iter().map(|m| m.mse_f).collect();
            CellSummary {
                n,
                t,
                q,
                mse_g: median_and_mad(&g).ok(),
                mse_f: median_and_mad(&f).ok(),
                failed: reps.len() - ok.len(),
                seconds: reps.iter().map(|r| r.seconds).sum(),
            }
        })
        .collect();
    Ok(McResult {
        replications,
        cells: summaries,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::data(path, e.to_string()))
}

fn put<I, S>(w: &mut csv::Writer<std::fs::File>, path: &Path, rec: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| CliError::data(path, e.to_string()))
}

pub const RAW: &str = "raw.csv";
pub const TABLE: &str = "table.csv";
pub const TIMING: &str = "timing.csv";

/// Per-replication metrics, one row each.
pub fn write_raw(path: &Path, result: &McResult) -> Result<()> {
    let mut w = writer(path)?;
    put(&mut w, path, ["cell", "n", "t", "q", "rep", "seed", "mse_g", "mse_f", "theta_hat", "status", "error"])?;
    for r in &result.replications {
        let (g, f, th, status, err) = match &r.outcome {
            Ok(m) => (fmt_f64(m.mse_g), fmt_f64(m.mse_f), opt(m.theta_hat), "ok", String::new()),
            Err(e) => (String::new(), String::new(), String::new(), "failed", e.clone()),
        };
        put(
            &mut w,
            path,
            [
                r.cell.to_string(),
                r.n.to_string(),
                r.t.to_string(),
                r.q.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                g,
                f,
                th,
                status.to_string(),
                err,
            ],
        )?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One row per (q, N) and a block of columns per T: medians, MADs and failure counts.
pub fn write_table(path: &Path, cfg: &McConfig, result: &McResult) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["q".to_string(), "n".to_string()];
    for t in &cfg.t {
        for col in ["mse_g_median", "mse_g_mad", "mse_f_median", "mse_f_mad", "failed"] {
            header.push(format!("t{t}_{col}"));
        }
    }
    put(&mut w, path, &header)?;
    for &q in &cfg.q {
        for &n in &cfg.n {
            let mut rec = vec![q.to_string(), n.to_string()];
            for &t in &cfg.t {
                let c = result
                    .cells
                    .iter()
                    .find(|c| (c.n, c.t, c.q) == (n, t, q))
                    .expect("every grid cell is summarized");
                rec.push(opt(c.mse_g.map(|m| m.0)));
                rec.push(opt(c.mse_g.map(|m| m.1)));
                rec.push(opt(c.mse_f.map(|m| m.0)));
                rec.push(opt(c.mse_f.map(|m| m.1)));
                rec.push(c.failed.to_string());
            }
            put(&mut w, path, &rec)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Wall-clock seconds per cell, summed over replications. Not reproducible by nature.
pub fn write_timing(path: &Path, result: &McResult) -> Result<()> {
    let mut w = writer(path)?;
    put(&mut w, path, ["n", "t", "q", "replications", "seconds"])?;
    for c in &result.cells {
        let reps = result.replications.iter().filter(|r| (r.n, r.t, r.q) == (c.n, c.t, c.q)).count();
        put(
            &mut w,
            path,
            [c.n.to_string(), c.t.to_string(), c.q.to_string(), reps.to_string(), format!("{:.3}", c.seconds)],
        )?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
