//! The five subcommands. Each is a pure function of its input files and config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use afm_core::basis::make_basis;
use afm_core::estimator::{fit, FitReport};
use afm_core::metrics::{
    align, ar1_ols, mse_f, mse_g_parts, mse_g_with, retarget_values, Alignment, EmpiricalTarget, StandardNormalTarget,
};
use afm_core::simulate::gen_panel;
use afm_core::{DgpSpec, EstimatorConfig, FactorSource, FunctionDescriptor};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Target};
use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::write_manifest;
use crate::mc;

pub const PANEL: &str = "panel.csv";
pub const FACTORS_TRUE: &str = "factors_true.csv";
pub const FUNCTIONS_TRUE: &str = "functions_true.json";
pub const LATENT_Z: &str = "latent_z.csv";
pub const FACTORS_EST: &str = "factors_est.csv";
pub const COEFFS: &str = "coeffs.csv";
pub const GHAT_GRID: &str = "ghat_grid.csv";
pub const FIT_REPORT: &str = "fit_report.json";
pub const EVAL: &str = "eval.json";
pub const Z: &str = "z.csv";
pub const THETA: &str = "theta.json";
pub const RETARGETED: &str = "factors_retargeted.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Eval,
    Mc,
    Transform,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Fit => "fit",
            Self::Eval => "eval",
            Self::Mc => "mc",
            Self::Transform => "transform",
        }
    }
}

/// Files written plus an optional JSON summary for stdout.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub report: Option<serde_json::Value>,
}

/// Everything `fit` knows after the run, as stored in `fit_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportFile {
    pub n_series: usize,
    pub n_times: usize,
    pub q: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub report: FitReport,
    /// `(iteration, best loss so far)`.
    pub loss_trace: Vec<(usize, f64)>,
    pub series_means: Vec<f64>,
    pub config: EstimatorConfig,
}

/// Result of `eval`, as stored in `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse_g: f64,
    pub mse_f: f64,
    pub alignment: Alignment,
}

/// Runs `f` on a pool of `workers` threads, or on the global pool when unset.
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> Result<R> + Send,
{
    match workers {
        None => f(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {k} workers: {e}")))?
            .install(f),
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref()
        .ok_or_else(|| CliError::Config(format!("missing `{name}` section")))
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    match command {
        Command::Simulate => simulate(cfg),
        Command::Fit => fit_cmd(cfg),
        Command::Eval => eval(cfg),
        Command::Mc => mc_cmd(cfg),
        Command::Transform => transform(cfg),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let mut spec: DgpSpec = cfg.simulate.clone().unwrap_or_default();
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    let truth = gen_panel(&spec)?;
    let dir = prepare_out(cfg)?;
    io::write_panel(&dir.join(PANEL), &truth.panel)?;
    io::write_factors(&dir.join(FACTORS_TRUE), &truth.factors)?;
    io::write_json(&dir.join(FUNCTIONS_TRUE), &truth.functions)?;
    let mut names = vec![PANEL, FACTORS_TRUE, FUNCTIONS_TRUE];
    if let Some(z) = &truth.latent_z {
        io::write_matrix(&dir.join(LATENT_Z), z, "z")?;
        names.push(LATENT_Z);
    }
    let resolved = RunConfig {
        simulate: Some(spec.clone()),
        ..cfg.clone()
    };
    let seeds = BTreeMap::from([("dgp".to_string(), spec.seed)]);
    write_manifest(&dir, "simulate", &resolved, seeds, &names)?;
    Ok(Outcome {
        files: names.iter().map(|n| dir.join(n)).collect(),
        report: None,
    })
}

pub fn fit_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let section = section(&cfg.fit, "fit")?;
    let mut est = section.estimator.clone();
    if let Some(seed) = cfg.seed {
        est.seed = seed;
    }
    est.validate()?;
    let panel = io::read_panel(&section.panel)?;
    let (model, report) = with_workers(cfg.workers, || Ok(fit(&panel, &est)?))?;
    let dir = prepare_out(cfg)?;
    let ids = io::series_ids(&panel);
    io::write_factors(&dir.join(FACTORS_EST), model.factors.values())?;
    io::write_coeffs(&dir.join(COEFFS), &model.coeffs, &ids)?;
    io::write_ghat_grid(&dir.join(GHAT_GRID), &model, &ids)?;
    let file = FitReportFile {
        n_series: model.n_series(),
        n_times: model.n_times(),
        q: model.n_factors(),
        seed: est.seed,
        report,
        loss_trace: model.loss_trace.clone(),
        series_means: model.series_means.clone(),
        config: est.clone(),
    };
    io::write_json(&dir.join(FIT_REPORT), &file)?;
    let names = [FACTORS_EST, COEFFS, GHAT_GRID, FIT_REPORT];
    let mut resolved = cfg.clone();
    if let Some(f) = &mut resolved.fit {
        f.estimator = est.clone();
    }
    let seeds = BTreeMap::from([("estimator".to_string(), est.seed)]);
    write_manifest(&dir, "fit", &resolved, seeds, &names)?;
    Ok(Outcome {
        files: names.iter().map(|n| dir.join(n)).collect(),
        report: Some(serde_json::json!({
            "final_loss": file.report.final_loss,
            "n_iterations": file.report.n_iterations,
            "converged": file.report.converged,
        })),
    })
}

/// Loss of the written factors and coefficients on the centered panel.
pub fn reload_loss(panel: &Path, factors: &Path, coeffs: &Path) -> Result<f64> {
    let panel = io::read_panel(panel)?;
    let (centered, _) = panel.centered();
    let values = io::read_factors(factors)?;
    let (coeffs, _) = io::read_coeffs(coeffs)?;
    let basis = make_basis(coeffs.dim().2)?;
    Ok(afm_core::loss(&centered, &basis, &coeffs, values.view())?)
}

pub fn evaluate(section: &crate::config::EvalSection) -> Result<EvalReport> {
    let est = io::read_factors(&section.factors_est)?;
    let truth = io::read_factors(&section.factors_true)?;
    if est.dim() != truth.dim() {
        return Err(CliError::data(
            &section.factors_est,
            format!("shape {:?} does not match {} with shape {:?}", est.dim(), section.factors_true.display(), truth.dim()),
        ));
    }
    let functions: Vec<Vec<FunctionDescriptor>> = io::read_json(&section.functions_true)?;
    let (t, q) = truth.dim();
    let n = functions.len();
    let alignment = align(est.view(), truth.view()).map_err(|e| CliError::data(&section.factors_est, e.to_string()))?;
    let mse_f = mse_f(est.view(), truth.view(), &alignment)?;
    let mse_g = match (&section.coeffs, &section.functions_est) {
        (Some(path), _) => {
            let (coeffs, _) = io::read_coeffs(path)?;
            let (cn, cq, d) = coeffs.dim();
            if (cn, cq) != (n, q) {
                return Err(CliError::data(
                    path,
                    format!("{cn} series x {cq} factors, but the truth has {n} x {q} (T = {t})"),
                ));
            }
            mse_g_parts(&make_basis(d)?, &coeffs, truth.view(), &functions, &alignment)?
        }
        (None, Some(path)) => {
            let est_fns: Vec<Vec<FunctionDescriptor>> = io::read_json(path)?;
            if est_fns.len() != n || est_fns.iter().any(|r| r.len() != q) {
                return Err(CliError::data(path, format!("expected {n} series with {q} loadings each")));
            }
            mse_g_with(n, q, |i, k, x| est_fns[i][k].eval(x), truth.view(), &functions, &alignment)?
        }
        (None, None) => {
            return Err(CliError::Config("eval needs `coeffs` or `functions_est`".into()));
        }
    };
    Ok(EvalReport { mse_g, mse_f, alignment })
}

pub fn eval(cfg: &RunConfig) -> Result<Outcome> {
    let section = section(&cfg.eval, "eval")?;
    let report = evaluate(section)?;
    let dir = prepare_out(cfg)?;
    io::write_json(&dir.join(EVAL), &report)?;
    write_manifest(&dir, "eval", cfg, BTreeMap::new(), &[EVAL])?;
    Ok(Outcome {
        files: vec![dir.join(EVAL)],
        report: Some(serde_json::to_value(&report).expect("plain data")),
    })
}

pub fn mc_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let mc_cfg = section(&cfg.mc, "mc")?;
    let master = cfg.seed.unwrap_or(0);
    let result = with_workers(cfg.workers, || mc::run_mc(mc_cfg, master))?;
    let dir = prepare_out(cfg)?;
    mc::write_raw(&dir.join(mc::RAW), &result)?;
    mc::write_table(&dir.join(mc::TABLE), mc_cfg, &result)?;
    mc::write_timing(&dir.join(mc::TIMING), &result)?;
    let seeds = BTreeMap::from([("master".to_string(), master)]);
    write_manifest(&dir, "mc", cfg, seeds, &[mc::RAW, mc::TABLE])?;
    let failed: usize = result.cells.iter().map(|c| c.failed).sum();
    Ok(Outcome {
        files: [mc::RAW, mc::TABLE, mc::TIMING].iter().map(|n| dir.join(n)).collect(),
        report: Some(serde_json::json!({
            "cells": result.cells.len(),
            "replications": result.replications.len(),
            "failed": failed,
            "ar1_factors": mc_cfg.factor_source == FactorSource::Ar1Copula,
        })),
    })
}

pub fn transform(cfg: &RunConfig) -> Result<Outcome> {
    let section = section(&cfg.transform, "transform")?;
    let target = section.parse_target()?;
    let values = io::read_factors(&section.factors)?;
    let dir = prepare_out(cfg)?;
    let to_data = |e: afm_core::AfmError| CliError::data(&section.factors, e.to_string());
    match target {
        Target::Gaussian => {
            let z = retarget_values(values.view(), &StandardNormalTarget).map_err(to_data)?;
            let theta = z
                .columns()
                .into_iter()
                .map(|c| ar1_ols(&c.to_vec()))
                .collect::<afm_core::Result<Vec<f64>>>()
                .map_err(to_data)?;
            io::write_matrix(&dir.join(Z), &z, "z")?;
            io::write_json(&dir.join(THETA), &serde_json::json!({ "theta": theta }))?;
            write_manifest(&dir, "transform", cfg, BTreeMap::new(), &[Z, THETA])?;
            Ok(Outcome {
                files: vec![dir.join(Z), dir.join(THETA)],
                report: Some(serde_json::json!({ "theta": theta })),
            })
        }
        Target::Ecdf(reference) => {
            let sample = io::read_last_column(&reference)?;
            let target = EmpiricalTarget::new(&sample).map_err(|e| CliError::data(&reference, e.to_string()))?;
            let y = retarget_values(values.view(), &target).map_err(to_data)?;
            io::write_matrix(&dir.join(RETARGETED), &y, "f")?;
            write_manifest(&dir, "transform", cfg, BTreeMap::new(), &[RETARGETED])?;
            Ok(Outcome {
                files: vec![dir.join(RETARGETED)],
                report: None,
            })
        }
    }
}
