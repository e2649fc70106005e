//! CSV and JSON artifacts.
//!
//! Floats are written with 17 significant digits, so reading a file back
//! reproduces the in-memory values exactly.

use std::path::Path;

use afm_core::{CoefficientTensor, FittedModel, Panel};
use ndarray::{Array2, Array3};
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{CliError, Result};

/// Points at which each fitted loading is tabulated in `ghat_grid.csv`.
pub const GHAT_GRID_POINTS: usize = 201;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::data(path, format!("{other:?}")),
    }
}

/// A CSV file as a header and string rows; `lines[k]` is the file line of `rows[k]`.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub lines: Vec<u64>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => CliError::data(path, format!("line {}: {e}", p.line())),
            None => csv_err(path, e),
        })?;
        lines.push(rec.position().map_or(0, |p| p.line()));
        rows.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(CliError::data(path, "missing header row"));
    }
    Ok(Table { header, rows, lines })
}

impl Table {
    pub fn parse_f64(&self, path: &Path, row: usize, col: usize) -> Result<f64> {
        let s = &self.rows[row][col];
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                CliError::data(
                    path,
                    format!("line {}, column {} (`{}`): `{s}` is not a finite number", self.lines[row], col + 1, self.header[col]),
                )
            })
    }

    pub fn parse_usize(&self, path: &Path, row: usize, col: usize) -> Result<usize> {
        let s = &self.rows[row][col];
        s.parse::<usize>().map_err(|_| {
            CliError::data(
                path,
                format!("line {}, column {} (`{}`): `{s}` is not a non-negative integer", self.lines[row], col + 1, self.header[col]),
            )
        })
    }

    /// Numeric block of every column from `first_col` onwards.
    pub fn numeric(&self, path: &Path, first_col: usize) -> Result<Array2<f64>> {
        let width = self.header.len();
        if width <= first_col {
            return Err(CliError::data(path, "no value columns"));
        }
        let mut out = Array2::zeros((self.rows.len(), width - first_col));
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(CliError::data(
                    path,
                    format!("line {}: expected {width} fields, found {}", self.lines[r], row.len()),
                ));
            }
            for c in first_col..width {
                out[[r, c - first_col]] = self.parse_f64(path, r, c)?;
            }
        }
        Ok(out)
    }
}

fn default_ids(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

pub fn series_ids(panel: &Panel) -> Vec<String> {
    panel
        .series_ids()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| default_ids("s", panel.n_series()))
}

/// Header `series_id,t1,...,tT`, one row per series.
pub fn write_panel(path: &Path, panel: &Panel) -> Result<()> {
    let mut w = csv_writer(path)?;
    let times = panel
        .time_ids()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| default_ids("t", panel.n_times()));
    let header: Vec<String> = std::iter::once("series_id".to_string()).chain(times).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (id, row) in series_ids(panel).iter().zip(panel.values().rows()) {
        let rec: Vec<String> = std::iter::once(id.clone()).chain(row.iter().map(|&v| fmt_f64(v))).collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_panel(path: &Path) -> Result<Panel> {
    let table = read_table(path)?;
    if table.rows.is_empty() {
        return Err(CliError::data(path, "panel has no series rows"));
    }
    let values = table.numeric(path, 1)?;
    let ids = table.rows.iter().map(|r| r[0].clone()).collect();
    let times = table.header[1..].to_vec();
    Panel::new(values)
        .and_then(|p| p.with_ids(Some(ids), Some(times)))
        .map_err(|e| CliError::data(path, e.to_string()))
}

/// Header `t,<prefix>1,...,<prefix>q`, one row per time point.
pub fn write_matrix(path: &Path, values: &Array2<f64>, prefix: &str) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(default_ids(prefix, values.ncols()))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (s, row) in values.rows().into_iter().enumerate() {
        let rec: Vec<String> = std::iter::once((s + 1).to_string())
            .chain(row.iter().map(|&v| fmt_f64(v)))
            .collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_factors(path: &Path, values: &Array2<f64>) -> Result<()> {
    write_matrix(path, values, "f")
}

/// T x q values of a file written by [`write_matrix`]; the first column is ignored.
pub fn read_factors(path: &Path) -> Result<Array2<f64>> {
    let table = read_table(path)?;
    if table.rows.is_empty() {
        return Err(CliError::data(path, "no rows"));
    }
    table.numeric(path, 1)
}

/// One row per `(series, factor)`: `series_id,factor,c1,...,cd`, factor numbered from 1.
pub fn write_coeffs(path: &Path, coeffs: &CoefficientTensor, ids: &[String]) -> Result<()> {
    let (n, q, d) = coeffs.dim();
    let mut w = csv_writer(path)?;
    let header: Vec<String> = ["series_id".to_string(), "factor".to_string()]
        .into_iter()
        .chain(default_ids("c", d))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..n {
        for l in 0..q {
            let rec: Vec<String> = [ids[i].clone(), (l + 1).to_string()]
                .into_iter()
                .chain(coeffs.slice(i, l).iter().map(|&v| fmt_f64(v)))
                .collect();
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Inverse of [`write_coeffs`]; rows must be ordered by series, then factor.
pub fn read_coeffs(path: &Path) -> Result<(CoefficientTensor, Vec<String>)> {
    let table = read_table(path)?;
    if table.header.len() < 3 || table.rows.is_empty() {
        return Err(CliError::data(path, "expected columns series_id,factor,c1,...,cd and at least one row"));
    }
    let d = table.header.len() - 2;
    let mut ids: Vec<String> = Vec::new();
    let mut q = 0;
    for (r, row) in table.rows.iter().enumerate() {
        let l = table.parse_usize(path, r, 1)?;
        if ids.last() != Some(&row[0]) {
            ids.push(row[0].clone());
        }
        q = q.max(l);
    }
    let n = ids.len();
    if q == 0 || table.rows.len() != n * q {
        return Err(CliError::data(path, format!("expected {n} series x {q} factors rows, found {}", table.rows.len())));
    }
    let block = table.numeric(path, 2)?;
    let mut values = Array3::zeros((n, q, d));
    for (r, row) in table.rows.iter().enumerate() {
        let (i, l) = (r / q, r % q);
        if row[0] != ids[i] || table.parse_usize(path, r, 1)? != l + 1 {
            return Err(CliError::data(
                path,
                format!("line {}: rows must be ordered by series then factor", table.lines[r]),
            ));
        }
        for k in 0..d {
            values[[i, l, k]] = block[[r, k]];
        }
    }
    let coeffs = CoefficientTensor::new(values).map_err(|e| CliError::data(path, e.to_string()))?;
    Ok((coeffs, ids))
}

/// Long format `series_id,factor,x,value` on a uniform grid of [`GHAT_GRID_POINTS`] points.
pub fn write_ghat_grid(path: &Path, model: &FittedModel, ids: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["series_id", "factor", "x", "value"]).map_err(|e| csv_err(path, e))?;
    let last = (GHAT_GRID_POINTS - 1) as f64;
    for (i, id) in ids.iter().enumerate() {
        for l in 0..model.n_factors() {
            for k in 0..GHAT_GRID_POINTS {
                let x = k as f64 / last;
                let v = model.component(i, l, x)?;
                w.write_record([id.clone(), (l + 1).to_string(), fmt_f64(x), fmt_f64(v)])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(path, e.to_string()))
}

/// Last column of a headed CSV, e.g. the reference series for an empirical target.
pub fn read_last_column(path: &Path) -> Result<Vec<f64>> {
    let table = read_table(path)?;
    let col = table.header.len() - 1;
    (0..table.rows.len())
        .map(|r| {
            if table.rows[r].len() != table.header.len() {
                return Err(CliError::data(
                    path,
                    format!("line {}: expected {} fields, found {}", table.lines[r], table.header.len(), table.rows[r].len()),
                ));
            }
            table.parse_f64(path, r, col)
        })
        .collect()
}
