//! Panel, factor and coefficient containers and the least-squares loss.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, LocalBasis};
use crate::error::{shape_err, AfmError, Result};

/// N x T panel, one row per series.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: Array2<f64>,
    series_ids: Option<Vec<String>>,
    time_ids: Option<Vec<String>>,
}

impl Panel {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, t) = values.dim();
        if n < 1 || t < 2 {
            return Err(AfmError::InvalidPanel(format!(
                "need N >= 1 and T >= 2, got N = {n}, T = {t}"
            )));
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(AfmError::InvalidPanel(format!(
                "entry ({i}, {j}) is not finite: {v}"
            )));
        }
        Ok(Self {
            values,
            series_ids: None,
            time_ids: None,
        })
    }

    pub fn with_ids(mut self, series_ids: Option<Vec<String>>, time_ids: Option<Vec<String>>) -> Result<Self> {
        if let Some(ids) = &series_ids {
            if ids.len() != self.n_series() {
                return Err(shape_err("series ids", self.n_series(), ids.len()));
            }
        }
        if let Some(ids) = &time_ids {
            if ids.len() != self.n_times() {
                return Err(shape_err("time ids", self.n_times(), ids.len()));
            }
        }
        self.series_ids = series_ids;
        self.time_ids = time_ids;
        Ok(self)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_series(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.values.ncols()
    }

    pub fn series_ids(&self) -> Option<&[String]> {
        self.series_ids.as_deref()
    }

    pub fn time_ids(&self) -> Option<&[String]> {
        self.time_ids.as_deref()
    }

    /// Per-series sample means.
    pub fn series_means(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| r.sum() / r.len() as f64)
            .collect()
    }

    /// Returns the panel with each series' mean removed, and the means.
    pub fn centered(&self) -> (Panel, Vec<f64>) {
        let means = self.series_means();
        let mut values = self.values.clone();
        for (mut row, m) in values.rows_mut().into_iter().zip(&means) {
            row.mapv_inplace(|v| v - m);
        }
        let panel = Panel {
            values,
            series_ids: self.series_ids.clone(),
            time_ids: self.time_ids.clone(),
        };
        (panel, means)
    }
}

/// Grid point `(k + 1) / (T + 1)` for the zero-based index `k`.
#[inline]
pub fn grid_value(k: usize, t: usize) -> f64 {
    (k + 1) as f64 / (t + 1) as f64
}

/// One-based ranks with ties broken by position (earlier gets the smaller rank).
pub fn ranks_by_index(values: ArrayView1<'_, f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (r, &t) in order.iter().enumerate() {
        ranks[t] = r + 1;
    }
    ranks
}

/// T x q factors, each column a permutation of the grid `{1/(T+1), ..., T/(T+1)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    /// Zero-based grid index of each entry.
    index: Array2<usize>,
    values: Array2<f64>,
}

impl FactorMatrix {
    /// Builds from zero-based grid indices; each column must be a permutation of `0..T`.
    pub fn from_grid_indices(index: Array2<usize>) -> Result<Self> {
        let (t, _) = index.dim();
        for (l, col) in index.columns().into_iter().enumerate() {
            let mut seen = vec![false; t];
            for &k in col {
                if k >= t || seen[k] {
                    return Err(AfmError::InvalidFactors { column: l });
                }
                seen[k] = true;
            }
        }
        let values = index.mapv(|k| grid_value(k, t));
        Ok(Self { index, values })
    }

    /// Validates that every column of `values` is exactly a permuted grid.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (t, q) = values.dim();
        let mut index = Array2::zeros((t, q));
        for (l, col) in values.columns().into_iter().enumerate() {
            let ranks = ranks_by_index(col);
            for (s, &r) in ranks.iter().enumerate() {
                if col[s] != grid_value(r - 1, t) {
                    return Err(AfmError::InvalidFactors { column: l });
                }
                index[[s, l]] = r - 1;
            }
        }
        Ok(Self { index, values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn grid_indices(&self) -> &Array2<usize> {
        &self.index
    }

    pub fn n_times(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.values.ncols()
    }

    /// Reorders columns so that column `j` of the result is column `order[j]` of `self`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        Self {
            index: self.index.select(Axis(1), order),
            values: self.values.select(Axis(1), order),
        }
    }
}

/// Unprojected factor values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFactors {
    values: Array2<f64>,
}

impl RawFactors {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AfmError::Domain(v));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Spline coefficients `b_il`, stored N x q x d.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    values: Array3<f64>,
}

impl CoefficientTensor {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AfmError::NonFinite("coefficient tensor"));
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(n: usize, q: usize, d: usize) -> Self {
        Self {
            values: Array3::zeros((n, q, d)),
        }
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    /// Coefficients of series `i`, factor `l`.
    pub fn slice(&self, i: usize, l: usize) -> &[f64] {
        let d = self.values.dim().2;
        let start = (i * self.values.dim().1 + l) * d;
        &self.values.as_slice().expect("standard layout")[start..start + d]
    }

    pub(crate) fn slice_mut(&mut self, i: usize, l: usize) -> &mut [f64] {
        let d = self.values.dim().2;
        let start = (i * self.values.dim().1 + l) * d;
        &mut self.values.as_slice_mut().expect("standard layout")[start..start + d]
    }

    pub fn permute_factors(&self, order: &[usize]) -> Self {
        Self {
            values: self
                .values
                .select(Axis(1), order)
                .as_standard_layout()
                .into_owned(),
        }
    }
}

/// Requested spline dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    /// `round(4 + 0.25 T^(1/(1+2 eta)))`.
    #[default]
    Auto,
    #[serde(untagged)]
    Fixed(usize),
}

/// How the starting factors are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// Ranks of the leading principal component scores.
    #[default]
    PcaRank,
    /// Ranks of independent uniform draws.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub q: usize,
    pub d: Dimension,
    pub eta: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub ridge: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub factor_grid_sweeps: usize,
    pub init: InitMethod,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            q: 1,
            d: Dimension::Auto,
            eta: 1.0,
            max_iter: 100,
            rel_tol: 1e-6,
            ridge: 1e-8,
            n_starts: 1,
            seed: 0,
            factor_grid_sweeps: 2,
            init: InitMethod::PcaRank,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AfmError::InvalidConfig(msg));
        if self.q < 1 {
            return bad("q must be at least 1".into());
        }
        if let Dimension::Fixed(d) = self.d {
            if d < 4 {
                return Err(AfmError::InvalidDimension(d));
            }
        }
        if !(self.eta >= 1.0) {
            return bad(format!("eta must be >= 1, got {}", self.eta));
        }
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.rel_tol >= 0.0) {
            return bad(format!("rel_tol must be >= 0, got {}", self.rel_tol));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return bad(format!("ridge must be finite and >= 0, got {}", self.ridge));
        }
        if self.n_starts < 1 {
            return bad("n_starts must be at least 1".into());
        }
        if self.factor_grid_sweeps < 1 {
            return bad("factor_grid_sweeps must be at least 1".into());
        }
        Ok(())
    }

    /// Spline dimension used for `t` time points.
    pub fn resolve_dim(&self, t: usize) -> usize {
        match self.d {
            Dimension::Auto => default_d(t, self.eta),
            Dimension::Fixed(d) => d,
        }
    }
}

/// `round(4 + 0.25 T^(1/(1+2 eta)))`, ties to even, never below 4.
pub fn default_d(t: usize, eta: f64) -> usize {
    let raw = 4.0 + 0.25 * (t as f64).powf(1.0 / (1.0 + 2.0 * eta));
    (raw.round_ties_even() as usize).max(4)
}

/// Basis values at every entry of a T x q factor matrix.
pub(crate) fn local_bases(basis: &BasisSpec, factors: ArrayView2<'_, f64>) -> Result<Array2<LocalBasis>> {
    let (t, q) = factors.dim();
    let mut out = Vec::with_capacity(t * q);
    for &f in factors.iter() {
        out.push(basis.eval_local(f)?);
    }
    Ok(Array2::from_shape_vec((t, q), out).expect("shape"))
}

fn check_dims(panel: &Panel, basis: &BasisSpec, coeffs: &CoefficientTensor, factors: ArrayView2<'_, f64>) -> Result<()> {
    let (n, t) = panel.values().dim();
    let (cn, cq, cd) = coeffs.dim();
    let (ft, fq) = factors.dim();
    if cn != n {
        return Err(shape_err("coefficients (series)", n, cn));
    }
    if ft != t {
        return Err(shape_err("factors (time points)", t, ft));
    }
    if fq != cq {
        return Err(shape_err("factors (columns)", cq, fq));
    }
    if cd != basis.dim() {
        return Err(shape_err("coefficients (basis dimension)", basis.dim(), cd));
    }
    Ok(())
}

/// Sum of squared residuals at time `t`, in the fixed order used everywhere.
#[inline]
pub(crate) fn time_sse(x_col: ArrayView1<'_, f64>, fitted: impl Fn(usize) -> f64) -> f64 {
    let mut s = 0.0;
    for (i, &x) in x_col.iter().enumerate() {
        let r = x - fitted(i);
        s += r * r;
    }
    s
}

/// `(1/NT) sum_i sum_t (x_it - sum_l psi(f_tl)' b_il)^2`.
///
/// The panel is expected to be centered per series already.
pub fn loss(panel: &Panel, basis: &BasisSpec, coeffs: &CoefficientTensor, factors: ArrayView2<'_, f64>) -> Result<f64> {
    check_dims(panel, basis, coeffs, factors)?;
    let x = panel.values();
    let (n, t) = x.dim();
    let q = factors.ncols();
    let local = local_bases(basis, factors)?;
    let mut total = 0.0;
    for s in 0..t {
        total += time_sse(x.column(s), |i| {
            let mut fit = 0.0;
            for l in 0..q {
                fit += local[[s, l]].dot(coeffs.slice(i, l));
            }
            fit
        });
    }
    Ok(total / (n * t) as f64)
}

/// Output of a fit: everything downstream evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub basis: BasisSpec,
    pub coeffs: CoefficientTensor,
    pub factors: FactorMatrix,
    pub series_means: Vec<f64>,
    /// `(iteration, best loss so far)`; non-increasing.
    pub loss_trace: Vec<(usize, f64)>,
    pub converged: bool,
    pub config: EstimatorConfig,
}

impl FittedModel {
    pub fn n_series(&self) -> usize {
        self.coeffs.dim().0
    }

    pub fn n_times(&self) -> usize {
        self.factors.n_times()
    }

    pub fn n_factors(&self) -> usize {
        self.factors.n_factors()
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().map(|e| e.1).unwrap_or(f64::NAN)
    }

    /// `g_il(x)` for the centered model.
    pub fn component(&self, i: usize, l: usize, x: f64) -> Result<f64> {
        self.basis.eval_spline(self.coeffs.slice(i, l), x)
    }

    /// Loss of the stored coefficients and factors on a centered panel.
    pub fn loss_on(&self, centered: &Panel) -> Result<f64> {
        loss(centered, &self.basis, &self.coeffs, self.factors.values().view())
    }
}
