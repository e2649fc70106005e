//! Evaluation against simulated truth, factor retargeting and second-step inference.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{shape_err, AfmError, Result};
use crate::model::{ranks_by_index, CoefficientTensor, FactorMatrix, FittedModel};
use crate::normal::{norm_cdf, norm_quantile};
use crate::simulate::{FunctionDescriptor, GroundTruth};

/// Matches estimated factors to true factors, up to reflection `f -> 1 - f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[k]` is the true factor matched to estimated factor `k`.
    pub permutation: Vec<usize>,
    /// `reflect[k]` means estimated factor `k` is compared as `1 - f`.
    pub reflect: Vec<bool>,
}

impl Alignment {
    pub fn identity(q: usize) -> Self {
        Self {
            permutation: (0..q).collect(),
            reflect: vec![false; q],
        }
    }

    pub fn q(&self) -> usize {
        self.permutation.len()
    }

    fn validate(&self, q: usize) -> Result<()> {
        if self.permutation.len() != q || self.reflect.len() != q {
            return Err(shape_err("alignment", q, self.permutation.len()));
        }
        let mut seen = vec![false; q];
        for &p in &self.permutation {
            if p >= q || seen[p] {
                return Err(AfmError::InvalidConfig(format!(
                    "alignment permutation {:?} is not a bijection",
                    self.permutation
                )));
            }
            seen[p] = true;
        }
        Ok(())
    }

    #[inline]
    fn adjust(&self, k: usize, f: f64) -> f64 {
        if self.reflect[k] {
            1.0 - f
        } else {
            f
        }
    }
}

/// Ranks with ties averaged.
fn average_ranks(v: ArrayView1<'_, f64>) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut j = k;
        while j + 1 < n && v[order[j + 1]] == v[order[k]] {
            j += 1;
        }
        let avg = (k + j) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=j] {
            ranks[idx] = avg;
        }
        k = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Spearman rank correlation, `None` if either input is constant.
pub fn spearman(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Greedy matching on `|Spearman|`; a negative matched correlation flags a reflection.
pub fn align(est: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<Alignment> {
    if est.dim() != truth.dim() {
        return Err(shape_err("factor alignment", format!("{:?}", truth.dim()), format!("{:?}", est.dim())));
    }
    let q = est.ncols();
    for (which, m) in [("estimated", &est), ("true", &truth)] {
        for (column, col) in m.columns().into_iter().enumerate() {
            if col.iter().all(|&v| v == col[0]) {
                return Err(AfmError::DegenerateColumn { which, column });
            }
        }
    }
    let mut corr = Array2::zeros((q, q));
    for k in 0..q {
        for l in 0..q {
            corr[[k, l]] = spearman(est.column(k), truth.column(l)).expect("non-constant columns");
        }
    }
    let mut permutation = vec![usize::MAX; q];
    let mut reflect = vec![false; q];
    let mut used_true = vec![false; q];
    for _ in 0..q {
        let mut best: Option<(usize, usize, f64)> = None;
        for k in (0..q).filter(|&k| permutation[k] == usize::MAX) {
            for l in (0..q).filter(|&l| !used_true[l]) {
                let v = corr[[k, l]].abs();
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((k, l, v));
                }
            }
        }
        let (k, l, _) = best.expect("unmatched pair remains");
        permutation[k] = l;
        reflect[k] = corr[[k, l]] < 0.0;
        used_true[l] = true;
    }
    Ok(Alignment { permutation, reflect })
}

/// `(1/T) sum_t sum_l (f_hat_tl - f_tl)^2` after alignment.
pub fn mse_f(est: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>, alignment: &Alignment) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(shape_err("mse_f", format!("{:?}", truth.dim()), format!("{:?}", est.dim())));
    }
    let (t, q) = est.dim();
    alignment.validate(q)?;
    let mut total = 0.0;
    for s in 0..t {
        for k in 0..q {
            let diff = alignment.adjust(k, est[[s, k]]) - truth[[s, alignment.permutation[k]]];
            total += diff * diff;
        }
    }
    Ok(total / t as f64)
}

fn centered(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in &mut v {
        *x -= m;
    }
    v
}

/// Function error `(1/NT) sum_t sum_i sum_l (g_hat_il(f_tl) - g_il(f_tl))^2`.
///
/// `estimate(i, k, x)` evaluates fitted loading `k` of series `i`. It is
/// evaluated at the true factor values (at `1 - f` for reflected factors).
/// Both curves are centered over the true factor sample first, which
/// removes the constant each is only identified up to.
pub fn mse_g_with<E>(
    n: usize,
    q: usize,
    estimate: E,
    true_factors: ArrayView2<'_, f64>,
    true_functions: &[Vec<FunctionDescriptor>],
    alignment: &Alignment,
) -> Result<f64>
where
    E: Fn(usize, usize, f64) -> Result<f64>,
{
    let t = true_factors.nrows();
    if true_factors.ncols() != q {
        return Err(shape_err("true factors (columns)", q, true_factors.ncols()));
    }
    if true_functions.len() != n {
        return Err(shape_err("true functions (series)", n, true_functions.len()));
    }
    alignment.validate(q)?;
    let mut total = 0.0;
    for (i, row) in true_functions.iter().enumerate() {
        if row.len() != q {
            return Err(shape_err("true functions (factors)", q, row.len()));
        }
        for k in 0..q {
            let l = alignment.permutation[k];
            let column = true_factors.column(l);
            let est: Vec<f64> = column
                .iter()
                .map(|&f| estimate(i, k, alignment.adjust(k, f)))
                .collect::<Result<_>>()?;
            let tru: Vec<f64> = column.iter().map(|&f| row[l].eval(f)).collect::<Result<_>>()?;
            for (a, b) in centered(est).into_iter().zip(centered(tru)) {
                total += (a - b).powi(2);
            }
        }
    }
    Ok(total / (n * t) as f64)
}

/// [`mse_g_with`] for spline loadings.
pub fn mse_g_parts(
    basis: &BasisSpec,
    coeffs: &CoefficientTensor,
    true_factors: ArrayView2<'_, f64>,
    true_functions: &[Vec<FunctionDescriptor>],
    alignment: &Alignment,
) -> Result<f64> {
    let (n, q, d) = coeffs.dim();
    if d != basis.dim() {
        return Err(shape_err("coefficient dimension", basis.dim(), d));
    }
    mse_g_with(
        n,
        q,
        |i, k, x| basis.eval_spline(coeffs.slice(i, k), x),
        true_factors,
        true_functions,
        alignment,
    )
}

pub fn mse_g(model: &FittedModel, truth: &GroundTruth, alignment: &Alignment) -> Result<f64> {
    mse_g_parts(&model.basis, &model.coeffs, truth.factors.view(), &truth.functions, alignment)
}

/// `rank_t / (T + 1)`, ties broken by position.
pub fn ecdf_transform(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(AfmError::Empty("ecdf_transform"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AfmError::NonFinite("ecdf_transform"));
    }
    let t = values.len();
    Ok(ranks_by_index(ArrayView1::from(values))
        .into_iter()
        .map(|r| r as f64 / (t + 1) as f64)
        .collect())
}

/// A target distribution for the factors: quantile function and its inverse.
pub trait TargetDistribution {
    fn quantile(&self, p: f64) -> f64;
    fn cdf(&self, y: f64) -> f64;
}

/// Leaves the uniform factors as they are.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformTarget;

impl TargetDistribution for UniformTarget {
    fn quantile(&self, p: f64) -> f64 {
        p
    }
    fn cdf(&self, y: f64) -> f64 {
        y.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StandardNormalTarget;

impl TargetDistribution for StandardNormalTarget {
    fn quantile(&self, p: f64) -> f64 {
        norm_quantile(p)
    }
    fn cdf(&self, y: f64) -> f64 {
        norm_cdf(y)
    }
}

/// Empirical distribution of a reference sample.
///
/// The quantile function interpolates linearly between the order
/// statistics placed at `k / (M + 1)` and is flat beyond the extremes.
#[derive(Debug, Clone)]
pub struct EmpiricalTarget {
    sorted: Vec<f64>,
}

impl EmpiricalTarget {
    pub fn new(reference: &[f64]) -> Result<Self> {
        if reference.len() < 2 {
            return Err(AfmError::DegenerateSeries("reference sample needs at least 2 observations"));
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(AfmError::NonFinite("reference sample"));
        }
        let mut sorted = reference.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    fn position(&self, k: usize) -> f64 {
        (k + 1) as f64 / (self.sorted.len() + 1) as f64
    }
}

impl TargetDistribution for EmpiricalTarget {
    fn quantile(&self, p: f64) -> f64 {
        let m = self.sorted.len();
        let h = p * (m + 1) as f64 - 1.0;
        if h <= 0.0 {
            return self.sorted[0];
        }
        if h >= (m - 1) as f64 {
            return self.sorted[m - 1];
        }
        let k = h.floor() as usize;
        let w = h - k as f64;
        self.sorted[k] + w * (self.sorted[k + 1] - self.sorted[k])
    }

    fn cdf(&self, y: f64) -> f64 {
        let m = self.sorted.len();
        if y <= self.sorted[0] {
            return self.position(0);
        }
        if y >= self.sorted[m - 1] {
            return self.position(m - 1);
        }
        let k = self.sorted.partition_point(|&v| v <= y) - 1;
        let (lo, hi) = (self.sorted[k], self.sorted[k + 1]);
        let w = if hi > lo { (y - lo) / (hi - lo) } else { 0.0 };
        self.position(k) + w * (self.position(k + 1) - self.position(k))
    }
}

/// Applies `target.quantile` to every value.
pub fn retarget_values<D: TargetDistribution>(values: ArrayView2<'_, f64>, target: &D) -> Result<Array2<f64>> {
    let mut out = values.to_owned();
    for v in out.iter_mut() {
        let p = *v;
        *v = target.quantile(p);
        if !v.is_finite() {
            return Err(AfmError::Transform(p));
        }
    }
    Ok(out)
}

/// [`retarget_values`] on grid factors, which never hit 0 or 1.
pub fn retarget_factors<D: TargetDistribution>(factors: &FactorMatrix, target: &D) -> Result<Array2<f64>> {
    retarget_values(factors.values().view(), target)
}

/// The fitted model expressed on the retargeted factor scale:
/// `g_tilde_il(y) = g_hat_il(cdf(y))`.
pub struct RetargetedModel<'a, D: TargetDistribution> {
    pub model: &'a FittedModel,
    pub target: &'a D,
}

impl<D: TargetDistribution> RetargetedModel<'_, D> {
    pub fn component(&self, i: usize, l: usize, y: f64) -> Result<f64> {
        self.model.component(i, l, self.target.cdf(y))
    }

    /// `sum_l g_tilde_il(y_l)`.
    pub fn value(&self, i: usize, y: ArrayView1<'_, f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (l, &v) in y.iter().enumerate() {
            acc += self.component(i, l, v)?;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Fit {
    pub theta: f64,
    pub intercept: f64,
}

/// Least-squares AR(1) fit of `z_t` on `z_{t-1}`, optionally with an intercept.
pub fn ar1_fit(z: &[f64], intercept: bool) -> Result<Ar1Fit> {
    if z.len() < 3 {
        return Err(AfmError::DegenerateSeries("AR(1) regression needs at least 3 observations"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(AfmError::NonFinite("ar1_ols"));
    }
    let lagged = &z[..z.len() - 1];
    let current = &z[1..];
    if !intercept {
        let num: f64 = current.iter().zip(lagged).map(|(a, b)| a * b).sum();
        let den: f64 = lagged.iter().map(|b| b * b).sum();
        if den == 0.0 {
            return Err(AfmError::DegenerateSeries("lagged series is identically zero"));
        }
        return Ok(Ar1Fit { theta: num / den, intercept: 0.0 });
    }
    let m = lagged.len() as f64;
    let mx = lagged.iter().sum::<f64>() / m;
    let my = current.iter().sum::<f64>() / m;
    let sxy: f64 = lagged.iter().zip(current).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lagged.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AfmError::DegenerateSeries("lagged series is constant"));
    }
    let theta = sxy / sxx;
    Ok(Ar1Fit { theta, intercept: my - theta * mx })
}

/// `sum_{t>=2} z_t z_{t-1} / sum_{t>=2} z_{t-1}^2`.
pub fn ar1_ols(z: &[f64]) -> Result<f64> {
    Ok(ar1_fit(z, false)?.theta)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Sample median and median absolute deviation from it.
pub fn median_and_mad(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(AfmError::Empty("median_and_mad"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = median_sorted(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    Ok((med, median_sorted(&dev)))
}

/// Linear-interpolation sample quantile (the common "type 7" definition).
pub fn sample_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(AfmError::Empty("sample_quantile"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let k = h.floor() as usize;
    let w = h - k as f64;
    Ok(if k + 1 < sorted.len() {
        sorted[k] + w * (sorted[k + 1] - sorted[k])
    } else {
        sorted[k]
    })
}

pub fn interquartile_range(values: &[f64]) -> Result<f64> {
    Ok(sample_quantile(values, 0.75)? - sample_quantile(values, 0.25)?)
}

/// `Phi^{-1}` of each factor column followed by the AR(1) slope, one per factor.
pub fn gaussian_ar1(factors: &FactorMatrix) -> Result<(Array2<f64>, Vec<f64>)> {
    let z = retarget_factors(factors, &StandardNormalTarget)?;
    let thetas = z
        .columns()
        .into_iter()
        .map(|c| ar1_ols(&c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((z, thetas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;
    use crate::basis::FourierLoading;
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn align_examples() {
        let truth = array![[0.1, 0.9], [0.5, 0.2], [0.8, 0.4], [0.3, 0.6]];
        assert_eq!(align(truth.view(), truth.view()).unwrap(), Alignment::identity(2));
        let reflected = truth.mapv(|v| 1.0 - v);
        let a = align(reflected.view(), truth.view()).unwrap();
        assert_eq!(a.permutation, vec![0, 1]);
        assert_eq!(a.reflect, vec![true, true]);
        let swapped = array![[0.9, 0.1], [0.2, 0.5], [0.4, 0.8], [0.6, 0.3]];
        let a = align(swapped.view(), truth.view()).unwrap();
        assert_eq!(a.permutation, vec![1, 0]);
        assert_eq!(a.reflect, vec![false, false]);
        let constant = array![[0.5, 0.1], [0.5, 0.2], [0.5, 0.3], [0.5, 0.4]];
        assert!(matches!(align(constant.view(), truth.view()), Err(AfmError::DegenerateColumn { column: 0, .. })));
    }

    #[test]
    fn mse_f_examples() {
        let truth = array![[2.0 / 3.0], [1.0 / 3.0]];
        let est = array![[1.0 / 3.0], [2.0 / 3.0]];
        assert_eq!(mse_f(truth.view(), truth.view(), &Alignment::identity(1)).unwrap(), 0.0);
        assert!((mse_f(est.view(), truth.view(), &Alignment::identity(1)).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        let flip = Alignment { permutation: vec![0], reflect: vec![true] };
        assert!(mse_f(est.view(), truth.view(), &flip).unwrap() < 1e-30);
        assert!(mse_f(est.view(), array![[1.0, 2.0]].view(), &flip).is_err());
    }

    #[test]
    fn mse_g_shift_and_oracle() {
        let basis = make_basis(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, t) = (3, 15);
        let b = Array3::from_shape_fn((n, 1, 5), |_| rng.random::<f64>() - 0.5);
        let coeffs = CoefficientTensor::new(b.clone()).unwrap();
        let f = Array2::from_shape_fn((t, 1), |_| rng.random::<f64>());
        let exact: Vec<Vec<FunctionDescriptor>> = (0..n)
            .map(|i| vec![FunctionDescriptor::Spline { basis: basis.clone(), coeffs: coeffs.slice(i, 0).to_vec() }])
            .collect();
        let id = Alignment::identity(1);
        assert!(mse_g_parts(&basis, &coeffs, f.view(), &exact, &id).unwrap() < 1e-28);

        let shifted = CoefficientTensor::new(b.mapv(|v| v + 2.5)).unwrap();
        assert!(mse_g_parts(&basis, &shifted, f.view(), &exact, &id).unwrap() < 1e-24);

        // Against Fourier truths, compared with a naive loop.
        let fourier: Vec<Vec<FunctionDescriptor>> = (0..n)
            .map(|_| {
                let mut h = FourierLoading::new([0.0; 5], [0.0; 5]);
                for v in h.a.iter_mut().chain(h.b.iter_mut()) {
                    *v = rng.random::<f64>() - 0.5;
                }
                vec![FunctionDescriptor::Fourier(h)]
            })
            .collect();
        let flip = Alignment { permutation: vec![0], reflect: vec![true] };
        for a in [&id, &flip] {
            let mut naive = 0.0;
            for i in 0..n {
                let gh: Vec<f64> = (0..t).map(|s| basis.eval_spline(coeffs.slice(i, 0), a.adjust(0, f[[s, 0]])).unwrap()).collect();
                let g: Vec<f64> = (0..t).map(|s| fourier[i][0].eval(f[[s, 0]]).unwrap()).collect();
                let mgh = gh.iter().sum::<f64>() / t as f64;
                let mg = g.iter().sum::<f64>() / t as f64;
                for s in 0..t {
                    naive += ((gh[s] - mgh) - (g[s] - mg)).powi(2);
                }
            }
            naive /= (n * t) as f64;
            let fast = mse_g_parts(&basis, &coeffs, f.view(), &fourier, a).unwrap();
            assert!((fast - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn ecdf_examples() {
        assert_eq!(ecdf_transform(&[3.0, 1.0, 2.0]).unwrap(), vec![0.75, 0.25, 0.5]);
        let sorted: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let out = ecdf_transform(&sorted).unwrap();
        for (k, v) in out.iter().enumerate() {
            assert_eq!(*v, (k + 1) as f64 / 10.0);
        }
        assert!(ecdf_transform(&[1.0, f64::INFINITY]).is_err());
        assert!(ecdf_transform(&[]).is_err());
    }

    #[test]
    fn retarget_examples() {
        let fm = FactorMatrix::from_grid_indices(array![[0], [2], [1]]).unwrap();
        assert_eq!(&retarget_factors(&fm, &UniformTarget).unwrap(), fm.values());
        let z = retarget_factors(&fm, &StandardNormalTarget).unwrap();
        assert_eq!(z[[2, 0]], 0.0);
        let back = z.mapv(norm_cdf);
        for (a, b) in back.iter().zip(fm.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let pair = FactorMatrix::from_grid_indices(array![[0], [1]]).unwrap();
        let zp = retarget_factors(&pair, &StandardNormalTarget).unwrap();
        assert!((zp[[0, 0]] + zp[[1, 0]]).abs() < 1e-9);
    }

    #[test]
    fn retargeted_model_values_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = make_basis(6).unwrap();
        let (n, t, q) = (4, 25, 2);
        let coeffs = CoefficientTensor::new(Array3::from_shape_fn((n, q, 6), |_| rng.random::<f64>() - 0.5)).unwrap();
        let mut idx = Array2::zeros((t, q));
        for l in 0..q {
            let mut p: Vec<usize> = (0..t).collect();
            p.shuffle(&mut rng);
            for s in 0..t {
                idx[[s, l]] = p[s];
            }
        }
        let factors = FactorMatrix::from_grid_indices(idx).unwrap();
        let model = FittedModel {
            basis,
            coeffs,
            factors: factors.clone(),
            series_means: vec![0.0; n],
            loss_trace: vec![(0, 0.0)],
            converged: true,
            config: Default::default(),
        };
        let reference: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 10.0 - 3.0).collect();
        let empirical = EmpiricalTarget::new(&reference).unwrap();
        let normal = StandardNormalTarget;
        let targets: [&dyn Fn(&FactorMatrix) -> (Array2<f64>, Vec<f64>); 2] = [
            &|f| {
                let y = retarget_factors(f, &normal).unwrap();
                let view = RetargetedModel { model: &model, target: &normal };
                let vals = (0..t).flat_map(|s| (0..n).map(move |i| (i, s))).map(|(i, s)| view.value(i, y.row(s)).unwrap()).collect();
                (y, vals)
            },
            &|f| {
                let y = retarget_factors(f, &empirical).unwrap();
                let view = RetargetedModel { model: &model, target: &empirical };
                let vals = (0..t).flat_map(|s| (0..n).map(move |i| (i, s))).map(|(i, s)| view.value(i, y.row(s)).unwrap()).collect();
                (y, vals)
            },
        ];
        for tgt in targets {
            let (_, vals) = tgt(&factors);
            let mut k = 0;
            for s in 0..t {
                for i in 0..n {
                    let direct: f64 = (0..q).map(|l| model.component(i, l, factors.values()[[s, l]]).unwrap()).sum();
                    assert!((direct - vals[k]).abs() < 1e-9);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn empirical_target_on_itself_is_order_preserving() {
        let reference = [5.0, -1.0, 2.0, 7.5, 0.0];
        let target = EmpiricalTarget::new(&reference).unwrap();
        let f = ecdf_transform(&reference).unwrap();
        for (&p, &r) in f.iter().zip(&reference) {
            assert_eq!(target.quantile(p), r);
        }
        assert!(EmpiricalTarget::new(&[1.0]).is_err());
    }

    #[test]
    fn ar1_examples() {
        assert_eq!(ar1_ols(&[1.0, 0.5, 0.25, 0.125]).unwrap(), 0.5);
        assert_eq!(ar1_ols(&[2.0, 2.0, 2.0]).unwrap(), 1.0);
        assert!(ar1_ols(&[0.0, 0.0, 1.0]).is_err());
        assert!(ar1_ols(&[1.0, 2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        assert!(ar1_ols(&z).unwrap().abs() < 0.05);
        let with = ar1_fit(&[1.0, 3.0, 2.0, 4.0, 3.0], true).unwrap();
        assert!(with.theta.is_finite());
    }

    #[test]
    fn median_mad_examples() {
        assert_eq!(median_and_mad(&[1.0, 2.0, 3.0]).unwrap(), (2.0, 1.0));
        assert_eq!(median_and_mad(&[1.0, 1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
        assert_eq!(median_and_mad(&[1.0, 2.0, 3.0, 4.0]).unwrap(), (2.5, 1.0));
        assert!(median_and_mad(&[]).is_err());
        assert_eq!(interquartile_range(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 2.0);
    }

    proptest! {
        #[test]
        fn ecdf_invariant_under_monotone_maps(v in proptest::collection::vec(-100.0f64..100.0, 1..50)) {
            let a = ecdf_transform(&v).unwrap();
            let mapped: Vec<f64> = v.iter().map(|x| (x / 50.0).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(&a, &ecdf_transform(&mapped).unwrap());
            prop_assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
        }

        #[test]
        fn ar1_scale_free(v in proptest::collection::vec(-10.0f64..10.0, 3..40), c in prop_oneof![-8.0f64..-0.125, 0.125f64..8.0]) {
            prop_assume!(v[..v.len() - 1].iter().any(|x| *x != 0.0));
            // Powers of two keep the scaling exact.
            let c = c.signum() * 2f64.powi(c.abs().log2().round() as i32);
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            prop_assert_eq!(ar1_ols(&v).unwrap(), ar1_ols(&scaled).unwrap());
        }

        #[test]
        fn alignment_never_hurts_on_reflected_data(seed in 0u64..500, reflect_mask in 0u8..4, swap in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = 30;
            let truth = Array2::from_shape_fn((t, 2), |_| rng.random::<f64>());
            let mut est = truth.clone();
            for l in 0..2 {
                if reflect_mask & (1 << l) != 0 {
                    est.column_mut(l).mapv_inplace(|v| 1.0 - v);
                }
                est.column_mut(l).mapv_inplace(|v| (v + 0.05 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0));
            }
            if swap {
                est = est.select(ndarray::Axis(1), &[1, 0]);
            }
            let a = align(est.view(), truth.view()).unwrap();
            let aligned = mse_f(est.view(), truth.view(), &a).unwrap();
            let naive = mse_f(est.view(), truth.view(), &Alignment::identity(2)).unwrap();
            prop_assert!(aligned <= naive);
        }

        #[test]
        fn quantile_then_cdf_recovers_grid(t in 2usize..300) {
            for k in 0..t {
                let p = crate::model::grid_value(k, t);
                prop_assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-9);
            }
        }
    }
}
