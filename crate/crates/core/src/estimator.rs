//! Alternating least squares over spline loadings and rank-constrained factors.
//!
//! Each outer iteration
//!
//! 1. fits every series' spline coefficients by least squares on the
//!    current factors ([`fit_functions_step`]),
//! 2. re-estimates every time point's factor values by exhaustive search
//!    over the grid `{1/(T+1), ..., T/(T+1)}` ([`fit_factors_step`]),
//! 3. maps each factor column back onto a permutation of the grid through
//!    its ranks ([`project_to_grid`]).
//!
//! The best iterate seen is kept, so the recorded loss never increases.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2, Array3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{l2_norm, BasisSpec, LocalBasis};
use crate::error::{shape_err, AfmError, Result};
use crate::model::{
    grid_value, local_bases, loss, ranks_by_index, time_sse, CoefficientTensor, EstimatorConfig,
    FactorMatrix, FittedModel, InitMethod, Panel, RawFactors,
};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Bookkeeping for a call to [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n_iterations: usize,
    pub final_loss: f64,
    /// Which start produced the returned model.
    pub start_index: usize,
    /// Post-projection loss recorded at every outer iteration of the winning start.
    pub losses: Vec<f64>,
    /// Final (best) loss of every start.
    pub start_losses: Vec<f64>,
    pub converged: bool,
    pub dim: usize,
}

// Reciprocal condition bound below which the normal equations are treated as singular.
const MIN_RCOND: f64 = 1e-14;

// Time points per block of the candidate cross-product in the factor search.
const TIME_BLOCK: usize = 256;

fn check_rank(q: usize, n: usize) -> Result<()> {
    if q < 1 || q >= n {
        return Err(AfmError::InvalidRank { q, n });
    }
    Ok(())
}

/// Column-wise ranks of `values`, divided by `T + 1`. Ties go to the earlier time.
pub fn project_to_grid(raw: &RawFactors) -> FactorMatrix {
    project_values(raw.values())
}

fn project_values(values: &Array2<f64>) -> FactorMatrix {
    let (t, q) = values.dim();
    let mut index = Array2::zeros((t, q));
    for (l, col) in values.columns().into_iter().enumerate() {
        for (s, r) in ranks_by_index(col).into_iter().enumerate() {
            index[[s, l]] = r - 1;
        }
    }
    FactorMatrix::from_grid_indices(index).expect("ranks form a permutation")
}

/// Starting factors for the alternating scheme.
///
/// `PcaRank` ranks the leading `q` principal component score series of the
/// (centered) panel, with time points as observations. `Random` ranks
/// independent uniforms drawn from `seed`.
pub fn init_factors(panel: &Panel, q: usize, method: InitMethod, seed: u64) -> Result<FactorMatrix> {
    let (n, t) = panel.values().dim();
    check_rank(q, n)?;
    match method {
        InitMethod::Random => {
            let mut rng = stream_rng(seed, Stream::Init);
            let mut raw = Array2::zeros((t, q));
            for l in 0..q {
                for s in 0..t {
                    raw[[s, l]] = rng.random::<f64>();
                }
            }
            Ok(project_values(&raw))
        }
        InitMethod::PcaRank => Ok(project_values(&pca_scores(panel, q))),
    }
}

/// T x q matrix of leading principal component scores.
fn pca_scores(panel: &Panel, q: usize) -> Array2<f64> {
    let x = panel.values();
    let (n, t) = x.dim();
    let xm = DMatrix::from_fn(n, t, |i, s| x[[i, s]]);
    // Work with whichever Gram matrix is smaller; both share the nonzero spectrum.
    let (gram, series_side) = if n <= t {
        (&xm * xm.transpose(), true)
    } else {
        (xm.transpose() * &xm, false)
    };
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut scores = Array2::zeros((t, q));
    for (l, &k) in order.iter().take(q).enumerate() {
        let v = eig.eigenvectors.column(k);
        if series_side {
            let sc = xm.transpose() * v;
            for s in 0..t {
                scores[[s, l]] = sc[s];
            }
        } else {
            for s in 0..t {
                scores[[s, l]] = v[s];
            }
        }
    }
    scores
}

/// Per-series least squares of the panel on the stacked design
/// `[Psi(F_1) ... Psi(F_q)]`, with an identity ridge penalty.
///
/// Afterwards each component is shifted by a constant so that it has zero
/// empirical mean over its factor values; the all-ones coefficient vector
/// represents the constant function.
pub fn fit_functions_step(panel: &Panel, factors: &FactorMatrix, basis: &BasisSpec, ridge: f64) -> Result<CoefficientTensor> {
    let x = panel.values();
    let (n, t) = x.dim();
    let q = factors.n_factors();
    let d = basis.dim();
    if factors.n_times() != t {
        return Err(shape_err("factors (time points)", t, factors.n_times()));
    }
    if !(ridge >= 0.0) {
        return Err(AfmError::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
    }
    let p = q * d;
    let local = local_bases(basis, factors.values().view())?;

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, n);
    for s in 0..t {
        for l in 0..q {
            let a: &LocalBasis = &local[[s, l]];
            for (ja, &va) in a.values.iter().enumerate() {
                let ra = l * d + a.first + ja;
                for l2 in 0..q {
                    let b = &local[[s, l2]];
                    for (jb, &vb) in b.values.iter().enumerate() {
                        gram[(ra, l2 * d + b.first + jb)] += va * vb;
                    }
                }
                for i in 0..n {
                    rhs[(ra, i)] += va * x[[i, s]];
                }
            }
        }
    }
    for k in 0..p {
        gram[(k, k)] += ridge;
    }

    let chol = gram.cholesky().ok_or(AfmError::Singular)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 0.0) || (lo / hi).powi(2) < MIN_RCOND {
        return Err(AfmError::Singular);
    }
    let sol = chol.solve(&rhs);

    let mut coeffs = Array3::zeros((n, q, d));
    for i in 0..n {
        for l in 0..q {
            for k in 0..d {
                coeffs[[i, l, k]] = sol[(l * d + k, i)];
            }
        }
    }
    let mut coeffs = CoefficientTensor::new(coeffs)?;
    for i in 0..n {
        for l in 0..q {
            let b = coeffs.slice(i, l);
            let mean = (0..t).map(|s| local[[s, l]].dot(b)).sum::<f64>() / t as f64;
            for c in coeffs.slice_mut(i, l) {
                *c -= mean;
            }
        }
    }
    Ok(coeffs)
}

/// Per-time-point minimization of `sum_i (x_it - sum_l g_il(f_tl))^2` over the grid.
///
/// With one factor every grid point is tried. With several, each
/// coordinate in turn is set to its best grid value holding the others
/// fixed, `sweeps` times, starting from `current`. Ties go to the smallest
/// grid value. The objective at the returned values never exceeds the one
/// at `current`.
pub fn fit_factors_step(
    panel: &Panel,
    coeffs: &CoefficientTensor,
    basis: &BasisSpec,
    current: &FactorMatrix,
    sweeps: usize,
) -> Result<RawFactors> {
    let x = panel.values();
    let (n, t) = x.dim();
    let (cn, q, cd) = coeffs.dim();
    if cn != n {
        return Err(shape_err("coefficients (series)", n, cn));
    }
    if cd != basis.dim() {
        return Err(shape_err("coefficients (basis dimension)", basis.dim(), cd));
    }
    if current.n_times() != t || current.n_factors() != q {
        return Err(shape_err("current factors", format!("{t} x {q}"), format!("{} x {}", current.n_times(), current.n_factors())));
    }

    // g_il at every grid point, evaluated exactly the way `loss` evaluates it.
    let grid: Vec<LocalBasis> = (0..t)
        .map(|c| basis.eval_local(grid_value(c, t)))
        .collect::<Result<_>>()?;
    let tables: Vec<Array2<f64>> = (0..q)
        .map(|l| Array2::from_shape_fn((n, t), |(i, c)| grid[c].dot(coeffs.slice(i, l))))
        .collect();
    let sq_norms: Vec<Vec<f64>> = tables
        .iter()
        .map(|g| g.columns().into_iter().map(|col| col.dot(&col)).collect())
        .collect();

    let mut idx = current.grid_indices().clone();
    let sweeps = if q == 1 { 1 } else { sweeps.max(1) };
    for _ in 0..sweeps {
        for l in 0..q {
            // Partial residuals with coordinate l removed.
            let mut resid = x.to_owned();
            for (l2, g) in tables.iter().enumerate() {
                if l2 == l {
                    continue;
                }
                for s in 0..t {
                    let c = idx[[s, l2]];
                    for i in 0..n {
                        resid[[i, s]] -= g[[i, c]];
                    }
                }
            }
            let g = &tables[l];
            let norms = &sq_norms[l];
            let max_norm = norms.iter().cloned().fold(0.0, f64::max);
            let mut updated = vec![0usize; t];
            for start in (0..t).step_by(TIME_BLOCK) {
                let end = (start + TIME_BLOCK).min(t);
                let block = resid.slice(s![.., start..end]);
                // cross[s, c] = sum_i r_is g_il(c)
                let cross = block.t().dot(g);
                let picks: Vec<usize> = (start..end)
                    .into_par_iter()
                    .map(|s| {
                        let row = cross.row(s - start);
                        let r_col = resid.column(s);
                        // Expanded objective minus the constant sum_i r_is^2.
                        let score = |c: usize| norms[c] - 2.0 * row[c];
                        let best_score = (0..t).map(score).fold(f64::INFINITY, f64::min);
                        let tol = 1e-10 * (r_col.dot(&r_col) + max_norm) + 1e-300;
                        let cur = idx[[s, l]];
                        let direct = |c: usize| {
                            time_sse(x.column(s), |i| {
                                let mut fit = 0.0;
                                for (l2, g2) in tables.iter().enumerate() {
                                    let cc = if l2 == l { c } else { idx[[s, l2]] };
                                    fit += g2[[i, cc]];
                                }
                                fit
                            })
                        };
                        let mut best = (direct(cur), cur);
                        for c in 0..t {
                            if c != cur && score(c) <= best_score + tol {
                                let v = direct(c);
                                if v < best.0 || (v == best.0 && c < best.1) {
                                    best = (v, c);
                                }
                            }
                        }
                        best.1
                    })
                    .collect();
                updated[start..end].copy_from_slice(&picks);
            }
            for (s, c) in updated.into_iter().enumerate() {
                idx[[s, l]] = c;
            }
        }
    }
    RawFactors::new(idx.mapv(|c| grid_value(c, t)))
}

/// Sorts factors by decreasing `sum_i ||g_il||_2` (stable on ties).
pub fn order_factors(model: FittedModel) -> FittedModel {
    let q = model.n_factors();
    if q <= 1 {
        return model;
    }
    let weights = factor_weights(&model);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    FittedModel {
        coeffs: model.coeffs.permute_factors(&order),
        factors: model.factors.permute_columns(&order),
        ..model
    }
}

/// `sum_i ||g_il||_2` for each factor `l`.
pub fn factor_weights(model: &FittedModel) -> Vec<f64> {
    (0..model.n_factors())
        .map(|l| {
            (0..model.n_series())
                .map(|i| l2_norm(&model.basis, model.coeffs.slice(i, l)))
                .sum()
        })
        .collect()
}

struct StartOutcome {
    factors: FactorMatrix,
    coeffs: CoefficientTensor,
    best_loss: f64,
    losses: Vec<f64>,
    trace: Vec<(usize, f64)>,
    iterations: usize,
    converged: bool,
}

fn run_start(centered: &Panel, basis: &BasisSpec, config: &EstimatorConfig, init: FactorMatrix) -> Result<StartOutcome> {
    let mut factors = init;
    let mut coeffs = fit_functions_step(centered, &factors, basis, config.ridge)?;
    let mut prev = loss(centered, basis, &coeffs, factors.values().view())?;
    if !prev.is_finite() {
        return Err(AfmError::Divergence { iteration: 0 });
    }
    let mut best = (factors.clone(), coeffs.clone(), prev);
    let mut losses = vec![prev];
    let mut trace = vec![(0, prev)];
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=config.max_iter {
        iterations = k;
        let raw = fit_factors_step(centered, &coeffs, basis, &factors, config.factor_grid_sweeps)?;
        let next = project_to_grid(&raw);
        if next == factors {
            converged = true;
            break;
        }
        factors = next;
        coeffs = fit_functions_step(centered, &factors, basis, config.ridge)?;
        let current = loss(centered, basis, &coeffs, factors.values().view())?;
        if !current.is_finite() {
            return Err(AfmError::Divergence { iteration: k });
        }
        losses.push(current);
        if current < best.2 {
            best = (factors.clone(), coeffs.clone(), current);
        }
        trace.push((k, best.2));
        if (prev - current).abs() <= config.rel_tol * prev.abs() {
            converged = true;
            break;
        }
        prev = current;
    }
    let (factors, coeffs, best_loss) = best;
    Ok(StartOutcome {
        factors,
        coeffs,
        best_loss,
        losses,
        trace,
        iterations,
        converged,
    })
}

/// Fits the additive factor model to `panel`.
///
/// The panel is centered per series first; the means are stored in the
/// returned model. Start 0 uses `config.init`, further starts use random
/// initializations derived from `config.seed`. The start with the lowest
/// loss wins (earliest on ties) and its factors are put in canonical order.
pub fn fit(panel: &Panel, config: &EstimatorConfig) -> Result<(FittedModel, FitReport)> {
    config.validate()?;
    let (n, t) = panel.values().dim();
    check_rank(config.q, n)?;
    let d = config.resolve_dim(t);
    let basis = crate::basis::make_basis(d)?;
    let (centered, means) = panel.centered();

    let mut best: Option<(usize, StartOutcome)> = None;
    let mut start_losses = Vec::with_capacity(config.n_starts);
    for start in 0..config.n_starts {
        let method = if start == 0 { config.init } else { InitMethod::Random };
        let seed = derive_seed(config.seed, &[start as u64]);
        let init = init_factors(&centered, config.q, method, seed)?;
        let outcome = run_start(&centered, &basis, config, init)?;
        start_losses.push(outcome.best_loss);
        let better = best.as_ref().is_none_or(|(_, b)| outcome.best_loss < b.best_loss);
        if better {
            best = Some((start, outcome));
        }
    }
    let (start_index, outcome) = best.expect("at least one start");
    let model = order_factors(FittedModel {
        basis,
        coeffs: outcome.coeffs,
        factors: outcome.factors,
        series_means: means,
        loss_trace: outcome.trace,
        converged: outcome.converged,
        config: config.clone(),
    });
    let report = FitReport {
        n_iterations: outcome.iterations,
        final_loss: outcome.best_loss,
        start_index,
        losses: outcome.losses,
        start_losses,
        converged: outcome.converged,
        dim: d,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{eval_basis, make_basis};
    use crate::model::Dimension;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn grid_perm(t: usize, rng: &mut ChaCha8Rng) -> FactorMatrix {
        let mut p: Vec<usize> = (0..t).collect();
        p.shuffle(rng);
        FactorMatrix::from_grid_indices(Array2::from_shape_vec((t, 1), p).unwrap()).unwrap()
    }

    fn random_coeffs(n: usize, q: usize, d: usize, rng: &mut ChaCha8Rng) -> CoefficientTensor {
        CoefficientTensor::new(Array3::from_shape_fn((n, q, d), |_| rng.sample::<f64, _>(StandardNormal))).unwrap()
    }

    fn panel_from(basis: &BasisSpec, coeffs: &CoefficientTensor, f: &Array2<f64>, noise: f64, rng: &mut ChaCha8Rng) -> Panel {
        let (n, q, _) = coeffs.dim();
        let t = f.nrows();
        let x = Array2::from_shape_fn((n, t), |(i, s)| {
            let mut v = 0.0;
            for l in 0..q {
                v += basis.eval_spline(coeffs.slice(i, l), f[[s, l]]).unwrap();
            }
            v + noise * rng.sample::<f64, _>(StandardNormal)
        });
        Panel::new(x).unwrap()
    }

    #[test]
    fn projection_examples() {
        let raw = RawFactors::new(array![[0.9], [0.1], [0.5]]).unwrap();
        assert_eq!(project_to_grid(&raw).values(), &array![[0.75], [0.25], [0.5]]);
        let tied = RawFactors::new(array![[0.3], [0.3], [0.3]]).unwrap();
        assert_eq!(project_to_grid(&tied).values(), &array![[0.25], [0.5], [0.75]]);
        let valid = array![[0.5, 0.25], [0.25, 0.75], [0.75, 0.5]];
        let fm = project_to_grid(&RawFactors::new(valid.clone()).unwrap());
        assert_eq!(fm.values(), &valid);
    }

    proptest! {
        #[test]
        fn projection_always_valid(vals in proptest::collection::vec(0usize..5, 2..40)) {
            // Few distinct values force many ties.
            let t = vals.len();
            let raw = Array2::from_shape_fn((t, 2), |(s, l)| vals[(s + l) % t] as f64 / 4.0);
            let fm = project_to_grid(&RawFactors::new(raw).unwrap());
            prop_assert!(FactorMatrix::from_values(fm.values().clone()).is_ok());
        }
    }

    #[test]
    fn init_random_is_seeded() {
        let panel = Panel::new(Array2::from_shape_fn((3, 3), |(i, s)| (i * 3 + s) as f64)).unwrap();
        let a = init_factors(&panel, 1, InitMethod::Random, 9).unwrap();
        let b = init_factors(&panel, 1, InitMethod::Random, 9).unwrap();
        assert_eq!(a, b);
        let mut col: Vec<f64> = a.values().column(0).to_vec();
        col.sort_by(f64::total_cmp);
        assert_eq!(col, vec![0.25, 0.5, 0.75]);
        assert!(matches!(init_factors(&panel, 3, InitMethod::PcaRank, 0), Err(AfmError::InvalidRank { .. })));
    }

    #[test]
    fn init_pca_recovers_monotone_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 50;
        let f: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
        // g(f) = lambda_i * 2f for several series, no noise.
        let x = Array2::from_shape_fn((5, t), |(i, s)| (i as f64 + 1.0) * 2.0 * f[s]);
        let (centered, _) = Panel::new(x).unwrap().centered();
        let init = init_factors(&centered, 1, InitMethod::PcaRank, 0).unwrap();
        let truth = ranks_by_index(Array1::from(f).view());
        let est = init.grid_indices().column(0).to_vec();
        let same = est.iter().zip(&truth).all(|(e, r)| e + 1 == *r);
        let flipped = est.iter().zip(&truth).all(|(e, r)| t - e == *r);
        assert!(same || flipped);
    }

    #[test]
    fn function_step_recovers_noiseless_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = make_basis(6).unwrap();
        let t = 60;
        let factors = grid_perm(t, &mut rng);
        let beta = random_coeffs(2, 1, 6, &mut rng);
        let panel = panel_from(&basis, &beta, factors.values(), 0.0, &mut rng);
        let est = fit_functions_step(&panel, &factors, &basis, 0.0).unwrap();
        for i in 0..2 {
            let b = beta.slice(i, 0);
            let mean = factors.values().column(0).iter().map(|&f| basis.eval_spline(b, f).unwrap()).sum::<f64>() / t as f64;
            for k in 0..6 {
                assert!((est.slice(i, 0)[k] - (b[k] - mean)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn function_step_zero_panel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let basis = make_basis(5).unwrap();
        let factors = grid_perm(30, &mut rng);
        let panel = Panel::new(Array2::zeros((3, 30))).unwrap();
        for ridge in [0.0, 1e-3] {
            let est = fit_functions_step(&panel, &factors, &basis, ridge).unwrap();
            assert!(est.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn function_step_singular_without_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let basis = make_basis(5).unwrap();
        let t = 40;
        let f = Array2::from_shape_fn((t, 2), |(s, l)| if l == 0 { s } else { (s * 7) % t });
        let factors = FactorMatrix::from_grid_indices(f).unwrap();
        let panel = Panel::new(Array2::from_shape_fn((3, t), |_| rng.random::<f64>())).unwrap();
        // Both blocks contain the constant function.
        assert_eq!(fit_functions_step(&panel, &factors, &basis, 0.0), Err(AfmError::Singular));
        assert!(fit_functions_step(&panel, &factors, &basis, 1e-8).is_ok());
        // Fewer time points than basis functions.
        let tiny = FactorMatrix::from_grid_indices(array![[0], [2], [1]]).unwrap();
        let tp = Panel::new(array![[1.0, 2.0, 0.5]]).unwrap();
        assert_eq!(fit_functions_step(&tp, &tiny, &basis, 0.0), Err(AfmError::Singular));
    }

    /// Dense least-squares oracle through the pseudo-inverse of the normal equations.
    #[test]
    fn function_step_matches_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (n, t, q, d) = (3, 40, 2, 5);
        let basis = make_basis(d).unwrap();
        let mut cols = Vec::new();
        for _ in 0..q {
            let mut p: Vec<usize> = (0..t).collect();
            p.shuffle(&mut rng);
            cols.push(p);
        }
        let factors = FactorMatrix::from_grid_indices(Array2::from_shape_fn((t, q), |(s, l)| cols[l][s])).unwrap();
        let x = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
        let (panel, _) = Panel::new(x).unwrap().centered();
        let est = fit_functions_step(&panel, &factors, &basis, 1e-8).unwrap();
        let ours = loss(&panel, &basis, &est, factors.values().view()).unwrap();

        let mut design = DMatrix::<f64>::zeros(t, q * d);
        for s in 0..t {
            for l in 0..q {
                let row = eval_basis(&basis, factors.values()[[s, l]]).unwrap();
                for k in 0..d {
                    design[(s, l * d + k)] = row[k];
                }
            }
        }
        let pinv = (design.transpose() * &design).pseudo_inverse(1e-10).unwrap();
        let mut oracle = 0.0;
        for i in 0..n {
            let y = nalgebra::DVector::from_iterator(t, panel.values().row(i).iter().cloned());
            let b = &pinv * design.transpose() * &y;
            oracle += (&y - &design * b).norm_squared();
        }
        oracle /= (n * t) as f64;
        assert!((ours - oracle).abs() < 1e-10, "{ours} vs {oracle}");
    }

    #[test]
    fn factor_step_inverts_monotone_loading() {
        let basis = make_basis(4).unwrap();
        let t = 20;
        // g(f) = f (coefficients 0, 1/3, 2/3, 1 represent the identity).
        let coeffs = CoefficientTensor::new(Array3::from_shape_vec((1, 1, 4), vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
        let panel = Panel::new(Array2::from_shape_vec((1, t), x.clone()).unwrap()).unwrap();
        let start = grid_perm(t, &mut rng);
        let raw = fit_factors_step(&panel, &coeffs, &basis, &start, 1).unwrap();
        for s in 0..t {
            let nearest = (0..t)
                .min_by(|&a, &b| (grid_value(a, t) - x[s]).abs().total_cmp(&(grid_value(b, t) - x[s]).abs()))
                .unwrap();
            assert_eq!(raw.values()[[s, 0]], grid_value(nearest, t));
        }
    }

    #[test]
    fn factor_step_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, t, d) = (10, 5, 5);
        let basis = make_basis(d).unwrap();
        for _ in 0..20 {
            let coeffs = random_coeffs(n, 1, d, &mut rng);
            let x = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
            let panel = Panel::new(x.clone()).unwrap();
            let start = grid_perm(t, &mut rng);
            let raw = fit_factors_step(&panel, &coeffs, &basis, &start, 1).unwrap();
            for s in 0..t {
                let mut best = (f64::INFINITY, 0.0);
                for c in 1..=t {
                    let f = c as f64 / (t + 1) as f64;
                    let psi = eval_basis(&basis, f).unwrap();
                    let obj: f64 = (0..n)
                        .map(|i| {
                            let g: f64 = psi.iter().zip(coeffs.slice(i, 0)).map(|(p, b)| p * b).sum();
                            (x[[i, s]] - g).powi(2)
                        })
                        .sum();
                    if obj < best.0 {
                        best = (obj, f);
                    }
                }
                assert_eq!(raw.values()[[s, 0]], best.1);
            }
        }
    }

    #[test]
    fn factor_step_tie_goes_to_smallest() {
        let basis = make_basis(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let panel = Panel::new(Array2::from_shape_fn((4, 7), |_| rng.random::<f64>())).unwrap();
        let start = grid_perm(7, &mut rng);
        let raw = fit_factors_step(&panel, &CoefficientTensor::zeros(4, 1, 5), &basis, &start, 1).unwrap();
        assert!(raw.values().iter().all(|&v| v == 1.0 / 8.0));
    }

    #[test]
    fn factor_step_never_increases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let basis = make_basis(6).unwrap();
        for q in [1, 2, 3] {
            let (n, t) = (15, 30);
            let coeffs = random_coeffs(n, q, 6, &mut rng);
            let x = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
            let panel = Panel::new(x).unwrap();
            let mut cols = Vec::new();
            for _ in 0..q {
                let mut p: Vec<usize> = (0..t).collect();
                p.shuffle(&mut rng);
                cols.push(p);
            }
            let start = FactorMatrix::from_grid_indices(Array2::from_shape_fn((t, q), |(s, l)| cols[l][s])).unwrap();
            let before = loss(&panel, &basis, &coeffs, start.values().view()).unwrap();
            let raw = fit_factors_step(&panel, &coeffs, &basis, &start, 3).unwrap();
            let after = loss(&panel, &basis, &coeffs, raw.values().view()).unwrap();
            assert!(after <= before, "q={q}: {after} > {before}");
        }
    }

    #[test]
    fn ordering_swaps_by_norm() {
        let basis = make_basis(4).unwrap();
        // constant slices: norms 3 and 5
        let mut b = Array3::zeros((1, 2, 4));
        b.slice_mut(s![0, 0, ..]).fill(3.0);
        b.slice_mut(s![0, 1, ..]).fill(5.0);
        let factors = FactorMatrix::from_grid_indices(array![[0, 1], [1, 2], [2, 0]]).unwrap();
        let model = FittedModel {
            basis: basis.clone(),
            coeffs: CoefficientTensor::new(b).unwrap(),
            factors: factors.clone(),
            series_means: vec![0.0],
            loss_trace: vec![(0, 1.0)],
            converged: true,
            config: EstimatorConfig { q: 2, d: Dimension::Fixed(4), ..Default::default() },
        };
        let panel = Panel::new(array![[1.0, 2.0, 3.0]]).unwrap();
        let before = model.loss_on(&panel).unwrap();
        let ordered = order_factors(model);
        let w = factor_weights(&ordered);
        assert!((w[0] - 5.0).abs() < 1e-12 && (w[1] - 3.0).abs() < 1e-12);
        assert_eq!(ordered.factors.values().column(0), factors.values().column(1));
        assert!((ordered.loss_on(&panel).unwrap() - before).abs() < 1e-12);
    }

    #[test]
    fn fit_on_noise_descends_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x = Array2::from_shape_fn((12, 40), |_| rng.sample::<f64, _>(StandardNormal));
        let panel = Panel::new(x).unwrap();
        for q in [1, 2] {
            let config = EstimatorConfig { q, seed: 3, n_starts: 2, ..Default::default() };
            let (m1, r1) = fit(&panel, &config).unwrap();
            let (m2, r2) = fit(&panel, &config).unwrap();
            assert_eq!(m1, m2);
            assert_eq!(r1, r2);
            assert!(m1.loss_trace.last().unwrap().1 <= m1.loss_trace[0].1);
            assert!(r1.final_loss <= r1.losses[0]);
            for w in m1.loss_trace.windows(2) {
                assert!(w[1].1 <= w[0].1);
            }
        }
    }

    #[test]
    fn function_step_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let basis = make_basis(5).unwrap();
        let x = Array2::from_shape_fn((6, 50), |_| rng.sample::<f64, _>(StandardNormal));
        let (panel, _) = Panel::new(x).unwrap().centered();
        let f1 = grid_perm(50, &mut rng);
        let f2 = grid_perm(50, &mut rng);
        let b1 = fit_functions_step(&panel, &f1, &basis, 1e-8).unwrap();
        let before = loss(&panel, &basis, &b1, f2.values().view()).unwrap();
        let b2 = fit_functions_step(&panel, &f2, &basis, 1e-8).unwrap();
        let after = loss(&panel, &basis, &b2, f2.values().view()).unwrap();
        assert!(after <= before + 1e-10);
    }

    #[test]
    fn fit_rejects_bad_rank() {
        let panel = Panel::new(Array2::zeros((2, 10))).unwrap();
        let config = EstimatorConfig { q: 2, ..Default::default() };
        assert!(matches!(fit(&panel, &config), Err(AfmError::InvalidRank { q: 2, n: 2 })));
    }
}
