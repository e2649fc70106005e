//! Function systems on the unit interval.
//!
//! Loadings are estimated in a clamped cubic B-spline basis with evenly
//! spaced interior knots. Simulated loadings are short Fourier sums.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{AfmError, Result};

/// Spline degree. Only cubic splines are supported.
pub const DEGREE: usize = 3;

const ORDER: usize = DEGREE + 1;

/// Clamped cubic B-spline basis on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    degree: usize,
    dim: usize,
    knots: Vec<f64>,
}

/// Builds the cubic basis of dimension `d` with `d - 4` evenly spaced
/// interior knots.
pub fn make_basis(d: usize) -> Result<BasisSpec> {
    if d < ORDER {
        return Err(AfmError::InvalidDimension(d));
    }
    let n_interior = d - ORDER;
    let mut knots = Vec::with_capacity(d + ORDER);
    knots.extend(std::iter::repeat_n(0.0, ORDER));
    knots.extend((1..=n_interior).map(|k| k as f64 / (n_interior + 1) as f64));
    knots.extend(std::iter::repeat_n(1.0, ORDER));
    Ok(BasisSpec {
        degree: DEGREE,
        dim: d,
        knots,
    })
}

/// The (at most four) nonzero basis functions at a point.
///
/// `values[j]` is the value of basis function `first + j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBasis {
    pub first: usize,
    pub values: [f64; ORDER],
}

impl LocalBasis {
    /// Evaluates `sum_k psi_k(x) * coeffs[k]`.
    ///
    /// Every spline evaluation in the crate goes through this so that the
    /// same point and coefficients always produce the same bits.
    #[inline]
    pub fn dot(&self, coeffs: &[f64]) -> f64 {
        let c = &coeffs[self.first..self.first + ORDER];
        let mut acc = 0.0;
        for j in 0..ORDER {
            acc += self.values[j] * c[j];
        }
        acc
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        out[self.first..self.first + ORDER].copy_from_slice(&self.values);
        out
    }
}

impl BasisSpec {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Distinct knot values `0 = u_0 < u_1 < ... < u_m = 1`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.dim - DEGREE + 1);
        for &k in &self.knots {
            if out.last() != Some(&k) {
                out.push(k);
            }
        }
        out
    }

    /// Index `j` of the knot span `[knots[j], knots[j+1])` containing `x`.
    /// The point 1 belongs to the last nonempty span.
    fn span(&self, x: f64) -> usize {
        let upper = self.dim; // knots[dim] == 1
        let j = self.knots[..upper].partition_point(|&k| k <= x) - 1;
        j.clamp(DEGREE, self.dim - 1)
    }

    /// Nonzero basis values at `x` via the triangular Cox-de Boor scheme.
    pub fn eval_local(&self, x: f64) -> Result<LocalBasis> {
        if !(0.0..=1.0).contains(&x) {
            return Err(AfmError::Domain(x));
        }
        let span = self.span(x);
        let t = &self.knots;
        let mut n = [0.0; ORDER];
        let mut left = [0.0; ORDER];
        let mut right = [0.0; ORDER];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        Ok(LocalBasis {
            first: span - DEGREE,
            values: n,
        })
    }

    /// Evaluates the spline with coefficient vector `coeffs` at `x`.
    pub fn eval_spline(&self, coeffs: &[f64], x: f64) -> Result<f64> {
        if coeffs.len() != self.dim {
            return Err(crate::error::shape_err("spline coefficients", self.dim, coeffs.len()));
        }
        Ok(self.eval_local(x)?.dot(coeffs))
    }
}

/// `(psi_1(x), ..., psi_d(x))`.
pub fn eval_basis(spec: &BasisSpec, x: f64) -> Result<Vec<f64>> {
    Ok(spec.eval_local(x)?.to_dense(spec.dim))
}

/// T x d matrix whose row `t` is `eval_basis(spec, points[t])`.
pub fn design_matrix(spec: &BasisSpec, points: &[f64]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((points.len(), spec.dim));
    for (t, &x) in points.iter().enumerate() {
        let local = spec.eval_local(x)?;
        for j in 0..ORDER {
            out[[t, local.first + j]] = local.values[j];
        }
    }
    Ok(out)
}

// 8-point Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree 15.
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// `||g||_2 = sqrt(int_0^1 g(x)^2 dx)` for `g = psi' coeffs`.
///
/// The square of a cubic piece has degree 6, so Gauss-Legendre with eight
/// nodes on each knot interval is exact up to rounding.
pub fn l2_norm(spec: &BasisSpec, coeffs: &[f64]) -> f64 {
    assert_eq!(coeffs.len(), spec.dim, "coefficient length must equal the basis dimension");
    let breaks = spec.breakpoints();
    let mut integral = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut piece = 0.0;
        for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let x = mid + half * node;
            let g = spec
                .eval_local(x)
                .expect("quadrature nodes lie inside [0, 1]")
                .dot(coeffs);
            piece += weight * g * g;
        }
        integral += half * piece;
    }
    integral.max(0.0).sqrt()
}

/// Coefficients of `h_{a,b}(x) = sum_m (a_m / m) cos(pi m x) + (b_m / m) sin(pi m x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierLoading {
    pub a: [f64; 5],
    pub b: [f64; 5],
}

impl FourierLoading {
    pub fn new(a: [f64; 5], b: [f64; 5]) -> Self {
        Self { a, b }
    }

    /// Upper bound `sum_m (|a_m| + |b_m|) / m` on the sup norm.
    pub fn sup_bound(&self) -> f64 {
        (0..5)
            .map(|k| (self.a[k].abs() + self.b[k].abs()) / (k + 1) as f64)
            .sum()
    }
}

pub fn eval_fourier(h: &FourierLoading, x: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..5 {
        let m = (k + 1) as f64;
        let arg = std::f64::consts::PI * m * x;
        acc += h.a[k] / m * arg.cos() + h.b[k] / m * arg.sin();
    }
    acc
}
