//! Data-generating processes for simulation studies.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{eval_fourier, BasisSpec, FourierLoading};
use crate::error::{AfmError, Result};
use crate::model::Panel;
use crate::normal::norm_cdf;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FunctionSource {
    /// Every loading is a random Fourier sum.
    #[default]
    RandomFourier,
    /// Series 1..9 use the fixed suite, later series random Fourier sums (q = 1 only).
    FixedSuitePlusFourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FactorSource {
    #[default]
    IidUniform,
    /// `f_t = Phi(z_t)` with `z_t = theta z_{t-1} + v_t`.
    Ar1Copula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    pub q: usize,
    pub function_source: FunctionSource,
    pub noise_sd: f64,
    pub factor_source: FactorSource,
    pub theta: f64,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            n: 10,
            t: 100,
            q: 1,
            function_source: FunctionSource::RandomFourier,
            noise_sd: 1.0,
            factor_source: FactorSource::IidUniform,
            theta: 0.5,
            burn_in: 100,
            seed: 0,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AfmError::InvalidConfig(m));
        if self.n < 1 || self.t < 2 || self.q < 1 {
            return bad(format!("need N >= 1, T >= 2, q >= 1; got N = {}, T = {}, q = {}", self.n, self.t, self.q));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return bad(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd));
        }
        if self.function_source == FunctionSource::FixedSuitePlusFourier && (self.q != 1 || self.n < 9) {
            return bad("the fixed function suite needs q = 1 and N >= 9".into());
        }
        if self.factor_source == FactorSource::Ar1Copula && !(self.theta.abs() < 1.0) {
            return Err(AfmError::Nonstationary(self.theta));
        }
        Ok(())
    }
}

/// One of the nine fixed test loadings, numbered 1 to 9.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteFunction(pub u8);

impl SuiteFunction {
    pub fn eval(self, x: f64) -> f64 {
        use std::f64::consts::PI;
        match self.0 {
            1 => 2.0 * x,
            2 => 10.0 * (x - 0.5).powi(2),
            3 => 1.5 * (3.0 * PI * x).cos(),
            4 => 1.5 * (2.0 * PI * x).sin(),
            5 => 10.0 * (x - 0.5).powi(3),
            6 => {
                let s = (2.0 * PI * x).sin();
                2.0 * s / (2.0 - s)
            }
            7 => (2.0 * PI * x).sin().powi(3),
            8 => 2.0 * x.sqrt(),
            9 => {
                let e = (10.0 * (x - 0.5)).exp();
                2.0 * e / (1.0 + e)
            }
            k => panic!("suite functions are numbered 1..=9, got {k}"),
        }
    }
}

/// The nine fixed loadings `g_1, ..., g_9`.
pub fn fixed_function_suite() -> [SuiteFunction; 9] {
    std::array::from_fn(|k| SuiteFunction(k as u8 + 1))
}

/// A loading function that can be evaluated and serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionDescriptor {
    Fourier(FourierLoading),
    Suite { index: u8 },
    /// A spline in a stored basis, e.g. a previously fitted loading.
    Spline { basis: BasisSpec, coeffs: Vec<f64> },
}

impl FunctionDescriptor {
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            Self::Fourier(h) => Ok(eval_fourier(h, x)),
            Self::Suite { index } => {
                if !(1..=9).contains(index) {
                    return Err(AfmError::InvalidConfig(format!("unknown suite function {index}")));
                }
                Ok(SuiteFunction(*index).eval(x))
            }
            Self::Spline { basis, coeffs } => basis.eval_spline(coeffs, x),
        }
    }
}

fn draw_loading<R: Rng>(rng: &mut R) -> FourierLoading {
    let mut h = FourierLoading::new([0.0; 5], [0.0; 5]);
    for v in h.a.iter_mut().chain(h.b.iter_mut()) {
        *v = rng.sample(StandardNormal);
    }
    h
}

/// N x q random Fourier loadings with i.i.d. standard normal coefficients.
pub fn gen_random_functions(n: usize, q: usize, seed: u64) -> Vec<Vec<FourierLoading>> {
    let mut rng = stream_rng(seed, Stream::Functions);
    (0..n)
        .map(|_| (0..q).map(|_| draw_loading(&mut rng)).collect())
        .collect()
}

/// T x q i.i.d. Uniform[0, 1) factors.
pub fn gen_factors_iid(t: usize, q: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream_rng(seed, Stream::Factors);
    let mut f = Array2::zeros((t, q));
    for l in 0..q {
        for s in 0..t {
            f[[s, l]] = rng.random::<f64>();
        }
    }
    f
}

/// Gaussian-copula AR(1) factors. Returns `(Phi(z), z)`, both T x q.
///
/// Each chain starts at `z_0 = 0` and the first `burn_in` values are
/// discarded. `Phi` is the standard normal CDF, so `f_t` is uniform only
/// when `theta = 0`.
pub fn gen_factors_ar1(t: usize, q: usize, theta: f64, burn_in: usize, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(theta.abs() < 1.0) {
        return Err(AfmError::Nonstationary(theta));
    }
    let mut rng = stream_rng(seed, Stream::Factors);
    let mut z = Array2::zeros((t, q));
    for l in 0..q {
        let mut state = 0.0;
        for _ in 0..burn_in {
            state = theta * state + rng.sample::<f64, _>(StandardNormal);
        }
        for s in 0..t {
            state = theta * state + rng.sample::<f64, _>(StandardNormal);
            z[[s, l]] = state;
        }
    }
    let f = z.mapv(norm_cdf);
    Ok((f, z))
}

/// Simulated panel together with everything used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// N rows of q loadings.
    pub functions: Vec<Vec<FunctionDescriptor>>,
    /// T x q true factors.
    pub factors: Array2<f64>,
    pub latent_z: Option<Array2<f64>>,
    /// N x T noise.
    pub noise: Array2<f64>,
    pub panel: Panel,
}

/// `sum_l g_il(f_tl)` as an N x T matrix.
pub fn common_component(functions: &[Vec<FunctionDescriptor>], factors: &Array2<f64>) -> Result<Array2<f64>> {
    let n = functions.len();
    let (t, q) = factors.dim();
    let mut out = Array2::zeros((n, t));
    for (i, row) in functions.iter().enumerate() {
        if row.len() != q {
            return Err(crate::error::shape_err("loadings per series", q, row.len()));
        }
        for s in 0..t {
            let mut v = 0.0;
            for (l, g) in row.iter().enumerate() {
                v += g.eval(factors[[s, l]])?;
            }
            out[[i, s]] = v;
        }
    }
    Ok(out)
}

impl GroundTruth {
    pub fn common_component(&self) -> Result<Array2<f64>> {
        common_component(&self.functions, &self.factors)
    }
}

/// `x_it = sum_l g_il(f_tl) + eps_it` with `eps_it ~ N(0, noise_sd^2)`.
///
/// Loadings, factors and noise come from separate streams of `spec.seed`,
/// so for instance the factors do not depend on N.
pub fn gen_panel(spec: &DgpSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let (n, t, q) = (spec.n, spec.t, spec.q);
    let functions: Vec<Vec<FunctionDescriptor>> = match spec.function_source {
        FunctionSource::RandomFourier => gen_random_functions(n, q, spec.seed)
            .into_iter()
            .map(|row| row.into_iter().map(FunctionDescriptor::Fourier).collect())
            .collect(),
        FunctionSource::FixedSuitePlusFourier => {
            let mut rng = stream_rng(spec.seed, Stream::Functions);
            (0..n)
                .map(|i| {
                    let g = if i < 9 {
                        FunctionDescriptor::Suite { index: i as u8 + 1 }
                    } else {
                        FunctionDescriptor::Fourier(draw_loading(&mut rng))
                    };
                    vec![g]
                })
                .collect()
        }
    };
    let (factors, latent_z) = match spec.factor_source {
        FactorSource::IidUniform => (gen_factors_iid(t, q, spec.seed), None),
        FactorSource::Ar1Copula => {
            let (f, z) = gen_factors_ar1(t, q, spec.theta, spec.burn_in, spec.seed)?;
            (f, Some(z))
        }
    };
    let mut rng = stream_rng(spec.seed, Stream::Noise);
    let mut noise = Array2::zeros((n, t));
    for v in noise.iter_mut() {
        *v = spec.noise_sd * rng.sample::<f64, _>(StandardNormal);
    }
    let common = common_component(&functions, &factors)?;
    let panel = Panel::new(&common + &noise)?;
    Ok(GroundTruth {
        functions,
        factors,
        latent_z,
        noise,
        panel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_uniform(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(k, &x)| ((k as f64 + 1.0) / n - x).max(x - k as f64 / n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn suite_values() {
        let g = fixed_function_suite();
        assert_eq!(g[0].eval(0.5), 1.0);
        assert_eq!(g[1].eval(0.5), 0.0);
        assert_eq!(g[7].eval(0.25), 1.0);
        assert!((g[2].eval(0.0) - 1.5).abs() < 1e-15);
        assert!((g[3].eval(0.25) - 1.5).abs() < 1e-15);
        assert_eq!(g[4].eval(1.0), 1.25);
        assert!((g[5].eval(0.25) - 2.0).abs() < 1e-15);
        assert!((g[6].eval(0.25) - 1.0).abs() < 1e-15);
        assert_eq!(g[8].eval(0.5), 1.0);
    }

    #[test]
    fn random_functions_reproducible_and_centered() {
        assert_eq!(gen_random_functions(3, 2, 17), gen_random_functions(3, 2, 17));
        assert_ne!(gen_random_functions(3, 2, 17), gen_random_functions(3, 2, 18));
        let draws = gen_random_functions(100_000, 1, 4);
        let mean = draws.iter().map(|r| r[0].a[0]).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        for row in draws.iter().take(50) {
            let h = &row[0];
            for j in 0..=100 {
                assert!(eval_fourier(h, j as f64 / 100.0).abs() <= h.sup_bound() + 1e-12);
            }
        }
    }

    #[test]
    fn iid_factors_are_uniform() {
        let f = gen_factors_iid(10_000, 1, 8);
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(ks_uniform(f.column(0).to_vec()) < 1.63 / 100.0);
        assert_eq!(f, gen_factors_iid(10_000, 1, 8));
    }

    #[test]
    fn ar1_factors() {
        let (f, _) = gen_factors_ar1(10_000, 1, 0.0, 0, 2).unwrap();
        assert!(ks_uniform(f.column(0).to_vec()) < 1.63 / 100.0);
        let (f, z) = gen_factors_ar1(10_000, 1, 0.5, 100, 5).unwrap();
        assert!(f.iter().all(|&v| v > 0.0 && v < 1.0));
        let zc = z.column(0);
        let num: f64 = (1..zc.len()).map(|s| zc[s] * zc[s - 1]).sum();
        let den: f64 = zc.iter().map(|v| v * v).sum();
        assert!((num / den - 0.5).abs() < 0.05);
        assert_eq!(gen_factors_ar1(10, 1, 1.0, 0, 0), Err(AfmError::Nonstationary(1.0)));
    }

    #[test]
    fn panel_assembly() {
        let spec = DgpSpec { n: 20, t: 30, q: 2, noise_sd: 0.0, seed: 3, ..Default::default() };
        let truth = gen_panel(&spec).unwrap();
        assert_eq!(truth.panel.values(), &truth.common_component().unwrap());

        let spec = DgpSpec { n: 200, t: 500, q: 1, noise_sd: 1.0, seed: 3, ..Default::default() };
        let truth = gen_panel(&spec).unwrap();
        let resid = truth.panel.values() - &truth.common_component().unwrap();
        let m = resid.mean().unwrap();
        let var = resid.mapv(|v| (v - m).powi(2)).sum() / (resid.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.03, "{var}");
        let diff = &(truth.panel.values() - &truth.noise) - &truth.common_component().unwrap();
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(gen_panel(&spec).unwrap(), truth);
    }

    #[test]
    fn streams_do_not_depend_on_n() {
        let a = gen_panel(&DgpSpec { n: 5, t: 40, seed: 9, ..Default::default() }).unwrap();
        let b = gen_panel(&DgpSpec { n: 50, t: 40, seed: 9, ..Default::default() }).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_eq!(a.functions[..], b.functions[..5]);
    }

    #[test]
    fn suite_spec_layout() {
        let spec = DgpSpec {
            n: 12,
            t: 20,
            function_source: FunctionSource::FixedSuitePlusFourier,
            factor_source: FactorSource::Ar1Copula,
            ..Default::default()
        };
        let truth = gen_panel(&spec).unwrap();
        assert_eq!(truth.functions[0][0], FunctionDescriptor::Suite { index: 1 });
        assert_eq!(truth.functions[8][0], FunctionDescriptor::Suite { index: 9 });
        assert!(matches!(truth.functions[9][0], FunctionDescriptor::Fourier(_)));
        assert!(truth.latent_z.is_some());

        assert!(gen_panel(&DgpSpec { n: 8, ..spec.clone() }).is_err());
        assert!(gen_panel(&DgpSpec { q: 2, ..spec.clone() }).is_err());
        assert!(matches!(gen_panel(&DgpSpec { theta: -1.0, ..spec }), Err(AfmError::Nonstationary(_))));
    }

    #[test]
    fn descriptor_serde() {
        let g = FunctionDescriptor::Suite { index: 3 };
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"kind":"suite","index":3}"#);
        let h = FunctionDescriptor::Fourier(FourierLoading::new([1.0; 5], [0.5; 5]));
        let back: FunctionDescriptor = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
        assert_eq!(back, h);
    }
}
