//! Additive factor models with nonparametric loadings.
//!
//! Each observed series is modelled as `x_it = sum_l g_il(f_tl) + e_it`,
//! with cubic B-spline loadings `g_il` and latent factors living on the
//! rank grid `{1/(T+1), ..., T/(T+1)}`. Fitting alternates between
//! least squares for the spline coefficients and a discrete search for the
//! factors.

pub mod basis;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod rng;
pub mod simulate;

pub use basis::{make_basis, BasisSpec, FourierLoading};
pub use error::{AfmError, Result};
pub use estimator::{fit, FitReport};
pub use model::{
    default_d, loss, CoefficientTensor, Dimension, EstimatorConfig, FactorMatrix, FittedModel, InitMethod, Panel,
    RawFactors,
};
pub use simulate::{gen_panel, DgpSpec, FactorSource, FunctionDescriptor, FunctionSource, GroundTruth};
