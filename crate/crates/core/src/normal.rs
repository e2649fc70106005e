//! Standard normal distribution function and quantile.

use statrs::function::erf::{erfc, erfc_inv};

/// `Phi(x) = P(Z <= x)` for a standard normal `Z`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of [`norm_cdf`] on `(0, 1)`; returns -inf / +inf at 0 / 1 and NaN outside.
pub fn norm_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-10);
        assert!((norm_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-10);
        assert_eq!(norm_quantile(0.5), 0.0);
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!(norm_quantile(1.5).is_nan());
    }

    #[test]
    fn round_trip_on_grid() {
        for k in 1..1000 {
            let p = k as f64 / 1000.0;
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-10);
            assert!((norm_quantile(p) + norm_quantile(1.0 - p)).abs() < 1e-9);
        }
    }
}
