//! The Gaussian two-photon source amplitude in momentum and position space.

use num_complex::Complex64;

use crate::config::SourceParams;
use crate::error::{Error, Result};
use crate::grid::{Axis, ComplexField2D};

/// Largest probability mass the source grid may leave outside its box.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Momentum-space amplitude
/// `exp(-(k_s^2/d_s^2 + k_i^2/d_i^2 - 2 rho k_s k_i/(d_s d_i)) / 4)`,
/// wavenumbers in 1/um. Unnormalized, real and positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumAmplitude {
    pub params: SourceParams,
}

impl MomentumAmplitude {
    pub fn new(params: SourceParams) -> Self {
        Self { params }
    }

    pub fn eval(&self, k_s: f64, k_i: f64) -> f64 {
        let p = &self.params;
        let (ds, di) = (p.delta_s_per_um, p.delta_i_per_um);
        let q = k_s * k_s / (ds * ds) + k_i * k_i / (di * di) - 2.0 * p.rho * k_s * k_i / (ds * di);
        (-0.25 * q).exp()
    }
}

pub fn momentum_amplitude(params: &SourceParams, k_s: f64, k_i: f64) -> f64 {
    MomentumAmplitude::new(*params).eval(k_s, k_i)
}

/// Unnormalized position amplitude, the Fourier transform of
/// [`momentum_amplitude`]:
/// `exp(-(d_s^2 x_s^2 + d_i^2 x_i^2 + 2 rho d_s d_i x_s x_i) / (1 - rho^2))`.
///
/// The quadratic form is the inverse of the momentum one, so the cross term
/// changes sign: momentum correlation `rho` becomes position
/// anticorrelation.
pub fn position_amplitude(params: &SourceParams, x_s: f64, x_i: f64) -> f64 {
    let (ds, di, rho) = (params.delta_s_per_um, params.delta_i_per_um, params.rho);
    let q = ds * ds * x_s * x_s + di * di * x_i * x_i + 2.0 * rho * ds * di * x_s * x_i;
    (-q / (1.0 - rho * rho)).exp()
}

/// Normalized source field on the given axes.
///
/// Fails if the box leaves more than [`MASS_TOLERANCE`] of the probability
/// outside, judged from the exact Gaussian marginals.
pub fn position_wavefunction(params: &SourceParams, axis_s: Axis, axis_i: Axis) -> Result<ComplexField2D> {
    let cov = position_covariance(params);
    let outside = tail_mass(&axis_s, cov[0][0].sqrt()) + tail_mass(&axis_i, cov[1][1].sqrt());
    if outside > MASS_TOLERANCE {
        return Err(Error::Grid(format!(
            "source grid too narrow: {outside:.3e} of the probability lies outside"
        )));
    }
    ComplexField2D::from_fn(axis_s, axis_i, |s, i| Complex64::new(position_amplitude(params, s, i), 0.0)).normalize()
}

fn tail_mass(axis: &Axis, sigma: f64) -> f64 {
    let z = std::f64::consts::SQRT_2 * sigma;
    0.5 * libm::erfc(axis.max() / z) + 0.5 * libm::erfc(-axis.min() / z)
}

/// Covariance of the position-space joint intensity, um^2:
/// `1/4 [[1/d_s^2, -rho/(d_s d_i)], [-rho/(d_s d_i), 1/d_i^2]]`.
pub fn position_covariance(params: &SourceParams) -> [[f64; 2]; 2] {
    let (ds, di, rho) = (params.delta_s_per_um, params.delta_i_per_um, params.rho);
    let c = -rho / (4.0 * ds * di);
    [[0.25 / (ds * ds), c], [c, 0.25 / (di * di)]]
}

/// Covariance of the momentum-space joint intensity, 1/um^2.
pub fn momentum_covariance(params: &SourceParams) -> [[f64; 2]; 2] {
    let (ds, di, rho) = (params.delta_s_per_um, params.delta_i_per_um, params.rho);
    let s = 1.0 / (1.0 - rho * rho);
    [[s * ds * ds, s * rho * ds * di], [s * rho * ds * di, s * di * di]]
}

/// Intensity standard deviation of one photon's position marginal, um.
pub fn position_sigma(params: &SourceParams, signal: bool) -> f64 {
    let c = position_covariance(params);
    if signal {
        c[0][0].sqrt()
    } else {
        c[1][1].sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_lab_system;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn params(rho: f64) -> SourceParams {
        default_lab_system(30.0).with_rho(rho).source
    }

    #[test]
    fn momentum_amplitude_values() {
        assert_eq!(momentum_amplitude(&params(0.9), 0.0, 0.0), 1.0);
        // Exponent -(1 + 1)/4 = -1/2.
        assert_relative_eq!(momentum_amplitude(&params(0.0), 0.25, 0.25), (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!((-0.5f64).exp(), 0.6065306597, max_relative = 1e-9);
        let p = params(0.6);
        assert_eq!(momentum_amplitude(&p, 0.1, -0.3), momentum_amplitude(&p, -0.3, 0.1));
    }

    #[test]
    fn uncorrelated_source_is_separable() {
        let p = params(0.0);
        let a = Axis::symmetric(12.0, 121).unwrap();
        let f = position_wavefunction(&p, a, a).unwrap();
        assert!(f.intensity_moments().cov_si.abs() < 1e-6);
        assert_relative_eq!(f.norm_squared(), 1.0, max_relative = 1e-9);

        // Product of the normalized single-photon factors.
        let w = a.weights();
        let one_d: Vec<f64> = (0..a.len()).map(|k| position_amplitude(&p, a.x(k), 0.0)).collect();
        let n1: f64 = one_d.iter().zip(&w).map(|(v, w)| v * v * w).sum();
        let product = Array2::from_shape_fn((a.len(), a.len()), |(s, i)| one_d[s] * one_d[i] / n1);
        let max_diff = f
            .amp
            .iter()
            .zip(product.iter())
            .map(|(z, v)| (z.re - v).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-8, "{max_diff}");
    }

    #[test]
    fn narrow_grid_rejected() {
        let a = Axis::symmetric(4.0, 65).unwrap();
        assert!(matches!(position_wavefunction(&params(0.5), a, a), Err(Error::Grid(_))));
    }

    #[test]
    fn covariance_closed_form() {
        let c = position_covariance(&params(0.0));
        assert_eq!(c[0][1], 0.0);
        assert_relative_eq!(c[0][0], 4.0);
        let c9 = position_covariance(&params(0.9));
        assert_relative_eq!(c9[0][1] / (c9[0][0] * c9[1][1]).sqrt(), -0.9, max_relative = 1e-12);
        assert_eq!(c9[0][1], c9[1][0]);
    }

    /// Direct discrete Fourier transform of the sampled momentum amplitude,
    /// independent of the closed form.
    fn dft_position_field(p: &SourceParams, x: &Axis) -> ComplexField2D {
        let kmax = 8.0 * p.delta_s_per_um.max(p.delta_i_per_um) / (1.0 - p.rho * p.rho).sqrt();
        let k = Axis::symmetric(kmax, 321).unwrap();
        let kv = k.positions();
        let xv = x.positions();
        let tilde = Array2::from_shape_fn((k.len(), k.len()), |(a, b)| {
            Complex64::new(momentum_amplitude(p, kv[a], kv[b]), 0.0)
        });
        let e = Array2::from_shape_fn((x.len(), k.len()), |(a, m)| Complex64::from_polar(1.0, kv[m] * xv[a]));
        let amp = e.dot(&tilde).dot(&e.t());
        ComplexField2D::new(*x, *x, amp).unwrap().normalize().unwrap()
    }

    #[test]
    fn closed_form_matches_dft_oracle() {
        let x = Axis::symmetric(12.0, 121).unwrap();
        for rho in [0.9, -0.5, 0.3] {
            let p = params(rho);
            let oracle = dft_position_field(&p, &x).intensity_moments();
            let closed = position_wavefunction(&p, x, x).unwrap().intensity_moments();
            let analytic = position_covariance(&p);
            assert!(oracle.cov_si.signum() == -rho.signum());
            for (a, b) in [
                (closed.cov_si, oracle.cov_si),
                (closed.var_s, oracle.var_s),
                (closed.var_i, oracle.var_i),
                (analytic[0][1], closed.cov_si),
                (analytic[0][0], closed.var_s),
            ] {
                assert_relative_eq!(a, b, max_relative = 1e-3);
            }
        }
    }

    proptest! {
        #[test]
        fn momentum_amplitude_bounded_by_origin(
            rho in -0.95f64..0.95,
            ds in 0.05f64..2.0,
            di in 0.05f64..2.0,
            ks in -5.0f64..5.0,
            ki in -5.0f64..5.0,
        ) {
            let p = SourceParams { delta_s_per_um: ds, delta_i_per_um: di, rho, lambda_s_nm: 532.0, lambda_i_nm: 532.0 };
            let v = momentum_amplitude(&p, ks, ki);
            prop_assert!(v > 0.0 || (ks.abs() + ki.abs()) > 0.0);
            prop_assert!(v <= 1.0);
        }

        #[test]
        fn label_exchange_symmetry(rho in -0.95f64..0.95, d in 0.1f64..1.0, x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let p = SourceParams { delta_s_per_um: d, delta_i_per_um: d, rho, lambda_s_nm: 532.0, lambda_i_nm: 532.0 };
            let (a, b) = (position_amplitude(&p, x, y), position_amplitude(&p, y, x));
            prop_assert!((a - b).abs() <= 1e-12 * a.max(b));
            let c = position_covariance(&p);
            prop_assert_eq!(c[0][0], c[1][1]);
        }
    }
}
