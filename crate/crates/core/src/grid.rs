//! Uniform sampling axes, joint complex amplitudes and real intensity
//! profiles. All integrals use the trapezoid rule.

use ndarray::{Array1, Array2, Axis as NdAxis, Zip};
use num_complex::Complex64;

use crate::config::MIN_SAMPLES;
use crate::error::{Error, Result};

/// A uniformly sampled coordinate, in micrometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    min: f64,
    max: f64,
    n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if n < MIN_SAMPLES {
            return Err(Error::Grid(format!("axis needs at least {MIN_SAMPLES} samples, got {n}")));
        }
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::Grid(format!("axis bounds [{min}, {max}] are not increasing")));
        }
        Ok(Self { min, max, n })
    }

    pub fn symmetric(half_extent: f64, n: usize) -> Result<Self> {
        Self::new(-half_extent, half_extent, n)
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    /// Largest |x| on the axis.
    pub fn max_abs(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }

    pub fn x(&self, i: usize) -> f64 {
        self.min + (self.max - self.min) * (i as f64 / (self.n - 1) as f64)
    }

    pub fn positions(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.n, |i| self.x(i))
    }

    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> Array1<f64> {
        let h = self.spacing();
        let mut w = Array1::from_elem(self.n, h);
        w[0] = 0.5 * h;
        w[self.n - 1] = 0.5 * h;
        w
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    /// Index nearest to the axis midpoint.
    pub fn center_index(&self) -> usize {
        self.n / 2
    }

    /// Locates `x` as `(i, t)` with `x = x(i) + t * spacing`, `0 <= t <= 1`.
    pub(crate) fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !self.contains(x) {
            return None;
        }
        let u = (x - self.min) / self.spacing();
        let i = (u.floor() as usize).min(self.n - 2);
        Some((i, (u - i as f64).clamp(0.0, 1.0)))
    }

    /// Spacings agree to within floating-point noise.
    pub fn same_spacing(&self, other: &Axis) -> bool {
        (self.spacing() - other.spacing()).abs() <= 1e-12 * self.spacing().max(other.spacing())
    }
}

pub(crate) fn trapz(values: &Array1<f64>, axis: &Axis) -> f64 {
    let h = axis.spacing();
    let n = values.len();
    h * (values.sum() - 0.5 * (values[0] + values[n - 1]))
}

/// Integral over `[a, b]` of the piecewise-linear interpolant of `values`,
/// clipped to the axis. Agrees with [`trapz`] over the full axis.
pub(crate) fn integrate_interval(values: &Array1<f64>, axis: &Axis, a: f64, b: f64) -> f64 {
    let a = a.max(axis.min());
    let b = b.min(axis.max());
    if b <= a {
        return 0.0;
    }
    let h = axis.spacing();
    // Antiderivative of the interpolant at an arbitrary point.
    let cumulative = |x: f64| -> (usize, f64) {
        let (i, t) = axis.locate(x).expect("clipped to axis");
        let (y0, y1) = (values[i], values[i + 1]);
        (i, h * (y0 * t + 0.5 * (y1 - y0) * t * t))
    };
    let (ia, pa) = cumulative(a);
    let (ib, pb) = cumulative(b);
    let mut full = 0.0;
    for k in ia..ib {
        full += 0.5 * h * (values[k] + values[k + 1]);
    }
    full + pb - pa
}

/// Sampled joint amplitude psi(x_s, x_i): rows follow the signal axis,
/// columns the idler axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    pub axis_s: Axis,
    pub axis_i: Axis,
    pub amp: Array2<Complex64>,
}

/// First and second moments of |psi|^2 treated as a 2D density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean_s: f64,
    pub mean_i: f64,
    pub var_s: f64,
    pub var_i: f64,
    pub cov_si: f64,
}

impl Moments {
    pub fn correlation(&self) -> f64 {
        self.cov_si / (self.var_s * self.var_i).sqrt()
    }
}

impl ComplexField2D {
    pub fn new(axis_s: Axis, axis_i: Axis, amp: Array2<Complex64>) -> Result<Self> {
        if amp.dim() != (axis_s.len(), axis_i.len()) {
            return Err(Error::Dimension(format!(
                "amplitude is {:?}, axes are {}x{}",
                amp.dim(),
                axis_s.len(),
                axis_i.len()
            )));
        }
        Ok(Self { axis_s, axis_i, amp })
    }

    pub fn from_fn(axis_s: Axis, axis_i: Axis, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let xs = axis_s.positions();
        let xi = axis_i.positions();
        let amp = Array2::from_shape_fn((axis_s.len(), axis_i.len()), |(a, b)| f(xs[a], xi[b]));
        Self { axis_s, axis_i, amp }
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.amp.mapv(|z| z.norm_sqr())
    }

    /// Unnormalized signal marginal, integrated over the idler axis.
    pub(crate) fn signal_mass_profile(&self) -> Array1<f64> {
        let wi = self.axis_i.weights();
        let mut out = Array1::zeros(self.axis_s.len());
        Zip::from(&mut out)
            .and(self.amp.rows())
            .for_each(|o, row| *o = row.iter().zip(&wi).map(|(z, w)| z.norm_sqr() * w).sum());
        out
    }

    pub(crate) fn idler_mass_profile(&self) -> Array1<f64> {
        let ws = self.axis_s.weights();
        let mut out = Array1::zeros(self.axis_i.len());
        Zip::from(&mut out)
            .and(self.amp.columns())
            .for_each(|o, col| *o = col.iter().zip(&ws).map(|(z, w)| z.norm_sqr() * w).sum());
        out
    }

    /// 2D trapezoid integral of |amp|^2.
    pub fn norm_squared(&self) -> f64 {
        self.signal_mass_profile().dot(&self.axis_s.weights())
    }

    pub fn normalize(&self) -> Result<Self> {
        let norm = self.norm_squared();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroField);
        }
        let scale = norm.sqrt().recip();
        Ok(Self {
            axis_s: self.axis_s,
            axis_i: self.axis_i,
            amp: self.amp.mapv(|z| z * scale),
        })
    }

    pub fn intensity_moments(&self) -> Moments {
        let xs = self.axis_s.positions();
        let xi = self.axis_i.positions();
        let ws = self.axis_s.weights();
        let wi = self.axis_i.weights();
        let ps = self.signal_mass_profile();
        let pi = self.idler_mass_profile();
        let mass = ps.dot(&ws);
        let mean_s = (&ps * &xs).dot(&ws) / mass;
        let mean_i = (&pi * &xi).dot(&wi) / mass;
        let var_s = (&ps * &xs.mapv(|x| (x - mean_s).powi(2))).dot(&ws) / mass;
        let var_i = (&pi * &xi.mapv(|x| (x - mean_i).powi(2))).dot(&wi) / mass;
        // Row-wise first moment in x_i, then integrate against (x_s - mean_s).
        let dxi = &xi.mapv(|x| x - mean_i) * &wi;
        let row_first: Array1<f64> = self
            .amp
            .axis_iter(NdAxis(0))
            .map(|row| row.iter().zip(&dxi).map(|(z, d)| z.norm_sqr() * d).sum())
            .collect();
        let cov_si = (&row_first * &xs.mapv(|x| x - mean_s)).dot(&ws) / mass;
        Moments {
            mean_s,
            mean_i,
            var_s,
            var_i,
            cov_si,
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            axis_s: self.axis_s,
            axis_i: self.axis_i,
            amp: self.amp.mapv(|z| z.conj()),
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            axis_s: self.axis_s,
            axis_i: self.axis_i,
            amp: self.amp.mapv(|z| z * factor),
        }
    }
}

/// Nonnegative probability density on an axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamProfile1D {
    pub axis: Axis,
    pub values: Array1<f64>,
}

impl BeamProfile1D {
    pub fn new(axis: Axis, values: Array1<f64>) -> Result<Self> {
        if values.len() != axis.len() {
            return Err(Error::Dimension(format!(
                "profile has {} values for {} samples",
                values.len(),
                axis.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("profile values must be finite and nonnegative".into()));
        }
        Ok(Self { axis, values })
    }

    pub fn from_fn(axis: Axis, f: impl Fn(f64) -> f64) -> Self {
        let values = axis.positions().mapv(f);
        Self { axis, values }
    }

    pub fn mass(&self) -> f64 {
        trapz(&self.values, &self.axis)
    }

    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::ZeroField);
        }
        Ok(Self {
            axis: self.axis,
            values: self.values.mapv(|v| v / m),
        })
    }

    /// Mass inside `[a, b]` using the piecewise-linear interpolant.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        integrate_interval(&self.values, &self.axis, a, b)
    }

    pub fn mean(&self) -> f64 {
        let x = self.axis.positions();
        trapz(&(&x * &self.values), &self.axis) / self.mass()
    }

    pub fn std_dev(&self) -> f64 {
        let mu = self.mean();
        let x = self.axis.positions();
        let d2 = x.mapv(|v| (v - mu).powi(2));
        (trapz(&(&d2 * &self.values), &self.axis) / self.mass()).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Relative L2 distance to another profile on the same axis.
    pub fn relative_l2(&self, other: &BeamProfile1D) -> f64 {
        let diff = &self.values - &other.values;
        (trapz(&diff.mapv(|d| d * d), &self.axis) / trapz(&other.values.mapv(|d| d * d), &other.axis)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gaussian_field(shift_s: f64) -> ComplexField2D {
        let a = Axis::symmetric(10.0, 201).unwrap();
        ComplexField2D::from_fn(a, a, |s, i| {
            Complex64::new((-(s - shift_s).powi(2) / 4.0 - i * i / 9.0).exp(), 0.0)
        })
    }

    #[test]
    fn axis_geometry() {
        let a = Axis::symmetric(2.0, 17).unwrap();
        assert_eq!(a.spacing(), 0.25);
        assert_eq!(a.x(8), 0.0);
        assert_eq!(a.x(16), 2.0);
        assert_relative_eq!(a.weights().sum(), 4.0, epsilon = 1e-15);
        let (i, t) = a.locate(0.3).unwrap();
        assert_eq!(i, 9);
        assert_relative_eq!(t, 0.2, epsilon = 1e-12);
        assert_eq!(a.locate(2.5), None);
        assert!(Axis::symmetric(1.0, 8).is_err());
        assert!(Axis::new(1.0, 1.0, 32).is_err());
    }

    #[test]
    fn zero_field_norm_and_normalize() {
        let a = Axis::symmetric(1.0, 16).unwrap();
        let f = ComplexField2D::new(a, a, Array2::zeros((16, 16))).unwrap();
        assert_eq!(f.norm_squared(), 0.0);
        assert!(matches!(f.normalize(), Err(Error::ZeroField)));
    }

    #[test]
    fn normalization() {
        let f = gaussian_field(0.0);
        let n = f.normalize().unwrap();
        assert_relative_eq!(n.norm_squared(), 1.0, epsilon = 1e-12);
        let twice = n.normalize().unwrap();
        let diff = (&twice.amp - &n.amp).mapv(|z| z.norm()).fold(0.0_f64, |m, v| m.max(*v));
        assert!(diff < 1e-12);
        let scaled = f.scaled(Complex64::new(2.0, 0.0));
        assert_relative_eq!(scaled.norm_squared(), 4.0 * f.norm_squared(), max_relative = 1e-12);
    }

    #[test]
    fn moments_of_separable_gaussian() {
        let m = gaussian_field(0.0).intensity_moments();
        assert!(m.mean_s.abs() < 1e-12 && m.mean_i.abs() < 1e-12);
        assert!(m.cov_si.abs() < 1e-12);
        // |psi|^2 = exp(-s^2/2 - 2 i^2/9): variances 1 and 9/4.
        assert_relative_eq!(m.var_s, 1.0, max_relative = 1e-6);
        assert_relative_eq!(m.var_i, 2.25, max_relative = 1e-6);
    }

    #[test]
    fn moments_translate() {
        let m0 = gaussian_field(0.0).intensity_moments();
        let m1 = gaussian_field(1.5).intensity_moments();
        assert_relative_eq!(m1.mean_s - m0.mean_s, 1.5, epsilon = 1e-9);
        assert_relative_eq!(m1.var_s, m0.var_s, max_relative = 1e-6);
    }

    #[test]
    fn interval_integration_matches_trapezoid() {
        let a = Axis::symmetric(3.0, 61).unwrap();
        let p = BeamProfile1D::from_fn(a, |x| (-x * x).exp());
        assert_relative_eq!(p.mass_between(-10.0, 10.0), p.mass(), max_relative = 1e-14);
        // Linear piece integrated exactly.
        let lin = BeamProfile1D::from_fn(a, |x| x + 3.0);
        assert_relative_eq!(lin.mass_between(-0.33, 1.27), 0.5 * (1.27f64.powi(2) - 0.33f64.powi(2)) + 3.0 * 1.6, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn global_phase_and_conjugation_leave_moments(theta in -3.2f64..3.2, shift in -2.0f64..2.0) {
            let f = gaussian_field(shift);
            let m = f.intensity_moments();
            let rotated = f.scaled(Complex64::from_polar(1.0, theta)).intensity_moments();
            let conj = f.conj().intensity_moments();
            for other in [rotated, conj] {
                prop_assert!((other.mean_s - m.mean_s).abs() < 1e-12);
                prop_assert!((other.var_s - m.var_s).abs() < 1e-12);
                prop_assert!((other.cov_si - m.cov_si).abs() < 1e-12);
            }
            prop_assert!((f.conj().norm_squared() - f.norm_squared()).abs() < 1e-12);
        }

        #[test]
        fn normalize_is_idempotent(scale in 0.01f64..100.0) {
            let f = gaussian_field(0.3).scaled(Complex64::new(scale, -0.5 * scale));
            let once = f.normalize().unwrap();
            let twice = once.normalize().unwrap();
            prop_assert!((once.norm_squared() - 1.0).abs() < 1e-9);
            let diff = (&twice.amp - &once.amp).mapv(|z| z.norm()).fold(0.0_f64, |m, v| m.max(*v));
            prop_assert!(diff < 1e-12);
        }
    }
}
