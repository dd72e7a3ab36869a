//! Observables extracted from propagated fields: marginals, heralded
//! profiles, Gaussian fits and widths, transmission, centroid slopes and
//! correlation diagnostics.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::grid::{integrate_interval, Axis, BeamProfile1D, ComplexField2D};

/// How the idler photon is detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorSpec {
    PointLike { center_um: f64 },
    FiniteSize { center_um: f64, diameter_um: f64 },
}

impl DetectorSpec {
    pub fn point(center_um: f64) -> Self {
        DetectorSpec::PointLike { center_um }
    }

    pub fn finite(center_um: f64, diameter_um: f64) -> Result<Self> {
        if !(diameter_um > 0.0 && diameter_um.is_finite()) {
            return Err(Error::InvalidArgument(format!("detector diameter must be positive, got {diameter_um}")));
        }
        Ok(DetectorSpec::FiniteSize { center_um, diameter_um })
    }

    pub fn center_um(&self) -> f64 {
        match *self {
            DetectorSpec::PointLike { center_um } | DetectorSpec::FiniteSize { center_um, .. } => center_um,
        }
    }

    pub fn diameter_um(&self) -> Option<f64> {
        match *self {
            DetectorSpec::PointLike { .. } => None,
            DetectorSpec::FiniteSize { diameter_um, .. } => Some(diameter_um),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DetectorSpec::PointLike { .. } => "pld",
            DetectorSpec::FiniteSize { .. } => "fsd",
        }
    }

    /// Same detector kind and size, moved to `center_um`.
    pub fn at(&self, center_um: f64) -> Self {
        match *self {
            DetectorSpec::PointLike { .. } => DetectorSpec::PointLike { center_um },
            DetectorSpec::FiniteSize { diameter_um, .. } => DetectorSpec::FiniteSize { center_um, diameter_um },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("degenerate profile: {0}")]
    Degenerate(String),
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
}

/// `amplitude * exp(-(x - center)^2 / (2 sigma^2))`, lengths in um.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    /// `||y - model|| / ||y||` over the fitted samples.
    pub residual: f64,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (-(x - self.center).powi(2) / (2.0 * self.sigma * self.sigma)).exp()
    }

    pub fn width(&self) -> WidthReport {
        WidthReport::from_sigma_um(self.sigma)
    }
}

/// Spot width in nanometers under both conventions in use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthReport {
    pub sigma_nm: f64,
    /// Half width at half maximum, `sqrt(2 ln 2) sigma`.
    pub hwhm_nm: f64,
    /// Full width at half maximum, `2 hwhm`.
    pub fwhm_nm: f64,
}

impl WidthReport {
    pub fn from_sigma_um(sigma_um: f64) -> Self {
        let sigma_nm = sigma_um * 1e3;
        let hwhm_nm = (2.0 * std::f64::consts::LN_2).sqrt() * sigma_nm;
        Self {
            sigma_nm,
            hwhm_nm,
            fwhm_nm: 2.0 * hwhm_nm,
        }
    }
}

const FIT_MAX_ITER: usize = 200;
const FIT_STEP_TOL: f64 = 1e-10;

/// Levenberg-Marquardt least-squares Gaussian fit over the whole profile,
/// seeded from its moments.
pub fn fit_gaussian(profile: &BeamProfile1D) -> std::result::Result<GaussianFit, FitError> {
    let x = profile.axis.positions();
    let y = &profile.values;
    let peak = profile.peak();
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(FitError::Degenerate("profile is empty".into()));
    }
    let bright = y.iter().filter(|&&v| v > 0.01 * peak).count();
    if bright < 8 {
        return Err(FitError::Degenerate(format!("only {bright} samples above 1% of the peak")));
    }
    let mut p = [peak, profile.mean(), profile.std_dev()];
    if !(p[2] > 0.0) {
        return Err(FitError::Degenerate("zero spread".into()));
    }

    let cost = |p: &[f64; 3]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xv, &yv)| {
                let g = p[0] * (-(xv - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp();
                (yv - g).powi(2)
            })
            .sum()
    };
    let mut current = cost(&p);
    let mut lambda = 1e-3;
    for _ in 0..FIT_MAX_ITER {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&xv, &yv) in x.iter().zip(y) {
            let d = xv - p[1];
            let s2 = p[2] * p[2];
            let e = (-d * d / (2.0 * s2)).exp();
            let g = p[0] * e;
            let j = [e, g * d / s2, g * d * d / (s2 * p[2])];
            let r = yv - g;
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        loop {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] *= 1.0 + lambda;
            }
            let Some(step) = solve3(m, jtr) else {
                return Err(FitError::Degenerate("singular normal equations".into()));
            };
            let rel = (step[0] / p[0]).abs().max((step[1] / p[2]).abs()).max((step[2] / p[2]).abs());
            let trial = [p[0] + step[0], p[1] + step[1], (p[2] + step[2]).abs()];
            let c = cost(&trial);
            if c <= current {
                p = trial;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                if rel < FIT_STEP_TOL {
                    return Ok(finish(p, current, y));
                }
                break;
            }
            if rel < FIT_STEP_TOL {
                return Ok(finish(p, current, y));
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                return Err(FitError::NonConvergence { iterations: FIT_MAX_ITER });
            }
        }
    }
    Err(FitError::NonConvergence { iterations: FIT_MAX_ITER })
}

fn finish(p: [f64; 3], cost: f64, y: &Array1<f64>) -> GaussianFit {
    GaussianFit {
        amplitude: p[0],
        center: p[1],
        sigma: p[2],
        residual: (cost / y.dot(y)).sqrt(),
    }
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &c| m[a][col].abs().total_cmp(&m[c][col].abs()))?;
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for c in col..3 {
                m[r][c] -= f * m[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| m[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Some(x)
}

/// Signal density with the idler traced out, normalized.
pub fn marginal_signal(field: &ComplexField2D) -> Result<BeamProfile1D> {
    BeamProfile1D::new(field.axis_s, field.signal_mass_profile())?.normalized()
}

pub fn marginal_idler(field: &ComplexField2D) -> Result<BeamProfile1D> {
    BeamProfile1D::new(field.axis_i, field.idler_mass_profile())?.normalized()
}

/// Idler-axis weights `w` such that the unnormalized heralded signal
/// density is `sum_j w_j |psi(x_s, x_j)|^2`.
///
/// A point-like detector interpolates linearly between the two neighbouring
/// columns; a finite one integrates the piecewise-linear interpolant over
/// its active area.
pub fn heralding_weights(axis_i: &Axis, detector: &DetectorSpec) -> Result<Array1<f64>> {
    let mut w = Array1::zeros(axis_i.len());
    match *detector {
        DetectorSpec::PointLike { center_um } => {
            let (j, t) = axis_i.locate(center_um).ok_or(Error::OutOfGrid {
                what: "heralding position",
                value: center_um,
                min: axis_i.min(),
                max: axis_i.max(),
            })?;
            w[j] = 1.0 - t;
            w[j + 1] += t;
        }
        DetectorSpec::FiniteSize { center_um, diameter_um } => {
            let (lo, hi) = (center_um - diameter_um / 2.0, center_um + diameter_um / 2.0);
            if hi <= axis_i.min() || lo >= axis_i.max() {
                return Err(Error::OutOfGrid {
                    what: "detector window",
                    value: center_um,
                    min: axis_i.min(),
                    max: axis_i.max(),
                });
            }
            // The interval integral is linear in the samples; only those
            // next to the window contribute.
            let first = axis_i.locate(lo.max(axis_i.min())).map_or(0, |(j, _)| j);
            let last = axis_i.locate(hi.min(axis_i.max())).map_or(axis_i.len() - 1, |(j, _)| j + 1);
            let mut unit = Array1::zeros(axis_i.len());
            for j in first..=last {
                unit[j] = 1.0;
                w[j] = integrate_interval(&unit, axis_i, lo, hi);
                unit[j] = 0.0;
            }
        }
    }
    Ok(w)
}

fn heralded_values(field: &ComplexField2D, detector: &DetectorSpec) -> Result<Array1<f64>> {
    let w = heralding_weights(&field.axis_i, detector)?;
    Ok(field
        .amp
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&w).filter(|(_, &w)| w != 0.0).map(|(z, w)| z.norm_sqr() * w).sum())
        .collect())
}


/// Signal density conditioned on a point-like idler detection at `center`.
pub fn conditional_slice(field: &ComplexField2D, center_um: f64) -> Result<BeamProfile1D> {
    heralded_profile(field, &DetectorSpec::point(center_um))
}

/// Signal density heralded by a detector of finite width.
pub fn fsd_profile(field: &ComplexField2D, center_um: f64, diameter_um: f64) -> Result<BeamProfile1D> {
    heralded_profile(field, &DetectorSpec::finite(center_um, diameter_um)?)
}

pub fn heralded_profile(field: &ComplexField2D, detector: &DetectorSpec) -> Result<BeamProfile1D> {
    BeamProfile1D::new(field.axis_s, heralded_values(field, detector)?)?.normalized()
}

/// Smallest radius of an iris centred on the axis that passes `fraction`
/// of the profile's mass.
pub fn iris_radius(profile: &BeamProfile1D, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("iris fraction {fraction} not in (0, 1)")));
    }
    let total = profile.mass();
    let inside = |r: f64| profile.mass_between(-r, r) / total;
    let (mut lo, mut hi) = (0.0, profile.axis.max_abs());
    if inside(hi) < fraction {
        return Err(Error::Grid(format!("less than {fraction} of the profile lies on the grid")));
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if inside(mid) >= fraction {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Fraction of the signal mass at the second-lens plane inside `|x| <= r`,
/// either for the whole beam or for the heralded part.
pub fn transmission(field_mid: &ComplexField2D, radius_um: f64, detector: Option<&DetectorSpec>) -> Result<f64> {
    let p = match detector {
        None => field_mid.signal_mass_profile(),
        Some(d) => heralded_values(field_mid, d)?,
    };
    transmitted_fraction(&BeamProfile1D::new(field_mid.axis_s, p)?, radius_um)
}

/// Fraction of a (not necessarily normalized) profile inside `|x| <= r`.
pub fn transmitted_fraction(profile: &BeamProfile1D, radius_um: f64) -> Result<f64> {
    let total = profile.mass();
    if !(total > 0.0) {
        return Err(Error::ZeroField);
    }
    Ok((profile.mass_between(-radius_um, radius_um) / total).clamp(0.0, 1.0))
}

/// Least-squares line through the fitted heralded centres.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation from the line, um.
    pub max_residual: f64,
    /// `max_residual / (|slope| * range of x_iC)`.
    pub relative_residual: f64,
    /// `(x_iC, x_sC)` pairs.
    pub points: Vec<(f64, f64)>,
}

pub fn heralded_slope(field_out: &ComplexField2D, centers_um: &[f64], detector: &DetectorSpec) -> Result<SlopeFit> {
    if centers_um.len() < 3 {
        return Err(Error::InvalidArgument("slope fit needs at least 3 heralding positions".into()));
    }
    let mut points = Vec::with_capacity(centers_um.len());
    for &c in centers_um {
        let profile = heralded_profile(field_out, &detector.at(c))?;
        let fit = fit_gaussian(&profile).map_err(|e| Error::fit(format!("heralded profile at x_i = {c} um"), e))?;
        points.push((c, fit.center));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("heralding positions must not all coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = points
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).abs())
        .fold(0.0, f64::max);
    let range = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    Ok(SlopeFit {
        slope,
        intercept,
        max_residual,
        relative_residual: max_residual / (slope.abs() * range),
        points,
    })
}

/// Pearson coefficient of `|psi|^2` as a 2D density.
pub fn intensity_pearson(field: &ComplexField2D) -> Result<f64> {
    let m = field.intensity_moments();
    if !(m.var_s > 0.0 && m.var_i > 0.0) {
        return Err(Error::InvalidArgument("joint intensity has zero variance".into()));
    }
    Ok(m.correlation().clamp(-1.0, 1.0))
}

/// Principal arguments of a field; `valid` is false where the amplitude is
/// below `1e-12` of its peak and the phase is meaningless.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub values: Array2<f64>,
    pub valid: Array2<bool>,
}

pub fn phase_map(field: &ComplexField2D) -> PhaseMap {
    let peak = field.amp.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = 1e-12 * peak;
    PhaseMap {
        values: field.amp.mapv(|z| if z.norm() >= floor && peak > 0.0 { z.arg() } else { 0.0 }),
        valid: field.amp.mapv(|z| peak > 0.0 && z.norm() >= floor),
    }
}

/// Intensity-weighted mean of the mixed phase derivative
/// `d^2 arg(psi) / dx_s dx_i`, scaled by the two marginal standard
/// deviations so it is dimensionless. Zero for a product state.
pub fn phase_cross_statistic(field: &ComplexField2D) -> f64 {
    let a = &field.amp;
    let (ns, ni) = a.dim();
    let scale = field.axis_s.spacing() * field.axis_i.spacing();
    let m = field.intensity_moments();
    let mut num = 0.0;
    let mut den = 0.0;
    for s in 0..ns - 1 {
        for i in 0..ni - 1 {
            let w = a[[s, i]].norm_sqr();
            if w == 0.0 {
                continue;
            }
            let z = a[[s + 1, i + 1]] * a[[s + 1, i]].conj() * a[[s, i + 1]].conj() * a[[s, i]];
            if z.norm_sqr() == 0.0 {
                continue;
            }
            num += w * z.arg();
            den += w;
        }
    }
    if den == 0.0 {
        return 0.0;
    }
    num / den / scale * (m.var_s * m.var_i).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn gaussian_profile(axis: Axis, mu: f64, sigma: f64, amp: f64) -> BeamProfile1D {
        BeamProfile1D::from_fn(axis, |x| amp * (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp())
    }

    fn correlated(rho: f64, axis: Axis) -> ComplexField2D {
        ComplexField2D::from_fn(axis, axis, |s, i| {
            let q = (s * s + i * i + 2.0 * rho * s * i) / (1.0 - rho * rho);
            Complex64::from_polar((-q / 4.0).exp(), 0.3 * s * i + 0.1 * s)
        })
        .normalize()
        .unwrap()
    }

    #[test]
    fn exact_gaussian_is_recovered() {
        let ax = Axis::symmetric(5.0, 401).unwrap();
        let p = gaussian_profile(ax, 0.37, 0.8, 2.5);
        let f = fit_gaussian(&p).unwrap();
        assert_relative_eq!(f.amplitude, 2.5, max_relative = 1e-8);
        assert_relative_eq!(f.center, 0.37, max_relative = 1e-8);
        assert_relative_eq!(f.sigma, 0.8, max_relative = 1e-8);
        assert!(f.residual < 1e-10);
    }

    #[test]
    fn degenerate_profiles() {
        let ax = Axis::symmetric(5.0, 101).unwrap();
        let zero = BeamProfile1D::from_fn(ax, |_| 0.0);
        assert!(matches!(fit_gaussian(&zero), Err(FitError::Degenerate(_))));
        let spike = BeamProfile1D::from_fn(ax, |x| if x.abs() < 0.1 { 1.0 } else { 0.0 });
        assert!(matches!(fit_gaussian(&spike), Err(FitError::Degenerate(_))));
    }

    #[test]
    fn sinc_squared_fit_reports_residual() {
        let ax = Axis::symmetric(10.0, 801).unwrap();
        let p = BeamProfile1D::from_fn(ax, |x| {
            let u = std::f64::consts::PI * x;
            if u == 0.0 {
                1.0
            } else {
                (u.sin() / u).powi(2)
            }
        });
        let f = fit_gaussian(&p).unwrap();
        assert!(f.residual > 1e-3 && f.residual < 0.2, "{}", f.residual);
        assert!(f.center.abs() < 1e-9);
        // Half maximum of sinc^2 at x = 0.4429.
        assert_relative_eq!(f.width().hwhm_nm / 1e3, 0.4429, max_relative = 0.05);
    }

    #[test]
    fn width_conventions() {
        let w = WidthReport::from_sigma_um(0.06);
        assert_eq!(w.fwhm_nm, 2.0 * w.hwhm_nm);
        assert_relative_eq!(w.hwhm_nm, 70.644601, max_relative = 1e-6);
    }

    #[test]
    fn iris_of_gaussian_and_top_hat() {
        let ax = Axis::symmetric(10.0, 2001).unwrap();
        let g = gaussian_profile(ax, 0.0, 1.3, 1.0).normalized().unwrap();
        assert_relative_eq!(iris_radius(&g, 0.99).unwrap(), 2.5758293 * 1.3, max_relative = 1e-4);
        let hat = BeamProfile1D::from_fn(ax, |x| if x.abs() <= 4.0 { 1.0 } else { 0.0 }).normalized().unwrap();
        let r = iris_radius(&hat, 0.99).unwrap();
        assert!((r - 0.99 * 4.0).abs() <= ax.spacing(), "{r}");
        let lap = BeamProfile1D::from_fn(ax, |x| (-x.abs()).exp()).normalized().unwrap();
        assert_relative_eq!(iris_radius(&lap, 0.5).unwrap(), std::f64::consts::LN_2, max_relative = 1e-4);
        assert!(iris_radius(&g, 1.0).is_err());
    }

    #[test]
    fn separable_field_marginals_and_slices() {
        let ax = Axis::symmetric(8.0, 161).unwrap();
        let f = ComplexField2D::from_fn(ax, ax, |s, i| {
            Complex64::new((-(s - 1.0).powi(2) / 2.0).exp() * (-(i * i) / 8.0).exp(), 0.0)
        })
        .normalize()
        .unwrap();
        let ms = marginal_signal(&f).unwrap();
        let factor = BeamProfile1D::from_fn(ax, |s| (-(s - 1.0).powi(2)).exp()).normalized().unwrap();
        assert!(ms.relative_l2(&factor) < 1e-9);
        assert_relative_eq!(ms.mass(), 1.0, max_relative = 1e-12);
        let mi = marginal_idler(&f).unwrap();
        assert_relative_eq!(mi.std_dev(), std::f64::consts::SQRT_2, max_relative = 1e-3);
        for c in [0.0, 0.33, -2.71] {
            assert!(conditional_slice(&f, c).unwrap().relative_l2(&ms) < 1e-6);
        }
        assert!(fsd_profile(&f, 0.0, 100.0).unwrap().relative_l2(&ms) < 1e-12);
        assert!(matches!(conditional_slice(&f, 9.0), Err(Error::OutOfGrid { .. })));
        assert!(fsd_profile(&f, 20.0, 2.0).is_err());
    }

    #[test]
    fn fsd_converges_to_slice() {
        let ax = Axis::symmetric(8.0, 401).unwrap();
        let f = correlated(0.8, ax);
        let slice = conditional_slice(&f, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for d in [4.0, 2.0, 1.0, 0.5, ax.spacing()] {
            let e = fsd_profile(&f, 1.0, d).unwrap().relative_l2(&slice);
            assert!(e < last, "d = {d}: {e} >= {last}");
            last = e;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn transmission_limits() {
        let ax = Axis::symmetric(8.0, 161).unwrap();
        let f = correlated(0.5, ax);
        assert_relative_eq!(transmission(&f, 100.0, None).unwrap(), 1.0, max_relative = 1e-12);
        let det = DetectorSpec::point(0.5);
        assert_relative_eq!(transmission(&f, 100.0, Some(&det)).unwrap(), 1.0, max_relative = 1e-12);
        let t = transmission(&f, 1.0, None).unwrap();
        assert!(t > 0.0 && t < 1.0);
    }

    #[test]
    fn slope_of_correlated_gaussian() {
        // Conditional mean of x_s given x_i is -rho x_i for this amplitude.
        let ax = Axis::symmetric(10.0, 201).unwrap();
        for rho in [0.6, -0.6, 0.0] {
            let f = correlated(rho, ax);
            let fit = heralded_slope(&f, &[-1.0, -0.5, 0.0, 0.5, 1.0], &DetectorSpec::point(0.0)).unwrap();
            assert!((fit.slope + rho).abs() < 1e-6, "{rho}: {}", fit.slope);
        }
        let f = correlated(0.6, ax);
        assert!(heralded_slope(&f, &[0.0, 1.0], &DetectorSpec::point(0.0)).is_err());
    }

    #[test]
    fn pearson_and_phase() {
        let ax = Axis::symmetric(10.0, 201).unwrap();
        let f = correlated(0.7, ax);
        assert_relative_eq!(intensity_pearson(&f).unwrap(), -0.7, max_relative = 1e-4);
        // Phase 0.3 x_s x_i has mixed derivative 0.3; sigmas are 1.
        assert_relative_eq!(phase_cross_statistic(&f), 0.3, max_relative = 1e-3);

        let real = ComplexField2D::from_fn(ax, ax, |s, i| Complex64::new((-(s * s + i * i)).exp(), 0.0));
        let map = phase_map(&real);
        assert!(map.values.iter().all(|&v| v == 0.0));
        assert!(!map.valid[[0, 0]]);
        assert!(map.valid[[100, 100]]);
        let separable = ComplexField2D::from_fn(ax, ax, |s, i| {
            Complex64::from_polar((-(s * s + i * i) / 4.0).exp(), 0.2 * s * s - 0.7 * i)
        });
        assert!(phase_cross_statistic(&separable).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn observables_invariant_under_global_phase_and_conjugation(phi in -3.0f64..3.0, rho in -0.9f64..0.9) {
            let ax = Axis::symmetric(8.0, 81).unwrap();
            let f = correlated(rho, ax);
            for g in [f.scaled(Complex64::from_polar(1.0, phi)), f.conj()] {
                prop_assert!(marginal_signal(&g).unwrap().relative_l2(&marginal_signal(&f).unwrap()) < 1e-12);
                prop_assert!(conditional_slice(&g, 0.7).unwrap().relative_l2(&conditional_slice(&f, 0.7).unwrap()) < 1e-12);
                prop_assert!((transmission(&g, 2.0, None).unwrap() - transmission(&f, 2.0, None).unwrap()).abs() < 1e-12);
                prop_assert!((intensity_pearson(&g).unwrap() - intensity_pearson(&f).unwrap()).abs() < 1e-12);
            }
            let rotated = phase_map(&f.scaled(Complex64::from_polar(1.0, phi)));
            let base = phase_map(&f);
            for ((a, b), v) in rotated.values.iter().zip(base.values.iter()).zip(base.valid.iter()) {
                if *v {
                    let d = (a - b - phi).rem_euclid(2.0 * std::f64::consts::PI);
                    prop_assert!(d.min(2.0 * std::f64::consts::PI - d) < 1e-9);
                }
            }
        }

        #[test]
        fn profiles_are_normalized(c in -3.0f64..3.0, d in 0.2f64..5.0, rho in -0.9f64..0.9) {
            let ax = Axis::symmetric(8.0, 81).unwrap();
            let f = correlated(rho, ax);
            for p in [marginal_signal(&f).unwrap(), marginal_idler(&f).unwrap(), conditional_slice(&f, c).unwrap(), fsd_profile(&f, c, d).unwrap()] {
                prop_assert!((p.mass() - 1.0).abs() < 1e-6);
            }
        }
    }
}
