use ndarray::{Array2, Zip};
use num_complex::Complex64;

use super::abcd::{plane_matrices, AbcdMatrix};
use super::kernel::{aperture_mask, lens_phase, LinearKernel1D};
use crate::config::{ArmGrid, ArmLayout, GridSpec, OpticalSystem, PlaneSpec, Photon, MIN_SAMPLES};
use crate::error::{Error, Result};
use crate::grid::{Axis, ComplexField2D};
use crate::source::{momentum_covariance, position_covariance};

/// Auto-sized spacings sit this far below the sampling limit, so that
/// rounding the extents up to whole samples cannot cross it.
const SPACING_MARGIN: f64 = 0.98;
const MIN_SOURCE_SAMPLES: usize = 129;
const MIN_TERMINAL_SAMPLES: usize = 1025;
/// Terminal half-extent in units of the aperture-limited spot `lambda d / (2 a)`.
const SPOT_SPAN: f64 = 18.0;

/// What the auto-sized grids must hold at the source plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeamModel {
    /// The Gaussian source itself, with its finite angular spread.
    Gaussian,
    /// A point at the source centre: the field fills every aperture.
    Impulse,
}

/// One-sigma sizes of the source intensity for one photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceBeam {
    pub sigma_x_um: f64,
    /// Angular spread in radians; `None` for an impulse.
    pub sigma_theta: Option<f64>,
    /// Width scale of the sampled amplitude along this axis, um.
    pub amplitude_scale_um: f64,
}

impl SourceBeam {
    pub fn of(system: &OpticalSystem, photon: Photon, model: BeamModel) -> Self {
        let idx = match photon {
            Photon::Signal => 0,
            Photon::Idler => 1,
        };
        let sx = position_covariance(&system.source)[idx][idx].sqrt();
        let sk = momentum_covariance(&system.source)[idx][idx].sqrt();
        let k = 2.0 * std::f64::consts::PI / (system.wavelength_nm(photon) * 1e-3);
        let rho = system.source.rho;
        // Conditional 1/e amplitude width: the amplitude varies fastest
        // along the correlated direction.
        let delta = 0.5 / sx;
        let amplitude = (1.0 - rho * rho).sqrt() / (delta * std::f64::consts::SQRT_2);
        Self {
            sigma_x_um: sx,
            sigma_theta: match model {
                BeamModel::Gaussian => Some(sk / k),
                BeamModel::Impulse => None,
            },
            amplitude_scale_um: amplitude,
        }
    }

    /// Aperture-free intensity sigma after `m` (mm units), um.
    fn sigma_after(&self, m: &AbcdMatrix) -> f64 {
        let pos = m.a * self.sigma_x_um;
        if m.b == 0.0 {
            return pos.abs();
        }
        match self.sigma_theta {
            Some(t) => pos.hypot(m.b * 1e3 * t),
            None => f64::INFINITY,
        }
    }
}

/// Arm distances in micrometers.
#[derive(Debug, Clone, Copy)]
struct ArmUm {
    d: [f64; 3],
    f: [f64; 2],
    r: [f64; 2],
}

impl ArmUm {
    fn new(arm: &ArmLayout) -> Self {
        Self {
            d: [arm.d1_mm * 1e3, arm.d2_mm * 1e3, arm.d3_mm * 1e3],
            f: [arm.f1_mm * 1e3, arm.f2_mm * 1e3],
            r: [arm.r1_mm * 1e3, arm.r2_mm * 1e3],
        }
    }
}

fn inv(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        1.0 / d
    }
}

/// Largest admissible spacing on each integration plane (source, lens1,
/// lens2), given the half-extents of all four planes.
///
/// Integrating over plane k multiplies the incoming chirp, the lens phase
/// and the outgoing chirp, whose quadratic terms partly cancel. The
/// gradient of the total phase is bounded by
/// `2 pi / lambda * (h_k |1/f_k - 1/d_k - 1/d_{k+1}| + h_{k+1}/d_{k+1} + h_{k-1}/d_k)`,
/// and keeping the increment between neighbours below pi gives the limit.
fn chain_limits(arm: &ArmUm, h: [f64; 4], wavelength: f64) -> [f64; 3] {
    let [d1, d2, d3] = arm.d;
    let g = [
        (h[0] + h[1]) * inv(d1),
        h[1] * (1.0 / arm.f[0] - inv(d1) - inv(d2)).abs() + h[2] * inv(d2) + h[0] * inv(d1),
        h[2] * (1.0 / arm.f[1] - inv(d2) - inv(d3)).abs() + h[3] * inv(d3) + h[1] * inv(d2),
    ];
    g.map(|g| if g > 0.0 { wavelength / (2.0 * g) } else { f64::INFINITY })
}

/// Odd sample count covering `[-half, half]` at spacing at most `spacing`.
fn odd_count(half: f64, spacing: f64, floor: usize) -> usize {
    let n = ((2.0 * half / spacing).ceil() as usize + 1).max(floor);
    n | 1
}

const PLANE_NAMES: [&str; 4] = ["source", "lens1", "lens2", "terminal"];

/// The four sampling axes of one arm, in micrometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPlanes {
    pub source: Axis,
    pub lens1: Axis,
    pub lens2: Axis,
    pub terminal: Axis,
}

impl ArmPlanes {
    pub fn resolve(system: &OpticalSystem, photon: Photon, grid: &GridSpec, model: BeamModel) -> Result<Self> {
        let beam = SourceBeam::of(system, photon, model);
        let wavelength = system.wavelength_nm(photon) * 1e-3;
        Self::auto(system.arm(photon), wavelength, &beam, grid.arm(photon), grid.refine)
            .map_err(|e| label(e, photon.name()))
    }

    /// Sizes every plane not fixed by `spec`, then checks the sampling
    /// chain.
    ///
    /// Lens planes cover the beam out to 8 sigma or the geometric footprint
    /// through the first aperture, whichever is smaller; the terminal plane
    /// covers 8 sigma or 18 aperture-limited spot radii. Unset sample
    /// counts come from the chain criterion, with the two lens planes on a
    /// common spacing.
    pub fn auto(arm: &ArmLayout, wavelength: f64, beam: &SourceBeam, spec: &ArmGrid, refine: usize) -> Result<Self> {
        if refine == 0 {
            return Err(Error::Grid("refine must be at least 1".into()));
        }
        let a = ArmUm::new(arm);
        let [m1, m2, m3] = plane_matrices(arm);

        let h0 = spec.source.half_extent_um.unwrap_or(6.0 * beam.sigma_x_um);
        let h1 = spec
            .lens1
            .half_extent_um
            .unwrap_or(1.05 * a.r[0].min(8.0 * beam.sigma_after(&m1)));
        let a1 = a.r[0].min(h1);

        let [d1, d2, d3] = a.d;
        let geometric = if d1 > 0.0 {
            let mut widest: f64 = 0.0;
            for x0 in [-h0, h0] {
                for x1 in [-a1, a1] {
                    let theta = (x1 - x0) / d1 - x1 / a.f[0];
                    widest = widest.max((x1 + d2 * theta).abs());
                }
            }
            widest
        } else {
            f64::INFINITY
        };
        let h2 = match spec.lens2.half_extent_um {
            Some(h) => h,
            None => {
                let core = geometric.min(8.0 * beam.sigma_after(&m2));
                if !core.is_finite() {
                    return Err(Error::Grid("cannot size the lens2 plane; set its half-extent".into()));
                }
                // Fresnel fringes of the first aperture's edge.
                1.05 * core + 3.0 * (wavelength * d2).sqrt()
            }
        };
        let a2 = a.r[1].min(h2);
        let spot = wavelength * d3 / (2.0 * a2);
        let sigma3 = beam.sigma_after(&m3);
        let h3 = spec.terminal.half_extent_um.unwrap_or_else(|| {
            if d3 == 0.0 {
                h2
            } else if sigma3.is_finite() {
                (8.0 * sigma3).max(SPOT_SPAN * spot)
            } else {
                SPOT_SPAN * spot
            }
        });
        let mut half = [h0, h1, h2, h3];
        let limits = chain_limits(&a, half, wavelength);

        let mut target = [
            limits[0].min(beam.amplitude_scale_um / 3.0),
            limits[1].min(limits[2]),
            limits[1].min(limits[2]),
            if sigma3.is_finite() { (spot / 10.0).min(sigma3 / 10.0) } else { spot / 10.0 },
        ];
        if d3 == 0.0 {
            target[3] = target[2];
        }
        let floors = [MIN_SOURCE_SAMPLES, MIN_SAMPLES, MIN_SAMPLES, MIN_TERMINAL_SAMPLES];
        let specs: [&PlaneSpec; 4] = [&spec.source, &spec.lens1, &spec.lens2, &spec.terminal];
        let mut counts = [0usize; 4];
        for k in 0..4 {
            counts[k] = match specs[k].samples {
                Some(n) => n,
                None => {
                    let dx = SPACING_MARGIN * target[k];
                    if !(dx > 0.0 && dx.is_finite()) {
                        return Err(Error::Grid(format!("cannot size the {} plane", PLANE_NAMES[k])));
                    }
                    let n = odd_count(half[k], dx, floors[k]);
                    if specs[k].half_extent_um.is_none() && n > floors[k] {
                        // Keep the spacing exact so the lens planes share it.
                        half[k] = dx * (n - 1) as f64 / 2.0;
                    }
                    n
                }
            };
        }
        let refined = counts.map(|n| (n - 1) * refine + 1);
        let planes = Self {
            source: Axis::symmetric(half[0], refined[0])?,
            lens1: Axis::symmetric(half[1], refined[1])?,
            lens2: Axis::symmetric(half[2], refined[2])?,
            terminal: Axis::symmetric(half[3], refined[3])?,
        };
        planes.check_sampling(arm, wavelength)?;
        Ok(planes)
    }

    pub fn axes(&self) -> [Axis; 4] {
        [self.source, self.lens1, self.lens2, self.terminal]
    }

    /// Spacing limits of the three integration planes for these axes.
    pub fn spacing_limits(&self, arm: &ArmLayout, wavelength: f64) -> [f64; 3] {
        let ax = self.axes();
        chain_limits(&ArmUm::new(arm), ax.map(|a| a.max_abs()), wavelength)
    }

    pub fn check_sampling(&self, arm: &ArmLayout, wavelength: f64) -> Result<()> {
        let ax = self.axes();
        for (k, limit) in self.spacing_limits(arm, wavelength).into_iter().enumerate() {
            let dx = ax[k].spacing();
            if dx > limit {
                let planes = if k == 0 {
                    format!("{} plane (-> {})", PLANE_NAMES[0], PLANE_NAMES[1])
                } else {
                    format!("{} plane ({} -> {} -> {})", PLANE_NAMES[k], PLANE_NAMES[k - 1], PLANE_NAMES[k], PLANE_NAMES[k + 1])
                };
                return Err(Error::Sampling {
                    planes,
                    spacing_um: dx,
                    limit_um: limit,
                });
            }
        }
        Ok(())
    }
}

fn label(e: Error, arm: &str) -> Error {
    match e {
        Error::Sampling { planes, spacing_um, limit_um } => Error::Sampling {
            planes: format!("{arm} arm {planes}"),
            spacing_um,
            limit_um,
        },
        Error::Grid(m) => Error::Grid(format!("{arm} arm: {m}")),
        other => other,
    }
}

/// Composed kernels of one arm: source to just before the second lens, and
/// source to the terminal plane.
#[derive(Debug, Clone)]
pub struct ArmKernels {
    pub planes: ArmPlanes,
    pub mid: LinearKernel1D,
    pub full: LinearKernel1D,
}

impl ArmKernels {
    pub fn build(system: &OpticalSystem, photon: Photon, grid: &GridSpec, model: BeamModel) -> Result<Self> {
        let planes = ArmPlanes::resolve(system, photon, grid, model)?;
        compose_arm(system.arm(photon), system.wavelength_nm(photon) * 1e-3, &planes)
            .map_err(|e| label(e, photon.name()))
    }
}

fn scale_rows(m: &mut Array2<Complex64>, factors: &ndarray::Array1<Complex64>) {
    Zip::from(m.rows_mut()).and(factors).for_each(|mut row, &z| row.mapv_inplace(|v| v * z));
}

/// `K_mid = F(d2) A(r1) L(f1) F(d1)` and `K_full = F(d3) A(r2) L(f2) K_mid`.
///
/// The chain is evaluated by pushing the columns of the source identity
/// through each stage, so every integral keeps its own quadrature.
pub fn compose_arm(arm: &ArmLayout, wavelength: f64, planes: &ArmPlanes) -> Result<ArmKernels> {
    planes.check_sampling(arm, wavelength)?;
    let a = ArmUm::new(arm);
    let f1 = LinearKernel1D::free_space_unchecked(planes.source, planes.lens1, a.d[0], wavelength);
    let mut m = f1.to_dense();
    let stop1 = lens_phase(&planes.lens1, a.f[0], wavelength) * aperture_mask(&planes.lens1, a.r[0]);
    scale_rows(&mut m, &stop1);

    let f2 = LinearKernel1D::free_space_unchecked(planes.lens1, planes.lens2, a.d[1], wavelength);
    let mid = f2.apply(&m)?;
    drop(m);

    let mut m = mid.clone();
    let stop2 = lens_phase(&planes.lens2, a.f[1], wavelength) * aperture_mask(&planes.lens2, a.r[1]);
    scale_rows(&mut m, &stop2);
    let f3 = LinearKernel1D::free_space_unchecked(planes.lens2, planes.terminal, a.d[2], wavelength);
    let full = f3.apply(&m)?;

    Ok(ArmKernels {
        planes: *planes,
        mid: LinearKernel1D::dense(planes.source, planes.lens2, mid)?,
        full: LinearKernel1D::dense(planes.source, planes.terminal, full)?,
    })
}

/// `K_s amp K_i^T`, unnormalized.
pub fn propagate(field: &ComplexField2D, k_s: &LinearKernel1D, k_i: &LinearKernel1D) -> Result<ComplexField2D> {
    if field.axis_s != k_s.axis_in || field.axis_i != k_i.axis_in {
        return Err(Error::Dimension("field axes do not match the kernel inputs".into()));
    }
    let left = k_s.apply(&field.amp)?;
    let both = k_i.apply_view(left.t())?;
    ComplexField2D::new(k_s.axis_out, k_i.axis_out, both.reversed_axes().as_standard_layout().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_lab_system;
    use crate::propagation::kernel::free_space_kernel;
    use approx::assert_relative_eq;

    fn lab_planes(f_s: f64, photon: Photon, model: BeamModel) -> ArmPlanes {
        let sys = default_lab_system(f_s).with_rho(0.9);
        ArmPlanes::resolve(&sys, photon, &GridSpec::default(), model).unwrap()
    }

    #[test]
    fn auto_planes_for_lab_arms() {
        let s = lab_planes(30.0, Photon::Signal, BeamModel::Gaussian);
        assert!(s.lens1.same_spacing(&s.lens2));
        assert_relative_eq!(s.source.max(), 12.0, max_relative = 0.05);
        assert!(s.lens1.max() <= 1.05 * 12_500.0 + s.lens1.spacing());
        assert!(s.terminal.max() > 2.9 && s.terminal.max() < 3.5, "{s:?}");
        assert_eq!(s.terminal.len() % 2, 1);
        for ax in s.axes() {
            assert!(ax.x(ax.center_index()).abs() < 1e-9);
        }
        let i = lab_planes(30.0, Photon::Idler, BeamModel::Gaussian);
        assert!(i.terminal.max() >= 300.0);
        let imp = lab_planes(30.0, Photon::Signal, BeamModel::Impulse);
        assert_relative_eq!(imp.lens1.max(), 1.05 * 12_500.0, max_relative = 1e-3);
    }

    #[test]
    fn refine_halves_spacing() {
        let sys = default_lab_system(60.0).with_rho(0.5);
        let g = GridSpec::default();
        let a = ArmPlanes::resolve(&sys, Photon::Idler, &g, BeamModel::Gaussian).unwrap();
        let b = ArmPlanes::resolve(&sys, Photon::Idler, &g.refined(2), BeamModel::Gaussian).unwrap();
        for (x, y) in a.axes().iter().zip(b.axes()) {
            assert_eq!(y.len(), 2 * x.len() - 1);
            assert_relative_eq!(y.spacing(), x.spacing() / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn coarse_user_grid_is_rejected_with_plane_name() {
        let sys = default_lab_system(30.0);
        let mut g = GridSpec::default();
        g.signal.lens1.samples = Some(2001);
        let err = ArmPlanes::resolve(&sys, Photon::Signal, &g, BeamModel::Gaussian).unwrap_err();
        match err {
            Error::Sampling { planes, spacing_um, limit_um } => {
                assert!(planes.contains("signal arm lens1 plane"), "{planes}");
                assert!(spacing_um > limit_um);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chain_limit_formula() {
        let arm = ArmLayout { d1_mm: 1.0, d2_mm: 2.0, d3_mm: 4.0, f1_mm: 0.5, f2_mm: f64::INFINITY, r1_mm: 1.0, r2_mm: 1.0 };
        let l = chain_limits(&ArmUm::new(&arm), [10.0, 20.0, 30.0, 40.0], 0.5);
        assert_relative_eq!(l[0], 0.5 / (2.0 * 30.0 / 1000.0));
        let g1 = 20.0 * (2.0 - 1.0 - 0.5) / 1000.0 + 30.0 / 2000.0 + 10.0 / 1000.0;
        assert_relative_eq!(l[1], 0.5 / (2.0 * g1));
        let g2 = 30.0 * (0.5 + 0.25) / 1000.0 + 40.0 / 4000.0 + 20.0 / 2000.0;
        assert_relative_eq!(l[2], 0.5 / (2.0 * g2));
    }

    fn centroid(v: &ndarray::Array1<Complex64>, ax: &Axis) -> f64 {
        let p = v.mapv(|z| z.norm_sqr());
        (&p * &ax.positions()).sum() / p.sum()
    }

    #[test]
    fn off_axis_point_is_imaged_with_arm_magnification() {
        for (photon, x0, mag) in [(Photon::Signal, 6.0, -2.5 / 30.0), (Photon::Idler, 2.0, -1000.0 / 30.0)] {
            let mut sys = default_lab_system(30.0).with_rho(0.9);
            for arm in [&mut sys.signal_arm, &mut sys.idler_arm] {
                arm.r1_mm = 1e6;
                arm.r2_mm = 1e6;
            }
            let k = ArmKernels::build(&sys, photon, &GridSpec::default(), BeamModel::Gaussian).unwrap();
            let src = k.planes.source;
            let j = (0..src.len()).min_by(|&a, &b| (src.x(a) - x0).abs().total_cmp(&(src.x(b) - x0).abs())).unwrap();
            let col = k.full.matrix().unwrap().column(j).to_owned();
            let c = centroid(&col, &k.planes.terminal);
            let expected = mag * src.x(j);
            assert!((c - expected).abs() < 0.02 * expected.abs(), "{photon:?}: {c} vs {expected}");
        }
    }

    #[test]
    fn lensless_chain_is_free_space_over_total_distance() {
        let wavelength = 0.5;
        let arm = ArmLayout {
            d1_mm: 1.0,
            d2_mm: 1.5,
            d3_mm: 0.5,
            f1_mm: f64::INFINITY,
            f2_mm: f64::INFINITY,
            r1_mm: f64::INFINITY,
            r2_mm: f64::INFINITY,
        };
        let beam = SourceBeam { sigma_x_um: 2.0, sigma_theta: Some(0.25 / (2.0 * std::f64::consts::PI / wavelength)), amplitude_scale_um: 2.8 };
        let planes = ArmPlanes::auto(&arm, wavelength, &beam, &ArmGrid::default(), 1).unwrap();
        let k = compose_arm(&arm, wavelength, &planes).unwrap();
        let direct = free_space_kernel(planes.source, planes.terminal, 3000.0, wavelength).unwrap();
        let input = ndarray::Array1::from_shape_fn(planes.source.len(), |n| {
            let x = planes.source.x(n);
            Complex64::new((-(x - 1.0).powi(2) / 16.0).exp(), 0.0)
        });
        let chained = k.full.apply_vector(&input).unwrap();
        let single = direct.apply_vector(&input).unwrap();
        let c = single.iter().zip(&chained).map(|(a, b)| a.conj() * b).sum::<Complex64>()
            / single.iter().map(|a| a.norm_sqr()).sum::<f64>();
        let resid = (&chained - &single.mapv(|a| a * c)).mapv(|z| z.norm_sqr()).sum().sqrt();
        let scale = chained.mapv(|z| z.norm_sqr()).sum().sqrt();
        assert!(resid < 1e-3 * scale, "{}", resid / scale);
    }

    #[test]
    fn propagate_checks_axes_and_identity() {
        let a = Axis::symmetric(5.0, 33).unwrap();
        let b = Axis::symmetric(6.0, 33).unwrap();
        let f = ComplexField2D::from_fn(a, b, Complex64::new);
        let id_a = LinearKernel1D::identity(a);
        let id_b = LinearKernel1D::identity(b);
        assert_eq!(propagate(&f, &id_a, &id_b).unwrap(), f);
        assert!(matches!(propagate(&f, &id_b, &id_a), Err(Error::Dimension(_))));
    }
}
