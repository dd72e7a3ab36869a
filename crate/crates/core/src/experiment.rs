//! Full scenarios, parameter sweeps, the diffraction limit and the data
//! behind the joint-density and mid-plane figures.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::{s, Array1, Array2, Axis as NdAxis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{
    conditional_slice, fit_gaussian, heralded_profile, heralded_slope, heralding_weights, intensity_pearson,
    iris_radius, marginal_idler, marginal_signal, phase_cross_statistic, phase_map, transmitted_fraction,
    DetectorSpec, GaussianFit, PhaseMap, SlopeFit, WidthReport,
};
use crate::config::{GridSpec, OpticalSystem, Photon};
use crate::error::{Error, Result};
use crate::grid::{Axis, BeamProfile1D, ComplexField2D, Moments};
use crate::propagation::{propagate, ArmKernels, BeamModel};
use crate::source::position_wavefunction;

pub const DEFAULT_HERALD_POSITIONS_UM: [f64; 5] = [-96.0, -48.0, 0.0, 48.0, 96.0];
pub const DEFAULT_SWEEP_POINTS: usize = 13;
pub const DEFAULT_FS_RANGE_MM: (f64, f64) = (30.0, 150.0);
pub const DEFAULT_FSD_DIAMETER_UM: f64 = 30.0;
pub const IRIS_FRACTION: f64 = 0.99;
/// Rows of the mid-plane field evaluated at a time.
const MID_BLOCK_ROWS: usize = 2048;

/// `n` equally spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

type Slot = Arc<Mutex<Option<Arc<ArmKernels>>>>;

/// Composed arm kernels keyed by arm layout, wavelength, grids and beam
/// model. Concurrent requests for the same key wait for a single build.
#[derive(Default)]
pub struct KernelCache {
    slots: Mutex<HashMap<String, Slot>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, system: &OpticalSystem, photon: Photon, grid: &GridSpec, model: BeamModel) -> Result<Arc<ArmKernels>> {
        // Debug formatting of f64 round-trips, so the key is exact.
        let key = format!(
            "{:?}|{:?}|{:?}|{:?}|{}|{:?}",
            system.arm(photon),
            system.wavelength_nm(photon),
            grid.arm(photon),
            model,
            grid.refine,
            // Gaussian-model grids depend on the source parameters.
            (model == BeamModel::Gaussian).then_some(system.source),
        );
        let slot = {
            let mut slots = self.slots.lock().expect("kernel cache poisoned");
            slots.entry(key).or_default().clone()
        };
        let mut entry = slot.lock().expect("kernel cache slot poisoned");
        if let Some(k) = entry.as_ref() {
            return Ok(k.clone());
        }
        let built = Arc::new(ArmKernels::build(system, photon, grid, model)?);
        *entry = Some(built.clone());
        Ok(built)
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("kernel cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Source field and both arms' kernels for one configuration.
#[derive(Clone)]
pub struct Pipeline {
    pub system: OpticalSystem,
    pub signal: Arc<ArmKernels>,
    pub idler: Arc<ArmKernels>,
    pub psi_in: ComplexField2D,
}

/// Reductions of the mid-plane field `psi_mid(x_s', x_i)` that never hold
/// all of it in memory.
#[derive(Debug, Clone)]
pub struct MidSummary {
    /// Unnormalized signal marginal on the second-lens plane.
    pub marginal: BeamProfile1D,
    /// Unnormalized heralded signal density, if a detector was given.
    pub heralded: Option<BeamProfile1D>,
    pub moments: Moments,
}

impl MidSummary {
    pub fn pearson(&self) -> f64 {
        self.moments.correlation()
    }
}

impl Pipeline {
    pub fn new(system: &OpticalSystem, grid: &GridSpec, cache: Option<&KernelCache>) -> Result<Self> {
        let system = system.validated()?;
        let get = |photon| match cache {
            Some(c) => c.get(&system, photon, grid, BeamModel::Gaussian),
            None => ArmKernels::build(&system, photon, grid, BeamModel::Gaussian).map(Arc::new),
        };
        let signal = get(Photon::Signal)?;
        let idler = get(Photon::Idler)?;
        Self::with_kernels(&system, signal, idler)
    }

    pub fn with_kernels(system: &OpticalSystem, signal: Arc<ArmKernels>, idler: Arc<ArmKernels>) -> Result<Self> {
        let psi_in = position_wavefunction(&system.source, signal.planes.source, idler.planes.source)?;
        Ok(Self {
            system: *system,
            signal,
            idler,
            psi_in,
        })
    }

    /// Joint amplitude at the sample and detector planes.
    pub fn output_field(&self) -> Result<ComplexField2D> {
        propagate(&self.psi_in, &self.signal.full, &self.idler.full)
    }

    /// Joint amplitude just before the second signal lens, against the
    /// idler detector plane. Large: prefer [`Pipeline::mid_summary`].
    pub fn mid_field(&self) -> Result<ComplexField2D> {
        propagate(&self.psi_in, &self.signal.mid, &self.idler.full)
    }

    pub fn mid_summary(&self, detector: Option<&DetectorSpec>) -> Result<MidSummary> {
        let axis_s = self.signal.mid.axis_out;
        let axis_i = self.idler.full.axis_out;
        let k_mid = self.signal.mid.matrix().expect("composed kernels are dense");
        // psi_in K_i^T, shared by every block of rows.
        let right = self
            .idler
            .full
            .apply_view(self.psi_in.amp.t())?
            .reversed_axes()
            .as_standard_layout()
            .into_owned();
        let wi = axis_i.weights();
        let xi = axis_i.positions();
        let herald_w = detector.map(|d| heralding_weights(&axis_i, d)).transpose()?;

        let n = axis_s.len();
        let mut marginal = Array1::zeros(n);
        let mut row_first = Array1::zeros(n);
        let mut heralded = Array1::zeros(n);
        let mut idler_profile = Array1::<f64>::zeros(axis_i.len());
        let ws = axis_s.weights();
        for start in (0..n).step_by(MID_BLOCK_ROWS) {
            let end = (start + MID_BLOCK_ROWS).min(n);
            let block = k_mid.slice(s![start..end, ..]).dot(&right);
            let p = block.mapv(|z| z.norm_sqr());
            for (r, row) in p.axis_iter(NdAxis(0)).enumerate() {
                let g = start + r;
                marginal[g] = row.dot(&wi);
                row_first[g] = row.iter().zip(&wi).zip(&xi).map(|((p, w), x)| p * w * x).sum();
                if let Some(h) = &herald_w {
                    heralded[g] = row.dot(h);
                }
                idler_profile.scaled_add(ws[g], &row);
            }
        }
        let xs = axis_s.positions();
        let mass = marginal.dot(&ws);
        if !(mass > 0.0) {
            return Err(Error::ZeroField);
        }
        let mean_s = (&marginal * &xs).dot(&ws) / mass;
        let mean_i = (&idler_profile * &xi).dot(&wi) / mass;
        let var_s = (&marginal * &xs.mapv(|x| (x - mean_s).powi(2))).dot(&ws) / mass;
        let var_i = (&idler_profile * &xi.mapv(|x| (x - mean_i).powi(2))).dot(&wi) / mass;
        let cov_si = (&row_first * &xs).dot(&ws) / mass - mean_s * mean_i;
        Ok(MidSummary {
            marginal: BeamProfile1D::new(axis_s, marginal)?,
            heralded: match herald_w {
                Some(_) => Some(BeamProfile1D::new(axis_s, heralded)?),
                None => None,
            },
            moments: Moments {
                mean_s,
                mean_i,
                var_s,
                var_i,
                cov_si,
            },
        })
    }

    /// Every observable of one configuration and detector.
    pub fn scenario(&self, detector: &DetectorSpec, herald_positions_um: &[f64]) -> Result<ScenarioResult> {
        let out = self.output_field()?.normalize()?;
        let fit_nh = fit_gaussian(&marginal_signal(&out)?).map_err(|e| Error::fit("non-heralded output profile", e))?;
        let fit_h = fit_gaussian(&heralded_profile(&out, detector)?).map_err(|e| Error::fit("heralded output profile", e))?;
        let slope = heralded_slope(&out, herald_positions_um, detector)?;
        let mid = self.mid_summary(Some(detector))?;
        let radius = self.system.signal_arm.r2_mm * 1e3;
        let sigma_mid_um = iris_radius(&mid.marginal.normalized()?, IRIS_FRACTION)?;
        let heralded_mid = mid.heralded.as_ref().expect("detector given");
        Ok(ScenarioResult {
            f_s_mm: self.system.signal_arm.f1_mm,
            rho: self.system.source.rho,
            detector: *detector,
            sigma_mid_um,
            width_nonheralded: fit_nh.width(),
            width_heralded: fit_h.width(),
            fit_nonheralded: fit_nh,
            fit_heralded: fit_h,
            transmission_nonheralded: transmitted_fraction(&mid.marginal, radius)?,
            transmission_heralded: transmitted_fraction(heralded_mid, radius)?,
            slope,
            pearson_mid: mid.pearson(),
            pearson_out: intensity_pearson(&out)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub f_s_mm: f64,
    pub rho: f64,
    pub detector: DetectorSpec,
    /// Radius of the centred iris passing 99% of the signal at the second
    /// lens.
    pub sigma_mid_um: f64,
    pub width_nonheralded: WidthReport,
    pub width_heralded: WidthReport,
    pub fit_nonheralded: GaussianFit,
    pub fit_heralded: GaussianFit,
    pub transmission_nonheralded: f64,
    pub transmission_heralded: f64,
    pub slope: SlopeFit,
    pub pearson_mid: f64,
    pub pearson_out: f64,
}

/// One configuration with the default heralding positions.
pub fn run_scenario(system: &OpticalSystem, grid: &GridSpec, detector: &DetectorSpec) -> Result<ScenarioResult> {
    Pipeline::new(system, grid, None)?.scenario(detector, &DEFAULT_HERALD_POSITIONS_UM)
}

/// Every combination of signal focal length, correlation and detector,
/// sorted by `(rho, f_s)`. The idler arm is built once per correlation.
pub fn sweep(
    base: &OpticalSystem,
    grid: &GridSpec,
    f_s_mm: &[f64],
    rhos: &[f64],
    detectors: &[DetectorSpec],
) -> Result<Vec<ScenarioResult>> {
    if f_s_mm.is_empty() || rhos.is_empty() || detectors.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one f_s, rho and detector".into()));
    }
    let cache = KernelCache::new();
    let jobs: Vec<(f64, f64)> = rhos.iter().flat_map(|&r| f_s_mm.iter().map(move |&f| (r, f))).collect();
    let mut results: Vec<ScenarioResult> = jobs
        .par_iter()
        .map(|&(rho, f_s)| -> Result<Vec<ScenarioResult>> {
            let context = || format!("scenario f_s = {f_s} mm, rho = {rho}");
            let system = base.with_signal_focal(f_s).with_rho(rho).validated().map_err(|e| Error::from(e).context(context()))?;
            let idler = cache.get(&system, Photon::Idler, grid, BeamModel::Gaussian).map_err(|e| e.context(context()))?;
            // Signal kernels are unique to each job; not worth caching.
            let signal = ArmKernels::build(&system, Photon::Signal, grid, BeamModel::Gaussian)
                .map(Arc::new)
                .map_err(|e| e.context(context()))?;
            let pipeline = Pipeline::with_kernels(&system, signal, idler).map_err(|e| e.context(context()))?;
            detectors
                .iter()
                .map(|d| pipeline.scenario(d, &DEFAULT_HERALD_POSITIONS_UM).map_err(|e| e.context(context())))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    results.sort_by(|a, b| a.rho.total_cmp(&b.rho).then(a.f_s_mm.total_cmp(&b.f_s_mm)));
    Ok(results)
}

/// Spot produced by a point source at the centre of the source plane.
#[derive(Debug, Clone)]
pub struct DiffractionLimit {
    pub width: WidthReport,
    pub fit: GaussianFit,
    pub profile: BeamProfile1D,
}

pub fn diffraction_limit(system: &OpticalSystem, grid: &GridSpec) -> Result<DiffractionLimit> {
    let system = system.validated()?;
    let k = ArmKernels::build(&system, Photon::Signal, grid, BeamModel::Impulse)?;
    let full = k.full.matrix().expect("composed kernels are dense");
    let column = full.column(k.planes.source.center_index());
    let profile = BeamProfile1D::new(k.planes.terminal, column.mapv(|z| z.norm_sqr()))?.normalized()?;
    let fit = fit_gaussian(&profile).map_err(|e| Error::fit("diffraction-limited spot", e))?;
    Ok(DiffractionLimit {
        width: fit.width(),
        fit,
        profile,
    })
}

/// Iso-intensity line segments at one fraction of the peak.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub level_fraction: f64,
    /// `[(x_s, x_i), (x_s, x_i)]` pairs, um.
    pub segments: Vec<[(f64, f64); 2]>,
}

/// Marching squares on a grid of values indexed `[s, i]`.
pub fn contour_segments(values: &Array2<f64>, axis_s: &Axis, axis_i: &Axis, level: f64) -> Vec<[(f64, f64); 2]> {
    let (ns, ni) = values.dim();
    let mut segs = Vec::new();
    let cross = |a: (f64, f64, f64), b: (f64, f64, f64)| -> (f64, f64) {
        let t = (level - a.2) / (b.2 - a.2);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    for s in 0..ns.saturating_sub(1) {
        for i in 0..ni.saturating_sub(1) {
            // Corners counter-clockwise from (s, i).
            let c = [
                (axis_s.x(s), axis_i.x(i), values[[s, i]]),
                (axis_s.x(s + 1), axis_i.x(i), values[[s + 1, i]]),
                (axis_s.x(s + 1), axis_i.x(i + 1), values[[s + 1, i + 1]]),
                (axis_s.x(s), axis_i.x(i + 1), values[[s, i + 1]]),
            ];
            let mut pts = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (c[e], c[(e + 1) % 4]);
                if (a.2 >= level) != (b.2 >= level) {
                    pts.push(cross(a, b));
                }
            }
            match pts.len() {
                2 => segs.push([pts[0], pts[1]]),
                4 => {
                    // Saddle: pair edges according to the cell average.
                    let centre = c.iter().map(|p| p.2).sum::<f64>() / 4.0;
                    if (centre >= level) == (c[0].2 >= level) {
                        segs.push([pts[0], pts[3]]);
                        segs.push([pts[1], pts[2]]);
                    } else {
                        segs.push([pts[0], pts[1]]);
                        segs.push([pts[2], pts[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

/// Output joint density with its marginals, conditionals and contours.
#[derive(Debug, Clone)]
pub struct Fig2Data {
    pub f_s_mm: f64,
    pub rho: f64,
    /// Normalized joint density `[x_s, x_i]`, 1/um^2.
    pub joint: ComplexField2D,
    pub marginal_signal: BeamProfile1D,
    pub marginal_idler: BeamProfile1D,
    /// `(x_iC, heralded signal density)`.
    pub conditionals: Vec<(f64, BeamProfile1D)>,
    pub contours: Vec<Contour>,
}

impl Fig2Data {
    pub fn density(&self) -> Array2<f64> {
        self.joint.intensity()
    }
}

pub const FIG2_HERALD_POSITIONS_UM: [f64; 2] = [0.0, -96.0];

pub fn reproduce_fig2(system: &OpticalSystem, grid: &GridSpec) -> Result<Fig2Data> {
    let pipeline = Pipeline::new(system, grid, None)?;
    let joint = pipeline.output_field()?.normalize()?;
    let density = joint.intensity();
    let peak = density.iter().copied().fold(0.0, f64::max);
    let contours = (1..=9)
        .map(|k| {
            let f = k as f64 / 10.0;
            Contour {
                level_fraction: f,
                segments: contour_segments(&density, &joint.axis_s, &joint.axis_i, f * peak),
            }
        })
        .collect();
    let conditionals = FIG2_HERALD_POSITIONS_UM
        .iter()
        .map(|&c| Ok((c, conditional_slice(&joint, c)?)))
        .collect::<Result<_>>()?;
    Ok(Fig2Data {
        f_s_mm: system.signal_arm.f1_mm,
        rho: system.source.rho,
        marginal_signal: marginal_signal(&joint)?,
        marginal_idler: marginal_idler(&joint)?,
        conditionals,
        contours,
        joint,
    })
}

/// Mid-plane intensity and phase with their correlation diagnostics.
#[derive(Debug, Clone)]
pub struct Fig4Data {
    pub f_s_mm: f64,
    pub rho: f64,
    /// Decimated `|psi_mid|^2`, normalized to unit mass.
    pub intensity: Array2<f64>,
    pub phase: PhaseMap,
    pub axis_s: Vec<f64>,
    pub axis_i: Vec<f64>,
    pub pearson_mid: f64,
    pub pearson_out: f64,
    pub phase_cross: f64,
    /// Largest |x| passed by the first signal aperture, um.
    pub aperture_support_um: f64,
    /// Signal mass at the second lens beyond the first aperture's radius.
    pub mass_beyond_aperture: f64,
}

/// Largest number of samples per axis kept in the emitted maps.
pub const FIG4_MAP_SAMPLES: usize = 201;

pub fn reproduce_fig4(base: &OpticalSystem, grid: &GridSpec, f_s_mm: &[f64], rho: f64) -> Result<Vec<Fig4Data>> {
    let mut out = Vec::with_capacity(f_s_mm.len());
    for &f_s in f_s_mm {
        let system = base.with_signal_focal(f_s).with_rho(rho);
        let pipeline = Pipeline::new(&system, grid, None)?;
        let pearson_out = intensity_pearson(&pipeline.output_field()?)?;
        let mid = pipeline.mid_field()?.normalize()?;
        let pearson_mid = intensity_pearson(&mid)?;
        let phase_cross = phase_cross_statistic(&mid);
        let r1 = system.signal_arm.r1_mm * 1e3;
        let aperture_support_um = pipeline
            .signal
            .planes
            .lens1
            .positions()
            .iter()
            .filter(|x| x.abs() <= r1)
            .fold(0.0, |m: f64, x| m.max(x.abs()));
        let marginal = marginal_signal(&mid)?;
        let mass_beyond_aperture = 1.0 - marginal.mass_between(-r1, r1);

        let step_s = mid.axis_s.len().div_ceil(FIG4_MAP_SAMPLES);
        let step_i = mid.axis_i.len().div_ceil(FIG4_MAP_SAMPLES);
        let amp = mid.amp.slice(s![..;step_s, ..;step_i]).to_owned();
        let axis_s = mid.axis_s.positions().slice(s![..;step_s]).to_vec();
        let axis_i = mid.axis_i.positions().slice(s![..;step_i]).to_vec();
        let sub = ComplexField2D {
            axis_s: mid.axis_s,
            axis_i: mid.axis_i,
            amp: amp.clone(),
        };
        drop(mid);
        out.push(Fig4Data {
            f_s_mm: f_s,
            rho,
            intensity: amp.mapv(|z: Complex64| z.norm_sqr()),
            phase: phase_map(&sub),
            axis_s,
            axis_i,
            pearson_mid,
            pearson_out,
            phase_cross,
            aperture_support_um,
            mass_beyond_aperture,
        });
    }
    Ok(out)
}

/// Transmission read off a sweep where its width curve first drops to
/// `target_nm`, by linear interpolation between neighbouring points.
/// `None` if the curve never gets that low.
pub fn transmission_at_width(points: &[(f64, f64)], target_nm: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let ((w0, t0), (w1, t1)) = (w[0], w[1]);
        if (w0 - target_nm) * (w1 - target_nm) <= 0.0 && w0 != w1 {
            let u = (target_nm - w0) / (w1 - w0);
            Some(t0 + u * (t1 - t0))
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linspace_endpoints() {
        let v = linspace(30.0, 150.0, 13);
        assert_eq!(v.len(), 13);
        assert_eq!(v[0], 30.0);
        assert_eq!(v[12], 150.0);
        assert_relative_eq!(v[1], 40.0);
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
    }

    #[test]
    fn contours_of_a_cone() {
        let a = Axis::symmetric(2.0, 41).unwrap();
        let v = Array2::from_shape_fn((41, 41), |(s, i)| 2.0 - a.x(s).hypot(a.x(i)));
        let segs = contour_segments(&v, &a, &a, 1.0);
        assert!(!segs.is_empty());
        for seg in &segs {
            for p in seg {
                assert_relative_eq!(p.0.hypot(p.1), 1.0, epsilon = 5e-3);
            }
        }
    }

    #[test]
    fn width_interpolation() {
        let pts = [(200.0, 1.0), (180.0, 0.9), (160.0, 0.7)];
        assert_relative_eq!(transmission_at_width(&pts, 170.0).unwrap(), 0.8);
        assert_eq!(transmission_at_width(&pts, 150.0), None);
    }

    #[test]
    fn empty_sweep_rejected() {
        let sys = crate::config::default_lab_system(30.0);
        let g = GridSpec::default();
        assert!(matches!(sweep(&sys, &g, &[30.0], &[], &[DetectorSpec::point(0.0)]), Err(Error::InvalidArgument(_))));
    }
}
