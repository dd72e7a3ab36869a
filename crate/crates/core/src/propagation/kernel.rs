use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView2, Axis as NdAxis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::Axis;

/// Input columns evaluated per block when a free-space kernel is applied
/// densely.
const DENSE_BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelOp {
    /// Explicit `n_out x n_in` matrix.
    Dense(Array2<Complex64>),
    /// Pointwise multiplication on a shared axis.
    Diagonal(Array1<Complex64>),
    /// `w_k exp(-i pi (x_out - x_in)^2 / (lambda d))`, evaluated on demand.
    FreeSpace { distance: f64, wavelength: f64 },
}

/// Discretized one-dimensional propagation operator. Input quadrature
/// weights are folded into the entries, so applying the kernel to samples of
/// a field performs the trapezoid-rule integral. Lengths in micrometers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearKernel1D {
    pub axis_in: Axis,
    pub axis_out: Axis,
    pub op: KernelOp,
}

/// Phase `-pi r^2 / (lambda d)` of the free-space propagator.
#[inline]
fn fresnel(r: f64, scale: f64) -> Complex64 {
    let (s, c) = (-scale * r * r).sin_cos();
    Complex64::new(c, s)
}

/// Largest input spacing at which a standalone free-space chirp advances
/// by at most pi between neighbouring samples.
pub fn free_space_spacing_limit(axis_in: &Axis, axis_out: &Axis, distance: f64, wavelength: f64) -> f64 {
    wavelength * distance / (2.0 * (axis_out.max_abs() + axis_in.max_abs()))
}

pub fn lens_spacing_limit(axis: &Axis, focal: f64, wavelength: f64) -> f64 {
    wavelength * focal.abs() / (2.0 * axis.max_abs())
}

/// Free-space propagation over `distance` at `wavelength` (both um).
///
/// A zero distance gives the linear-interpolation resampling kernel. The
/// standalone sampling criterion on the input axis is enforced; chains of
/// kernels whose chirps cancel are checked as a whole by
/// [`super::ArmPlanes`] instead.
pub fn free_space_kernel(axis_in: Axis, axis_out: Axis, distance: f64, wavelength: f64) -> Result<LinearKernel1D> {
    if distance < 0.0 || distance.is_nan() {
        return Err(Error::InvalidArgument(format!("negative propagation distance {distance}")));
    }
    if distance == 0.0 {
        return Ok(LinearKernel1D::resampling(axis_in, axis_out));
    }
    let limit = free_space_spacing_limit(&axis_in, &axis_out, distance, wavelength);
    if axis_in.spacing() > limit {
        return Err(Error::Sampling {
            planes: format!("free space over {distance} um (input -> output plane)"),
            spacing_um: axis_in.spacing(),
            limit_um: limit,
        });
    }
    Ok(LinearKernel1D::free_space_unchecked(axis_in, axis_out, distance, wavelength))
}

/// Thin lens `exp(i pi x^2 / (lambda f))`. An infinite focal length is a
/// plain pass-through.
pub fn lens_kernel(axis: Axis, focal: f64, wavelength: f64) -> Result<LinearKernel1D> {
    if focal == 0.0 || focal.is_nan() {
        return Err(Error::InvalidArgument("focal length must be nonzero".into()));
    }
    let limit = lens_spacing_limit(&axis, focal, wavelength);
    if axis.spacing() > limit {
        return Err(Error::Sampling {
            planes: format!("lens of focal length {focal} um"),
            spacing_um: axis.spacing(),
            limit_um: limit,
        });
    }
    Ok(LinearKernel1D::lens_unchecked(axis, focal, wavelength))
}

/// Hard aperture: 1 for `|x| <= radius`, else 0.
pub fn aperture_kernel(axis: Axis, radius: f64) -> Result<LinearKernel1D> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("aperture radius must be positive, got {radius}")));
    }
    Ok(LinearKernel1D {
        axis_in: axis,
        axis_out: axis,
        op: KernelOp::Diagonal(aperture_mask(&axis, radius)),
    })
}

pub(crate) fn aperture_mask(axis: &Axis, radius: f64) -> Array1<Complex64> {
    axis.positions()
        .mapv(|x| if x.abs() <= radius { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
}

pub(crate) fn lens_phase(axis: &Axis, focal: f64, wavelength: f64) -> Array1<Complex64> {
    let scale = PI / (wavelength * focal);
    axis.positions().mapv(|x| Complex64::from_polar(1.0, scale * x * x))
}

impl LinearKernel1D {
    pub(crate) fn free_space_unchecked(axis_in: Axis, axis_out: Axis, distance: f64, wavelength: f64) -> Self {
        if distance == 0.0 {
            return Self::resampling(axis_in, axis_out);
        }
        Self {
            axis_in,
            axis_out,
            op: KernelOp::FreeSpace { distance, wavelength },
        }
    }

    pub(crate) fn lens_unchecked(axis: Axis, focal: f64, wavelength: f64) -> Self {
        Self {
            axis_in: axis,
            axis_out: axis,
            op: KernelOp::Diagonal(lens_phase(&axis, focal, wavelength)),
        }
    }

    pub fn identity(axis: Axis) -> Self {
        Self {
            axis_in: axis,
            axis_out: axis,
            op: KernelOp::Diagonal(Array1::from_elem(axis.len(), Complex64::new(1.0, 0.0))),
        }
    }

    /// Linear interpolation from `axis_in` onto `axis_out`; zero outside.
    pub fn resampling(axis_in: Axis, axis_out: Axis) -> Self {
        if axis_in == axis_out {
            return Self::identity(axis_in);
        }
        let mut m = Array2::zeros((axis_out.len(), axis_in.len()));
        for j in 0..axis_out.len() {
            if let Some((i, t)) = axis_in.locate(axis_out.x(j)) {
                m[[j, i]] = Complex64::new(1.0 - t, 0.0);
                m[[j, i + 1]] += Complex64::new(t, 0.0);
            }
        }
        Self {
            axis_in,
            axis_out,
            op: KernelOp::Dense(m),
        }
    }

    pub fn dense(axis_in: Axis, axis_out: Axis, matrix: Array2<Complex64>) -> Result<Self> {
        if matrix.dim() != (axis_out.len(), axis_in.len()) {
            return Err(Error::Dimension(format!(
                "matrix {:?} does not map {} samples to {}",
                matrix.dim(),
                axis_in.len(),
                axis_out.len()
            )));
        }
        Ok(Self {
            axis_in,
            axis_out,
            op: KernelOp::Dense(matrix),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axis_out.len(), self.axis_in.len())
    }

    /// Matrix element `(j, k)`, weights included.
    pub fn entry(&self, j: usize, k: usize) -> Complex64 {
        match &self.op {
            KernelOp::Dense(m) => m[[j, k]],
            KernelOp::Diagonal(d) => {
                if j == k {
                    d[j]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            KernelOp::FreeSpace { distance, wavelength } => {
                let w = self.axis_in.weights()[k];
                fresnel(self.axis_out.x(j) - self.axis_in.x(k), PI / (wavelength * distance)) * w
            }
        }
    }

    pub fn to_dense(&self) -> Array2<Complex64> {
        match &self.op {
            KernelOp::Dense(m) => m.clone(),
            KernelOp::Diagonal(d) => Array2::from_diag(d),
            KernelOp::FreeSpace { distance, wavelength } => {
                free_space_block(&self.axis_in, &self.axis_out, 0..self.axis_in.len(), *distance, *wavelength)
            }
        }
    }

    /// Dense matrix of a composed kernel, if it is stored that way.
    pub fn matrix(&self) -> Option<&Array2<Complex64>> {
        match &self.op {
            KernelOp::Dense(m) => Some(m),
            _ => None,
        }
    }

    /// Entrywise conjugate: the same chain with both propagator sign
    /// conventions flipped.
    pub fn conj(&self) -> Self {
        let op = match &self.op {
            KernelOp::Diagonal(d) => KernelOp::Diagonal(d.mapv(|z| z.conj())),
            _ => KernelOp::Dense(self.to_dense().mapv(|z| z.conj())),
        };
        Self {
            axis_in: self.axis_in,
            axis_out: self.axis_out,
            op,
        }
    }

    /// `K * input`, where the rows of `input` are samples on `axis_in`.
    pub fn apply(&self, input: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        self.apply_view(input.view())
    }

    pub fn apply_view(&self, input: ArrayView2<'_, Complex64>) -> Result<Array2<Complex64>> {
        if input.nrows() != self.axis_in.len() {
            return Err(Error::Dimension(format!(
                "kernel expects {} input samples, got {}",
                self.axis_in.len(),
                input.nrows()
            )));
        }
        Ok(match &self.op {
            KernelOp::Dense(m) => m.dot(&input),
            KernelOp::Diagonal(d) => {
                let mut out = input.to_owned();
                Zip::from(out.rows_mut()).and(d).for_each(|mut row, &z| row.mapv_inplace(|v| v * z));
                out
            }
            KernelOp::FreeSpace { distance, wavelength } => {
                if self.axis_in.same_spacing(&self.axis_out) {
                    toeplitz_apply(&self.axis_in, &self.axis_out, *distance, *wavelength, input)
                } else {
                    dense_apply(&self.axis_in, &self.axis_out, *distance, *wavelength, input)
                }
            }
        })
    }

    pub fn apply_vector(&self, v: &Array1<Complex64>) -> Result<Array1<Complex64>> {
        let col = v.view().insert_axis(NdAxis(1));
        Ok(self.apply_view(col)?.index_axis_move(NdAxis(1), 0))
    }

    /// The kernel applying `self` first and `next` second.
    pub fn then(&self, next: &LinearKernel1D) -> Result<LinearKernel1D> {
        if next.axis_in != self.axis_out {
            return Err(Error::Dimension("kernel chain axes do not connect".into()));
        }
        let op = match (&self.op, &next.op) {
            (KernelOp::Diagonal(a), KernelOp::Diagonal(b)) => KernelOp::Diagonal(a * b),
            (KernelOp::Diagonal(a), _) => {
                // Scale the columns of the next kernel.
                let mut m = next.to_dense();
                Zip::from(m.columns_mut()).and(a).for_each(|mut col, &z| col.mapv_inplace(|v| v * z));
                KernelOp::Dense(m)
            }
            (KernelOp::Dense(m), _) => KernelOp::Dense(next.apply(m)?),
            (KernelOp::FreeSpace { .. }, _) => KernelOp::Dense(next.apply(&self.to_dense())?),
        };
        Ok(LinearKernel1D {
            axis_in: self.axis_in,
            axis_out: next.axis_out,
            op,
        })
    }
}

/// Free-space matrix columns `cols` of the input axis.
fn free_space_block(
    axis_in: &Axis,
    axis_out: &Axis,
    cols: std::ops::Range<usize>,
    distance: f64,
    wavelength: f64,
) -> Array2<Complex64> {
    let scale = PI / (wavelength * distance);
    let w = axis_in.weights();
    let xo = axis_out.positions();
    let start = cols.start;
    let mut block = Array2::zeros((axis_out.len(), cols.len()));
    block
        .axis_iter_mut(NdAxis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(j, mut row)| {
            for (c, v) in row.iter_mut().enumerate() {
                let k = start + c;
                *v = fresnel(xo[j] - axis_in.x(k), scale) * w[k];
            }
        });
    block
}

/// Blockwise dense evaluation that skips input rows that are identically
/// zero (e.g. outside an aperture).
fn dense_apply(
    axis_in: &Axis,
    axis_out: &Axis,
    distance: f64,
    wavelength: f64,
    input: ArrayView2<'_, Complex64>,
) -> Array2<Complex64> {
    let nonzero: Vec<bool> = input
        .axis_iter(NdAxis(0))
        .map(|row| row.iter().any(|z| z.re != 0.0 || z.im != 0.0))
        .collect();
    let mut out = Array2::zeros((axis_out.len(), input.ncols()));
    let mut k = 0;
    while k < nonzero.len() {
        if !nonzero[k] {
            k += 1;
            continue;
        }
        let mut end = k;
        while end < nonzero.len() && nonzero[end] && end - k < DENSE_BLOCK {
            end += 1;
        }
        let block = free_space_block(axis_in, axis_out, k..end, distance, wavelength);
        ndarray::linalg::general_mat_mul(
            Complex64::new(1.0, 0.0),
            &block,
            &input.slice(s![k..end, ..]),
            Complex64::new(1.0, 0.0),
            &mut out,
        );
        k = end;
    }
    out
}

/// Smallest 2^a 3^b 5^c not below `n`.
fn fft_size(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut m = p35;
            while m < n {
                m *= 2;
            }
            best = best.min(m);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// Equal input and output spacing makes the free-space matrix Toeplitz, so
/// the quadrature sum is a linear convolution evaluated by FFT.
fn toeplitz_apply(
    axis_in: &Axis,
    axis_out: &Axis,
    distance: f64,
    wavelength: f64,
    input: ArrayView2<'_, Complex64>,
) -> Array2<Complex64> {
    let (n_in, n_out) = (axis_in.len(), axis_out.len());
    let span = n_in + n_out - 1;
    let len = fft_size(span);
    let h = axis_in.spacing();
    let scale = PI / (wavelength * distance);
    let offset = axis_out.min() - axis_in.max();

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);

    // Lag t corresponds to x_out(j) - x_in(k) with t = j - k + n_in - 1.
    let mut taps = vec![Complex64::new(0.0, 0.0); len];
    for (t, tap) in taps.iter_mut().take(span).enumerate() {
        *tap = fresnel(offset + t as f64 * h, scale);
    }
    forward.process(&mut taps);
    let norm = 1.0 / len as f64;

    let w = axis_in.weights();
    let mut out = Array2::zeros((n_out, input.ncols()));
    let columns: Vec<Vec<Complex64>> = (0..input.ncols())
        .into_par_iter()
        .map(|c| {
            let mut buf = vec![Complex64::new(0.0, 0.0); len];
            for k in 0..n_in {
                buf[k] = input[[k, c]] * w[k];
            }
            forward.process(&mut buf);
            for (b, t) in buf.iter_mut().zip(&taps) {
                *b *= t * norm;
            }
            inverse.process(&mut buf);
            buf[n_in - 1..n_in - 1 + n_out].to_vec()
        })
        .collect();
    for (c, col) in columns.into_iter().enumerate() {
        out.column_mut(c).assign(&Array1::from(col));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LAMBDA: f64 = 0.532;

    fn max_abs_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn test_field(axis: &Axis, cols: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((axis.len(), cols), |(k, c)| {
            let x = axis.x(k);
            Complex64::from_polar((-(x - c as f64).powi(2) / 50.0).exp(), 0.01 * x * c as f64)
        })
    }

    #[test]
    fn free_space_phase_values() {
        let a = Axis::symmetric(20.0, 401).unwrap();
        let d = 1000.0;
        let k = free_space_kernel(a, a, d, LAMBDA).unwrap();
        let w = a.weights()[200];
        let z = k.entry(200, 200);
        assert_relative_eq!(z.re, w, max_relative = 1e-15);
        assert_eq!(z.im, 0.0);
        // (x_out - x_in)^2 = lambda d -> phase -pi.
        let b = Axis::new(0.0, (LAMBDA * d).sqrt() * 2.0, 401).unwrap();
        let k = LinearKernel1D::free_space_unchecked(b, b, d, LAMBDA);
        let z = k.entry(200, 0) / b.weights()[0];
        assert_relative_eq!(z.arg().abs(), PI, max_relative = 1e-9);
        // Translation covariance.
        assert_relative_eq!((k.entry(210, 5) / k.entry(230, 25)).arg(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn free_space_errors_and_zero_distance() {
        let a = Axis::symmetric(20.0, 401).unwrap();
        assert!(matches!(free_space_kernel(a, a, -1.0, LAMBDA), Err(Error::InvalidArgument(_))));
        let coarse = Axis::symmetric(2000.0, 101).unwrap();
        assert!(matches!(free_space_kernel(coarse, coarse, 1000.0, LAMBDA), Err(Error::Sampling { .. })));
        let id = free_space_kernel(a, a, 0.0, LAMBDA).unwrap();
        let f = test_field(&a, 2);
        assert_eq!(id.apply(&f).unwrap(), f);
    }

    #[test]
    fn lens_and_aperture() {
        let f = 500.0;
        let a = Axis::new(0.0, (LAMBDA * f).sqrt(), 65).unwrap();
        let lens = lens_kernel(a, f, LAMBDA).unwrap();
        assert_relative_eq!(lens.entry(0, 0).arg(), 0.0);
        assert_relative_eq!(lens.entry(64, 64).arg().abs(), PI, max_relative = 1e-12);
        let sym = Axis::symmetric(10.0, 65).unwrap();
        let lens = lens_kernel(sym, 1e4, LAMBDA).unwrap();
        for j in 0..65 {
            assert_eq!(lens.entry(j, j), lens.entry(64 - j, 64 - j));
        }
        assert!(lens_kernel(sym, 0.0, LAMBDA).is_err());

        let ap = aperture_kernel(sym, 5.0).unwrap();
        let kept: Vec<f64> = (0..65).filter(|&j| ap.entry(j, j).re == 1.0).map(|j| sym.x(j)).collect();
        assert_eq!(kept.first(), Some(&-5.0));
        assert_eq!(kept.last(), Some(&5.0));
        let field = test_field(&sym, 3);
        let once = ap.apply(&field).unwrap();
        assert_eq!(ap.apply(&once).unwrap(), once);
        let open = aperture_kernel(sym, 1e6).unwrap();
        assert_eq!(open.apply(&field).unwrap(), field);
        assert!(aperture_kernel(sym, 0.0).is_err());
    }

    #[test]
    fn fast_paths_match_dense_matrix() {
        let a = Axis::symmetric(50.0, 301).unwrap();
        let b = Axis::new(-30.0, 30.0 + 2.0 * a.spacing(), 183).unwrap();
        assert!(a.same_spacing(&b));
        let c = Axis::symmetric(40.0, 200).unwrap();
        let f = test_field(&a, 3);
        for out in [b, c] {
            let k = LinearKernel1D::free_space_unchecked(a, out, 5000.0, LAMBDA);
            let fast = k.apply(&f).unwrap();
            let slow = k.to_dense().dot(&f);
            assert!(max_abs_diff(&fast, &slow) < 1e-11 * slow.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
    }

    #[test]
    fn composition_is_associative() {
        let a = Axis::symmetric(30.0, 257).unwrap();
        let fs = LinearKernel1D::free_space_unchecked(a, a, 4000.0, LAMBDA);
        let lens = lens_kernel(a, 5000.0, LAMBDA).unwrap();
        let ap = aperture_kernel(a, 20.0).unwrap();
        let field = test_field(&a, 2);
        let left = ap.then(&lens).unwrap().then(&fs).unwrap();
        let right = ap.then(&lens.then(&fs).unwrap()).unwrap();
        let l = left.apply(&field).unwrap();
        let r = right.apply(&field).unwrap();
        let staged = fs.apply(&lens.apply(&ap.apply(&field).unwrap()).unwrap()).unwrap();
        assert!(max_abs_diff(&l, &r) < 1e-12);
        assert!(max_abs_diff(&l, &staged) < 1e-12);
    }

    #[test]
    fn resampling_interpolates_linearly() {
        let a = Axis::symmetric(1.0, 21).unwrap();
        let b = Axis::symmetric(0.5, 16).unwrap();
        let k = LinearKernel1D::resampling(a, b);
        let f = Array2::from_shape_fn((21, 1), |(i, _)| Complex64::new(3.0 * a.x(i) + 1.0, 0.0));
        let out = k.apply(&f).unwrap();
        for j in 0..16 {
            assert_relative_eq!(out[[j, 0]].re, 3.0 * b.x(j) + 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn fft_sizes_are_smooth() {
        assert_eq!(fft_size(1000), 1000);
        assert_eq!(fft_size(1001), 1024);
        assert_eq!(fft_size(7), 8);
        assert_eq!(fft_size(52001), 52488);
    }
}
