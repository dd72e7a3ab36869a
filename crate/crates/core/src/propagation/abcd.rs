use std::ops::Mul;

use crate::config::{ArmLayout, OpticalSystem, Photon};
use crate::source::{momentum_covariance, position_covariance};

/// Paraxial ray-transfer matrix acting on `(x, theta)`. Lengths are in
/// whatever unit the elements were built with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcdMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AbcdMatrix {
    pub const IDENTITY: Self = Self { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    pub fn free_space(distance: f64) -> Self {
        Self { a: 1.0, b: distance, c: 0.0, d: 1.0 }
    }

    /// Thin lens; an infinite focal length is the identity.
    pub fn lens(focal: f64) -> Self {
        Self { a: 1.0, b: 0.0, c: -1.0 / focal, d: 1.0 }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, x: f64, theta: f64) -> (f64, f64) {
        (self.a * x + self.b * theta, self.c * x + self.d * theta)
    }
}

impl Mul for AbcdMatrix {
    type Output = Self;

    /// `self * rhs`: `rhs` acts first.
    fn mul(self, r: Self) -> Self {
        Self {
            a: self.a * r.a + self.b * r.c,
            b: self.a * r.b + self.b * r.d,
            c: self.c * r.a + self.d * r.c,
            d: self.c * r.b + self.d * r.d,
        }
    }
}

/// Source to each plane of an arm, in millimeters: `[lens1, lens2, terminal]`.
pub fn plane_matrices(arm: &ArmLayout) -> [AbcdMatrix; 3] {
    let to_lens1 = AbcdMatrix::free_space(arm.d1_mm);
    let to_lens2 = AbcdMatrix::free_space(arm.d2_mm) * AbcdMatrix::lens(arm.f1_mm) * to_lens1;
    let full = AbcdMatrix::free_space(arm.d3_mm) * AbcdMatrix::lens(arm.f2_mm) * to_lens2;
    [to_lens1, to_lens2, full]
}

/// `F(d3) L(f2) F(d2) L(f1) F(d1)`, millimeters.
pub fn abcd_matrix(arm: &ArmLayout) -> AbcdMatrix {
    plane_matrices(arm)[2]
}

/// Aperture-free Gaussian prediction for the terminal planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianOracle {
    /// Intensity covariance of `(x_s, x_i)` at the sample and detector
    /// planes, um^2.
    pub output_covariance: [[f64; 2]; 2],
    /// `d<x_s | x_i>/dx_i`.
    pub slope: f64,
    pub sigma_s_um: f64,
    pub sigma_i_um: f64,
}

/// Propagates the source covariance through both arms' ray matrices.
///
/// Position and angle are uncorrelated at the source (the amplitude is
/// real), and the angle of photon `p` is `kappa / k_p` with
/// `k_p = 2 pi / lambda_p`.
pub fn gaussian_oracle(system: &OpticalSystem) -> GaussianOracle {
    let sx = position_covariance(&system.source);
    let sk = momentum_covariance(&system.source);
    let k = |p: Photon| 2.0 * std::f64::consts::PI / (system.wavelength_nm(p) * 1e-3);
    let (ks, ki) = (k(Photon::Signal), k(Photon::Idler));
    let ms = abcd_matrix(&system.signal_arm);
    let mi = abcd_matrix(&system.idler_arm);
    // B is in mm; angles are dimensionless, so B * theta needs um.
    let (bs, bi) = (ms.b * 1e3, mi.b * 1e3);
    let ss = ms.a * ms.a * sx[0][0] + bs * bs * sk[0][0] / (ks * ks);
    let ii = mi.a * mi.a * sx[1][1] + bi * bi * sk[1][1] / (ki * ki);
    let si = ms.a * mi.a * sx[0][1] + bs * bi * sk[0][1] / (ks * ki);
    GaussianOracle {
        output_covariance: [[ss, si], [si, ii]],
        slope: si / ii,
        sigma_s_um: ss.sqrt(),
        sigma_i_um: ii.sqrt(),
    }
}
