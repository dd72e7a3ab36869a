//! One-dimensional propagation operators for free space, thin lenses and
//! hard apertures, their composition into per-arm kernels, and the
//! aperture-free ray-matrix oracle.
//!
//! Lengths are in micrometers except where a name says otherwise.

mod abcd;
mod arm;
mod kernel;

pub use abcd::{abcd_matrix, gaussian_oracle, plane_matrices, AbcdMatrix, GaussianOracle};
pub use arm::{compose_arm, propagate, ArmKernels, ArmPlanes, BeamModel, SourceBeam};
pub use kernel::{
    aperture_kernel, free_space_kernel, free_space_spacing_limit, lens_kernel, lens_spacing_limit, KernelOp,
    LinearKernel1D,
};
