//! Simulation of heralded imaging with spatially entangled photon pairs:
//! a correlated Gaussian two-photon source, per-arm Fresnel propagation
//! through lenses and hard apertures, and the heralded and unheralded spot
//! widths, transmissions and correlations at the output.
//!
//! Lengths are micrometers internally. Configuration uses millimeters for
//! the optics and nanometers for wavelengths; names carry their units.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod export;
pub mod grid;
pub mod propagation;
pub mod source;
pub mod verify;

pub use analysis::{DetectorSpec, FitError, GaussianFit, WidthReport};
pub use config::{default_lab_system, load_config, ArmLayout, GridSpec, OpticalSystem, Photon, SourceParams};
pub use error::{Error, Result};
pub use grid::{Axis, BeamProfile1D, ComplexField2D};
pub use propagation::{ArmKernels, ArmPlanes, BeamModel, LinearKernel1D};
