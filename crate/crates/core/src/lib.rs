//! Scale spaces on the space of positions and orientations ℝ³⋊S².
//!
//! The crate provides an analytic approximation of the hypo-elliptic diffusion
//! kernel obtained from the SE(3) logarithm on an inversion-invariant section,
//! discrete shift-twist convolution of orientation fields, an explicit
//! finite-difference solver of the same diffusion used as a reference, and
//! fiber-to-bundle coherence scores for tractography streamlines.

pub mod convolution;
pub mod discretization;
mod error;
pub mod fbc;
pub mod io;
pub mod kernel;
pub mod lie_se3;
pub mod pde;

pub use convolution::{Boundary, FodField, KernelTable};
pub use discretization::{GridSpec, SphereSampling};
pub use error::Error;
pub use kernel::{DiffusionParams, Section};
pub use lie_se3::{LieCoefficients, Orientation, RigidMotion, Rotation, Vec3};
