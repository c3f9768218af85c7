//! Matrix-free iterative cone-beam CT reconstruction.
//!
//! The crate is organized around the [`LinearMap`] contract: the cone-beam
//! projector, the finite-difference operator and weighted or stacked
//! combinations of them all expose `apply` / `apply_adjoint`, and every
//! solver works on that contract alone.
//!
//! * [`projector`]: ray-driven forward projection and matched backprojection.
//! * [`diffreg`]: forward differences, isotropic TV and IRN weights.
//! * [`krylov`]: CGLS and SIRT inner solvers.
//! * [`recon`]: FDK, IRN-TV, IRN-PIPLE, IRN-PICCS and ASD-POCS-TV.
//! * [`phantoms`], [`metrics`], [`io`]: data generation, scoring and files.

pub mod diffreg;
pub mod error;
pub mod geometry;
pub mod io;
pub mod krylov;
pub mod linop;
pub mod metrics;
pub mod phantoms;
pub mod projector;
pub mod recon;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{ConeBeamGeometry, Detector, ProjectionSet};
pub use linop::{dot, norm2, stack_maps, DenseMatrix, Identity, LinearMap, StackedMap};
pub use projector::{project_adjoint, project_forward, ConeBeamProjector, RayPath};
pub use volume::{Volume, VolumeGrid};
