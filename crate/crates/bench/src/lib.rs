//! Shared fixtures for the criterion benchmarks.

use cbct_core::phantoms::{make_phantom, PhantomSpec};
use cbct_core::{ConeBeamGeometry, Volume};

/// Head replica of `n^3` voxels with a fitted `n_angles` circular scan.
pub fn head_fixture(n: usize, n_angles: usize) -> (Volume, ConeBeamGeometry) {
    let vol = make_phantom(&PhantomSpec::head_replica(n)).expect("valid phantom");
    let geom = ConeBeamGeometry::fitted(vol.grid(), 810.0, 1195.0, n_angles).expect("valid geometry");
    (vol, geom)
}
