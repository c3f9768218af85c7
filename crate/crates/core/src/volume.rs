//! Dense 3D scalar volumes.
//!
//! Storage is flat with x varying fastest: `index = i + nx * (j + ny * k)`.
//! The same ordering is used by the projector, the difference operator and
//! every metric, so a volume can be handed to any [`LinearMap`] as a plain
//! slice.
//!
//! [`LinearMap`]: crate::linop::LinearMap

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Placement of a voxel lattice in world coordinates (mm).
///
/// `origin` is the world position of the volume *center*; the scanner
/// rotates about the world origin, so the default places the volume on the
/// rotation axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let grid = Self {
            dims,
            spacing,
            origin: [0.0; 3],
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn cubic(n: usize, spacing: f64) -> Result<Self> {
        Self::new([n; 3], [spacing; 3])
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("volume dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "voxel spacing must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config("volume origin must be finite".into()));
        }
        Ok(())
    }

    /// Number of voxels `M`.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Lower corner of the bounding box in world coordinates.
    pub fn lower(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] - 0.5 * self.dims[a] as f64 * self.spacing[a])
    }

    pub fn upper(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + 0.5 * self.dims[a] as f64 * self.spacing[a])
    }

    /// World coordinate of the center of voxel `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let lo = self.lower();
        let idx = [i, j, k];
        std::array::from_fn(|a| lo[a] + (idx[a] as f64 + 0.5) * self.spacing[a])
    }
}

/// A dense 3D scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: VolumeGrid,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: VolumeGrid, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_len("volume data", grid.len(), data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite voxel value at index {pos}")));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: VolumeGrid, value: f64) -> Self {
        Self {
            data: vec![value; grid.len()],
            grid,
        }
    }

    /// Builds a volume from a function of voxel indices.
    pub fn from_fn(grid: VolumeGrid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let [nx, ny, nz] = grid.dims;
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// `max - min` over all voxels.
    pub fn dynamic_range(&self) -> f64 {
        let (lo, hi) = self.min_max();
        hi - lo
    }

    /// Voxelwise `self - other`.
    pub fn difference(&self, other: &Volume) -> Result<Volume> {
        self.ensure_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Volume {
            grid: self.grid,
            data,
        })
    }

    pub fn ensure_same_dims(&self, other: &Volume) -> Result<()> {
        if self.grid.dims != other.grid.dims {
            return Err(Error::Config(format!(
                "volume dims differ: {:?} vs {:?}",
                self.grid.dims, other.grid.dims
            )));
        }
        Ok(())
    }

    /// Axial slice `k` as an `nx * ny` row-major image (x fastest).
    pub fn axial_slice(&self, k: usize) -> &[f64] {
        let plane = self.grid.dims[0] * self.grid.dims[1];
        &self.data[k * plane..(k + 1) * plane]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_fastest_indexing() {
        let grid = VolumeGrid::new([3, 4, 5], [1.0; 3]).unwrap();
        let vol = Volume::from_fn(grid, |i, j, k| (i + 10 * j + 100 * k) as f64);
        assert_eq!(vol.data()[1], 1.0);
        assert_eq!(vol.data()[3], 10.0);
        assert_eq!(vol.data()[12], 100.0);
        assert_eq!(vol.get(2, 3, 4), 432.0);
    }

    #[test]
    fn rejects_bad_volumes() {
        let grid = VolumeGrid::new([2, 2, 2], [1.0; 3]).unwrap();
        assert!(Volume::new(grid, vec![0.0; 7]).is_err());
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        assert!(Volume::new(grid, data).is_err());
        assert!(VolumeGrid::new([2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        assert!(VolumeGrid::new([0, 2, 2], [1.0; 3]).is_err());
    }

    #[test]
    fn bounding_box_is_centered_on_origin() {
        let grid = VolumeGrid::new([4, 2, 2], [0.5, 1.0, 2.0])
            .unwrap()
            .with_origin([1.0, 0.0, 0.0]);
        assert_eq!(grid.lower(), [0.0, -1.0, -2.0]);
        assert_eq!(grid.upper(), [2.0, 1.0, 2.0]);
        assert_eq!(grid.voxel_center(0, 0, 0), [0.25, -0.5, -1.0]);
    }
}
