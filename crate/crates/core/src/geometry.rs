//! Circular-trajectory cone-beam geometry with a flat detector.
//!
//! World frame: the source orbits the z axis in the `z = 0` plane. At angle
//! `beta` the source sits at `dso * (cos beta, sin beta, 0)` and the detector
//! center at `-(dsd - dso) * (cos beta, sin beta, 0)`. Detector `u` runs along
//! `(-sin beta, cos beta, 0)` and `v` along `+z`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::volume::VolumeGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    /// Pixel counts along u and v.
    pub nu: usize,
    pub nv: usize,
    /// Pixel pitch in mm.
    pub pu: f64,
    pub pv: f64,
    /// Detector center offset in mm.
    #[serde(default)]
    pub ou: f64,
    #[serde(default)]
    pub ov: f64,
}

impl Detector {
    pub fn pixels(&self) -> usize {
        self.nu * self.nv
    }

    /// Position of pixel center `(iu, iv)` in detector coordinates (mm).
    #[inline]
    pub fn pixel_uv(&self, iu: usize, iv: usize) -> (f64, f64) {
        (
            (iu as f64 - 0.5 * (self.nu as f64 - 1.0)) * self.pu + self.ou,
            (iv as f64 - 0.5 * (self.nv as f64 - 1.0)) * self.pv + self.ov,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeBeamGeometry {
    /// Source-to-rotation-axis distance (mm).
    pub dso: f64,
    /// Source-to-detector distance (mm).
    pub dsd: f64,
    pub detector: Detector,
    /// Rotation angles in radians.
    pub angles: Vec<f64>,
}

/// Per-angle frame: source position, detector center and detector axes.
#[derive(Clone, Copy, Debug)]
pub struct ViewFrame {
    pub source: [f64; 3],
    pub detector_center: [f64; 3],
    pub eu: [f64; 3],
    pub ev: [f64; 3],
}

impl ViewFrame {
    #[inline]
    pub fn pixel_position(&self, u: f64, v: f64) -> [f64; 3] {
        std::array::from_fn(|a| self.detector_center[a] + u * self.eu[a] + v * self.ev[a])
    }
}

impl ConeBeamGeometry {
    pub fn new(dso: f64, dsd: f64, detector: Detector, angles: Vec<f64>) -> Result<Self> {
        let g = Self {
            dso,
            dsd,
            detector,
            angles,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n` angles evenly covering a full revolution, starting at 0.
    pub fn full_circle(n: usize) -> Vec<f64> {
        (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
    }

    /// A geometry whose detector covers the cylinder inscribed in `grid`
    /// (plus a small margin) at the given distances.
    pub fn fitted(grid: &VolumeGrid, dso: f64, dsd: f64, n_angles: usize) -> Result<Self> {
        let half_x = 0.5 * grid.dims[0] as f64 * grid.spacing[0];
        let half_y = 0.5 * grid.dims[1] as f64 * grid.spacing[1];
        let half_z = 0.5 * grid.dims[2] as f64 * grid.spacing[2];
        let radius = half_x.max(half_y);
        if dso <= radius {
            return Err(Error::Config(format!(
                "source distance {dso} mm lies inside the volume (radius {radius} mm)"
            )));
        }
        let mag = dsd / (dso - radius);
        let nu = grid.dims[0].max(grid.dims[1]);
        let nv = grid.dims[2];
        let pu = 2.0 * radius * mag * 1.05 / nu as f64;
        let pv = 2.0 * half_z * mag * 1.05 / nv as f64;
        Self::new(
            dso,
            dsd,
            Detector {
                nu,
                nv,
                pu,
                pv,
                ou: 0.0,
                ov: 0.0,
            },
            Self::full_circle(n_angles),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dso > 0.0 && self.dsd > self.dso && self.dsd.is_finite()) {
            return Err(Error::Config(format!(
                "geometry requires dsd > dso > 0, got dso={} dsd={}",
                self.dso, self.dsd
            )));
        }
        let d = &self.detector;
        if d.nu == 0 || d.nv == 0 {
            return Err(Error::Config("detector needs at least one pixel per axis".into()));
        }
        if !(d.pu > 0.0 && d.pv > 0.0 && d.pu.is_finite() && d.pv.is_finite()) {
            return Err(Error::Config("detector pitch must be positive".into()));
        }
        if !(d.ou.is_finite() && d.ov.is_finite()) {
            return Err(Error::Config("detector offset must be finite".into()));
        }
        if self.angles.is_empty() {
            return Err(Error::Config("geometry has no projection angles".into()));
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("projection angles must be finite".into()));
        }
        Ok(())
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    /// Number of measurements `N = nu * nv * n_angles`.
    pub fn n_rays(&self) -> usize {
        self.detector.pixels() * self.angles.len()
    }

    pub fn frame(&self, angle_index: usize) -> ViewFrame {
        let beta = self.angles[angle_index];
        let (s, c) = beta.sin_cos();
        let back = self.dsd - self.dso;
        ViewFrame {
            source: [self.dso * c, self.dso * s, 0.0],
            detector_center: [-back * c, -back * s, 0.0],
            eu: [-s, c, 0.0],
            ev: [0.0, 0.0, 1.0],
        }
    }

    /// Copy of this geometry restricted to the given angle indices.
    pub fn with_angle_indices(&self, indices: &[usize]) -> Self {
        Self {
            angles: indices.iter().map(|&i| self.angles[i]).collect(),
            ..self.clone()
        }
    }

    /// Fails if the source orbit passes through the volume bounding box.
    pub fn check_source_outside(&self, grid: &VolumeGrid) -> Result<()> {
        let lo = grid.lower();
        let hi = grid.upper();
        for (a, _) in self.angles.iter().enumerate() {
            let s = self.frame(a).source;
            if (0..3).all(|ax| s[ax] >= lo[ax] && s[ax] <= hi[ax]) {
                return Err(Error::Config(format!(
                    "source at angle index {a} lies inside the volume bounding box"
                )));
            }
        }
        Ok(())
    }
}

/// Stacked detector readings, one `nu x nv` image per angle, u fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    geometry: ConeBeamGeometry,
    data: Vec<f64>,
}

impl ProjectionSet {
    pub fn new(geometry: ConeBeamGeometry, data: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        check_len("projection data", geometry.n_rays(), data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite projection value at {pos}")));
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: ConeBeamGeometry) -> Self {
        let n = geometry.n_rays();
        Self {
            geometry,
            data: vec![0.0; n],
        }
    }

    pub(crate) fn from_parts_unchecked(geometry: ConeBeamGeometry, data: Vec<f64>) -> Self {
        debug_assert_eq!(geometry.n_rays(), data.len());
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Detector image for one angle.
    pub fn view(&self, angle_index: usize) -> &[f64] {
        let n = self.geometry.detector.pixels();
        &self.data[angle_index * n..(angle_index + 1) * n]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
