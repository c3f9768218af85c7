//! Synthetic volumes and simulated scans.
//!
//! Phantoms are compositions of ellipsoids in normalized coordinates
//! (`[-1, 1]` along every axis, sampled at voxel centers), summed and then
//! clamped to `[0, 1]`. Inserts (cubes and cylinders) are added on top before
//! clamping, which is how a "current" scan differs from its prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, ProjectionSet};
use crate::projector::project_forward;
use crate::volume::{Volume, VolumeGrid};

/// One ellipsoid: additive intensity, semi-axes, center and ZXZ Euler
/// angles `(phi, theta, psi)` in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub intensity: f64,
    pub semi_axes: [f64; 3],
    pub center: [f64; 3],
    pub euler_deg: [f64; 3],
}

const fn ell(a: f64, ax: [f64; 3], c: [f64; 3], e: [f64; 3]) -> Ellipsoid {
    Ellipsoid {
        intensity: a,
        semi_axes: ax,
        center: c,
        euler_deg: e,
    }
}

/// High-contrast ("modified") 3D Shepp-Logan ellipsoids.
pub const SHEPP_LOGAN_3D: [Ellipsoid; 10] = [
    ell(1.0, [0.6900, 0.920, 0.810], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
    ell(-0.8, [0.6624, 0.874, 0.780], [0.0, -0.0184, 0.0], [0.0, 0.0, 0.0]),
    ell(-0.2, [0.1100, 0.310, 0.220], [0.22, 0.0, 0.0], [-18.0, 0.0, 10.0]),
    ell(-0.2, [0.1600, 0.410, 0.280], [-0.22, 0.0, 0.0], [18.0, 0.0, 10.0]),
    ell(0.1, [0.2100, 0.250, 0.410], [0.0, 0.35, -0.15], [0.0, 0.0, 0.0]),
    ell(0.1, [0.0460, 0.046, 0.050], [0.0, 0.1, 0.25], [0.0, 0.0, 0.0]),
    ell(0.1, [0.0460, 0.046, 0.050], [0.0, -0.1, 0.25], [0.0, 0.0, 0.0]),
    ell(0.1, [0.0460, 0.023, 0.050], [-0.08, -0.605, 0.0], [0.0, 0.0, 0.0]),
    ell(0.1, [0.0230, 0.023, 0.020], [0.0, -0.606, 0.0], [0.0, 0.0, 0.0]),
    ell(0.1, [0.0230, 0.046, 0.020], [0.06, -0.605, 0.0], [0.0, 0.0, 0.0]),
];

impl Ellipsoid {
    /// Rotation taking world offsets into the ellipsoid frame.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let [phi, theta, psi] = self.euler_deg.map(f64::to_radians);
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = psi.sin_cos();
        [
            [cp * cf - ct * sf * sp, cp * sf + ct * cf * sp, sp * st],
            [-sp * cf - ct * sf * cp, -sp * sf + ct * cf * cp, cp * st],
            [st * sf, -st * cf, ct],
        ]
    }

    pub fn contains(&self, rot: &[[f64; 3]; 3], p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let mut s = 0.0;
        for (row, axis) in rot.iter().zip(&self.semi_axes) {
            let l = row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
            s += (l / axis) * (l / axis);
        }
        s <= 1.0
    }
}

/// Normalized coordinate of voxel `i` out of `n`, in `(-1, 1)`.
#[inline]
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

/// Sum of ellipsoid intensities at every voxel center (no clamping).
pub fn rasterize(grid: VolumeGrid, ellipsoids: &[Ellipsoid]) -> Volume {
    rasterize_supersampled(grid, ellipsoids, 1)
}

/// Mean of the ellipsoid sum over `s^3` evenly spaced points per voxel,
/// giving partial-volume values at edges. `s = 1` samples voxel centers.
pub fn rasterize_supersampled(grid: VolumeGrid, ellipsoids: &[Ellipsoid], s: usize) -> Volume {
    let s = s.max(1);
    let rots: Vec<_> = ellipsoids.iter().map(Ellipsoid::rotation).collect();
    let [nx, ny, nz] = grid.dims;
    let sum_at = |p: [f64; 3]| -> f64 {
        ellipsoids
            .iter()
            .zip(&rots)
            .filter(|(e, r)| e.contains(r, p))
            .map(|(e, _)| e.intensity)
            .sum()
    };
    let norm = 1.0 / (s * s * s) as f64;
    Volume::from_fn(grid, |i, j, k| {
        if s == 1 {
            return sum_at([normalized_coord(i, nx), normalized_coord(j, ny), normalized_coord(k, nz)]);
        }
        let mut acc = 0.0;
        for c in 0..s {
            let z = normalized_coord(k * s + c, nz * s);
            for b in 0..s {
                let y = normalized_coord(j * s + b, ny * s);
                for a in 0..s {
                    acc += sum_at([normalized_coord(i * s + a, nx * s), y, z]);
                }
            }
        }
        acc * norm
    })
}

/// Fixed low-contrast texture blobs added inside the brain region of the
/// head-like phantom.
pub fn head_texture() -> Vec<Ellipsoid> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4ead);
    let unit = Uniform::new(-1.0f64, 1.0).unwrap();
    let mut out = Vec::with_capacity(32);
    while out.len() < 32 {
        let c = [0.5 * unit.sample(&mut rng), 0.7 * unit.sample(&mut rng), 0.6 * unit.sample(&mut rng)];
        let r = [
            0.03 + 0.05 * (unit.sample(&mut rng) + 1.0),
            0.03 + 0.05 * (unit.sample(&mut rng) + 1.0),
            0.03 + 0.05 * (unit.sample(&mut rng) + 1.0),
        ];
        let amp = 0.03 * unit.sample(&mut rng);
        let e = [90.0 * unit.sample(&mut rng), 45.0 * unit.sample(&mut rng), 90.0 * unit.sample(&mut rng)];
        out.push(ell(amp, r, c, e));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertShape {
    Cube,
    Cylinder,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    #[default]
    Z,
}

/// A box-bounded insert. The box spans `center - size/2 .. center - size/2 + size`
/// voxels per axis; a cylinder fills the ellipse inscribed in the box
/// cross-section perpendicular to `axis`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Insert {
    pub shape: InsertShape,
    pub center: [usize; 3],
    pub size: [usize; 3],
    /// Added to the phantom before clamping.
    pub intensity: f64,
    #[serde(default)]
    pub axis: Axis,
}

impl Insert {
    pub fn cube(center: [usize; 3], edge: usize, intensity: f64) -> Self {
        Self {
            shape: InsertShape::Cube,
            center,
            size: [edge; 3],
            intensity,
            axis: Axis::Z,
        }
    }

    fn bounds(&self, dims: [usize; 3]) -> Result<[(usize, usize); 3]> {
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let s = self.size[a];
            let half = s / 2;
            if s == 0 || self.center[a] < half || self.center[a] - half + s > dims[a] {
                return Err(Error::Config(format!(
                    "insert at {:?} with size {:?} does not fit in volume {:?}",
                    self.center, self.size, dims
                )));
            }
            out[a] = (self.center[a] - half, self.center[a] - half + s);
        }
        Ok(out)
    }

    /// Voxel indices (x, y, z) covered by the insert.
    pub fn support(&self, dims: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        let b = self.bounds(dims)?;
        let mut out = Vec::new();
        for k in b[2].0..b[2].1 {
            for j in b[1].0..b[1].1 {
                for i in b[0].0..b[0].1 {
                    if self.covers(&b, [i, j, k]) {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        Ok(out)
    }

    fn covers(&self, b: &[(usize, usize); 3], p: [usize; 3]) -> bool {
        match self.shape {
            InsertShape::Cube => true,
            InsertShape::Cylinder => {
                let axis = match self.axis {
                    Axis::X => 0,
                    Axis::Y => 1,
                    Axis::Z => 2,
                };
                (0..3)
                    .filter(|&a| a != axis)
                    .map(|a| {
                        let half = 0.5 * (b[a].1 - b[a].0) as f64;
                        let mid = b[a].0 as f64 + half;
                        let d = (p[a] as f64 + 0.5 - mid) / half;
                        d * d
                    })
                    .sum::<f64>()
                    <= 1.0
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    Shepp3d,
    HeadLike,
    Uniform { intensity: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    #[serde(default)]
    pub inserts: Vec<Insert>,
    /// Sub-samples per axis when rasterizing ellipsoids (1 = voxel centers).
    #[serde(default = "one")]
    pub supersample: usize,
}

fn one() -> usize {
    1
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, dims: [usize; 3]) -> Self {
        Self {
            kind,
            dims,
            spacing: unit_spacing(),
            inserts: Vec::new(),
            supersample: 1,
        }
    }

    /// Head-like phantom of `n^3` voxels with a cubic tumour of edge `n/8`
    /// in the brain region.
    pub fn head_replica(n: usize) -> Self {
        let edge = (n / 8).max(2);
        let mut spec = Self::new(PhantomKind::HeadLike, [n; 3]);
        spec.supersample = 3;
        spec.inserts.push(Insert::cube([n * 5 / 8, n / 2, n / 2], edge, 0.3));
        spec
    }

    /// Shepp-Logan body with a thin metal-like needle (intensity 1.0, five
    /// times the 0.2 soft-tissue level) running along y.
    pub fn needle_replica(n: usize) -> Self {
        let mut spec = Self::new(PhantomKind::Shepp3d, [n; 3]);
        spec.supersample = 3;
        let thickness = (n / 32).max(2);
        spec.inserts.push(Insert {
            shape: InsertShape::Cylinder,
            center: [n * 9 / 16, n / 2, n / 2],
            size: [thickness, n / 2, thickness],
            intensity: 0.8,
            axis: Axis::Y,
        });
        spec
    }

    pub fn without_inserts(&self) -> Self {
        Self {
            inserts: Vec::new(),
            ..self.clone()
        }
    }

    pub fn grid(&self) -> Result<VolumeGrid> {
        VolumeGrid::new(self.dims, self.spacing)
    }
}

/// Builds the phantom volume described by `spec`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Volume> {
    let grid = spec.grid()?;
    if spec.supersample == 0 || spec.supersample > 16 {
        return Err(Error::Config(format!(
            "supersample must be in 1..=16, got {}",
            spec.supersample
        )));
    }
    let supports = spec
        .inserts
        .iter()
        .map(|ins| ins.support(spec.dims))
        .collect::<Result<Vec<_>>>()?;
    let base = match spec.kind {
        PhantomKind::Uniform { intensity } => {
            if !intensity.is_finite() {
                return Err(Error::Config("uniform intensity must be finite".into()));
            }
            Volume::filled(grid, intensity)
        }
        PhantomKind::Shepp3d => rasterize_supersampled(grid, &SHEPP_LOGAN_3D, spec.supersample),
        PhantomKind::HeadLike => {
            let mut parts = SHEPP_LOGAN_3D.to_vec();
            // texture only inside the brain ellipsoid
            let brain = SHEPP_LOGAN_3D[1];
            let rot = brain.rotation();
            parts.extend(head_texture().into_iter().filter(|e| brain.contains(&rot, e.center)));
            rasterize_supersampled(grid, &parts, spec.supersample)
        }
    };
    let mut data = base.into_data();
    for (ins, support) in spec.inserts.iter().zip(&supports) {
        for &[i, j, k] in support {
            data[grid.index(i, j, k)] += ins.intensity;
        }
    }
    let clamp = !matches!(spec.kind, PhantomKind::Uniform { .. });
    if clamp {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Volume::new(grid, data)
}

/// Measurement noise model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum NoiseModel {
    #[default]
    None,
    /// Additive Gaussian noise with standard deviation `sigma_rel * max(b)`.
    Gaussian { sigma_rel: f64 },
}

/// Forward projects `vol` and adds seeded noise.
pub fn simulate_scan(
    vol: &Volume,
    geometry: &ConeBeamGeometry,
    noise: NoiseModel,
    seed: u64,
) -> Result<ProjectionSet> {
    if let NoiseModel::Gaussian { sigma_rel } = noise {
        if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
            return Err(Error::InvalidValue(format!("noise sigma must be >= 0, got {sigma_rel}")));
        }
    }
    let clean = project_forward(vol, geometry)?;
    match noise {
        NoiseModel::None => Ok(clean),
        NoiseModel::Gaussian { sigma_rel } => {
            let sigma = sigma_rel * clean.max_value().max(0.0);
            if sigma == 0.0 {
                return Ok(clean);
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidValue(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let geometry = clean.geometry().clone();
            let data = clean
                .into_data()
                .into_iter()
                .map(|v| v + normal.sample(&mut rng))
                .collect();
            ProjectionSet::new(geometry, data)
        }
    }
}

/// Angle indices kept by [`subsample_angles`]: `floor(i * n / n_keep)`.
pub fn subsample_indices(n_angles: usize, n_keep: usize) -> Result<Vec<usize>> {
    if n_keep == 0 || n_keep > n_angles {
        return Err(Error::InvalidValue(format!(
            "cannot keep {n_keep} of {n_angles} angles"
        )));
    }
    Ok((0..n_keep).map(|i| i * n_angles / n_keep).collect())
}

/// Keeps `n_keep` angles spread uniformly over the original list.
pub fn subsample_angles(proj: &ProjectionSet, n_keep: usize) -> Result<ProjectionSet> {
    let idx = subsample_indices(proj.geometry().n_angles(), n_keep)?;
    let geometry = proj.geometry().with_angle_indices(&idx);
    let mut data = Vec::with_capacity(geometry.n_rays());
    for &a in &idx {
        data.extend_from_slice(proj.view(a));
    }
    ProjectionSet::new(geometry, data)
}
