//! Forward differences, isotropic total variation and IRN weights.
//!
//! The difference operator maps a volume of `M` voxels to three stacked
//! directional fields `[D_x x; D_y x; D_z x]`, each of length `M`:
//! `(D_a x)_i = x_i - x_{i + e_a}` where the neighbour exists and `0` on the
//! last slice along `a`. Constant volumes are exactly its null space.
//!
//! Smoothed weights follow `w = (z^2 + tau^2)^(-1/4)` so that
//! `||W(z) z||^2 -> ||z||_1` as `tau -> 0`. For TV the magnitude `z` is the
//! per-voxel gradient norm and one weight is shared by the three blocks.

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::linop::LinearMap;
use crate::volume::Volume;

/// Smallest smoothing parameter the default heuristic will return.
pub const TAU_FLOOR: f64 = 1e-8;

/// `tau = 1e-4 * dynamic_range`, floored at [`TAU_FLOOR`].
pub fn default_tau(dynamic_range: f64) -> f64 {
    (1e-4 * dynamic_range.abs()).max(TAU_FLOOR)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("smoothing parameter tau must be > 0, got {tau}")))
    }
}

/// The 3D forward-difference operator `D: R^M -> R^{3M}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiffOperator {
    dims: [usize; 3],
}

impl DiffOperator {
    pub fn new(dims: [usize; 3]) -> Self {
        Self { dims }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Gradient field `[D_x x; D_y x; D_z x]` of a volume.
    pub fn gradient(&self, vol: &Volume) -> Result<Vec<f64>> {
        if vol.dims() != self.dims {
            return Err(Error::Config(format!(
                "difference operator dims {:?} do not match volume {:?}",
                self.dims,
                vol.dims()
            )));
        }
        self.apply(vol.data())
    }

    /// Per-voxel squared gradient magnitude `sum_a (D_a x)_i^2`.
    pub fn magnitude_squared(&self, x: &[f64]) -> Vec<f64> {
        let g = {
            let mut g = vec![0.0; 3 * x.len()];
            self.apply_into(x, &mut g);
            g
        };
        let m = x.len();
        (0..m)
            .map(|i| g[i] * g[i] + g[m + i] * g[m + i] + g[2 * m + i] * g[2 * m + i])
            .collect()
    }
}

impl LinearMap for DiffOperator {
    fn domain_len(&self) -> usize {
        self.voxels()
    }

    fn range_len(&self) -> usize {
        3 * self.voxels()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        let plane = nx * ny;
        let m = self.voxels();
        let (gx, rest) = y.split_at_mut(m);
        let (gy, gz) = rest.split_at_mut(m);
        gx.par_chunks_mut(plane)
            .zip(gy.par_chunks_mut(plane))
            .zip(gz.par_chunks_mut(plane))
            .enumerate()
            .for_each(|(k, ((gx, gy), gz))| {
                let base = k * plane;
                for j in 0..ny {
                    for i in 0..nx {
                        let l = i + nx * j;
                        let v = x[base + l];
                        gx[l] = if i + 1 < nx { v - x[base + l + 1] } else { 0.0 };
                        gy[l] = if j + 1 < ny { v - x[base + l + nx] } else { 0.0 };
                        gz[l] = if k + 1 < nz { v - x[base + l + plane] } else { 0.0 };
                    }
                }
            });
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        let plane = nx * ny;
        let m = self.voxels();
        let (gx, rest) = y.split_at(m);
        let (gy, gz) = rest.split_at(m);
        x.par_chunks_mut(plane).enumerate().for_each(|(k, out)| {
            let base = k * plane;
            for j in 0..ny {
                for i in 0..nx {
                    let l = i + nx * j;
                    let g = base + l;
                    let mut v = 0.0;
                    if i + 1 < nx {
                        v += gx[g];
                    }
                    if i > 0 {
                        v -= gx[g - 1];
                    }
                    if j + 1 < ny {
                        v += gy[g];
                    }
                    if j > 0 {
                        v -= gy[g - nx];
                    }
                    if k + 1 < nz {
                        v += gz[g];
                    }
                    if k > 0 {
                        v -= gz[g - plane];
                    }
                    out[l] = v;
                }
            }
        });
    }
}

/// Isotropic total variation `sum_i |grad x|_i`.
pub fn tv(vol: &Volume) -> f64 {
    DiffOperator::new(vol.dims())
        .magnitude_squared(vol.data())
        .into_iter()
        .map(f64::sqrt)
        .sum()
}

/// Smoothed isotropic TV `sum_i sqrt(|grad x|_i^2 + tau^2)` of a flat array.
pub fn smoothed_tv(dims: [usize; 3], x: &[f64], tau: f64) -> f64 {
    let t2 = tau * tau;
    DiffOperator::new(dims)
        .magnitude_squared(x)
        .into_iter()
        .map(|g2| (g2 + t2).sqrt())
        .sum()
}

/// Elementwise smoothed l1 weights `(z_i^2 + tau^2)^(-1/4)`.
pub fn smoothed_l1_weights(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let t2 = tau * tau;
    Ok(z.iter().map(|v| (v * v + t2).sqrt().sqrt().recip()).collect())
}

/// Per-voxel TV weights, shared by the three directional blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct TvWeights {
    pub tau: f64,
    pub w: Vec<f64>,
}

impl TvWeights {
    fn from_magnitude_squared(g2: Vec<f64>, tau: f64) -> Self {
        let t2 = tau * tau;
        let w = g2.into_iter().map(|v| (v + t2).sqrt().sqrt().recip()).collect();
        Self { tau, w }
    }

    /// Weight for entry `r` of the `3M`-long gradient field.
    pub fn block_weight(&self, r: usize) -> f64 {
        self.w[r % self.w.len()]
    }

    /// The map `W D` applying these weights after the difference operator.
    pub fn weighted_diff(&self, diff: DiffOperator) -> Result<WeightedDiff<'_>> {
        check_len("tv weights", diff.domain_len(), self.w.len())?;
        Ok(WeightedDiff {
            weights: &self.w,
            diff,
        })
    }

    /// `||W z||^2` for a `3M`-long field `z`.
    pub fn weighted_norm_squared(&self, z: &[f64]) -> f64 {
        let m = self.w.len();
        z.iter()
            .enumerate()
            .map(|(r, v)| {
                let wv = self.w[r % m] * v;
                wv * wv
            })
            .sum()
    }
}

/// `W(x) = (|grad x|^2 + tau^2)^(-1/4)` per voxel.
pub fn tv_weights(vol: &Volume, tau: f64) -> Result<TvWeights> {
    check_tau(tau)?;
    let g2 = DiffOperator::new(vol.dims()).magnitude_squared(vol.data());
    Ok(TvWeights::from_magnitude_squared(g2, tau))
}

/// Weights for the two PICCS terms: `W1` from the gradient of `vol`, `W2`
/// from the gradient of `vol - prior`.
pub fn piccs_weights(vol: &Volume, prior: &Volume, tau: f64) -> Result<(TvWeights, TvWeights)> {
    check_tau(tau)?;
    vol.ensure_same_dims(prior)?;
    let diff = DiffOperator::new(vol.dims());
    let gv = diff.apply(vol.data())?;
    let gp = diff.apply(prior.data())?;
    let m = vol.len();
    let mag = |g: &dyn Fn(usize) -> f64| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let (a, b, c) = (g(i), g(m + i), g(2 * m + i));
                a * a + b * b + c * c
            })
            .collect()
    };
    let w1 = TvWeights::from_magnitude_squared(mag(&|r| gv[r]), tau);
    let w2 = TvWeights::from_magnitude_squared(mag(&|r| gv[r] - gp[r]), tau);
    Ok((w1, w2))
}

/// `diag(w, w, w) * D`.
#[derive(Clone, Copy, Debug)]
pub struct WeightedDiff<'a> {
    weights: &'a [f64],
    diff: DiffOperator,
}

impl LinearMap for WeightedDiff<'_> {
    fn domain_len(&self) -> usize {
        self.diff.domain_len()
    }

    fn range_len(&self) -> usize {
        self.diff.range_len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.diff.apply_into(x, y);
        let m = self.weights.len();
        for block in y.chunks_mut(m) {
            block.iter_mut().zip(self.weights).for_each(|(v, w)| *v *= w);
        }
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let m = self.weights.len();
        let scaled: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(r, v)| v * self.weights[r % m])
            .collect();
        self.diff.apply_adjoint_into(&scaled, x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{adjoint_mismatch, DenseMatrix};
    use crate::volume::VolumeGrid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(dims: [usize; 3]) -> VolumeGrid {
        VolumeGrid::new(dims, [1.0; 3]).unwrap()
    }

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(grid(dims), |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows() * b.rows(), a.cols() * b.cols());
        for ar in 0..a.rows() {
            for ac in 0..a.cols() {
                for br in 0..b.rows() {
                    for bc in 0..b.cols() {
                        out.set(
                            ar * b.rows() + br,
                            ac * b.cols() + bc,
                            a.get(ar, ac) * b.get(br, bc),
                        );
                    }
                }
            }
        }
        out
    }

    fn eye(n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        (0..n).for_each(|i| m.set(i, i, 1.0));
        m
    }

    /// `D_1` padded with a zero last row: square `n x n`.
    fn d1_padded(n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n - 1 {
            m.set(i, i, 1.0);
            m.set(i, i + 1, -1.0);
        }
        m
    }

    #[test]
    fn constant_volume_has_zero_gradient() {
        let vol = Volume::filled(grid([4, 3, 5]), 2.75);
        let g = DiffOperator::new(vol.dims()).gradient(&vol).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(tv(&vol), 0.0);
    }

    #[test]
    fn ramp_along_x() {
        let vol = Volume::from_fn(grid([5, 3, 3]), |i, _, _| i as f64);
        let g = DiffOperator::new(vol.dims()).gradient(&vol).unwrap();
        let m = vol.len();
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..5 {
                    let idx = vol.grid().index(i, j, k);
                    let want = if i < 4 { -1.0 } else { 0.0 };
                    assert_eq!(g[idx], want);
                    assert_eq!(g[m + idx], 0.0);
                    assert_eq!(g[2 * m + idx], 0.0);
                }
            }
        }
    }

    #[test]
    fn matches_kronecker_construction() {
        let n = 3;
        let dx = kron(&kron(&eye(n), &eye(n)), &d1_padded(n));
        let dy = kron(&kron(&eye(n), &d1_padded(n)), &eye(n));
        let dz = kron(&kron(&d1_padded(n), &eye(n)), &eye(n));
        let op = DiffOperator::new([n; 3]);
        let dense = DenseMatrix::from_map(&op);
        let m = n * n * n;
        for r in 0..m {
            for c in 0..m {
                assert_eq!(dense.get(r, c), dx.get(r, c));
                assert_eq!(dense.get(m + r, c), dy.get(r, c));
                assert_eq!(dense.get(2 * m + r, c), dz.get(r, c));
            }
        }
        let adj = {
            let mut t = DenseMatrix::zeros(m, 3 * m);
            let mut e = vec![0.0; 3 * m];
            for c in 0..3 * m {
                e[c] = 1.0;
                let col = op.apply_adjoint(&e).unwrap();
                (0..m).for_each(|r| t.set(r, c, col[r]));
                e[c] = 0.0;
            }
            t
        };
        assert_eq!(adj, dense.transpose());
    }

    #[test]
    fn adjoint_identity() {
        let op = DiffOperator::new([6, 5, 4]);
        assert!(adjoint_mismatch(&op, 20, 1) < 1e-12);
        let w = tv_weights(&random_volume([6, 5, 4], 2), 1e-3).unwrap();
        assert!(adjoint_mismatch(&w.weighted_diff(op).unwrap(), 20, 3) < 1e-12);
    }

    #[test]
    fn unit_step_tv_counts_cross_section() {
        for k in [1usize, 3, 5] {
            let vol = Volume::from_fn(grid([6, k, k]), |i, _, _| if i >= 3 { 1.0 } else { 0.0 });
            // direct summation oracle over all voxel pairs
            let mut oracle = 0.0;
            for z in 0..k {
                for y in 0..k {
                    for x in 0..6 {
                        let v = vol.get(x, y, z);
                        let dx = if x + 1 < 6 { v - vol.get(x + 1, y, z) } else { 0.0 };
                        let dy = if y + 1 < k { v - vol.get(x, y + 1, z) } else { 0.0 };
                        let dz = if z + 1 < k { v - vol.get(x, y, z + 1) } else { 0.0 };
                        oracle += (dx * dx + dy * dy + dz * dz).sqrt();
                    }
                }
            }
            assert_eq!(oracle, (k * k) as f64);
            assert_eq!(tv(&vol), oracle);
        }
    }

    #[test]
    fn tv_is_absolutely_homogeneous() {
        let vol = random_volume([5, 4, 3], 7);
        let scaled = Volume::new(*vol.grid(), vol.data().iter().map(|v| -2.5 * v).collect()).unwrap();
        assert!((tv(&scaled) - 2.5 * tv(&vol)).abs() < 1e-12 * tv(&vol));
    }

    #[test]
    fn weights_of_zero_are_tau_power() {
        let w = smoothed_l1_weights(&[0.0; 4], 1e-2).unwrap();
        for v in w {
            assert!((v - 10.0).abs() < 1e-12);
        }
        assert!(smoothed_l1_weights(&[1.0], 0.0).is_err());
        assert!(smoothed_l1_weights(&[1.0], -1.0).is_err());
    }

    #[test]
    fn weighted_l2_recovers_l1_as_tau_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = (0..500)
            .map(|_| {
                let v: f64 = rng.random_range(0.01..2.0);
                if rng.random::<bool>() { v } else { -v }
            })
            .collect();
        let w = smoothed_l1_weights(&z, 1e-12).unwrap();
        let wz2: f64 = z.iter().zip(&w).map(|(a, b)| (a * b) * (a * b)).sum();
        let l1: f64 = z.iter().map(|v| v.abs()).sum();
        assert!((wz2 - l1).abs() <= 1e-10 * l1);
    }

    #[test]
    fn weighted_l2_bounded_by_l1_plus_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tau = 1e-3;
        let z: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = smoothed_l1_weights(&z, tau).unwrap();
        let wz2: f64 = z.iter().zip(&w).map(|(a, b)| (a * b) * (a * b)).sum();
        let l1: f64 = z.iter().map(|v| v.abs()).sum();
        assert!(wz2 <= l1 + z.len() as f64 * tau);
    }

    #[test]
    fn constant_volume_weights_are_tau_power() {
        let tau = 1e-4;
        let w = tv_weights(&Volume::filled(grid([3, 4, 2]), 0.3), tau).unwrap();
        assert!(w.w.iter().all(|&v| (v - tau.powf(-0.5)).abs() < 1e-9));
        assert!(tv_weights(&Volume::filled(grid([3, 4, 2]), 0.3), 0.0).is_err());
    }

    #[test]
    fn weighted_gradient_norm_tends_to_tv() {
        // x^2 + 2y^2 + 3z^2 keeps every gradient magnitude away from zero
        // except on the padded far corner, where both sides vanish.
        let vol = Volume::from_fn(grid([5, 5, 5]), |i, j, k| {
            (i * i) as f64 + 2.0 * (j * j) as f64 + 3.0 * (k * k) as f64
        });
        let w = tv_weights(&vol, 1e-12).unwrap();
        let g = DiffOperator::new(vol.dims()).gradient(&vol).unwrap();
        let direct = w.weighted_norm_squared(&g);
        let oracle = tv(&vol);
        assert!((direct - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn weights_ignore_global_offset() {
        let vol = random_volume([4, 4, 4], 3);
        let shifted = Volume::new(*vol.grid(), vol.data().iter().map(|v| v + 0.5).collect()).unwrap();
        let a = tv_weights(&vol, 1e-3).unwrap();
        let b = tv_weights(&shifted, 1e-3).unwrap();
        for (x, y) in a.w.iter().zip(&b.w) {
            assert!((x - y).abs() <= 1e-12 * x);
        }
    }

    #[test]
    fn piccs_weight_cases() {
        let tau = 1e-3;
        let vol = random_volume([4, 5, 3], 8);
        let (_, w2) = piccs_weights(&vol, &vol, tau).unwrap();
        assert!(w2.w.iter().all(|&v| (v - tau.powf(-0.5)).abs() < 1e-12 * v));

        let zero = Volume::zeros(*vol.grid());
        let (w1, w2) = piccs_weights(&vol, &zero, tau).unwrap();
        assert_eq!(w1, w2);

        let prior = random_volume([4, 5, 3], 9);
        let (_, w2) = piccs_weights(&vol, &prior, tau).unwrap();
        let oracle = tv_weights(&vol.difference(&prior).unwrap(), tau).unwrap();
        for (a, b) in w2.w.iter().zip(&oracle.w) {
            assert!((a - b).abs() <= 1e-12 * b);
        }

        let other = Volume::zeros(grid([4, 5, 4]));
        assert!(piccs_weights(&vol, &other, tau).is_err());
    }

    #[test]
    fn shift_of_both_images_keeps_prior_weights() {
        let vol = random_volume([4, 4, 4], 12);
        let prior = random_volume([4, 4, 4], 13);
        let shift = |v: &Volume| Volume::new(*v.grid(), v.data().iter().map(|x| x + 3.0).collect()).unwrap();
        let (_, a) = piccs_weights(&vol, &prior, 1e-3).unwrap();
        let (_, b) = piccs_weights(&shift(&vol), &shift(&prior), 1e-3).unwrap();
        for (x, y) in a.w.iter().zip(&b.w) {
            assert!((x - y).abs() <= 1e-9 * x);
        }
    }

    proptest! {
        // phi(z) = sum sqrt(z^2 + tau^2) is majorized by
        // 1/2 sum (z^2 + tau^2)/s* + 1/2 sum s*, s* = sqrt(z*^2 + tau^2),
        // with equality at z = z*.
        #[test]
        fn tangent_majorant(
            zs in prop::collection::vec(-3.0f64..3.0, 1..40),
            seed in any::<u64>(),
            tau in 1e-4f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f64> = zs.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = smoothed_l1_weights(&zs, tau).unwrap();
            let t2 = tau * tau;
            let phi = |v: &[f64]| v.iter().map(|x| (x * x + t2).sqrt()).sum::<f64>();
            let constant: f64 = zs.iter().map(|x| 0.5 * (x * x + t2).sqrt() + 0.5 * t2 / (x * x + t2).sqrt()).sum();
            let majorant = |v: &[f64]| {
                0.5 * v.iter().zip(&w).map(|(x, wi)| (wi * x) * (wi * x)).sum::<f64>() + constant
            };
            prop_assert!(phi(&z) <= majorant(&z) * (1.0 + 1e-12));
            let at = majorant(&zs);
            prop_assert!((phi(&zs) - at).abs() <= 1e-10 * at);
        }

        #[test]
        fn weights_are_positive_and_bounded(
            zs in prop::collection::vec(-1e3f64..1e3, 1..50),
            tau in 1e-6f64..10.0,
        ) {
            let w = smoothed_l1_weights(&zs, tau).unwrap();
            let cap = tau.powf(-0.5);
            for v in w {
                prop_assert!(v.is_finite() && v > 0.0 && v <= cap * (1.0 + 1e-12));
            }
        }

        #[test]
        fn weights_commute_with_masking(
            zs in prop::collection::vec(-2.0f64..2.0, 1..30),
            mask in prop::collection::vec(any::<bool>(), 30),
        ) {
            let tau = 1e-2;
            let w = smoothed_l1_weights(&zs, tau).unwrap();
            let masked: Vec<f64> = zs.iter().zip(&mask).map(|(z, m)| if *m { *z } else { 0.0 }).collect();
            let wm = smoothed_l1_weights(&masked, tau).unwrap();
            for i in 0..zs.len() {
                // apply-then-mask equals mask-then-apply on the weighted products
                let a = if mask[i] { w[i] * zs[i] } else { 0.0 };
                let b = wm[i] * masked[i];
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn default_tau_scales_and_floors() {
        assert_eq!(default_tau(2.0), 2e-4);
        assert_eq!(default_tau(0.0), TAU_FLOOR);
    }
}
