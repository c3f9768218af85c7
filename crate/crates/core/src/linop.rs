//! The matrix-free linear operator contract shared by every solver.
//!
//! Implementations overwrite the output buffer in `apply_into` /
//! `apply_adjoint_into`; the checked `apply` / `apply_adjoint` wrappers
//! allocate and validate lengths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};

/// Block length for reductions. Partial sums are taken over consecutive
/// blocks of this many entries and then added left to right, so the result
/// does not depend on the thread count.
pub const REDUCTION_BLOCK: usize = 4096;

pub trait LinearMap: Send + Sync {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;

    /// `y = A x`. Lengths are the caller's responsibility.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// `x = A^T y`.
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("apply input", self.domain_len(), x.len())?;
        let mut y = vec![0.0; self.range_len()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.range_len(), y.len())?;
        let mut x = vec![0.0; self.domain_len()];
        self.apply_adjoint_into(y, &mut x);
        Ok(x)
    }
}

impl<T: LinearMap + ?Sized> LinearMap for &T {
    fn domain_len(&self) -> usize {
        (**self).domain_len()
    }
    fn range_len(&self) -> usize {
        (**self).range_len()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        (**self).apply_adjoint_into(y, x)
    }
}

/// Euclidean inner product.
///
/// Summation order: products are summed left to right inside blocks of
/// [`REDUCTION_BLOCK`] entries, then the block sums are added left to right.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("dot", a.len(), b.len())?;
    Ok(dot_unchecked(a, b))
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= REDUCTION_BLOCK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let partials: Vec<f64> = a
        .par_chunks(REDUCTION_BLOCK)
        .zip(b.par_chunks(REDUCTION_BLOCK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partials.into_iter().sum()
}

/// Squared Euclidean norm with the same summation order as [`dot`].
pub fn norm2_squared(a: &[f64]) -> f64 {
    dot_unchecked(a, a)
}

pub fn norm2(a: &[f64]) -> f64 {
    norm2_squared(a).sqrt()
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

#[derive(Clone, Copy, Debug)]
pub struct Identity {
    pub len: usize,
}

impl Identity {
    pub fn new(len: usize) -> Self {
        Self { len }
    }
}

impl LinearMap for Identity {
    fn domain_len(&self) -> usize {
        self.len
    }
    fn range_len(&self) -> usize {
        self.len
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        x.copy_from_slice(y);
    }
}

/// Diagonal scaling `diag(d)`.
#[derive(Clone, Debug)]
pub struct Diagonal {
    pub diag: Vec<f64>,
}

impl LinearMap for Diagonal {
    fn domain_len(&self) -> usize {
        self.diag.len()
    }
    fn range_len(&self) -> usize {
        self.diag.len()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, xi), di) in y.iter_mut().zip(x).zip(&self.diag) {
            *yi = di * xi;
        }
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        self.apply_into(y, x)
    }
}

/// Row-major dense matrix. Used for small problems and as a test oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("dense matrix", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Materializes any map by applying it to every unit vector.
    pub fn from_map(map: &dyn LinearMap) -> Self {
        let (rows, cols) = (map.range_len(), map.domain_len());
        let mut m = Self::zeros(rows, cols);
        let mut e = vec![0.0; cols];
        let mut col = vec![0.0; rows];
        for c in 0..cols {
            e[c] = 1.0;
            map.apply_into(&e, &mut col);
            for (r, v) in col.iter().enumerate() {
                m.data[r * cols + c] = *v;
            }
            e[c] = 0.0;
        }
        m
    }

    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }
}

impl LinearMap for DenseMatrix {
    fn domain_len(&self) -> usize {
        self.cols
    }
    fn range_len(&self) -> usize {
        self.rows
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *yr = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        x.fill(0.0);
        for (r, yr) in y.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            axpy(*yr, row, x);
        }
    }
}

/// Vertical concatenation `[s_1 A_1; s_2 A_2; ...]` of maps sharing a domain.
///
/// The adjoint sums `s_i A_i^T y_i` in block order.
pub struct StackedMap<'a> {
    blocks: Vec<(f64, &'a dyn LinearMap)>,
    offsets: Vec<usize>,
    domain: usize,
}

impl<'a> StackedMap<'a> {
    pub fn new(blocks: Vec<(f64, &'a dyn LinearMap)>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::Config("stacked map needs at least one block".into()));
        };
        let domain = first.1.domain_len();
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        for (i, (scale, map)) in blocks.iter().enumerate() {
            if map.domain_len() != domain {
                return Err(Error::Config(format!(
                    "stacked block {i} has domain {} but block 0 has {domain}",
                    map.domain_len()
                )));
            }
            if !scale.is_finite() {
                return Err(Error::Config(format!("stacked block {i} has non-finite scale")));
            }
            offsets.push(offsets[i] + map.range_len());
        }
        Ok(Self {
            blocks,
            offsets,
            domain,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Range slice belonging to block `i`.
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Convenience constructor mirroring [`StackedMap::new`].
pub fn stack_maps<'a>(blocks: Vec<(f64, &'a dyn LinearMap)>) -> Result<StackedMap<'a>> {
    StackedMap::new(blocks)
}

impl LinearMap for StackedMap<'_> {
    fn domain_len(&self) -> usize {
        self.domain
    }

    fn range_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, (scale, map)) in self.blocks.iter().enumerate() {
            let out = &mut y[self.offsets[i]..self.offsets[i + 1]];
            map.apply_into(x, out);
            if *scale != 1.0 {
                out.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let mut tmp = vec![0.0; self.domain];
        for (i, (scale, map)) in self.blocks.iter().enumerate() {
            let part = &y[self.offsets[i]..self.offsets[i + 1]];
            if i == 0 {
                map.apply_adjoint_into(part, x);
                if *scale != 1.0 {
                    x.iter_mut().for_each(|v| *v *= scale);
                }
            } else {
                map.apply_adjoint_into(part, &mut tmp);
                axpy(*scale, &tmp, x);
            }
        }
    }
}

/// Largest relative adjoint mismatch `|<Ax,y> - <x,A^T y>| / (|<Ax,y>| + eps)`
/// over `trials` random pairs drawn uniformly from `[-1, 1]`.
pub fn adjoint_mismatch(map: &dyn LinearMap, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut ax = vec![0.0; map.range_len()];
    let mut aty = vec![0.0; map.domain_len()];
    for _ in 0..trials {
        let x: Vec<f64> = (0..map.domain_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..map.range_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        map.apply_into(&x, &mut ax);
        map.apply_adjoint_into(&y, &mut aty);
        let lhs = dot_unchecked(&ax, &y);
        let rhs = dot_unchecked(&x, &aty);
        let rel = (lhs - rhs).abs() / (lhs.abs() + f64::EPSILON);
        worst = worst.max(rel);
    }
    worst
}
