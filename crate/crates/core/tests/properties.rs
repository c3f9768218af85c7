//! Property tests for linear algebra, solvers and the smoothed l1 identity.

use cbct_core::diffreg::smoothed_l1_weights;
use cbct_core::krylov::{cgls, KrylovConfig};
use cbct_core::{dot, ConeBeamGeometry, ConeBeamProjector, DenseMatrix, LinearMap, VolumeGrid};
use proptest::prelude::*;

/// Error-free transformations for a compensated (double-double) dot product.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn dot_dd(a: &[f64], b: &[f64]) -> f64 {
    let (mut hi, mut lo) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let p = x * y;
        let e = x.mul_add(*y, -p);
        let (s, t) = two_sum(hi, p);
        hi = s;
        lo += t + e;
    }
    hi + lo
}

/// Solves `A^T A x = A^T b` by Gaussian elimination with partial pivoting.
fn normal_equations(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = a.cols();
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (0..a.rows()).map(|r| a.get(r, i) * a.get(r, j)).sum();
        }
        m[i][n] = (0..a.rows()).map(|r| a.get(r, i) * b[r]).sum();
    }
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cgls_matches_normal_equations(seed in 0u64..10_000, big in any::<bool>()) {
        let (rows, cols) = if big { (20, 12) } else { (6, 4) };
        let a = DenseMatrix::random(rows, cols, seed);
        let b: Vec<f64> = DenseMatrix::random(rows, 1, seed + 1).data().to_vec();
        let cfg = KrylovConfig { max_iters: 4 * cols, residual_tol: 1e-14, record_history: false };
        let (x, _) = cgls(&a, &b, &vec![0.0; cols], &cfg).unwrap();
        let want = normal_equations(&a, &b);
        prop_assert!(rel_diff(&x, &want) < 1e-8, "{}", rel_diff(&x, &want));
    }

    #[test]
    fn dot_agrees_with_compensated_sum(n in 1usize..20_000, seed in 0u64..1000) {
        let a = DenseMatrix::random(n, 1, seed);
        let b = DenseMatrix::random(n, 1, seed + 7);
        let got = dot(a.data(), b.data()).unwrap();
        let want = dot_dd(a.data(), b.data());
        let scale: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x * y).abs()).sum();
        prop_assert!((got - want).abs() <= 1e-12 * scale);
    }

    #[test]
    fn l1_as_weighted_l2(z in prop::collection::vec(
        prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], 1..200)) {
        let w = smoothed_l1_weights(&z, 1e-12).unwrap();
        let lhs: f64 = z.iter().zip(&w).map(|(v, wi)| (wi * v).powi(2)).sum();
        let l1: f64 = z.iter().map(|v| v.abs()).sum();
        prop_assert!((lhs - l1).abs() <= 1e-8 * l1);
    }

    #[test]
    fn projector_is_linear(seed in 0u64..500, s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let grid = VolumeGrid::cubic(6, 1.0).unwrap();
        let geom = ConeBeamGeometry::fitted(&grid, 30.0, 45.0, 3).unwrap();
        let proj = ConeBeamProjector::new(&geom, &grid).unwrap();
        let x = DenseMatrix::random(grid.len(), 1, seed);
        let y = DenseMatrix::random(grid.len(), 1, seed + 1);
        let combo: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| s * a + t * b).collect();
        let lhs = proj.apply(&combo).unwrap();
        let ax = proj.apply(x.data()).unwrap();
        let ay = proj.apply(y.data()).unwrap();
        for ((l, a), b) in lhs.iter().zip(&ax).zip(&ay) {
            let r = s * a + t * b;
            prop_assert!((l - r).abs() <= 1e-10 * (1.0 + r.abs()));
        }
    }
}
