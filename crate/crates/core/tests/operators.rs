//! Operator-level checks against independent reference implementations.

use cbct_core::diffreg::{piccs_weights, tv_weights, DiffOperator};
use cbct_core::linop::adjoint_mismatch;
use cbct_core::{
    stack_maps, ConeBeamGeometry, ConeBeamProjector, DenseMatrix, Detector, Identity, LinearMap, Volume,
    VolumeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(grid: VolumeGrid, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(grid, |_, _, _| rng.random_range(0.0..1.0))
}

/// Sorted-parameter Siddon: collect every plane crossing, sort, and assign
/// each sub-segment to the voxel containing its midpoint.
fn siddon_reference(grid: &VolumeGrid, src: [f64; 3], dst: [f64; 3]) -> Vec<(usize, f64)> {
    let lo = grid.lower();
    let d: Vec<f64> = (0..3).map(|a| dst[a] - src[a]).collect();
    let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut t_min: f64 = 0.0;
    let mut t_max: f64 = 1.0;
    let mut ts = Vec::new();
    for a in 0..3 {
        let hi = lo[a] + grid.dims[a] as f64 * grid.spacing[a];
        if d[a].abs() < 1e-300 {
            if src[a] <= lo[a] || src[a] >= hi {
                return Vec::new();
            }
            continue;
        }
        let t0 = (lo[a] - src[a]) / d[a];
        let t1 = (hi - src[a]) / d[a];
        t_min = t_min.max(t0.min(t1));
        t_max = t_max.min(t0.max(t1));
        for p in 0..=grid.dims[a] {
            ts.push((lo[a] + p as f64 * grid.spacing[a] - src[a]) / d[a]);
        }
    }
    if t_max <= t_min {
        return Vec::new();
    }
    ts.retain(|&t| t > t_min && t < t_max);
    ts.push(t_min);
    ts.push(t_max);
    ts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for w in ts.windows(2) {
        let seg = (w[1] - w[0]) * len;
        if seg <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let idx: Vec<usize> = (0..3)
            .map(|a| {
                let c = ((src[a] + mid * d[a] - lo[a]) / grid.spacing[a]).floor() as isize;
                c.clamp(0, grid.dims[a] as isize - 1) as usize
            })
            .collect();
        out.push((grid.index(idx[0], idx[1], idx[2]), seg));
    }
    out
}

#[test]
fn projector_matches_sorted_siddon_reference() {
    let grid = VolumeGrid::new([8, 7, 6], [1.0, 1.2, 0.9]).unwrap().with_origin([0.3, -0.2, 0.1]);
    let det = Detector {
        nu: 9,
        nv: 7,
        pu: 2.1,
        pv: 1.9,
        ou: 0.4,
        ov: -0.3,
    };
    let angles = vec![0.0, 0.37, 1.9, 3.3, 4.8];
    let geom = ConeBeamGeometry::new(40.0, 70.0, det, angles).unwrap();
    let proj = ConeBeamProjector::new(&geom, &grid).unwrap();
    let dense = DenseMatrix::from_map(&proj);

    let mut oracle = DenseMatrix::zeros(proj.range_len(), proj.domain_len());
    for ray in 0..proj.range_len() {
        let (s, t) = proj.ray_endpoints(ray);
        for (i, l) in siddon_reference(&grid, s, t) {
            oracle.set(ray, i, oracle.get(ray, i) + l);
        }
    }
    // Column by column: every single-voxel volume projects identically.
    for c in 0..proj.domain_len() {
        for r in 0..proj.range_len() {
            let (a, b) = (dense.get(r, c), oracle.get(r, c));
            assert!((a - b).abs() < 1e-10, "voxel {c} ray {r}: {a} vs {b}");
        }
    }
}

#[test]
fn projector_matricization_matches_matvec() {
    let grid = VolumeGrid::cubic(4, 1.0).unwrap();
    let geom = ConeBeamGeometry::fitted(&grid, 20.0, 32.0, 2).unwrap();
    let proj = ConeBeamProjector::new(&geom, &grid).unwrap();
    let dense = DenseMatrix::from_map(&proj);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..proj.range_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (a, b) in proj.apply(&x).unwrap().iter().zip(dense.apply(&x).unwrap()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        for (a, b) in proj.apply_adjoint(&y).unwrap().iter().zip(dense.apply_adjoint(&y).unwrap()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn adjoint_identities_hold_for_all_operators() {
    let grid = VolumeGrid::cubic(16, 1.0).unwrap();
    let geom = ConeBeamGeometry::fitted(&grid, 60.0, 100.0, 8).unwrap();
    let proj = ConeBeamProjector::new(&geom, &grid).unwrap();
    let diff = DiffOperator::new(grid.dims);
    let x = random_volume(grid, 1);
    let prior = random_volume(grid, 2);
    let w1 = tv_weights(&x, 1e-2).unwrap();
    let (pw1, pw2) = piccs_weights(&x, &prior, 1e-2).unwrap();
    let w1d = w1.weighted_diff(diff).unwrap();
    let pw1d = pw1.weighted_diff(diff).unwrap();
    let pw2d = pw2.weighted_diff(diff).unwrap();
    let id = Identity::new(grid.len());
    let tv_stack = stack_maps(vec![(1.0, &proj as &dyn LinearMap), (0.3, &w1d)]).unwrap();
    let piple_stack = stack_maps(vec![(1.0, &proj as &dyn LinearMap), (0.3, &w1d), (0.7, &id)]).unwrap();
    let piccs_stack = stack_maps(vec![(1.0, &proj as &dyn LinearMap), (0.3, &pw1d), (0.7, &pw2d)]).unwrap();

    let maps: [(&str, &dyn LinearMap); 6] = [
        ("projector", &proj),
        ("diff", &diff),
        ("weighted diff", &w1d),
        ("tv stack", &tv_stack),
        ("piple stack", &piple_stack),
        ("piccs stack", &piccs_stack),
    ];
    for (name, map) in maps {
        let err = adjoint_mismatch(map, 20, 5);
        assert!(err < 1e-6, "{name}: {err}");
    }
}

#[test]
fn one_hot_backprojection_is_a_matrix_row() {
    let grid = VolumeGrid::cubic(6, 1.0).unwrap();
    let geom = ConeBeamGeometry::fitted(&grid, 30.0, 45.0, 3).unwrap();
    let proj = ConeBeamProjector::new(&geom, &grid).unwrap();
    for ray in [0, 17, 40, proj.range_len() - 1] {
        let mut y = vec![0.0; proj.range_len()];
        y[ray] = 1.0;
        let bp = proj.apply_adjoint(&y).unwrap();
        let mut want = vec![0.0; grid.len()];
        for (i, l) in proj.ray_path(ray).segments {
            want[i] += l;
        }
        assert_eq!(bp, want);
    }
}

#[test]
fn projections_scale_with_the_geometry() {
    let base = VolumeGrid::cubic(10, 1.0).unwrap();
    let doubled = VolumeGrid::cubic(10, 2.0).unwrap();
    let g1 = ConeBeamGeometry::fitted(&base, 40.0, 60.0, 5).unwrap();
    let mut g2 = g1.clone();
    g2.dso *= 2.0;
    g2.dsd *= 2.0;
    g2.detector.pu *= 2.0;
    g2.detector.pv *= 2.0;
    let v1 = random_volume(base, 9);
    let v2 = Volume::new(doubled, v1.data().to_vec()).unwrap();
    let p1 = ConeBeamProjector::new(&g1, &base).unwrap().forward(&v1).unwrap();
    let p2 = ConeBeamProjector::new(&g2, &doubled).unwrap().forward(&v2).unwrap();
    for (a, b) in p1.data().iter().zip(p2.data()) {
        assert!((2.0 * a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} {b}");
    }
}
