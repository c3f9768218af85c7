//! End-to-end reconstruction checks on small phantoms.

use cbct_core::diffreg::default_tau;
use cbct_core::io::{read_volume, write_volume};
use cbct_core::metrics::{evaluate, DataRange};
use cbct_core::phantoms::{make_phantom, simulate_scan, subsample_angles, NoiseModel, PhantomSpec};
use cbct_core::recon::{
    asd_pocs_tv, evaluate_objective, fdk, heuristic_alpha, irn_piccs, irn_tv, AsdPocsConfig, FilterKind, ObjectiveKind,
    Problem, RegularizationParams,
};
use cbct_core::{ConeBeamGeometry, LinearMap};

#[test]
fn piccs_with_exact_prior_descends() {
    let spec = PhantomSpec::head_replica(16);
    let truth = make_phantom(&spec).unwrap();
    let geom = ConeBeamGeometry::fitted(truth.grid(), 80.0, 120.0, 8).unwrap();
    let scan = simulate_scan(&truth, &geom, NoiseModel::None, 0).unwrap();
    let problem = Problem::new(&scan, truth.grid()).unwrap().with_truth(&truth).unwrap();
    let params = RegularizationParams::new(0.05, 0.1, 1e-3).with_budget(4, 8);
    let report = irn_piccs(&problem, &params, &truth, None).unwrap();
    let mut prev = report.initial_objective.unwrap();
    for &f in &report.objective {
        assert!(f <= prev * (1.0 + 1e-8));
        prev = f;
    }
    let direct = evaluate_objective(
        ObjectiveKind::Piccs,
        problem.projector() as &dyn LinearMap,
        truth.dims(),
        report.volume.data(),
        problem.rhs(),
        Some(truth.data()),
        &params,
    )
    .unwrap();
    assert_eq!(direct, *report.objective.last().unwrap());
    assert_eq!(report.error_history.restarts.len(), 4);
}

#[test]
fn regularized_methods_beat_fdk_on_sparse_views() {
    let spec = PhantomSpec::head_replica(24);
    let truth = make_phantom(&spec).unwrap();
    let geom = ConeBeamGeometry::fitted(truth.grid(), 120.0, 180.0, 60).unwrap();
    let full = simulate_scan(&truth, &geom, NoiseModel::Gaussian { sigma_rel: 1e-3 }, 1).unwrap();
    let sparse = subsample_angles(&full, 10).unwrap();
    let problem = Problem::new(&sparse, truth.grid()).unwrap();

    let f = fdk(&sparse, truth.grid(), FilterKind::RamLak).unwrap();
    let alpha = heuristic_alpha(&problem, &f, 0.1).unwrap();
    let params = RegularizationParams::new(alpha, 0.0, default_tau(f.dynamic_range()));
    let t = irn_tv(&problem, &params, None).unwrap();
    let a = asd_pocs_tv(
        &problem,
        &AsdPocsConfig {
            max_iters: 30,
            ..AsdPocsConfig::default()
        },
        None,
    )
    .unwrap();
    let score = |v| evaluate(v, &truth, DataRange::GroundTruth).unwrap().psnr;
    let (pf, pt, pa) = (score(&f), score(&t.volume), score(&a.volume));
    assert!(pt > pf, "irn-tv {pt} vs fdk {pf}");
    assert!(pa > pf, "asd-pocs {pa} vs fdk {pf}");
}

#[test]
fn volumes_survive_disk_roundtrip() {
    let truth = make_phantom(&PhantomSpec::needle_replica(16)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("needle");
    write_volume(&path, &truth).unwrap();
    let back = read_volume(&path).unwrap();
    assert_eq!(back.grid(), truth.grid());
    for (a, b) in back.data().iter().zip(truth.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
}
