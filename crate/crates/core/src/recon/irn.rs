//! Iteratively reweighted norm solvers.
//!
//! Each outer cycle freezes the smoothed-l1 weights at the current iterate and
//! solves the resulting weighted least-squares problem with CGLS on a stacked
//! operator. Blocks whose scale is zero are left out of the stack, so
//! `alpha = 0` or `lambda = 0` degenerate to the smaller problem exactly.

use std::time::Instant;

use super::objective::objective_terms;
use super::{ObjectiveKind, Problem, ReconReport, RegularizationParams, Timings};
use crate::diffreg::{piccs_weights, tv_weights, DiffOperator, TvWeights};
use crate::error::{Error, Result};
use crate::krylov::cgls_with;
use crate::linop::{Identity, LinearMap, StackedMap};
use crate::volume::Volume;

/// IRN for `||Ax - b||^2 + 2 a^2 TV_tau(x)`.
pub fn irn_tv(problem: &Problem, params: &RegularizationParams, x0: Option<&Volume>) -> Result<ReconReport> {
    run(problem, params, ObjectiveKind::Tv, None, x0)
}

/// IRN for the TV objective plus `l^2 ||x - x_p||^2`.
pub fn irn_piple(
    problem: &Problem,
    params: &RegularizationParams,
    prior: &Volume,
    x0: Option<&Volume>,
) -> Result<ReconReport> {
    run(problem, params, ObjectiveKind::Piple, Some(prior), x0)
}

/// IRN for the TV objective plus `2 l^2 TV_tau(x - x_p)`.
pub fn irn_piccs(
    problem: &Problem,
    params: &RegularizationParams,
    prior: &Volume,
    x0: Option<&Volume>,
) -> Result<ReconReport> {
    run(problem, params, ObjectiveKind::Piccs, Some(prior), x0)
}

fn run(
    problem: &Problem,
    params: &RegularizationParams,
    kind: ObjectiveKind,
    prior: Option<&Volume>,
    x0: Option<&Volume>,
) -> Result<ReconReport> {
    params.validate()?;
    let t_start = Instant::now();
    let grid = *problem.grid();
    let dims = grid.dims;
    let m = grid.len();
    if let Some(p) = prior {
        if p.dims() != dims {
            return Err(Error::Config(format!(
                "prior dims {:?} do not match grid {dims:?}",
                p.dims()
            )));
        }
    }
    let prior_data = prior.map(Volume::data);
    let a = problem.projector();
    let b = problem.rhs();
    let diff = DiffOperator::new(dims);
    let identity = Identity::new(m);
    let cfg = params.inner_config();
    let objective =
        |x: &[f64]| objective_terms(kind, a, dims, x, b, prior_data, params).map(|t| t.total());

    let mut x = problem.start(x0)?;
    let initial_objective = objective(&x)?;
    let mut rec = problem.recorder();
    let mut history = Vec::with_capacity(params.outer_iters);
    let mut iterations = 0;
    let mut timings = Timings::default();

    for _ in 0..params.outer_iters {
        let t_setup = Instant::now();
        let current = Volume::new(grid, x)?;
        let (w1, w2): (TvWeights, Option<TvWeights>) = match (kind, prior) {
            (ObjectiveKind::Piccs, Some(p)) if params.lambda > 0.0 => {
                let (w1, w2) = piccs_weights(&current, p, params.tau)?;
                (w1, Some(w2))
            }
            _ => (tv_weights(&current, params.tau)?, None),
        };
        if w1.w.iter().chain(w2.iter().flat_map(|w| &w.w)).any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!(
                "IRN weights overflow; tau = {:e} is too small",
                params.tau
            )));
        }
        let w1d = w1.weighted_diff(diff)?;
        let w2d = w2.as_ref().map(|w| w.weighted_diff(diff)).transpose()?;

        let mut blocks: Vec<(f64, &dyn LinearMap)> = vec![(1.0, a)];
        let mut rhs = b.to_vec();
        if params.alpha > 0.0 {
            blocks.push((params.alpha, &w1d));
            rhs.resize(rhs.len() + 3 * m, 0.0);
        }
        if params.lambda > 0.0 {
            match (kind, prior_data) {
                (ObjectiveKind::Piple, Some(p)) => {
                    blocks.push((params.lambda, &identity));
                    rhs.extend(p.iter().map(|v| params.lambda * v));
                }
                (ObjectiveKind::Piccs, Some(p)) => {
                    let w2d = w2d.as_ref().expect("piccs weights built above");
                    blocks.push((params.lambda, w2d));
                    rhs.extend(w2d.apply(p)?.into_iter().map(|v| params.lambda * v));
                }
                _ => {}
            }
        }
        let stack = StackedMap::new(blocks)?;
        let start = if params.warm_start {
            current.into_data()
        } else {
            vec![0.0; m]
        };
        timings.setup_s += t_setup.elapsed().as_secs_f64();

        let t_solve = Instant::now();
        if let Some(r) = rec.as_mut() {
            r.history.mark_restart();
        }
        let (next, trace) = cgls_with(&stack, &rhs, &start, &cfg, |_, xi| {
            if let Some(r) = rec.as_mut() {
                r.observe(xi)
            }
        })?;
        timings.solve_s += t_solve.elapsed().as_secs_f64();
        iterations += trace.iterations;
        x = next;
        history.push(objective(&x)?);
    }
    timings.total_s = t_start.elapsed().as_secs_f64();

    Ok(ReconReport {
        volume: problem.volume(x)?,
        objective: history,
        initial_objective: Some(initial_objective),
        error_history: rec.map(|r| r.history).unwrap_or_default(),
        iterations,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConeBeamGeometry;
    use crate::krylov::{cgls, KrylovConfig};
    use crate::phantoms::{make_phantom, simulate_scan, NoiseModel, PhantomKind, PhantomSpec};
    use crate::projector::ConeBeamProjector;
    use crate::volume::VolumeGrid;

    fn setup(n: usize, angles: usize, noise: f64) -> (Volume, crate::ProjectionSet) {
        let spec = PhantomSpec::new(PhantomKind::Shepp3d, [n, n, n]);
        let truth = make_phantom(&spec).unwrap();
        let geom = ConeBeamGeometry::fitted(truth.grid(), 60.0, 90.0, angles).unwrap();
        let noise = if noise > 0.0 {
            NoiseModel::Gaussian { sigma_rel: noise }
        } else {
            NoiseModel::None
        };
        let scan = simulate_scan(&truth, &geom, noise, 7).unwrap();
        (truth, scan)
    }

    #[test]
    fn overflowing_weights_are_an_error() {
        let (_, scan) = setup(8, 6, 0.0);
        let problem = Problem::new(&scan, &VolumeGrid::cubic(8, 1.0).unwrap()).unwrap();
        let p = RegularizationParams::new(0.1, 0.0, 1e-320);
        assert!(matches!(irn_tv(&problem, &p, None), Err(Error::Solver(_))));
    }

    fn params(alpha: f64, lambda: f64) -> RegularizationParams {
        RegularizationParams::new(alpha, lambda, 1e-3).with_budget(3, 6)
    }

    #[test]
    fn zero_alpha_is_restarted_cgls() {
        let (truth, scan) = setup(12, 6, 0.0);
        let problem = Problem::new(&scan, truth.grid()).unwrap();
        let p = params(0.0, 0.0);
        let report = irn_tv(&problem, &p, None).unwrap();

        let cfg = KrylovConfig::with_iters(p.inner_iters);
        let mut x = vec![0.0; truth.len()];
        for _ in 0..p.outer_iters {
            x = cgls(problem.projector(), problem.rhs(), &x, &cfg).unwrap().0;
        }
        assert_eq!(report.volume.data(), &x[..]);

        let one = RegularizationParams::new(0.0, 0.0, 1e-3).with_budget(1, 9);
        let single = irn_tv(&problem, &one, None).unwrap();
        let plain = cgls(problem.projector(), problem.rhs(), &vec![0.0; truth.len()], &KrylovConfig::with_iters(9))
            .unwrap()
            .0;
        assert_eq!(single.volume.data(), &plain[..]);
    }

    #[test]
    fn zero_lambda_chain_is_exact() {
        let (truth, scan) = setup(12, 5, 0.01);
        let prior = Volume::filled(*truth.grid(), 0.3);
        let problem = Problem::new(&scan, truth.grid()).unwrap().with_truth(&truth).unwrap();
        let p = params(0.05, 0.0);
        let tv = irn_tv(&problem, &p, None).unwrap();
        let piple = irn_piple(&problem, &p, &prior, None).unwrap();
        let piccs = irn_piccs(&problem, &p, &prior, None).unwrap();
        assert_eq!(tv.volume.data(), piple.volume.data());
        assert_eq!(tv.volume.data(), piccs.volume.data());
        assert_eq!(tv.error_history, piccs.error_history);
        assert_eq!(tv.objective, piccs.objective);
    }

    #[test]
    fn report_shapes() {
        let (truth, scan) = setup(10, 4, 0.0);
        let problem = Problem::new(&scan, truth.grid()).unwrap().with_truth(&truth).unwrap();
        let mut p = params(0.1, 0.0);
        p.residual_tol = 0.0;
        let r = irn_tv(&problem, &p, None).unwrap();
        assert_eq!(r.objective.len(), p.outer_iters);
        assert_eq!(r.error_history.len(), r.iterations);
        assert_eq!(r.error_history.restarts, vec![0, 6, 12]);
        assert_eq!(r.iterations, p.total_iterations());
    }

    #[test]
    fn objective_descends_for_all_variants() {
        let (truth, scan) = setup(14, 6, 0.02);
        let prior = make_phantom(&PhantomSpec::new(PhantomKind::Shepp3d, [14, 14, 14])).unwrap();
        let problem = Problem::new(&scan, truth.grid()).unwrap();
        let p = params(0.3, 0.4);
        for report in [
            irn_tv(&problem, &p, None).unwrap(),
            irn_piple(&problem, &p, &prior, None).unwrap(),
            irn_piccs(&problem, &p, &prior, None).unwrap(),
        ] {
            let mut prev = report.initial_objective.unwrap();
            for &f in &report.objective {
                assert!(f <= prev * (1.0 + 1e-8), "{f} > {prev}");
                prev = f;
            }
        }
    }

    #[test]
    fn prior_limit_recovers_prior() {
        let grid = VolumeGrid::cubic(10, 1.0).unwrap();
        let prior = make_phantom(&PhantomSpec::new(PhantomKind::Shepp3d, [10, 10, 10])).unwrap();
        let geom = ConeBeamGeometry::fitted(&grid, 60.0, 90.0, 4).unwrap();
        let scan = ConeBeamProjector::new(&geom, &grid).unwrap().forward(&prior).unwrap();
        let problem = Problem::new(&scan, &grid).unwrap();
        let p = RegularizationParams::new(0.0, 1e6, 1e-3).with_budget(1, 25);
        let r = irn_piple(&problem, &p, &prior, None).unwrap();
        let err = crate::metrics::rel_error(r.volume.data(), prior.data()).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn huge_alpha_flattens_a_uniform_object() {
        let grid = VolumeGrid::cubic(10, 1.0).unwrap();
        let truth = make_phantom(&PhantomSpec::new(PhantomKind::Uniform { intensity: 1.0 }, [10, 10, 10])).unwrap();
        let geom = ConeBeamGeometry::fitted(&grid, 60.0, 90.0, 6).unwrap();
        let scan = simulate_scan(&truth, &geom, NoiseModel::Gaussian { sigma_rel: 0.05 }, 3).unwrap();
        let problem = Problem::new(&scan, &grid).unwrap();
        let variance = |x: &[f64]| {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64
        };
        let plain = super::super::cgls_recon(&problem, 24, None).unwrap();
        let p = RegularizationParams::new(1e3, 0.0, 1e-3).with_budget(4, 6);
        let smooth = irn_tv(&problem, &p, None).unwrap();
        let ratio = variance(smooth.volume.data()) / variance(plain.volume.data());
        assert!(ratio < 1e-2, "{ratio}");
    }

    #[test]
    fn prior_dims_are_checked() {
        let (truth, scan) = setup(8, 3, 0.0);
        let problem = Problem::new(&scan, truth.grid()).unwrap();
        let wrong = Volume::zeros(VolumeGrid::cubic(6, 1.0).unwrap());
        assert!(irn_piple(&problem, &params(0.1, 0.1), &wrong, None).is_err());
    }
}
