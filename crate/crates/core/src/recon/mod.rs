//! Reconstruction algorithms.
//!
//! Every iterative method works on a [`Problem`]: the measured projections,
//! the projector onto the reconstruction grid and, optionally, the ground
//! truth used to record error histories.

mod asd_pocs;
mod fdk;
mod irn;
mod objective;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use asd_pocs::{asd_pocs_tv, sart_sweep, AsdPocsConfig, SartState};
pub use fdk::{fdk, FilterKind};
pub use irn::{irn_piccs, irn_piple, irn_tv};
pub use objective::{evaluate_objective, ObjectiveKind, ObjectiveTerms};

use crate::error::{Error, Result};
use crate::geometry::ProjectionSet;
use crate::krylov::{cgls_with, sirt_with, KrylovConfig};
use crate::metrics::{ErrorHistory, ErrorRecorder};
use crate::projector::ConeBeamProjector;
use crate::volume::{Volume, VolumeGrid};

/// Measurements plus the operator mapping the reconstruction grid onto them.
pub struct Problem<'a> {
    projector: ConeBeamProjector,
    data: &'a ProjectionSet,
    truth: Option<&'a Volume>,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a ProjectionSet, grid: &VolumeGrid) -> Result<Self> {
        Ok(Self {
            projector: ConeBeamProjector::new(data.geometry(), grid)?,
            data,
            truth: None,
        })
    }

    /// Attach a ground truth; iterative methods then record error histories.
    pub fn with_truth(mut self, truth: &'a Volume) -> Result<Self> {
        if truth.dims() != self.grid().dims {
            return Err(Error::Config(format!(
                "ground truth dims {:?} do not match grid {:?}",
                truth.dims(),
                self.grid().dims
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn projector(&self) -> &ConeBeamProjector {
        &self.projector
    }

    pub fn grid(&self) -> &VolumeGrid {
        self.projector.grid()
    }

    pub fn data(&self) -> &ProjectionSet {
        self.data
    }

    pub fn rhs(&self) -> &[f64] {
        self.data.data()
    }

    pub fn truth(&self) -> Option<&Volume> {
        self.truth
    }

    pub(crate) fn recorder(&self) -> Option<ErrorRecorder<'a>> {
        self.truth.map(|t| ErrorRecorder::new(t.data()))
    }

    /// Start point as a flat vector: `x0` if given, zeros otherwise.
    pub(crate) fn start(&self, x0: Option<&Volume>) -> Result<Vec<f64>> {
        match x0 {
            Some(v) if v.dims() != self.grid().dims => Err(Error::Config(format!(
                "start volume dims {:?} do not match grid {:?}",
                v.dims(),
                self.grid().dims
            ))),
            Some(v) => Ok(v.data().to_vec()),
            None => Ok(vec![0.0; self.grid().len()]),
        }
    }

    pub(crate) fn volume(&self, data: Vec<f64>) -> Result<Volume> {
        Volume::new(*self.grid(), data)
            .map_err(|e| Error::Solver(format!("reconstruction diverged: {e}")))
    }
}

/// Parameters for the IRN family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    /// Weight of the TV term (enters squared).
    pub alpha: f64,
    /// Weight of the prior term (enters squared).
    #[serde(default)]
    pub lambda: f64,
    /// Smoothing parameter, fixed for the whole run.
    pub tau: f64,
    #[serde(default = "default_outer")]
    pub outer_iters: usize,
    #[serde(default = "default_inner")]
    pub inner_iters: usize,
    /// Start every inner solve from the previous outer iterate.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
}

fn default_outer() -> usize {
    4
}
fn default_inner() -> usize {
    25
}
fn default_true() -> bool {
    true
}
fn default_residual_tol() -> f64 {
    1e-6
}

impl RegularizationParams {
    /// 4 outer x 25 inner iterations with warm starts.
    pub fn new(alpha: f64, lambda: f64, tau: f64) -> Self {
        Self {
            alpha,
            lambda,
            tau,
            outer_iters: default_outer(),
            inner_iters: default_inner(),
            warm_start: true,
            residual_tol: default_residual_tol(),
        }
    }

    pub fn with_budget(mut self, outer: usize, inner: usize) -> Self {
        self.outer_iters = outer;
        self.inner_iters = inner;
        self
    }

    /// Total inner-iteration budget.
    pub fn total_iterations(&self) -> usize {
        self.outer_iters * self.inner_iters
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.alpha) || !ok(self.lambda) {
            return Err(Error::Config(format!(
                "alpha and lambda must be finite and >= 0 (alpha={}, lambda={})",
                self.alpha, self.lambda
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::Config("outer and inner iteration counts must be >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn inner_config(&self) -> KrylovConfig {
        KrylovConfig {
            max_iters: self.inner_iters,
            residual_tol: self.residual_tol,
            record_history: true,
        }
    }
}

/// Wall-clock seconds spent in each phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_s: f64,
    /// Weight construction and operator setup.
    pub setup_s: f64,
    /// Krylov / data-consistency iterations.
    pub solve_s: f64,
    /// Regularization steps outside the inner solver (ASD-POCS TV descent).
    pub regularize_s: f64,
}

#[derive(Clone, Debug)]
pub struct ReconReport {
    pub volume: Volume,
    /// Smoothed objective after each outer iteration.
    pub objective: Vec<f64>,
    /// Smoothed objective at the start point, when an objective applies.
    pub initial_objective: Option<f64>,
    /// Relative error after every inner iteration (empty without a ground truth).
    pub error_history: ErrorHistory,
    /// Inner iterations actually executed.
    pub iterations: usize,
    pub timings: Timings,
}

/// Plain CGLS on `||A x - b||` with a fixed iteration budget.
pub fn cgls_recon(problem: &Problem, iterations: usize, x0: Option<&Volume>) -> Result<ReconReport> {
    let t0 = Instant::now();
    let start = problem.start(x0)?;
    let mut rec = problem.recorder();
    if let Some(r) = rec.as_mut() {
        r.history.mark_restart();
    }
    let cfg = KrylovConfig {
        max_iters: iterations,
        residual_tol: 0.0,
        record_history: true,
    };
    let (x, trace) = cgls_with(problem.projector(), problem.rhs(), &start, &cfg, |_, x| {
        if let Some(r) = rec.as_mut() {
            r.observe(x)
        }
    })?;
    let elapsed = t0.elapsed().as_secs_f64();
    Ok(ReconReport {
        volume: problem.volume(x)?,
        objective: vec![trace.residual_norms.last().copied().unwrap_or(trace.initial_residual).powi(2)],
        initial_objective: Some(trace.initial_residual.powi(2)),
        error_history: rec.map(|r| r.history).unwrap_or_default(),
        iterations: trace.iterations,
        timings: Timings {
            total_s: elapsed,
            solve_s: elapsed,
            ..Timings::default()
        },
    })
}

/// SIRT with a fixed iteration budget.
pub fn sirt_recon(problem: &Problem, iterations: usize, x0: Option<&Volume>) -> Result<ReconReport> {
    let t0 = Instant::now();
    let start = problem.start(x0)?;
    let mut rec = problem.recorder();
    if let Some(r) = rec.as_mut() {
        r.history.mark_restart();
    }
    let (x, trace) = sirt_with(
        problem.projector(),
        problem.rhs(),
        &start,
        &KrylovConfig::with_iters(iterations),
        |_, x| {
            if let Some(r) = rec.as_mut() {
                r.observe(x)
            }
        },
    )?;
    let elapsed = t0.elapsed().as_secs_f64();
    Ok(ReconReport {
        volume: problem.volume(x)?,
        objective: vec![trace.residual_norms.last().copied().unwrap_or(trace.initial_residual).powi(2)],
        initial_objective: Some(trace.initial_residual.powi(2)),
        error_history: rec.map(|r| r.history).unwrap_or_default(),
        iterations: trace.iterations,
        timings: Timings {
            total_s: elapsed,
            solve_s: elapsed,
            ..Timings::default()
        },
    })
}

/// Regularization weight such that `alpha^2 TV(x) = share * ||A x - b||^2`
/// at a reference reconstruction `x` (typically FDK, with `share = 0.1`).
pub fn heuristic_alpha(problem: &Problem, reference: &Volume, share: f64) -> Result<f64> {
    let ax = crate::linop::LinearMap::apply(problem.projector(), reference.data())?;
    let misfit: f64 = ax.iter().zip(problem.rhs()).map(|(a, b)| (a - b) * (a - b)).sum();
    let tv = crate::diffreg::tv(reference);
    if tv <= 0.0 || misfit <= 0.0 {
        return Err(Error::InvalidValue(
            "cannot derive alpha: reference has zero TV or zero data misfit".into(),
        ));
    }
    Ok((share * misfit / tv).sqrt())
}
