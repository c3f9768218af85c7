//! ASD-POCS with total variation: SART data sweeps alternating with
//! adaptively sized steepest-descent steps on the smoothed TV.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Problem, ReconReport, Timings};
use crate::diffreg::DiffOperator;
use crate::error::{check_len, Error, Result};
use crate::linop::{dot_unchecked, norm2, LinearMap};
use crate::projector::ConeBeamProjector;
use crate::volume::Volume;

/// Hyperparameters of the method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsdPocsConfig {
    /// SART relaxation at the first iteration.
    pub beta: f64,
    /// Multiplicative decay of `beta` per iteration.
    pub beta_red: f64,
    /// TV descent steps per iteration.
    pub tv_steps: usize,
    /// Initial TV step as a fraction of the first SART update norm.
    pub alpha: f64,
    /// Decay of the TV step when it dominates the data step.
    pub alpha_red: f64,
    /// Largest allowed ratio of TV change to data change.
    pub r_max: f64,
    /// Data tolerance relative to `||b||`.
    pub epsilon_rel: f64,
    pub max_iters: usize,
    /// Stop on opposing data/TV update directions or a vanishing `beta`.
    /// When false, exactly `max_iters` iterations run.
    pub early_stop: bool,
    pub nonneg: bool,
    /// Smoothing inside the TV gradient.
    pub tv_smoothing: f64,
}

impl Default for AsdPocsConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            beta_red: 0.99,
            tv_steps: 20,
            alpha: 0.002,
            alpha_red: 0.95,
            r_max: 0.95,
            epsilon_rel: 0.01,
            max_iters: 100,
            early_stop: true,
            nonneg: true,
            tv_smoothing: 1e-8,
        }
    }
}

impl AsdPocsConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.beta) || !pos(self.beta_red) || !pos(self.alpha_red) || !pos(self.r_max) {
            return Err(Error::Config(
                "beta, beta_red, alpha_red and r_max must be positive".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.epsilon_rel >= 0.0 && self.tv_smoothing > 0.0) {
            return Err(Error::Config(
                "alpha and epsilon_rel must be >= 0 and tv_smoothing > 0".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// One-view projectors with their SART normalizations.
///
/// Rays are normalized by their own lengths through the volume. Voxels are
/// normalized by their full-scan column sums divided by the number of views,
/// the per-view average. Per-view column sums make each view step
/// nonexpansive in a different weighted norm, and the ordered sweep can then
/// diverge even on consistent data.
pub struct SartState {
    views: Vec<View>,
    inv_col: Vec<f64>,
    view_len: usize,
}

struct View {
    projector: ConeBeamProjector,
    inv_row: Vec<f64>,
}

fn inverse_guarded(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    v.into_iter().map(|s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect()
}

impl SartState {
    pub fn new(projector: &ConeBeamProjector) -> Self {
        let geom = projector.geometry();
        let n_views = geom.n_angles();
        let view_len = geom.detector.pixels();
        let ones_x = vec![1.0; projector.domain_len()];
        let mut rows = vec![0.0; projector.range_len()];
        projector.apply_into(&ones_x, &mut rows);
        let mut cols = vec![0.0; projector.domain_len()];
        projector.apply_adjoint_into(&vec![1.0; projector.range_len()], &mut cols);
        let views = (0..n_views)
            .map(|a| View {
                projector: projector.subset(&[a]),
                inv_row: inverse_guarded(rows[a * view_len..(a + 1) * view_len].iter().copied()),
            })
            .collect();
        Self {
            views,
            inv_col: inverse_guarded(cols.into_iter().map(|c| c / n_views as f64)),
            view_len,
        }
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }
}

/// One ordered SART pass over all views:
/// `x += beta * C A_a^T R_a (b_a - A_a x)` for each view `a` in turn.
pub fn sart_sweep(state: &SartState, rhs: &[f64], x: &mut [f64], beta: f64) -> Result<()> {
    check_len("sart rhs", state.view_len * state.views.len(), rhs.len())?;
    check_len("sart iterate", state.inv_col.len(), x.len())?;
    let mut r = vec![0.0; state.view_len];
    let mut g = vec![0.0; x.len()];
    for (a, view) in state.views.iter().enumerate() {
        view.projector.apply_into(x, &mut r);
        let b = &rhs[a * state.view_len..(a + 1) * state.view_len];
        r.iter_mut()
            .zip(b)
            .zip(&view.inv_row)
            .for_each(|((ri, bi), w)| *ri = (bi - *ri) * w);
        view.projector.apply_adjoint_into(&r, &mut g);
        x.iter_mut()
            .zip(&g)
            .zip(&state.inv_col)
            .for_each(|((xi, gi), c)| *xi += beta * c * gi);
    }
    Ok(())
}

/// Gradient of `sum sqrt(|grad x|^2 + eps^2)`.
fn tv_gradient(diff: &DiffOperator, x: &[f64], eps: f64) -> Vec<f64> {
    let m = x.len();
    let mut g = diff.apply(x).expect("difference operator matches iterate");
    let e2 = eps * eps;
    for i in 0..m {
        let s = (g[i] * g[i] + g[m + i] * g[m + i] + g[2 * m + i] * g[2 * m + i] + e2).sqrt();
        g[i] /= s;
        g[m + i] /= s;
        g[2 * m + i] /= s;
    }
    diff.apply_adjoint(&g).expect("difference operator matches field")
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// ASD-POCS-TV. The report's objective series holds `||A x - b||^2` after
/// each iteration, and the error history gains one entry per iteration.
pub fn asd_pocs_tv(problem: &Problem, cfg: &AsdPocsConfig, x0: Option<&Volume>) -> Result<ReconReport> {
    cfg.validate()?;
    let t_start = Instant::now();
    let a = problem.projector();
    let b = problem.rhs();
    let diff = DiffOperator::new(problem.grid().dims);
    let mut timings = Timings::default();

    let state = SartState::new(a);
    timings.setup_s = t_start.elapsed().as_secs_f64();

    let eps = cfg.epsilon_rel * norm2(b);
    let mut x = problem.start(x0)?;
    let mut rec = problem.recorder();
    if let Some(r) = rec.as_mut() {
        r.history.mark_restart();
    }
    let mut beta = cfg.beta;
    let mut dtvg = 0.0;
    let mut misfit = Vec::new();
    let mut ax = vec![0.0; a.range_len()];
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        let t_data = Instant::now();
        let x_prev = x.clone();
        sart_sweep(&state, b, &mut x, beta)?;
        if cfg.nonneg {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a.apply_into(&x, &mut ax);
        let dd = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let dp_vec = sub(&x, &x_prev);
        let dp = norm2(&dp_vec);
        if it == 0 {
            dtvg = cfg.alpha * dp;
        }
        timings.solve_s += t_data.elapsed().as_secs_f64();

        let t_tv = Instant::now();
        let x_data = x.clone();
        for _ in 0..cfg.tv_steps {
            let g = tv_gradient(&diff, &x, cfg.tv_smoothing);
            let gn = norm2(&g);
            if gn == 0.0 {
                break;
            }
            let step = dtvg / gn;
            x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= step * gi);
        }
        let dg_vec = sub(&x, &x_data);
        let dg = norm2(&dg_vec);
        if dg > cfg.r_max * dp && dd > eps {
            dtvg *= cfg.alpha_red;
        }
        beta *= cfg.beta_red;
        timings.regularize_s += t_tv.elapsed().as_secs_f64();

        iterations += 1;
        misfit.push(dd * dd);
        if let Some(r) = rec.as_mut() {
            r.observe(&x);
        }
        let denom = dg * dp;
        let c = if denom > 0.0 { dot_unchecked(&dg_vec, &dp_vec) / denom } else { 0.0 };
        if cfg.early_stop && ((c < -0.99 && dd <= eps) || beta < 0.005) {
            break;
        }
    }
    timings.total_s = t_start.elapsed().as_secs_f64();
    Ok(ReconReport {
        volume: problem.volume(x)?,
        objective: misfit,
        initial_objective: None,
        error_history: rec.map(|r| r.history).unwrap_or_default(),
        iterations,
        timings,
    })
}
