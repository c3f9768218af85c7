//! Inner least-squares solvers on arbitrary [`LinearMap`]s.
//!
//! [`cgls`] is conjugate gradients on the normal equations, started from a
//! caller-supplied iterate so that outer reweighting loops can warm start.
//! [`sirt`] is the row/column-normalized Landweber iteration.

use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::linop::{axpy, dot_unchecked, norm2, norm2_squared, LinearMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovConfig {
    /// Iteration budget. Zero is accepted and returns the start point untouched.
    pub max_iters: usize,
    /// Stop once `||A^T r_j|| <= residual_tol * ||A^T r_0||` (CGLS only).
    pub residual_tol: f64,
    pub record_history: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            max_iters: 25,
            residual_tol: 1e-6,
            record_history: true,
        }
    }
}

impl KrylovConfig {
    pub fn with_iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol >= 0.0) {
            return Err(Error::Config(format!(
                "residual_tol must be >= 0, got {}",
                self.residual_tol
            )));
        }
        Ok(())
    }
}

/// Why a solve stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Converged,
    /// The start point already solves the normal equations.
    ZeroGradient,
    /// Zero curvature along the search direction.
    Breakdown,
}

/// Per-iteration history. Entry `j` describes the iterate after step `j + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveTrace {
    /// `||A x_j - b||_2`.
    pub residual_norms: Vec<f64>,
    /// `||A x_j - b||_2^2`.
    pub objective_values: Vec<f64>,
    /// Seconds since the solve started.
    pub elapsed: Vec<f64>,
    /// Residual norm at the start point.
    pub initial_residual: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

impl SolveTrace {
    fn new(initial_residual: f64) -> Self {
        Self {
            residual_norms: Vec::new(),
            objective_values: Vec::new(),
            elapsed: Vec::new(),
            initial_residual,
            iterations: 0,
            stop: StopReason::MaxIterations,
        }
    }

    fn record(&mut self, cfg: &KrylovConfig, rnorm: f64, start: Instant) {
        self.iterations += 1;
        if cfg.record_history {
            self.residual_norms.push(rnorm);
            self.objective_values.push(rnorm * rnorm);
            self.elapsed.push(start.elapsed().as_secs_f64());
        }
    }

    pub fn breakdown(&self) -> bool {
        self.stop == StopReason::Breakdown
    }
}

fn check_shapes(map: &dyn LinearMap, rhs: &[f64], x0: &[f64]) -> Result<()> {
    check_len("solver rhs", map.range_len(), rhs.len())?;
    check_len("solver start point", map.domain_len(), x0.len())
}

/// CGLS on `min ||A x - b||_2` from `x0`.
pub fn cgls(
    map: &dyn LinearMap,
    rhs: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
) -> Result<(Vec<f64>, SolveTrace)> {
    cgls_with(map, rhs, x0, cfg, |_, _| {})
}

/// [`cgls`] calling `observe(iteration, x)` after every update.
pub fn cgls_with(
    map: &dyn LinearMap,
    rhs: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveTrace)> {
    check_shapes(map, rhs, x0)?;
    cfg.validate()?;
    let start = Instant::now();
    let mut x = x0.to_vec();

    let mut r = vec![0.0; map.range_len()];
    map.apply_into(&x, &mut r);
    r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut trace = SolveTrace::new(norm2(&r));
    if cfg.max_iters == 0 {
        return Ok((x, trace));
    }

    let mut s = vec![0.0; map.domain_len()];
    map.apply_adjoint_into(&r, &mut s);
    let mut gamma = norm2_squared(&s);
    if gamma == 0.0 {
        trace.stop = StopReason::ZeroGradient;
        return Ok((x, trace));
    }
    let gamma0 = gamma;
    let mut p = s.clone();
    let mut q = vec![0.0; map.range_len()];

    for it in 0..cfg.max_iters {
        map.apply_into(&p, &mut q);
        let delta = norm2_squared(&q);
        if delta == 0.0 || !delta.is_finite() {
            trace.stop = StopReason::Breakdown;
            return Ok((x, trace));
        }
        let alpha = gamma / delta;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        trace.record(cfg, norm2(&r), start);
        observe(it, &x);

        map.apply_adjoint_into(&r, &mut s);
        let gamma_next = norm2_squared(&s);
        if gamma_next.sqrt() <= cfg.residual_tol * gamma0.sqrt() {
            trace.stop = StopReason::Converged;
            break;
        }
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + beta * *pi);
    }
    Ok((x, trace))
}

/// Diagonal normalizations for SIRT: inverse row sums `R = 1 / (A 1)` and
/// inverse column sums `C = 1 / (A^T 1)`, with zero sums mapped to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SirtWeights {
    pub row_sums: Vec<f64>,
    pub col_sums: Vec<f64>,
    pub inv_row: Vec<f64>,
    pub inv_col: Vec<f64>,
}

impl SirtWeights {
    pub fn new(map: &dyn LinearMap) -> Self {
        let mut row_sums = vec![0.0; map.range_len()];
        let mut col_sums = vec![0.0; map.domain_len()];
        map.apply_into(&vec![1.0; map.domain_len()], &mut row_sums);
        map.apply_adjoint_into(&vec![1.0; map.range_len()], &mut col_sums);
        let inv = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&s| if s.abs() > f64::EPSILON { 1.0 / s } else { 0.0 })
                .collect()
        };
        Self {
            inv_row: inv(&row_sums),
            inv_col: inv(&col_sums),
            row_sums,
            col_sums,
        }
    }
}

/// SIRT: `x <- x + C A^T R (b - A x)` for exactly `cfg.max_iters` steps.
pub fn sirt(
    map: &dyn LinearMap,
    rhs: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
) -> Result<(Vec<f64>, SolveTrace)> {
    sirt_with(map, rhs, x0, cfg, |_, _| {})
}

pub fn sirt_with(
    map: &dyn LinearMap,
    rhs: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveTrace)> {
    check_shapes(map, rhs, x0)?;
    cfg.validate()?;
    let start = Instant::now();
    let weights = SirtWeights::new(map);
    let mut x = x0.to_vec();
    let mut r = vec![0.0; map.range_len()];
    let mut update = vec![0.0; map.domain_len()];

    map.apply_into(&x, &mut r);
    r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut trace = SolveTrace::new(norm2(&r));

    for it in 0..cfg.max_iters {
        r.iter_mut().zip(&weights.inv_row).for_each(|(ri, w)| *ri *= w);
        map.apply_adjoint_into(&r, &mut update);
        x.iter_mut()
            .zip(&update)
            .zip(&weights.inv_col)
            .for_each(|((xi, ui), ci)| *xi += ci * ui);
        map.apply_into(&x, &mut r);
        r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
        trace.record(cfg, norm2(&r), start);
        observe(it, &x);
    }
    Ok((x, trace))
}

/// `||A x - b||_2` evaluated directly.
pub fn residual_norm(map: &dyn LinearMap, x: &[f64], rhs: &[f64]) -> Result<f64> {
    let ax = map.apply(x)?;
    check_len("residual rhs", ax.len(), rhs.len())?;
    let r: Vec<f64> = ax.iter().zip(rhs).map(|(a, b)| a - b).collect();
    Ok(dot_unchecked(&r, &r).sqrt())
}
