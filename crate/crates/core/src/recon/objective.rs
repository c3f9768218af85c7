//! Smoothed objectives minimized by the IRN solvers.
//!
//! With `TV_tau(x) = sum_i sqrt(|grad x|_i^2 + tau^2)`:
//!
//! * TV:    `||Ax - b||^2 + 2 a^2 TV_tau(x)`
//! * PIPLE: `||Ax - b||^2 + 2 a^2 TV_tau(x) + l^2 ||x - x_p||^2`
//! * PICCS: `||Ax - b||^2 + 2 a^2 TV_tau(x) + 2 l^2 TV_tau(x - x_p)`
//!
//! The factor 2 on the TV terms makes `a^2 ||W D x||^2` (the weighted term
//! each inner solve minimizes) a tangent majorant of `2 a^2 TV_tau` up to a
//! constant, so these are exactly the functionals that decrease across outer
//! iterations.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RegularizationParams;
use crate::diffreg::smoothed_tv;
use crate::error::{check_len, Error, Result};
use crate::linop::LinearMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Tv,
    Piple,
    Piccs,
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tv" => Ok(Self::Tv),
            "piple" => Ok(Self::Piple),
            "piccs" => Ok(Self::Piccs),
            other => Err(Error::Config(format!("unknown objective kind '{other}'"))),
        }
    }
}

/// The three contributions of an objective value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub data: f64,
    pub tv: f64,
    pub prior: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.data + self.tv + self.prior
    }
}

/// Evaluates the smoothed objective of `kind` at `x`.
pub fn evaluate_objective(
    kind: ObjectiveKind,
    map: &dyn LinearMap,
    dims: [usize; 3],
    x: &[f64],
    b: &[f64],
    prior: Option<&[f64]>,
    params: &RegularizationParams,
) -> Result<f64> {
    objective_terms(kind, map, dims, x, b, prior, params).map(|t| t.total())
}

pub(crate) fn objective_terms(
    kind: ObjectiveKind,
    map: &dyn LinearMap,
    dims: [usize; 3],
    x: &[f64],
    b: &[f64],
    prior: Option<&[f64]>,
    params: &RegularizationParams,
) -> Result<ObjectiveTerms> {
    check_len("objective iterate", map.domain_len(), x.len())?;
    check_len("objective data", map.range_len(), b.len())?;
    check_len("objective dims", dims.iter().product(), x.len())?;
    let ax = map.apply(x)?;
    let data = ax.iter().zip(b).map(|(a, y)| (a - y) * (a - y)).sum();
    let (a2, l2) = (params.alpha * params.alpha, params.lambda * params.lambda);
    let tv = if a2 > 0.0 {
        2.0 * a2 * smoothed_tv(dims, x, params.tau)
    } else {
        0.0
    };
    let prior_term = match kind {
        ObjectiveKind::Tv => 0.0,
        ObjectiveKind::Piple | ObjectiveKind::Piccs => {
            let p = prior.ok_or_else(|| Error::Config(format!("{kind:?} objective needs a prior image")))?;
            check_len("objective prior", x.len(), p.len())?;
            if l2 == 0.0 {
                0.0
            } else if kind == ObjectiveKind::Piple {
                l2 * x.iter().zip(p).map(|(a, q)| (a - q) * (a - q)).sum::<f64>()
            } else {
                let d: Vec<f64> = x.iter().zip(p).map(|(a, q)| a - q).collect();
                2.0 * l2 * smoothed_tv(dims, &d, params.tau)
            }
        }
    };
    Ok(ObjectiveTerms {
        data,
        tv,
        prior: prior_term,
    })
}
