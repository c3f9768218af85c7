//! Whole-volume quality metrics.
//!
//! All metrics are computed over the full 3D volume, never slice by slice.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::volume::Volume;

/// Reported in place of `+inf` when the two volumes are identical.
pub const PSNR_CAP_DB: f64 = 400.0;

/// Peak signal-to-noise ratio `10 log10(range^2 / MSE)`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(x: &[f64], reference: &[f64], data_range: f64) -> Result<f64> {
    check_len("psnr", reference.len(), x.len())?;
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::InvalidValue(format!("data_range must be > 0, got {data_range}")));
    }
    if x.is_empty() {
        return Err(Error::InvalidValue("psnr of empty volumes".into()));
    }
    let mse = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB))
}

/// `||x - reference|| / ||reference||`.
pub fn rel_error(x: &[f64], reference: &[f64]) -> Result<f64> {
    check_len("relative error", reference.len(), x.len())?;
    let num: f64 = x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// SSIM settings: cubic window edge and the usual stabilizers
/// `C1 = (k1 L)^2`, `C2 = (k2 L)^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl SsimParams {
    pub fn new(data_range: f64) -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range,
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

/// Local SSIM from window statistics (population moments).
#[inline]
pub fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// 3D inclusive prefix sums with a zero border, `(nx+1)(ny+1)(nz+1)` long.
struct Integral {
    data: Vec<f64>,
    sx: usize,
    sxy: usize,
}

impl Integral {
    fn new(dims: [usize; 3], f: impl Fn(usize) -> f64) -> Self {
        let [nx, ny, nz] = dims;
        let (sx, sxy) = (nx + 1, (nx + 1) * (ny + 1));
        let mut data = vec![0.0; sxy * (nz + 1)];
        for k in 0..nz {
            for j in 0..ny {
                let mut row = 0.0;
                for i in 0..nx {
                    row += f(i + nx * (j + ny * k));
                    let o = (i + 1) + sx * (j + 1) + sxy * (k + 1);
                    data[o] = row + data[o - sx] + data[o - sxy] - data[o - sx - sxy];
                }
            }
        }
        Self { data, sx, sxy }
    }

    /// Sum over the box `[i, i+w) x [j, j+w) x [k, k+w)`.
    #[inline]
    fn box_sum(&self, i: usize, j: usize, k: usize, w: usize) -> f64 {
        let at = |a: usize, b: usize, c: usize| self.data[a + self.sx * b + self.sxy * c];
        let (i1, j1, k1) = (i + w, j + w, k + w);
        at(i1, j1, k1) - at(i, j1, k1) - at(i1, j, k1) - at(i1, j1, k) + at(i, j, k1) + at(i, j1, k)
            + at(i1, j, k)
            - at(i, j, k)
    }
}

/// Mean local SSIM over every fully contained `w^3` window (stride 1).
pub fn ssim3d(x: &Volume, reference: &Volume, params: &SsimParams) -> Result<f64> {
    x.ensure_same_dims(reference)?;
    let dims = x.dims();
    let w = params.window;
    if w == 0 || dims.iter().any(|&n| n < w) {
        return Err(Error::InvalidValue(format!(
            "SSIM window {w} does not fit volume {dims:?}"
        )));
    }
    if !(params.data_range > 0.0) {
        return Err(Error::InvalidValue("SSIM data_range must be > 0".into()));
    }
    let (a, b) = (x.data(), reference.data());
    let sa = Integral::new(dims, |i| a[i]);
    let sb = Integral::new(dims, |i| b[i]);
    let saa = Integral::new(dims, |i| a[i] * a[i]);
    let sbb = Integral::new(dims, |i| b[i] * b[i]);
    let sab = Integral::new(dims, |i| a[i] * b[i]);
    let n = (w * w * w) as f64;
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..=dims[2] - w {
        for j in 0..=dims[1] - w {
            for i in 0..=dims[0] - w {
                let mx = sa.box_sum(i, j, k, w) / n;
                let my = sb.box_sum(i, j, k, w) / n;
                let vx = saa.box_sum(i, j, k, w) / n - mx * mx;
                let vy = sbb.box_sum(i, j, k, w) / n - my * my;
                let cov = sab.box_sum(i, j, k, w) / n - mx * my;
                total += ssim_from_moments(mx, my, vx, vy, cov, c1, c2);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Which range PSNR/SSIM are normalized by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataRange {
    /// `max - min` of the ground truth.
    #[default]
    GroundTruth,
    Fixed(f64),
}

impl DataRange {
    pub fn resolve(&self, reference: &Volume) -> f64 {
        match *self {
            DataRange::GroundTruth => reference.dynamic_range(),
            DataRange::Fixed(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub rel_error: f64,
}

pub fn evaluate(x: &Volume, reference: &Volume, range: DataRange) -> Result<MetricReport> {
    x.ensure_same_dims(reference)?;
    let data_range = range.resolve(reference);
    let mut params = SsimParams::new(data_range);
    params.window = params.window.min(*x.dims().iter().min().unwrap());
    Ok(MetricReport {
        psnr: psnr(x.data(), reference.data(), data_range)?,
        ssim: ssim3d(x, reference, &params)?,
        rel_error: rel_error(x.data(), reference.data())?,
    })
}

/// Relative error against a ground truth after every inner iteration,
/// with the indices where outer cycles start.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorHistory {
    pub values: Vec<f64>,
    /// `values[b]` is the first entry of a new outer cycle for every `b`.
    pub restarts: Vec<usize>,
}

impl ErrorHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark_restart(&mut self) {
        self.restarts.push(self.values.len());
    }

    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Records `rel_error(x, truth)` each time it is called.
pub struct ErrorRecorder<'a> {
    truth: &'a [f64],
    norm: f64,
    pub history: ErrorHistory,
}

impl<'a> ErrorRecorder<'a> {
    pub fn new(truth: &'a [f64]) -> Self {
        let norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            truth,
            norm,
            history: ErrorHistory::new(),
        }
    }

    pub fn observe(&mut self, x: &[f64]) {
        let d: f64 = x.iter().zip(self.truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        self.history.push(if self.norm > 0.0 { d / self.norm } else { d });
    }
}
