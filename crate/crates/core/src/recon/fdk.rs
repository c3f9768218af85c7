//! Feldkamp-Davis-Kress filtered backprojection for circular scans.

use std::f64::consts::PI;
use std::str::FromStr;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ProjectionSet;
use crate::volume::{Volume, VolumeGrid};

/// Apodization applied on top of the ramp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    #[default]
    RamLak,
    SheppLogan,
    Cosine,
    Hann,
}

impl FilterKind {
    /// Window value at frequency `f` in cycles per sample, `0 <= f <= 0.5`.
    fn window(self, f: f64) -> f64 {
        match self {
            Self::RamLak => 1.0,
            Self::SheppLogan if f == 0.0 => 1.0,
            Self::SheppLogan => (PI * f).sin() / (PI * f),
            Self::Cosine => (PI * f).cos(),
            Self::Hann => 0.5 * (1.0 + (2.0 * PI * f).cos()),
        }
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ram-lak" | "ramlak" | "ramp" => Ok(Self::RamLak),
            "shepp-logan" => Ok(Self::SheppLogan),
            "cosine" => Ok(Self::Cosine),
            "hann" | "hanning" => Ok(Self::Hann),
            other => Err(Error::Config(format!("unknown FDK filter '{other}'"))),
        }
    }
}

/// Frequency response of the band-limited ramp for rows sampled at `du`,
/// zero-padded to `n` samples, scaled by `du` so that a product with a row
/// spectrum yields the convolution integral.
fn ramp_response(n: usize, du: f64, kind: FilterKind) -> Vec<f64> {
    let mut h = vec![Complex::new(0.0, 0.0); n];
    h[0].re = 1.0 / (4.0 * du * du);
    for k in (1..n / 2).step_by(2) {
        let v = -1.0 / (PI * k as f64 * du).powi(2);
        h[k].re = v;
        h[n - k].re = v;
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut h);
    (0..n)
        .map(|k| {
            let f = k.min(n - k) as f64 / n as f64;
            h[k].re * du * kind.window(f)
        })
        .collect()
}

/// FDK reconstruction of `proj` on `grid`.
///
/// Projections are cosine weighted, ramp filtered row by row along u and
/// backprojected with the `(dso / L)^2` distance weight, where `L` is the
/// depth of the voxel along the central ray. The angular step is taken as
/// `2 pi / n_angles`, which assumes a roughly uniform full circle.
pub fn fdk(proj: &ProjectionSet, grid: &VolumeGrid, filter: FilterKind) -> Result<Volume> {
    grid.validate()?;
    let geom = proj.geometry();
    let n_angles = geom.n_angles();
    if n_angles < 2 {
        return Err(Error::Config(format!("FDK needs at least 2 angles, got {n_angles}")));
    }
    let det = geom.detector;
    let (nu, nv) = (det.nu, det.nv);
    let (dso, dsd) = (geom.dso, geom.dsd);

    let pad = (2 * nu).next_power_of_two();
    let response = ramp_response(pad, det.pu * dso / dsd, filter);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(pad);
    let inv = planner.plan_fft_inverse(pad);

    let mut filtered = proj.data().to_vec();
    filtered.par_chunks_mut(nu).enumerate().for_each(|(row, out)| {
        let iv = row % nv;
        let mut buf = vec![Complex::new(0.0, 0.0); pad];
        for (iu, b) in buf.iter_mut().take(nu).enumerate() {
            let (u, v) = det.pixel_uv(iu, iv);
            b.re = out[iu] * dsd / (dsd * dsd + u * u + v * v).sqrt();
        }
        fwd.process(&mut buf);
        buf.iter_mut().zip(&response).for_each(|(b, h)| *b *= *h);
        inv.process(&mut buf);
        let norm = 1.0 / pad as f64;
        out.iter_mut().zip(&buf).for_each(|(o, b)| *o = b.re * norm);
    });

    let trig: Vec<(f64, f64)> = geom.angles.iter().map(|b| b.sin_cos()).collect();
    let scale = 0.5 * (2.0 * PI / n_angles as f64);
    let [nx, ny, _] = grid.dims;
    let u_center = 0.5 * (nu as f64 - 1.0);
    let v_center = 0.5 * (nv as f64 - 1.0);
    let mut out = vec![0.0; grid.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
        let z = grid.voxel_center(0, 0, k)[2];
        for (a, &(s, c)) in trig.iter().enumerate() {
            let view = &filtered[a * nu * nv..(a + 1) * nu * nv];
            for j in 0..ny {
                for i in 0..nx {
                    let [x, y, _] = grid.voxel_center(i, j, k);
                    let depth = dso - (x * c + y * s);
                    if depth <= 0.0 {
                        continue;
                    }
                    let mag = dsd / depth;
                    let fu = ((-x * s + y * c) * mag - det.ou) / det.pu + u_center;
                    let fv = (z * mag - det.ov) / det.pv + v_center;
                    let sample = bilinear(view, nu, nv, fu, fv);
                    if sample != 0.0 {
                        let w = dso / depth;
                        slice[i + nx * j] += w * w * sample;
                    }
                }
            }
        }
        slice.iter_mut().for_each(|v| *v *= scale);
    });
    Volume::new(*grid, out)
}

/// Bilinear lookup at fractional pixel `(fu, fv)`; samples off the detector
/// read as zero.
#[inline]
fn bilinear(view: &[f64], nu: usize, nv: usize, fu: f64, fv: f64) -> f64 {
    if !(fu > -1.0 && fv > -1.0 && fu < nu as f64 && fv < nv as f64) {
        return 0.0;
    }
    let (u0, v0) = (fu.floor(), fv.floor());
    let (du, dv) = (fu - u0, fv - v0);
    let (u0, v0) = (u0 as isize, v0 as isize);
    let at = |iu: isize, iv: isize| {
        if iu < 0 || iv < 0 || iu >= nu as isize || iv >= nv as isize {
            0.0
        } else {
            view[iu as usize + nu * iv as usize]
        }
    };
    (1.0 - dv) * ((1.0 - du) * at(u0, v0) + du * at(u0 + 1, v0))
        + dv * ((1.0 - du) * at(u0, v0 + 1) + du * at(u0 + 1, v0 + 1))
}
