//! CSV and PGM writers.
//!
//! Every CSV starts with a `# cbct <kind> v1` comment line naming its schema.
//! Floating-point columns use fixed formats so reruns compare byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cbct_core::metrics::{ErrorHistory, MetricReport};
use cbct_core::Volume;

use crate::experiment::{RunRecord, SweepRow};
use crate::CliError;

pub const METRICS_HEADER: &str = "# cbct metrics v1";
pub const TIMINGS_HEADER: &str = "# cbct timings v1";
pub const SWEEP_HEADER: &str = "# cbct sweep v1";
pub const HISTORY_HEADER: &str = "# cbct error-history v1";
pub const OBJECTIVE_HEADER: &str = "# cbct objective v1";

/// 8-bit binary PGM of `image` (`width` fastest), mapping `lo..=hi` to 0..=255.
pub fn pgm_bytes(image: &[f64], width: usize, height: usize, lo: f64, hi: f64) -> Vec<u8> {
    assert_eq!(image.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    out.extend(image.iter().map(|&v| {
        let g = ((v - lo) / span * 255.0).round();
        if g.is_nan() {
            0
        } else {
            g.clamp(0.0, 255.0) as u8
        }
    }));
    out
}

/// Central axial slice of `vol` as a PGM file.
pub fn write_slice_pgm(path: &Path, vol: &Volume, lo: f64, hi: f64) -> Result<(), CliError> {
    let [nx, ny, nz] = vol.dims();
    std::fs::write(path, pgm_bytes(vol.axial_slice(nz / 2), nx, ny, lo, hi))?;
    Ok(())
}

fn csv_writer(path: &Path, header_comment: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{header_comment}")?;
    Ok(csv::Writer::from_writer(file))
}

fn metric_fields(m: Option<&MetricReport>) -> [String; 3] {
    match m {
        Some(m) => [format!("{:.6}", m.psnr), format!("{:.6}", m.ssim), format!("{:.8}", m.rel_error)],
        None => Default::default(),
    }
}

fn status(r: &RunRecord) -> String {
    match &r.error {
        None => "ok".into(),
        Some(e) => format!("failed: {e}"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6e}")).unwrap_or_default()
}

/// Quality metrics per run. Wall-clock lives in the timings file so this
/// one is reproducible byte for byte.
pub fn write_metrics_csv(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = csv_writer(path, METRICS_HEADER)?;
    w.write_record(["angles", "algorithm", "iterations", "alpha", "lambda", "tau", "psnr", "ssim", "rel_error", "status"])?;
    for r in records {
        let [psnr, ssim, rel] = metric_fields(r.metrics.as_ref());
        w.write_record([
            r.angles.to_string(),
            r.label.clone(),
            r.iterations.to_string(),
            opt(r.alpha),
            opt(r.lambda),
            opt(r.tau),
            psnr,
            ssim,
            rel,
            status(r),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock seconds per run, measured around the solver call only.
pub fn write_timings_csv(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = csv_writer(path, TIMINGS_HEADER)?;
    w.write_record(["angles", "algorithm", "iterations", "wall_clock_s", "setup_s", "solve_s", "regularize_s"])?;
    for r in records {
        w.write_record([
            r.angles.to_string(),
            r.label.clone(),
            r.iterations.to_string(),
            format!("{:.4}", r.wall_clock_s),
            format!("{:.4}", r.timings.setup_s),
            format!("{:.4}", r.timings.solve_s),
            format!("{:.4}", r.timings.regularize_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per inner iteration; `restart` is 1 where an outer cycle begins.
pub fn write_error_history(path: &Path, history: &ErrorHistory) -> Result<(), CliError> {
    let mut w = csv_writer(path, HISTORY_HEADER)?;
    w.write_record(["iteration", "rel_error", "restart"])?;
    for (i, v) in history.values.iter().enumerate() {
        let restart = if history.restarts.contains(&i) { "1" } else { "0" };
        w.write_record([(i + 1).to_string(), format!("{v:.10e}"), restart.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Objective per outer iteration, with the start point as iteration 0.
pub fn write_objective_csv(path: &Path, record: &RunRecord) -> Result<(), CliError> {
    let mut w = csv_writer(path, OBJECTIVE_HEADER)?;
    w.write_record(["outer", "objective"])?;
    if let Some(f0) = record.initial_objective {
        w.write_record(["0".to_string(), format!("{f0:.12e}")])?;
    }
    for (i, f) in record.objective.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{f:.12e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut w = csv_writer(path, SWEEP_HEADER)?;
    w.write_record(["angles", "algorithm", "alpha", "lambda", "tau", "iterations", "psnr", "ssim", "rel_error", "best", "status"])?;
    for row in rows {
        let r = &row.record;
        let [psnr, ssim, rel] = metric_fields(r.metrics.as_ref());
        w.write_record([
            r.angles.to_string(),
            r.label.clone(),
            opt(r.alpha),
            opt(r.lambda),
            opt(r.tau),
            r.iterations.to_string(),
            psnr,
            ssim,
            rel,
            if row.best { "1" } else { "0" }.to_string(),
            status(r),
        ])?;
    }
    w.flush()?;
    Ok(())
}
