//! The generate, scan, subsample, reconstruct and score pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbct_core::diffreg::default_tau;
use cbct_core::io::{read_volume, write_volume};
use cbct_core::metrics::{evaluate, DataRange, ErrorHistory, MetricReport};
use cbct_core::phantoms::{make_phantom, simulate_scan, subsample_angles};
use cbct_core::recon::{
    asd_pocs_tv, cgls_recon, fdk, heuristic_alpha, irn_piccs, irn_piple, irn_tv, sirt_recon,
    FilterKind, Problem, ReconReport, RegularizationParams, Timings,
};
use cbct_core::{ConeBeamGeometry, ProjectionSet, Volume, VolumeGrid};

use crate::config::{AlgorithmConfig, AlgorithmKind, ExperimentConfig, PriorSource, StartPoint};
use crate::output;
use crate::CliError;

/// Inputs shared by every reconstruction of one experiment.
pub struct Scenario {
    pub truth: Volume,
    /// Noisy scan over `full_angles` views.
    pub full_scan: ProjectionSet,
    pub prior: Option<Volume>,
    pub data_range: DataRange,
}

impl Scenario {
    pub fn grid(&self) -> &VolumeGrid {
        self.truth.grid()
    }
}

fn full_geometry(config: &ExperimentConfig, grid: &VolumeGrid, n: usize) -> Result<ConeBeamGeometry, CliError> {
    let g = &config.geometry;
    let geom = match g.detector {
        Some(det) => ConeBeamGeometry::new(g.dso, g.dsd, det, ConeBeamGeometry::full_circle(n))?,
        None => ConeBeamGeometry::fitted(grid, g.dso, g.dsd, n)?,
    };
    geom.check_source_outside(grid)?;
    Ok(geom)
}

/// Builds the phantom, its full scan and the prior image.
pub fn prepare(config: &ExperimentConfig) -> Result<Scenario, CliError> {
    config.validate()?;
    let spec = config.phantom.spec();
    let truth = make_phantom(&spec)?;
    let grid = *truth.grid();
    let geom = full_geometry(config, &grid, config.full_angles)?;
    let full_scan = simulate_scan(&truth, &geom, config.noise, config.seed)?;

    let p = &config.prior;
    let prior = match p.source {
        PriorSource::None => None,
        PriorSource::Phantom => Some(make_phantom(&spec.without_inserts())?),
        PriorSource::File => {
            let path = p.path.as_ref().expect("validated");
            let vol = read_volume(path)?;
            if vol.dims() != grid.dims {
                return Err(CliError::Config(format!(
                    "prior {} has dims {:?}, expected {:?}",
                    path.display(),
                    vol.dims(),
                    grid.dims
                )));
            }
            Some(Volume::new(grid, vol.into_data())?)
        }
        PriorSource::CleanScan => {
            let clean = make_phantom(&spec.without_inserts())?;
            let n = p.angles.unwrap_or(config.full_angles);
            let geom = full_geometry(config, &grid, n)?;
            let scan = simulate_scan(&clean, &geom, p.noise.unwrap_or(config.noise), p.noise_seed)?;
            Some(fdk(&scan, &grid, p.filter)?)
        }
    };
    let data_range = match config.data_range {
        Some(r) => DataRange::Fixed(r),
        None => DataRange::GroundTruth,
    };
    Ok(Scenario {
        truth,
        full_scan,
        prior,
        data_range,
    })
}

/// One subsampled scan with its FDK reference, when some algorithm needs it.
struct AngleCase {
    n: usize,
    data: ProjectionSet,
    fdk_reference: Option<Volume>,
}

impl AngleCase {
    fn new(scenario: &Scenario, n: usize, with_reference: bool) -> Result<Self, CliError> {
        let data = subsample_angles(&scenario.full_scan, n)?;
        let fdk_reference = if with_reference {
            Some(fdk(&data, scenario.grid(), FilterKind::RamLak)?)
        } else {
            None
        };
        Ok(Self { n, data, fdk_reference })
    }

    fn reference(&self) -> Result<&Volume, CliError> {
        self.fdk_reference
            .as_ref()
            .ok_or_else(|| CliError::Config("an FDK reference is required but was not built".into()))
    }
}

/// Outcome of one algorithm on one angle count.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub angles: usize,
    pub label: String,
    pub algorithm: AlgorithmKind,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub iterations: usize,
    /// Seconds spent inside the solver call.
    pub wall_clock_s: f64,
    pub timings: Timings,
    pub metrics: Option<MetricReport>,
    pub objective: Vec<f64>,
    pub initial_objective: Option<f64>,
    pub error_history: ErrorHistory,
    /// Set when the solver failed; the other fields are then empty.
    pub error: Option<String>,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Parameter overrides used by sweeps.
#[derive(Clone, Copy, Debug, Default)]
struct Overrides {
    alpha: Option<f64>,
    lambda: Option<f64>,
}

/// Runs `alg` on `case`, returning the record and the reconstruction.
fn run_single(
    scenario: &Scenario,
    case: &AngleCase,
    alg: &AlgorithmConfig,
    overrides: Overrides,
) -> (RunRecord, Option<Volume>) {
    let mut record = RunRecord {
        angles: case.n,
        label: alg.label().to_string(),
        algorithm: alg.name,
        alpha: None,
        lambda: None,
        tau: None,
        iterations: 0,
        wall_clock_s: 0.0,
        timings: Timings::default(),
        metrics: None,
        objective: Vec::new(),
        initial_objective: None,
        error_history: ErrorHistory::new(),
        error: None,
    };
    match reconstruct(scenario, case, alg, overrides, &mut record) {
        Ok((report, wall)) => {
            record.wall_clock_s = wall;
            record.iterations = report.iterations;
            record.timings = report.timings;
            record.objective = report.objective;
            record.initial_objective = report.initial_objective;
            record.error_history = report.error_history;
            match evaluate(&report.volume, &scenario.truth, scenario.data_range) {
                Ok(m) => record.metrics = Some(m),
                Err(e) => record.error = Some(e.to_string()),
            }
            (record, Some(report.volume))
        }
        Err(e) => {
            record.error = Some(e.to_string());
            (record, None)
        }
    }
}

fn reconstruct(
    scenario: &Scenario,
    case: &AngleCase,
    alg: &AlgorithmConfig,
    overrides: Overrides,
    record: &mut RunRecord,
) -> Result<(ReconReport, f64), CliError> {
    let grid = scenario.grid();
    if alg.name == AlgorithmKind::Fdk {
        let t0 = Instant::now();
        let volume = fdk(&case.data, grid, alg.filter)?;
        let wall = t0.elapsed().as_secs_f64();
        let report = ReconReport {
            volume,
            objective: Vec::new(),
            initial_objective: None,
            error_history: ErrorHistory::new(),
            iterations: 0,
            timings: Timings {
                total_s: wall,
                solve_s: wall,
                ..Timings::default()
            },
        };
        return Ok((report, wall));
    }

    let problem = Problem::new(&case.data, grid)?.with_truth(&scenario.truth)?;
    let x0 = match alg.start {
        StartPoint::Zero => None,
        StartPoint::Prior => scenario.prior.as_ref(),
        StartPoint::Fdk => Some(case.reference()?),
    };
    let prior = || {
        scenario
            .prior
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("algorithm '{}' needs a prior", alg.label())))
    };

    let params = if alg.name.uses_alpha() {
        let alpha = match overrides.alpha.or(alg.alpha) {
            Some(a) => a,
            None => heuristic_alpha(&problem, case.reference()?, alg.alpha_share)?,
        };
        let lambda = if alg.name.needs_prior() {
            overrides.lambda.or(alg.lambda).unwrap_or(alg.lambda_scale * alpha)
        } else {
            0.0
        };
        let tau = match alg.tau {
            Some(t) => t,
            None => default_tau(case.reference()?.dynamic_range()),
        };
        record.alpha = Some(alpha);
        record.lambda = alg.name.needs_prior().then_some(lambda);
        record.tau = Some(tau);
        let mut p = RegularizationParams::new(alpha, lambda, tau).with_budget(alg.outer_iters, alg.inner_iters);
        p.warm_start = alg.warm_start;
        Some(p)
    } else {
        None
    };

    let t0 = Instant::now();
    let report = match (alg.name, params) {
        (AlgorithmKind::Cgls, _) => cgls_recon(&problem, alg.iterations, x0)?,
        (AlgorithmKind::Sirt, _) => sirt_recon(&problem, alg.iterations, x0)?,
        (AlgorithmKind::AsdPocs, _) => asd_pocs_tv(&problem, &alg.asd_pocs, x0)?,
        (AlgorithmKind::IrnTv, Some(p)) => irn_tv(&problem, &p, x0)?,
        (AlgorithmKind::IrnPiple, Some(p)) => irn_piple(&problem, &p, prior()?, x0)?,
        (AlgorithmKind::IrnPiccs, Some(p)) => irn_piccs(&problem, &p, prior()?, x0)?,
        (kind, _) => unreachable!("{kind} has no iterative solver"),
    };
    Ok((report, t0.elapsed().as_secs_f64()))
}

fn angle_dir(root: &Path, n: usize) -> PathBuf {
    root.join(format!("angles_{n:03}"))
}

/// Gray scales shared by every render of one experiment.
struct Palette {
    lo: f64,
    hi: f64,
}

impl Palette {
    fn new(truth: &Volume) -> Self {
        let (lo, hi) = truth.min_max();
        Self { lo, hi }
    }

    fn diff_max(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

fn write_run_artifacts(
    dir: &Path,
    record: &RunRecord,
    volume: &Volume,
    truth: &Volume,
    palette: &Palette,
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let diff = volume.difference(truth)?;
    let abs = Volume::new(*diff.grid(), diff.data().iter().map(|v| v.abs()).collect())?;
    write_volume(&dir.join("recon"), volume)?;
    write_volume(&dir.join("diff"), &diff)?;
    output::write_slice_pgm(&dir.join("recon_slice.pgm"), volume, palette.lo, palette.hi)?;
    output::write_slice_pgm(&dir.join("diff_slice.pgm"), &abs, 0.0, palette.diff_max())?;
    output::write_error_history(&dir.join("error_history.csv"), &record.error_history)?;
    output::write_objective_csv(&dir.join("objective.csv"), record)?;
    Ok(())
}

fn needs_reference(algs: &[&AlgorithmConfig]) -> bool {
    algs.iter().any(|a| a.needs_fdk_reference())
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub output_dir: PathBuf,
    pub records: Vec<RunRecord>,
}

impl ExperimentOutput {
    pub fn record(&self, angles: usize, label: &str) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.angles == angles && r.label == label)
    }

    pub fn all_failed(&self) -> bool {
        self.records.iter().all(|r| !r.ok())
    }
}

/// Runs every algorithm on every angle count and writes the artifact tree.
///
/// A failing solver is recorded in `metrics.csv` and the rest continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let scenario = prepare(config)?;
    let root = config.output_dir.clone();
    fs::create_dir_all(&root)?;
    let palette = Palette::new(&scenario.truth);
    write_volume(&root.join("ground_truth"), &scenario.truth)?;
    output::write_slice_pgm(&root.join("ground_truth_slice.pgm"), &scenario.truth, palette.lo, palette.hi)?;
    if let Some(prior) = &scenario.prior {
        write_volume(&root.join("prior"), prior)?;
        output::write_slice_pgm(&root.join("prior_slice.pgm"), prior, palette.lo, palette.hi)?;
    }

    let algs: Vec<&AlgorithmConfig> = config.algorithms.iter().collect();
    let mut records = Vec::new();
    for &n in &config.angle_counts {
        let active: Vec<&AlgorithmConfig> = algs.iter().copied().filter(|a| a.runs_at(n)).collect();
        if active.is_empty() {
            continue;
        }
        let case = AngleCase::new(&scenario, n, needs_reference(&active))?;
        for alg in &active {
            let (record, volume) = run_single(&scenario, &case, alg, Overrides::default());
            if let Some(vol) = volume {
                let dir = angle_dir(&root, n).join(alg.label());
                write_run_artifacts(&dir, &record, &vol, &scenario.truth, &palette)?;
            }
            records.push(record);
        }
    }
    output::write_metrics_csv(&root.join("metrics.csv"), &records)?;
    output::write_timings_csv(&root.join("timings.csv"), &records)?;
    Ok(ExperimentOutput {
        output_dir: root,
        records,
    })
}

/// Grid for [`sweep_params`]. An empty list keeps the configured value.
#[derive(Clone, Debug, Default)]
pub struct SweepRequest {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Label of the algorithm to sweep; the first IRN entry when absent.
    pub algorithm: Option<String>,
    /// Angle count to sweep at; the first configured count when absent.
    pub angles: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub record: RunRecord,
    /// Highest PSNR of the grid (first on ties).
    pub best: bool,
}

/// Runs one reconstruction per `(alpha, lambda)` grid point, alpha-major,
/// and writes `sweep.csv` with the best PSNR flagged.
pub fn sweep_params(config: &ExperimentConfig, request: &SweepRequest) -> Result<Vec<SweepRow>, CliError> {
    config.validate()?;
    if request.alphas.is_empty() && request.lambdas.is_empty() {
        return Err(CliError::Config("sweep grid is empty: give --alpha and/or --lambda".into()));
    }
    let alg = match &request.algorithm {
        Some(label) => config
            .algorithm(label)
            .ok_or_else(|| CliError::Config(format!("no algorithm labelled '{label}'")))?,
        None => config
            .algorithms
            .iter()
            .find(|a| a.name.uses_alpha())
            .ok_or_else(|| CliError::Config("config has no algorithm with alpha/lambda".into()))?,
    };
    if !alg.name.uses_alpha() {
        return Err(CliError::Config(format!("algorithm '{}' has no alpha/lambda", alg.label())));
    }
    if !request.lambdas.is_empty() && !alg.name.needs_prior() {
        return Err(CliError::Config(format!("algorithm '{}' has no lambda", alg.label())));
    }
    let bad = request.alphas.iter().chain(&request.lambdas).find(|v| !(**v >= 0.0 && v.is_finite()));
    if let Some(v) = bad {
        return Err(CliError::Config(format!("sweep values must be finite and >= 0, got {v}")));
    }
    let n = request.angles.unwrap_or(config.angle_counts[0]);
    if n == 0 || n > config.full_angles {
        return Err(CliError::Config(format!("angle count {n} is outside 1..={}", config.full_angles)));
    }

    let opts = |v: &[f64]| -> Vec<Option<f64>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    };
    let scenario = prepare(config)?;
    let case = AngleCase::new(&scenario, n, true)?;
    let mut rows = Vec::new();
    for alpha in opts(&request.alphas) {
        for lambda in opts(&request.lambdas) {
            let (record, _) = run_single(&scenario, &case, alg, Overrides { alpha, lambda });
            rows.push(SweepRow { record, best: false });
        }
    }
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.record.metrics.map(|m| (i, m.psnr)))
        .fold(None, |acc: Option<(usize, f64)>, (i, p)| match acc {
            Some((_, q)) if q >= p => acc,
            _ => Some((i, p)),
        });
    if let Some((i, _)) = best {
        rows[i].best = true;
    }
    fs::create_dir_all(&config.output_dir)?;
    output::write_sweep_csv(&config.output_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}
