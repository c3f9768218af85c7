//! TOML experiment configuration.
//!
//! A config describes one phantom, one circular geometry, a dense full scan
//! that is subsampled to each entry of `angle_counts`, an optional prior
//! image and the list of algorithms to run. `configs/head_replica.toml` is
//! the annotated reference example.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use cbct_core::krylov::KrylovConfig;
use cbct_core::phantoms::{NoiseModel, PhantomSpec};
use cbct_core::recon::{AsdPocsConfig, FilterKind};
use cbct_core::Detector;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for the measurement noise of the subsampled scans.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub phantom: PhantomConfig,
    pub geometry: GeometryConfig,
    /// Views in the simulated full circle.
    pub full_angles: usize,
    /// Views kept for each reconstruction, uniformly subsampled.
    pub angle_counts: Vec<usize>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub prior: PriorConfig,
    /// PSNR/SSIM range; the ground-truth range when absent.
    #[serde(default)]
    pub data_range: Option<f64>,
    pub algorithms: Vec<AlgorithmConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Either a named replica or a full phantom description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhantomConfig {
    Preset { preset: Preset, size: usize },
    Spec(PhantomSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    HeadReplica,
    NeedleReplica,
}

impl PhantomConfig {
    pub fn spec(&self) -> PhantomSpec {
        match *self {
            Self::Preset { preset: Preset::HeadReplica, size } => PhantomSpec::head_replica(size),
            Self::Preset { preset: Preset::NeedleReplica, size } => PhantomSpec::needle_replica(size),
            Self::Spec(ref s) => s.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub dso: f64,
    pub dsd: f64,
    /// Fitted to cover the volume when absent.
    #[serde(default)]
    pub detector: Option<Detector>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource {
    /// FDK of a dense scan of the phantom with its inserts removed.
    CleanScan,
    /// The insert-free phantom itself.
    Phantom,
    File,
    #[default]
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub source: PriorSource,
    /// Volume file for `source = "file"`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Views of the prior scan; `full_angles` when absent.
    #[serde(default)]
    pub angles: Option<usize>,
    /// Noise of the prior scan; the experiment noise when absent.
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default = "default_prior_seed")]
    pub noise_seed: u64,
    #[serde(default)]
    pub filter: FilterKind,
}

fn default_prior_seed() -> u64 {
    1000
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            source: PriorSource::None,
            path: None,
            angles: None,
            noise: None,
            noise_seed: default_prior_seed(),
            filter: FilterKind::RamLak,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    Fdk,
    Cgls,
    Sirt,
    IrnTv,
    IrnPiple,
    IrnPiccs,
    AsdPocs,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fdk => "fdk",
            Self::Cgls => "cgls",
            Self::Sirt => "sirt",
            Self::IrnTv => "irn-tv",
            Self::IrnPiple => "irn-piple",
            Self::IrnPiccs => "irn-piccs",
            Self::AsdPocs => "asd-pocs",
        }
    }

    pub fn uses_alpha(self) -> bool {
        matches!(self, Self::IrnTv | Self::IrnPiple | Self::IrnPiccs)
    }

    pub fn needs_prior(self) -> bool {
        matches!(self, Self::IrnPiple | Self::IrnPiccs)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Initial iterate of an iterative method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartPoint {
    #[default]
    Zero,
    Prior,
    Fdk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: AlgorithmKind,
    /// Output directory and CSV name; defaults to `name`.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub filter: FilterKind,
    /// Budget for CGLS and SIRT.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Fixed TV weight. When absent, alpha is chosen so that the TV term is
    /// `alpha_share` of the data misfit at the FDK reconstruction.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_alpha_share")]
    pub alpha_share: f64,
    /// Fixed prior weight; `lambda_scale * alpha` when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_lambda_scale")]
    pub lambda_scale: f64,
    /// Smoothing parameter; derived from the FDK dynamic range when absent.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_outer")]
    pub outer_iters: usize,
    #[serde(default = "default_inner")]
    pub inner_iters: usize,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub start: StartPoint,
    #[serde(default)]
    pub asd_pocs: AsdPocsConfig,
    /// Restricts the run to these entries of `angle_counts`.
    #[serde(default)]
    pub angles: Option<Vec<usize>>,
}

fn default_iterations() -> usize {
    100
}
fn default_alpha_share() -> f64 {
    0.1
}
fn default_lambda_scale() -> f64 {
    1.0
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

impl AlgorithmConfig {
    pub fn new(name: AlgorithmKind) -> Self {
        Self {
            name,
            label: None,
            filter: FilterKind::RamLak,
            iterations: default_iterations(),
            alpha: None,
            alpha_share: default_alpha_share(),
            lambda: None,
            lambda_scale: default_lambda_scale(),
            tau: None,
            outer_iters: default_outer(),
            inner_iters: default_inner(),
            warm_start: true,
            start: StartPoint::Zero,
            asd_pocs: AsdPocsConfig::default(),
            angles: None,
        }
    }

    pub fn runs_at(&self, n: usize) -> bool {
        self.angles.as_ref().is_none_or(|a| a.contains(&n))
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.name.name())
    }

    /// Whether resolving parameters needs an FDK reference reconstruction.
    pub fn needs_fdk_reference(&self) -> bool {
        self.start == StartPoint::Fdk
            || (self.name.uses_alpha() && (self.alpha.is_none() || self.tau.is_none()))
    }

    fn uses_prior(&self) -> bool {
        self.name.needs_prior() || self.start == StartPoint::Prior
    }

    fn validate(&self) -> Result<(), String> {
        let label = self.label();
        let ctx = |msg: String| format!("algorithm '{label}': {msg}");
        if label.is_empty() || label.contains(['/', '\\', ',']) || label.starts_with('.') {
            return Err(ctx("label must be a plain directory name".into()));
        }
        let nonneg = |name: &str, v: Option<f64>| match v {
            Some(v) if !(v >= 0.0 && v.is_finite()) => {
                Err(ctx(format!("{name} must be finite and >= 0, got {v}")))
            }
            _ => Ok(()),
        };
        nonneg("alpha", self.alpha)?;
        nonneg("lambda", self.lambda)?;
        nonneg("alpha_share", Some(self.alpha_share))?;
        nonneg("lambda_scale", Some(self.lambda_scale))?;
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ctx(format!("tau must be finite and > 0, got {t}")));
            }
        }
        match self.name {
            AlgorithmKind::Cgls | AlgorithmKind::Sirt => KrylovConfig::with_iters(self.iterations)
                .validate()
                .map_err(|e| ctx(e.to_string())),
            AlgorithmKind::AsdPocs => self.asd_pocs.validate().map_err(|e| ctx(e.to_string())),
            AlgorithmKind::IrnTv | AlgorithmKind::IrnPiple | AlgorithmKind::IrnPiccs => {
                if self.outer_iters == 0 || self.inner_iters == 0 {
                    Err(ctx("outer_iters and inner_iters must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
            AlgorithmKind::Fdk => Ok(()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.check().map_err(CliError::Config)
    }

    fn check(&self) -> Result<(), String> {
        let spec = self.phantom.spec();
        spec.grid().map_err(|e| e.to_string())?;
        if !(self.geometry.dso > 0.0 && self.geometry.dsd > self.geometry.dso) {
            return Err(format!(
                "geometry needs 0 < dso < dsd, got dso={} dsd={}",
                self.geometry.dso, self.geometry.dsd
            ));
        }
        if self.full_angles == 0 {
            return Err("full_angles must be >= 1".into());
        }
        if self.angle_counts.is_empty() {
            return Err("angle_counts must not be empty".into());
        }
        if let Some(&n) = self.angle_counts.iter().find(|&&n| n == 0 || n > self.full_angles) {
            return Err(format!("angle count {n} is outside 1..={}", self.full_angles));
        }
        if let Some(r) = self.data_range {
            if !(r > 0.0 && r.is_finite()) {
                return Err(format!("data_range must be > 0, got {r}"));
            }
        }
        if let NoiseModel::Gaussian { sigma_rel } = self.noise {
            if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
                return Err(format!("noise sigma_rel must be >= 0, got {sigma_rel}"));
            }
        }
        if self.algorithms.is_empty() {
            return Err("at least one algorithm is required".into());
        }
        let mut labels = HashSet::new();
        for alg in &self.algorithms {
            alg.validate()?;
            if !labels.insert(alg.label()) {
                return Err(format!("duplicate algorithm label '{}'", alg.label()));
            }
            if alg.uses_prior() && self.prior.source == PriorSource::None {
                return Err(format!("algorithm '{}' needs a prior source", alg.label()));
            }
            if let Some(&n) = alg
                .angles
                .iter()
                .flatten()
                .find(|n| !self.angle_counts.contains(n))
            {
                return Err(format!("algorithm '{}' lists angle count {n} not in angle_counts", alg.label()));
            }
            let min_angles = self
                .angle_counts
                .iter()
                .copied()
                .filter(|&n| alg.runs_at(n))
                .min()
                .unwrap_or(usize::MAX);
            if (alg.name == AlgorithmKind::Fdk || alg.needs_fdk_reference()) && min_angles < 2 {
                return Err(format!(
                    "algorithm '{}' needs an FDK reconstruction, which needs >= 2 angles",
                    alg.label()
                ));
            }
        }
        match self.prior.source {
            PriorSource::File if self.prior.path.is_none() => {
                return Err("prior source 'file' needs a path".into());
            }
            PriorSource::CleanScan => {
                let n = self.prior.angles.unwrap_or(self.full_angles);
                if n < 2 {
                    return Err("clean-scan prior needs >= 2 angles".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The config entry with `label`.
    pub fn algorithm(&self, label: &str) -> Option<&AlgorithmConfig> {
        self.algorithms.iter().find(|a| a.label() == label)
    }
}
