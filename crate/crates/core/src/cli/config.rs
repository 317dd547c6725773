//! JSON experiment configurations. Every struct rejects unknown keys.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::coefficients::{BuiltinModel, DissipativityConstants, KineticConstants};
use crate::error::{Error, Result};
use crate::inequalities::LinearSde;
use crate::kinetic::GridSpec;
use crate::measures::{read_cloud_csv, EmpiricalMeasure, GaussianLaw};
use crate::simulator::{Quadrature, SimConfig};

/// Initial or reference cloud.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CloudSpec {
    /// All particles at `point`.
    Dirac { point: Vec<f64> },
    /// I.i.d. `N(mean, cov)`, covariance row-major.
    Gaussian { mean: Vec<f64>, cov: Vec<f64> },
    StandardNormal,
    /// Points from a CSV file (`x0,x1,...` header).
    Csv { path: PathBuf },
}

impl CloudSpec {
    /// Builds a cloud of `n` points in `R^dim`; relative CSV paths resolve against `base`.
    pub fn build(&self, dim: usize, n: usize, seed: u64, base: &Path) -> Result<EmpiricalMeasure> {
        let mu = match self {
            Self::Dirac { point } => EmpiricalMeasure::dirac(point, n)?,
            Self::Gaussian { mean, cov } => {
                EmpiricalMeasure::sample_gaussian(&GaussianLaw::from_slices(mean, cov)?, n, seed)?
            }
            Self::StandardNormal => EmpiricalMeasure::standard_normal(dim, n, seed)?,
            Self::Csv { path } => read_cloud_csv(&base.join(path))?,
        };
        if mu.dim() != dim {
            return Err(Error::Dimension(format!(
                "cloud lives in R^{}, model in R^{dim}",
                mu.dim()
            )));
        }
        Ok(mu)
    }
}

fn default_frozen_size() -> usize {
    1024
}

fn default_cap() -> usize {
    crate::measures::EXACT_CAP
}

fn default_floor_factor() -> f64 {
    2.0
}

fn default_max_iter() -> usize {
    8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    MonotonicityA,
    PartialDissipativityH,
    KineticC,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub model: BuiltinModel,
    pub condition: Condition,
    pub constants: Option<DissipativityConstants>,
    pub kinetic_constants: Option<KineticConstants>,
    #[serde(default)]
    pub ki: f64,
    pub n_pairs: usize,
    pub radius: f64,
    pub tolerance: Option<f64>,
    pub cloud_size: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: BuiltinModel,
    pub sim: SimConfig,
    pub init: CloudSpec,
    /// Freeze the measure argument at the initial cloud.
    #[serde(default)]
    pub frozen: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: BuiltinModel,
    pub sim: SimConfig,
    pub mu: CloudSpec,
    pub burn_in: Option<f64>,
    pub constants: Option<DissipativityConstants>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: BuiltinModel,
    pub sim: SimConfig,
    pub mu0: CloudSpec,
    pub burn_in: Option<f64>,
    /// Gap tolerance; defaults to `floor_factor` times the Monte Carlo floor.
    pub tol: Option<f64>,
    #[serde(default = "default_floor_factor")]
    pub floor_factor: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Second measure for the contraction estimate against `mu0`.
    pub contraction_partner: Option<CloudSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct W2DecayConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: BuiltinModel,
    pub sim: SimConfig,
    pub mu0: CloudSpec,
    pub reference: CloudSpec,
    pub sample_times: Vec<f64>,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

/// Linear SDE for the entropy experiment.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearSpec {
    Ou { theta: f64, sigma: f64, dim: usize },
    KineticHarmonic { d: usize, k: f64, sigma: f64 },
    /// Row-major `A` (`dim × dim`) and `S` (`dim × noise_dim`).
    Matrix { dim: usize, noise_dim: usize, a: Vec<f64>, s: Vec<f64> },
}

impl LinearSpec {
    pub fn build(&self) -> Result<LinearSde> {
        match *self {
            Self::Ou { theta, sigma, dim } => Ok(LinearSde::ou(theta, sigma, dim)),
            Self::KineticHarmonic { d, k, sigma } => Ok(LinearSde::kinetic_harmonic(d, k, sigma)),
            Self::Matrix {
                dim,
                noise_dim,
                ref a,
                ref s,
            } => {
                if a.len() != dim * dim || s.len() != dim * noise_dim {
                    return Err(Error::Dimension("matrix sizes disagree with dim/noise_dim".into()));
                }
                LinearSde::new(
                    DMatrix::from_row_slice(dim, dim, a),
                    DMatrix::from_row_slice(dim, noise_dim, s),
                )
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<f64>,
}

impl GaussianSpec {
    pub fn build(&self) -> Result<GaussianLaw> {
        let d = self.mean.len();
        if self.cov.len() != d * d {
            return Err(Error::Dimension("covariance must have d*d entries".into()));
        }
        GaussianLaw::new(
            DVector::from_column_slice(&self.mean),
            DMatrix::from_row_slice(d, d, &self.cov),
        )
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyDecayConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub linear: LinearSpec,
    pub mu0: GaussianSpec,
    /// Defaults to the stationary law of `linear`.
    pub invariant: Option<GaussianSpec>,
    pub sample_times: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsiGapConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub model: BuiltinModel,
    pub frozen: CloudSpec,
    #[serde(default = "default_frozen_size")]
    pub frozen_size: usize,
    pub constants: DissipativityConstants,
    pub x: Vec<f64>,
    pub times: Vec<f64>,
    pub n_mc: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub model: BuiltinModel,
    pub frozen: CloudSpec,
    #[serde(default = "default_frozen_size")]
    pub frozen_size: usize,
    pub constants: DissipativityConstants,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t0: f64,
    /// Defaults to `p₀`.
    pub p: Option<f64>,
    pub delta_stop: f64,
    pub dt: f64,
    pub n_paths: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: BuiltinModel,
    pub sim: SimConfig,
    pub init: CloudSpec,
    pub grid: GridSpec,
    pub kinetic_constants: Option<KineticConstants>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifierKind {
    Uniform,
    Bump,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierSweep {
    pub kind: MollifierKind,
    pub m: Vec<usize>,
    #[serde(default)]
    pub quadrature: Quadrature,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    pub experiment: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: BuiltinModel,
    pub sim: SimConfig,
    pub init: CloudSpec,
    #[serde(default)]
    pub yosida: Vec<usize>,
    /// One-sided constant `K` of the drift, used by the Yosida map.
    #[serde(default)]
    pub yosida_k: f64,
    pub mollifier: Option<MollifierSweep>,
}
