//! Time stepping for the mean-field particle system, the frozen-measure SDE
//! and synchronously coupled pairs, plus drift regularizations.

mod engine;
mod regularize;

pub use regularize::{
    gauss_legendre, mollify_drift, regularization_convergence, yosida_drift, Mollifier,
    Quadrature, RegLevel, RegRow, Regularization, RegularizedDrift,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientModel;
use crate::error::{Error, Result};
use crate::measures::{write_cloud_csv, EmpiricalMeasure};
use crate::rng::PathNoise;
use engine::{Law, Recorder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    /// Drift replaced by `b / (1 + dt |b|)`.
    TamedEuler,
}

fn one_u64() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_particles: usize,
    #[serde(default)]
    pub seed: u64,
    /// `None` picks tamed Euler for superlinear models and Euler otherwise.
    #[serde(default)]
    pub scheme: Option<Scheme>,
    #[serde(default = "one_u64")]
    pub record_every: u64,
    /// Size of the per-step random subsample the drift sees (mean-field runs only).
    #[serde(default)]
    pub interaction_batch: Option<usize>,
}

/// Largest admissible time step.
pub const MAX_DT: f64 = 0.1;

impl SimConfig {
    pub fn new(dt: f64, t_end: f64, n_particles: usize, seed: u64) -> Self {
        Self {
            dt,
            t_end,
            n_particles,
            seed,
            scheme: None,
            record_every: 1,
            interaction_batch: None,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = Some(scheme);
        self
    }

    pub fn with_record_every(mut self, every: u64) -> Self {
        self.record_every = every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.dt > MAX_DT {
            return Err(Error::Parameter(format!("dt must be <= {MAX_DT}, got {}", self.dt)));
        }
        if !(self.t_end > self.dt && self.t_end.is_finite()) {
            return Err(Error::Parameter(format!(
                "t_end must exceed dt, got t_end = {}",
                self.t_end
            )));
        }
        if self.t_end / self.dt >= u64::MAX as f64 {
            return Err(Error::Parameter("t_end / dt overflows the step counter".into()));
        }
        if self.n_particles == 0 {
            return Err(Error::Parameter("n_particles must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Parameter("record_every must be >= 1".into()));
        }
        if self.interaction_batch == Some(0) {
            return Err(Error::Parameter("interaction_batch must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of steps; `t_end / dt` rounded when within 1e-9 of an integer, else rounded up.
    pub fn n_steps(&self) -> u64 {
        let r = self.t_end / self.dt;
        if (r - r.round()).abs() <= 1e-9 * r.max(1.0) {
            r.round() as u64
        } else {
            r.ceil() as u64
        }
    }

    pub fn scheme_for(&self, model: &CoefficientModel) -> Scheme {
        self.scheme.unwrap_or(if model.is_superlinear() {
            Scheme::TamedEuler
        } else {
            Scheme::Euler
        })
    }
}

/// Snapshots of the particle cloud at the recorded times.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub clouds: Vec<EmpiricalMeasure>,
}

impl TrajectoryEnsemble {
    pub fn terminal(&self) -> &EmpiricalMeasure {
        self.clouds.last().expect("ensemble has at least the initial snapshot")
    }

    pub fn into_terminal(mut self) -> EmpiricalMeasure {
        self.clouds.pop().expect("ensemble has at least the initial snapshot")
    }

    /// Second moments `‖cloud‖₂²` along the recorded times.
    pub fn second_moments(&self) -> Vec<f64> {
        self.clouds.iter().map(EmpiricalMeasure::second_moment).collect()
    }

    /// Writes `cloud_00000.csv, ...` and `manifest.json` into `dir`.
    pub fn export(&self, dir: &Path, config: &serde_json::Value, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.clouds.len());
        for (k, cloud) in self.clouds.iter().enumerate() {
            let name = format!("cloud_{k:05}.csv");
            write_cloud_csv(cloud, &dir.join(&name))?;
            files.push(name);
        }
        let manifest = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "times": self.times,
            "files": files,
            "config": config,
        });
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn check_init(model: &CoefficientModel, init: &EmpiricalMeasure, cfg: &SimConfig) -> Result<()> {
    cfg.validate()?;
    if init.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial cloud lives in R^{} but model `{}` in R^{}",
            init.dim(),
            model.name(),
            model.dim()
        )));
    }
    if init.size() != cfg.n_particles {
        return Err(Error::InvalidInput(format!(
            "initial cloud has {} particles, config says {}",
            init.size(),
            cfg.n_particles
        )));
    }
    Ok(())
}

/// N-particle approximation: every particle sees the current empirical cloud.
pub fn simulate_mean_field(
    model: &CoefficientModel,
    init: &EmpiricalMeasure,
    cfg: &SimConfig,
) -> Result<TrajectoryEnsemble> {
    check_init(model, init, cfg)?;
    let streams = engine::particle_streams(&PathNoise::new(cfg.seed, model.noise_dim()), init.size());
    let mut rec = Recorder::new(init.dim());
    engine::run(model, init.points().to_vec(), streams, cfg, Law::MeanField, &mut rec)?;
    Ok(rec.into_ensemble())
}

/// Decoupled dynamics with the measure argument held at `frozen`.
pub fn simulate_frozen(
    model: &CoefficientModel,
    frozen: &EmpiricalMeasure,
    init: &EmpiricalMeasure,
    cfg: &SimConfig,
) -> Result<TrajectoryEnsemble> {
    check_init(model, init, cfg)?;
    if frozen.dim() != model.dim() {
        return Err(Error::Dimension("frozen cloud dimension differs from the model".into()));
    }
    let streams = engine::particle_streams(&PathNoise::new(cfg.seed, model.noise_dim()), init.size());
    let mut rec = Recorder::new(init.dim());
    engine::run(model, init.points().to_vec(), streams, cfg, Law::Frozen(frozen), &mut rec)?;
    Ok(rec.into_ensemble())
}

/// Maps sample times to step indices on the `cfg.dt` grid.
fn sample_steps(cfg: &SimConfig, sample_times: &[f64]) -> Result<Vec<u64>> {
    let n_steps = cfg.n_steps();
    sample_times
        .iter()
        .map(|&t| {
            let r = t / cfg.dt;
            let k = r.round();
            if !(t >= 0.0) || (r - k).abs() > 1e-9 * r.max(1.0) || k as u64 > n_steps {
                return Err(Error::Parameter(format!(
                    "sample time {t} is not a grid point in [0, {}] with dt = {}",
                    cfg.t_end, cfg.dt
                )));
            }
            Ok(k as u64)
        })
        .collect()
}

/// Mean-field run that keeps only the snapshots at `sample_times` (multiples of `dt`).
pub fn simulate_mean_field_sampled(
    model: &CoefficientModel,
    init: &EmpiricalMeasure,
    cfg: &SimConfig,
    sample_times: &[f64],
) -> Result<TrajectoryEnsemble> {
    check_init(model, init, cfg)?;
    let steps = sample_steps(cfg, sample_times)?;
    let cfg = SimConfig {
        record_every: 1,
        ..cfg.clone()
    };
    let streams = engine::particle_streams(&PathNoise::new(cfg.seed, model.noise_dim()), init.size());
    let mut rec = engine::Sampler::new(init.dim(), cfg.dt, steps);
    engine::run(model, init.points().to_vec(), streams, &cfg, Law::MeanField, &mut rec)?;
    Ok(TrajectoryEnsemble {
        times: rec.times,
        clouds: rec.clouds,
    })
}

/// Terminal cloud of the frozen dynamics after exactly `n_steps` steps of size `dt`.
///
/// Unlike [`simulate_frozen`] this accepts a single step.
pub(crate) fn frozen_terminal(
    model: &CoefficientModel,
    frozen: &EmpiricalMeasure,
    init: &EmpiricalMeasure,
    dt: f64,
    n_steps: u64,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if !(dt > 0.0 && dt <= MAX_DT) || n_steps == 0 {
        return Err(Error::Parameter(format!("need 0 < dt <= {MAX_DT} and n_steps >= 1")));
    }
    if frozen.dim() != model.dim() || init.dim() != model.dim() {
        return Err(Error::Dimension("clouds must live in the model's state space".into()));
    }
    let cfg = SimConfig {
        record_every: u64::MAX,
        ..SimConfig::new(dt, dt * n_steps as f64, init.size(), seed)
    };
    let streams = engine::particle_streams(&PathNoise::new(seed, model.noise_dim()), init.size());
    let mut rec = Recorder::new(init.dim());
    engine::run(model, init.points().to_vec(), streams, &cfg, Law::Frozen(frozen), &mut rec)?;
    Ok(rec.into_ensemble().into_terminal())
}

/// Gaps `|X_t − Y_t|` of synchronously coupled paths, one column per path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingGaps {
    pub times: Vec<f64>,
    /// `gaps[k][i]` is the gap of path `i` at `times[k]`.
    pub gaps: Vec<Vec<f64>>,
}

/// Frozen-measure pairs `(X^i, Y^i)` started at `x0[i], y0[i]`, each pair driven
/// by one noise path (path `i` uses particle stream `i`).
pub fn synchronous_coupling(
    model: &CoefficientModel,
    frozen: &EmpiricalMeasure,
    x0: &EmpiricalMeasure,
    y0: &EmpiricalMeasure,
    cfg: &SimConfig,
) -> Result<CouplingGaps> {
    if x0.size() != y0.size() || x0.dim() != y0.dim() {
        return Err(Error::SizeMismatch {
            left: x0.size(),
            right: y0.size(),
        });
    }
    let n = x0.size();
    let cfg = SimConfig {
        n_particles: 2 * n,
        ..cfg.clone()
    };
    let mut both = x0.points().to_vec();
    both.extend_from_slice(y0.points());
    let init = EmpiricalMeasure::new(both, x0.dim())?;
    check_init(model, &init, &cfg)?;
    let mut streams = engine::particle_streams(&PathNoise::new(cfg.seed, model.noise_dim()), n);
    streams.extend(streams.clone());
    let mut rec = engine::GapRecorder::new(x0.dim(), n);
    engine::run(model, init.into_points(), streams, &cfg, Law::Frozen(frozen), &mut rec)?;
    Ok(CouplingGaps {
        times: rec.times,
        gaps: rec.gaps,
    })
}

/// `(t, |X_t − Y_t|)` for one synchronously coupled pair.
pub fn synchronous_pair(
    model: &CoefficientModel,
    frozen: &EmpiricalMeasure,
    x: &[f64],
    y: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<(f64, f64)>> {
    let x0 = EmpiricalMeasure::new(x.to_vec(), x.len())?;
    let y0 = EmpiricalMeasure::new(y.to_vec(), y.len())?;
    let g = synchronous_coupling(model, frozen, &x0, &y0, cfg)?;
    Ok(g.times.into_iter().zip(g.gaps.into_iter().map(|v| v[0])).collect())
}
