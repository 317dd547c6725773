//! Synchronous particle stepping shared by all simulators.
//!
//! Each step reads the previous snapshot only, so particles can be updated in
//! any order (or in parallel) with identical results.

use nalgebra::DMatrix;

use super::{Scheme, SimConfig, TrajectoryEnsemble};
use crate::coefficients::{CoefficientModel, MeasureView, ModelKind};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::numeric::norm_sq;
use crate::rng::{domain, PathNoise, Stream};

pub(crate) enum Law<'a> {
    MeanField,
    Frozen(&'a EmpiricalMeasure),
}

pub(crate) fn particle_streams(noise: &PathNoise, n: usize) -> Vec<Stream> {
    (0..n).map(|i| noise.particle(i)).collect()
}

/// Receives the state at every recorded step.
pub(crate) trait Observer {
    fn record(&mut self, t: f64, state: &[f64]);
}

pub(crate) struct Recorder {
    dim: usize,
    times: Vec<f64>,
    clouds: Vec<EmpiricalMeasure>,
}

impl Recorder {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            dim,
            times: Vec::new(),
            clouds: Vec::new(),
        }
    }

    pub(crate) fn into_ensemble(self) -> TrajectoryEnsemble {
        TrajectoryEnsemble {
            times: self.times,
            clouds: self.clouds,
        }
    }
}

impl Observer for Recorder {
    fn record(&mut self, t: f64, state: &[f64]) {
        self.times.push(t);
        self.clouds
            .push(EmpiricalMeasure::from_trusted(state.to_vec(), self.dim));
    }
}

/// Keeps only the snapshots taken at the given step indices.
pub(crate) struct Sampler {
    dim: usize,
    dt: f64,
    steps: Vec<u64>,
    pub(crate) times: Vec<f64>,
    pub(crate) clouds: Vec<EmpiricalMeasure>,
}

impl Sampler {
    pub(crate) fn new(dim: usize, dt: f64, steps: Vec<u64>) -> Self {
        Self {
            dim,
            dt,
            steps,
            times: Vec::new(),
            clouds: Vec::new(),
        }
    }
}

impl Observer for Sampler {
    fn record(&mut self, t: f64, state: &[f64]) {
        let step = (t / self.dt).round() as u64;
        for _ in self.steps.iter().filter(|&&s| s == step) {
            self.times.push(t);
            self.clouds
                .push(EmpiricalMeasure::from_trusted(state.to_vec(), self.dim));
        }
    }
}

/// Records `|X^i − Y^i|` for a state laid out as `[X^0..X^{n-1}, Y^0..Y^{n-1}]`.
pub(crate) struct GapRecorder {
    dim: usize,
    n: usize,
    pub(crate) times: Vec<f64>,
    pub(crate) gaps: Vec<Vec<f64>>,
}

impl GapRecorder {
    pub(crate) fn new(dim: usize, n: usize) -> Self {
        Self {
            dim,
            n,
            times: Vec::new(),
            gaps: Vec::new(),
        }
    }
}

impl Observer for GapRecorder {
    fn record(&mut self, t: f64, state: &[f64]) {
        let (xs, ys) = state.split_at(self.n * self.dim);
        let gaps = xs
            .chunks_exact(self.dim)
            .zip(ys.chunks_exact(self.dim))
            .map(|(x, y)| crate::numeric::dist_sq(x, y).sqrt())
            .collect();
        self.times.push(t);
        self.gaps.push(gaps);
    }
}

/// Per-worker scratch space.
struct Scratch {
    b: Vec<f64>,
    z: Vec<f64>,
    dw: Vec<f64>,
}

struct StepCtx<'a> {
    model: &'a CoefficientModel,
    view: &'a MeasureView<'a>,
    sigma: &'a DMatrix<f64>,
    t: f64,
    dt: f64,
    sqrt_dt: f64,
    tamed: bool,
}

impl StepCtx<'_> {
    fn scratch(&self) -> Scratch {
        Scratch {
            b: vec![0.0; self.model.drift_dim()],
            z: vec![0.0; self.model.noise_dim()],
            dw: vec![0.0; self.model.noise_dim()],
        }
    }

    /// Advances one particle in place; returns false if it became non-finite.
    fn advance(&self, x: &mut [f64], stream: &mut Stream, s: &mut Scratch) -> bool {
        stream.fill_normals(&mut s.z);
        for (w, z) in s.dw.iter_mut().zip(&s.z) {
            *w = self.sqrt_dt * z;
        }
        self.model.drift_into(self.t, x, self.view, &mut s.b);
        if self.tamed {
            let scale = 1.0 / (1.0 + self.dt * norm_sq(&s.b).sqrt());
            s.b.iter_mut().for_each(|v| *v *= scale);
        }
        let driven = match self.model.kind() {
            ModelKind::Generic => &mut *x,
            ModelKind::Kinetic => {
                let d = self.model.drift_dim();
                let (pos, vel) = x.split_at_mut(d);
                for (p, v) in pos.iter_mut().zip(vel.iter()) {
                    *p += *v * self.dt;
                }
                vel
            }
        };
        for (r, xi) in driven.iter_mut().enumerate() {
            let mut noise = 0.0;
            for (c, w) in s.dw.iter().enumerate() {
                noise += self.sigma[(r, c)] * w;
            }
            *xi += s.b[r] * self.dt;
            *xi += noise;
        }
        x.iter().all(|v| v.is_finite())
    }
}

/// Index of the first particle that became non-finite, if any.
fn sweep(ctx: &StepCtx<'_>, state: &mut [f64], streams: &mut [Stream], dim: usize) -> Option<usize> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        state
            .par_chunks_mut(dim)
            .zip(streams.par_iter_mut())
            .enumerate()
            .map_init(
                || ctx.scratch(),
                |s, (i, (x, st))| if ctx.advance(x, st, s) { None } else { Some(i) },
            )
            .flatten()
            .min()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = ctx.scratch();
        let mut bad = None;
        for (i, (x, st)) in state.chunks_mut(dim).zip(streams.iter_mut()).enumerate() {
            if !ctx.advance(x, st, &mut s) && bad.is_none() {
                bad = Some(i);
            }
        }
        bad
    }
}

fn batch_seed(seed: u64, step: u64) -> u64 {
    seed ^ domain::INTERACTION_BATCH.rotate_left(40) ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs `cfg.n_steps()` steps from `state`, reporting recorded snapshots to `obs`.
pub(crate) fn run(
    model: &CoefficientModel,
    mut state: Vec<f64>,
    mut streams: Vec<Stream>,
    cfg: &SimConfig,
    law: Law<'_>,
    obs: &mut impl Observer,
) -> Result<()> {
    let dim = model.dim();
    debug_assert_eq!(state.len(), streams.len() * dim);
    let n_steps = cfg.n_steps();
    let tamed = cfg.scheme_for(model) == Scheme::TamedEuler;
    let frozen_view = match law {
        Law::Frozen(mu) => Some(MeasureView::new(mu)),
        Law::MeanField => None,
    };
    obs.record(0.0, &state);
    for step in 0..n_steps {
        let t = step as f64 * cfg.dt;
        let snapshot;
        let batch;
        let live_view;
        let view = match &frozen_view {
            Some(v) => v,
            None => {
                snapshot = EmpiricalMeasure::from_trusted(state.clone(), dim);
                let cloud = match cfg.interaction_batch {
                    Some(b) if b < snapshot.size() => {
                        batch = snapshot.subsample(b, batch_seed(cfg.seed, step));
                        &batch
                    }
                    _ => &snapshot,
                };
                live_view = MeasureView::new(cloud);
                &live_view
            }
        };
        let sigma = model.diffusion_block(t, view);
        if sigma.nrows() != model.drift_dim() || sigma.ncols() != model.noise_dim() {
            return Err(Error::Dimension(format!(
                "diffusion of `{}` is {}x{}, expected {}x{}",
                model.name(),
                sigma.nrows(),
                sigma.ncols(),
                model.drift_dim(),
                model.noise_dim()
            )));
        }
        let ctx = StepCtx {
            model,
            view,
            sigma: &sigma,
            t,
            dt: cfg.dt,
            sqrt_dt: cfg.dt.sqrt(),
            tamed,
        };
        if let Some(particle) = sweep(&ctx, &mut state, &mut streams, dim) {
            return Err(Error::Explosion {
                step: step + 1,
                particle,
            });
        }
        let done = step + 1;
        if done % cfg.record_every == 0 || done == n_steps {
            obs.record(done as f64 * cfg.dt, &state);
        }
    }
    Ok(())
}
