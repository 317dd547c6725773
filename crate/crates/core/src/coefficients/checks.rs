//! Sampling-based falsifiers: a report is "satisfied" when none of the
//! sampled pairs violates the inequality beyond the tolerance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::{CoefficientModel, DissipativityConstants, KineticConstants, MeasureView, ModelKind};
use crate::error::{Error, Result};
use crate::measures::{w2_exact, EmpiricalMeasure};
use crate::numeric::{dist_sq, dot, norm_sq};
use crate::rng::{domain, Stream};

/// Largest test cloud used for the measure arguments.
const MAX_CLOUD: usize = 32;
/// Tolerance of the eigenvalue bounds on `σσ*`.
const EIGEN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub n_pairs: usize,
    pub radius: f64,
    pub seed: u64,
    pub tolerance: f64,
    /// Largest size of the sampled clouds `γ, γ̃` (at most 32).
    pub cloud_size: usize,
}

impl CheckOptions {
    pub fn new(n_pairs: usize, radius: f64, seed: u64) -> Self {
        Self {
            n_pairs,
            radius,
            seed,
            tolerance: 1e-9,
            cloud_size: 8,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::InvalidInput("n_pairs must be >= 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be > 0, got {}", self.radius)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidInput("tolerance must be >= 0".into()));
        }
        if self.cloud_size == 0 || self.cloud_size > MAX_CLOUD {
            return Err(Error::InvalidInput(format!(
                "cloud_size must be in 1..={MAX_CLOUD}"
            )));
        }
        Ok(())
    }
}

/// The sample achieving the worst violation.
#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub sample: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// Which inequality the witness violates.
    pub part: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub satisfied: bool,
    /// Max over samples of `LHS − RHS`.
    pub worst_violation: f64,
    pub n_samples: usize,
    pub tolerance: f64,
    pub witness: Option<Witness>,
}

struct Tracker {
    worst: f64,
    witness: Option<Witness>,
}

impl Tracker {
    fn new() -> Self {
        Self {
            worst: f64::NEG_INFINITY,
            witness: None,
        }
    }

    fn offer(&mut self, s: &Sample, lhs: f64, rhs: f64, part: &'static str) {
        let v = lhs - rhs;
        if v > self.worst {
            self.worst = v;
            self.witness = Some(Witness {
                sample: s.index,
                x: s.x.clone(),
                y: s.y.clone(),
                gamma: s.gamma.points().to_vec(),
                gamma_tilde: s.gamma_tilde.points().to_vec(),
                lhs,
                rhs,
                part,
            });
        }
    }

    fn finish(self, n_samples: usize, tolerance: f64) -> ConditionReport {
        ConditionReport {
            satisfied: self.worst <= tolerance,
            worst_violation: self.worst,
            n_samples,
            tolerance,
            witness: self.witness,
        }
    }
}

struct Sample {
    index: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    gamma: EmpiricalMeasure,
    gamma_tilde: EmpiricalMeasure,
}

fn ball_point(s: &mut Stream, dim: usize, radius: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    loop {
        s.fill_normals(&mut v);
        let n = norm_sq(&v).sqrt();
        if n > 1e-12 {
            let scale = radius * s.uniform().powf(1.0 / dim as f64) / n;
            v.iter_mut().for_each(|c| *c *= scale);
            return v;
        }
    }
}

fn unit_vector(s: &mut Stream, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    loop {
        s.fill_normals(&mut v);
        let n = norm_sq(&v).sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|c| *c /= n);
            return v;
        }
    }
}

fn clamp_to_ball(v: &mut [f64], radius: f64) {
    let n = norm_sq(v).sqrt();
    if n > radius {
        v.iter_mut().for_each(|c| *c *= radius / n);
    }
}

/// Draws sample `index`. Three pair regimes cycle: independent points in the
/// ball, close pairs, and pairs straddling the distance `shell`.
fn draw(index: usize, dim: usize, opts: &CheckOptions, shell: f64) -> Sample {
    let mut s = Stream::new(opts.seed, domain::CHECK_SAMPLES, index as u64);
    let x = ball_point(&mut s, dim, opts.radius);
    let y = match index % 3 {
        0 => ball_point(&mut s, dim, opts.radius),
        regime => {
            let u = unit_vector(&mut s, dim);
            let len = if regime == 1 {
                shell.max(0.5) * 2.0 * s.uniform()
            } else {
                shell * (1.0 + 0.2 * (s.uniform() - 0.5))
            };
            let mut y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + len * b).collect();
            clamp_to_ball(&mut y, opts.radius);
            y
        }
    };
    let k = 1 + s.index(opts.cloud_size);
    let spread = opts.radius / 4.0;
    let cloud = |s: &mut Stream| {
        let mut pts = vec![0.0; k * dim];
        s.fill_normals(&mut pts);
        pts.iter_mut().for_each(|c| *c *= spread);
        EmpiricalMeasure::from_trusted(pts, dim)
    };
    let gamma = cloud(&mut s);
    let gamma_tilde = if s.uniform() < 0.5 {
        gamma.clone()
    } else {
        cloud(&mut s)
    };
    Sample {
        index,
        x,
        y,
        gamma,
        gamma_tilde,
    }
}

fn finite_or_err(index: usize, what: &str, vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            sample: index,
            detail: format!("{what} returned a non-finite value"),
        })
    }
}

struct Evaluated {
    bx: Vec<f64>,
    by: Vec<f64>,
    sx: DMatrix<f64>,
    sy: DMatrix<f64>,
    w2_sq: f64,
}

fn evaluate(model: &CoefficientModel, s: &Sample) -> Result<Evaluated> {
    let vg = MeasureView::new(&s.gamma);
    let vt = MeasureView::new(&s.gamma_tilde);
    let mut bx = vec![0.0; model.drift_dim()];
    let mut by = vec![0.0; model.drift_dim()];
    model.drift_into(0.0, &s.x, &vg, &mut bx);
    model.drift_into(0.0, &s.y, &vt, &mut by);
    finite_or_err(s.index, "drift", &bx)?;
    finite_or_err(s.index, "drift", &by)?;
    let sx = model.diffusion_block(0.0, &vg);
    let sy = model.diffusion_block(0.0, &vt);
    finite_or_err(s.index, "diffusion", sx.as_slice())?;
    finite_or_err(s.index, "diffusion", sy.as_slice())?;
    let w2 = if std::ptr::eq(&s.gamma, &s.gamma_tilde) || s.gamma == s.gamma_tilde {
        0.0
    } else {
        w2_exact(&s.gamma, &s.gamma_tilde)?
    };
    Ok(Evaluated {
        bx,
        by,
        sx,
        sy,
        w2_sq: w2 * w2,
    })
}

/// `2⟨b(x,γ) − b(y,γ̃), x − y⟩ + ‖σ(γ) − σ(γ̃)‖²_HS`.
fn monotone_lhs(s: &Sample, e: &Evaluated) -> f64 {
    let db: Vec<f64> = e.bx.iter().zip(&e.by).map(|(a, b)| a - b).collect();
    let dx: Vec<f64> = s.x.iter().zip(&s.y).map(|(a, b)| a - b).collect();
    2.0 * dot(&db, &dx) + (&e.sx - &e.sy).norm_squared()
}

fn require_generic(model: &CoefficientModel) -> Result<()> {
    if model.kind() != ModelKind::Generic {
        return Err(Error::InvalidInput(
            "this condition applies to generic (non-kinetic) models".into(),
        ));
    }
    Ok(())
}

/// Tests the global monotonicity condition on sampled `(x, y, γ, γ̃)`.
pub fn check_monotonicity_a(
    model: &CoefficientModel,
    c: &DissipativityConstants,
    opts: &CheckOptions,
) -> Result<ConditionReport> {
    opts.validate()?;
    require_generic(model)?;
    let mut t = Tracker::new();
    for i in 0..opts.n_pairs {
        let s = draw(i, model.dim(), opts, c.r0.max(1.0));
        let e = evaluate(model, &s)?;
        let lhs = monotone_lhs(&s, &e);
        let rhs = c.k1 * dist_sq(&s.x, &s.y) + c.ki * e.w2_sq;
        t.offer(&s, lhs, rhs, "monotonicity");
    }
    Ok(t.finish(opts.n_pairs, opts.tolerance))
}

/// Tests the partially dissipative condition (split at `r0`) together with
/// `δ₂ I ≤ σσ* ≤ δ₁ I` at every sampled measure.
pub fn check_partial_dissipativity_h(
    model: &CoefficientModel,
    c: &DissipativityConstants,
    opts: &CheckOptions,
) -> Result<ConditionReport> {
    opts.validate()?;
    require_generic(model)?;
    let d = model.dim();
    let mut t = Tracker::new();
    for i in 0..opts.n_pairs {
        let s = draw(i, d, opts, if c.r0 > 0.0 { c.r0 } else { 1.0 });
        let e = evaluate(model, &s)?;
        if e.sx.nrows() != d {
            return Err(Error::Dimension(format!(
                "diffusion has {} rows, state dimension is {d}",
                e.sx.nrows()
            )));
        }
        let lhs = monotone_lhs(&s, &e);
        let gap2 = dist_sq(&s.x, &s.y);
        let spatial = if gap2.sqrt() <= c.r0 {
            c.k1 * gap2
        } else {
            -c.k2 * gap2
        };
        t.offer(&s, lhs, spatial + c.ki * e.w2_sq, "partial dissipativity");
        for sigma in [&e.sx, &e.sy] {
            let eig = SymmetricEigen::new(sigma * sigma.transpose()).eigenvalues;
            let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // ellipticity tolerance is fixed by the eigen solver accuracy
            t.offer(&s, c.delta2 - lo - EIGEN_TOL, 0.0, "lower ellipticity");
            t.offer(&s, hi - c.delta1 - EIGEN_TOL, 0.0, "upper ellipticity");
        }
    }
    Ok(t.finish(opts.n_pairs, opts.tolerance))
}

/// Tests the kinetic Lipschitz bound and, for pairs at distance `≥ R`, the
/// dissipativity inequality for the velocity drift.
pub fn check_kinetic_c(
    model: &CoefficientModel,
    kc: &KineticConstants,
    ki: f64,
    opts: &CheckOptions,
) -> Result<ConditionReport> {
    opts.validate()?;
    kc.validate()?;
    if model.kind() != ModelKind::Kinetic {
        return Err(Error::InvalidInput("check_kinetic_c needs a kinetic model".into()));
    }
    if !(ki >= 0.0 && ki.is_finite()) {
        return Err(Error::Parameter("ki must be >= 0".into()));
    }
    let d = model.drift_dim();
    let mut t = Tracker::new();
    for i in 0..opts.n_pairs {
        let s = draw(i, 2 * d, opts, kc.big_r.max(1.0));
        let e = evaluate(model, &s)?;
        let db: Vec<f64> = e.bx.iter().zip(&e.by).map(|(a, b)| a - b).collect();
        let lhs = norm_sq(&db).sqrt() + (&e.sx - &e.sy).norm();
        let rhs = kc.km * dist_sq(&s.x, &s.y).sqrt() + ki * e.w2_sq.sqrt();
        t.offer(&s, lhs, rhs, "lipschitz");

        let gap2 = dist_sq(&s.x, &s.y);
        if gap2 >= kc.big_r * kc.big_r {
            let (lhs, rhs) = patdi_sides(model, kc, &s.x, &s.y, &s.gamma);
            t.offer(&s, lhs, rhs, "dissipativity");
        }
    }
    Ok(t.finish(opts.n_pairs, opts.tolerance))
}

/// Both sides of the kinetic dissipativity inequality at `z = (x, y)`,
/// `z̄ = (x̄, ȳ)` with the common measure `mu`.
pub(crate) fn patdi_sides(
    model: &CoefficientModel,
    kc: &KineticConstants,
    z: &[f64],
    zbar: &[f64],
    mu: &EmpiricalMeasure,
) -> (f64, f64) {
    let d = model.drift_dim();
    let view = MeasureView::new(mu);
    let mut b = vec![0.0; d];
    let mut bb = vec![0.0; d];
    model.drift_into(0.0, z, &view, &mut b);
    model.drift_into(0.0, zbar, &view, &mut bb);
    let (r, rr0) = (kc.r, kc.r * kc.r0);
    let mut lhs = 0.0;
    for k in 0..d {
        let dx = z[k] - zbar[k];
        let dy = z[d + k] - zbar[d + k];
        lhs += (r * r * dx + rr0 * dy) * dy + (dy + rr0 * dx) * (b[k] - bb[k]);
    }
    (lhs, -kc.theta * dist_sq(z, zbar))
}
