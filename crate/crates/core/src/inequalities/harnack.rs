use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::coefficients::{CoefficientModel, DissipativityConstants, MeasureView, ModelKind};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::numeric::{dist_sq, mean_and_stderr, NeumaierSum};
use crate::rng::{domain, Stream};
use crate::simulator::{Scheme, SimConfig};

/// Cap on `|η_t|`; larger values are clipped and the path is counted.
pub const ETA_CLIP: f64 = 1e6;

const ELLIPTICITY_TOL: f64 = 1e-9;

/// Exponents above this are treated as overflow and the path is excluded.
const MAX_EXPONENT: f64 = 700.0;

/// Starting points, horizon and exponent of one Harnack coupling run.
#[derive(Clone, Debug, PartialEq)]
pub struct HarnackParams {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t0: f64,
    pub p: f64,
    /// The run stops at `t0 − delta_stop`.
    pub delta_stop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingResult {
    /// `(t, mean over paths of |X_t − Y_t|)`.
    pub gap_series: Vec<(f64, f64)>,
    pub terminal_gap: f64,
    /// Monte Carlo mean of `R^{p/(p−1)}` under the original measure.
    pub r_moment_estimate: f64,
    pub r_moment_stderr: f64,
    pub r_moment_bound: f64,
    pub p_used: f64,
    pub p0: f64,
    pub n_paths: usize,
    /// Paths where `|η|` hit the clip at least once.
    pub clipped_paths: usize,
    /// Paths whose Girsanov exponent overflowed; left out of the estimate.
    pub excluded_paths: usize,
    pub steps: usize,
}

/// `p₀` with `(p₀ − 1)⁻¹ = ½ ∧ δ₂ / (256 δ₁)`.
pub fn harnack_p0(c: &DissipativityConstants) -> f64 {
    1.0 + 1.0 / (0.5f64).min(c.delta2 / (256.0 * c.delta1))
}

/// `exp(K₂|x−y|² / (64 δ₁ (e^{K₂t₀} − 1)) + (K₁+K₂)² r₀² t₀ / (128 δ₁))`.
pub fn harnack_r_moment_bound(c: &DissipativityConstants, gap_sq: f64, t0: f64) -> f64 {
    let spread = gap_sq / super::expm1_over(c.k2, t0);
    (spread / (64.0 * c.delta1) + (c.k1 + c.k2).powi(2) * c.r0 * c.r0 * t0 / (128.0 * c.delta1)).exp()
}

/// `ξ_t = (e^{−K₂(t−t₀)} − 1) / K₂`.
fn xi(k2: f64, t: f64, t0: f64) -> f64 {
    super::expm1_over(k2, t0 - t)
}

/// `σ̂ = σᵀ(σσᵀ)⁻¹`, after checking `δ₂ I ≤ σσᵀ ≤ δ₁ I`.
fn sigma_hat(sigma: &DMatrix<f64>, c: &DissipativityConstants) -> Result<DMatrix<f64>> {
    let a = sigma * sigma.transpose();
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = ELLIPTICITY_TOL * (1.0 + c.delta1);
    if lo < c.delta2 - slack || hi > c.delta1 + slack {
        return Err(Error::Parameter(format!(
            "eigenvalues of σσ* lie in [{lo}, {hi}], outside [δ₂, δ₁] = [{}, {}]",
            c.delta2, c.delta1
        )));
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::Parameter("σσ* is singular".into()))?;
    Ok(sigma.transpose() * inv)
}

struct PathOutcome {
    gaps: Vec<f64>,
    log_r: f64,
    clipped: bool,
}

/// Coupled pair driven towards each other so that `X = Y` at `t₀`, simulated
/// under the measure that makes the shifted noise a Brownian motion.
///
/// `X` carries the correction drift `−(X−Y)/ξ_t`; the exponent of the density
/// `R` is accumulated as `∫⟨η, dW̃⟩ + ½∫|η|² dt` with `η = −σ̂(X−Y)/ξ_t`.
pub fn harnack_coupling(
    model: &CoefficientModel,
    frozen: &EmpiricalMeasure,
    c: &DissipativityConstants,
    params: &HarnackParams,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<CouplingResult> {
    c.validate()?;
    let d = model.dim();
    if model.kind() != ModelKind::Generic {
        return Err(Error::InvalidInput(
            "the Harnack coupling needs a non-degenerate (generic) model".into(),
        ));
    }
    if params.x.len() != d || params.y.len() != d || frozen.dim() != d {
        return Err(Error::Dimension("x, y and the frozen cloud must live in the model's space".into()));
    }
    let HarnackParams { t0, p, delta_stop, .. } = *params;
    if !(t0 > 0.0 && t0.is_finite()) || !(delta_stop > 0.0 && delta_stop < t0) {
        return Err(Error::Parameter(format!(
            "need t0 > 0 and 0 < delta_stop < t0, got t0 = {t0}, delta_stop = {delta_stop}"
        )));
    }
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) || n_paths == 0 {
        return Err(Error::Parameter("need dt > 0 and n_paths >= 1".into()));
    }
    let p0 = harnack_p0(c);
    if !(p >= p0) {
        return Err(Error::Parameter(format!("p = {p} is below p0 = {p0}")));
    }
    let view = MeasureView::new(frozen);
    let sigma = model.diffusion_block(0.0, &view);
    let hat = sigma_hat(&sigma, c)?;
    let tamed = cfg.scheme_for(model) == Scheme::TamedEuler;
    let t_stop = t0 - delta_stop;

    // The step sizes depend on t only, so every path shares one grid.
    let mut grid = vec![0.0];
    let mut t = 0.0;
    while t < t_stop {
        let z = xi(c.k2, t, t0);
        if !(z > 0.0) {
            return Err(Error::Parameter(format!("ξ_t = {z} is not positive at t = {t}")));
        }
        let h = cfg.dt.min(z / 10.0).min(t_stop - t);
        t = if t_stop - (t + h) <= 1e-12 * t0 { t_stop } else { t + h };
        grid.push(t);
    }

    let n = model.noise_dim();
    let drift = |x: &[f64], out: &mut [f64]| {
        model.drift_into(0.0, x, &view, out);
        if tamed {
            let scale = 1.0 / (1.0 + cfg.dt * out.iter().map(|v| v * v).sum::<f64>().sqrt());
            out.iter_mut().for_each(|v| *v *= scale);
        }
    };
    let simulate = |i: usize| -> PathOutcome {
        let mut stream = Stream::new(cfg.seed, domain::HARNACK, i as u64);
        let mut x = params.x.clone();
        let mut y = params.y.clone();
        let mut bx = vec![0.0; d];
        let mut by = vec![0.0; d];
        let mut z = vec![0.0; n];
        let mut log_r = NeumaierSum::default();
        let mut clipped = false;
        let mut gaps = Vec::with_capacity(grid.len());
        gaps.push(dist_sq(&x, &y).sqrt());
        for w in grid.windows(2) {
            let (t, h) = (w[0], w[1] - w[0]);
            let xi_t = xi(c.k2, t, t0);
            let diff = DVector::from_iterator(d, x.iter().zip(&y).map(|(a, b)| a - b));
            let mut eta = -(&hat * &diff) / xi_t;
            let norm = eta.norm();
            if norm > ETA_CLIP {
                eta *= ETA_CLIP / norm;
                clipped = true;
            }
            stream.fill_normals(&mut z);
            let dw = DVector::from_iterator(n, z.iter().map(|v| v * h.sqrt()));
            drift(&x, &mut bx);
            drift(&y, &mut by);
            let noise = &sigma * &dw;
            let push = &sigma * &eta * h;
            for k in 0..d {
                x[k] += bx[k] * h + noise[k] + push[k];
                y[k] += by[k] * h + noise[k];
            }
            log_r.add(eta.dot(&dw));
            log_r.add(0.5 * eta.norm_squared() * h);
            gaps.push(dist_sq(&x, &y).sqrt());
        }
        PathOutcome {
            gaps,
            log_r: log_r.value(),
            clipped,
        }
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<PathOutcome> = {
        use rayon::prelude::*;
        (0..n_paths).into_par_iter().map(simulate).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<PathOutcome> = (0..n_paths).map(simulate).collect();

    let mut gap_series = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let mut s = NeumaierSum::default();
        for o in &outcomes {
            s.add(o.gaps[k]);
        }
        gap_series.push((t, s.value() / n_paths as f64));
    }
    let mut moments = Vec::with_capacity(n_paths);
    let mut excluded_paths = 0;
    for o in &outcomes {
        let e = o.log_r / (p - 1.0);
        if e.is_finite() && e < MAX_EXPONENT {
            moments.push(e.exp());
        } else {
            excluded_paths += 1;
        }
    }
    let (r_moment_estimate, r_moment_stderr) = mean_and_stderr(&moments);
    Ok(CouplingResult {
        terminal_gap: gap_series.last().map_or(0.0, |g| g.1),
        gap_series,
        r_moment_estimate,
        r_moment_stderr,
        r_moment_bound: harnack_r_moment_bound(c, dist_sq(&params.x, &params.y), t0),
        p_used: p,
        p0,
        n_paths,
        clipped_paths: outcomes.iter().filter(|o| o.clipped).count(),
        excluded_paths,
        steps: grid.len() - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin_model;
    use serde_json::json;

    fn constants() -> DissipativityConstants {
        DissipativityConstants {
            k1: 0.1,
            k2: 1.0,
            ki: 0.0,
            r0: 0.0,
            delta1: 2.0,
            delta2: 1.0,
        }
    }

    fn run(x: f64, y: f64, delta_stop: f64, n_paths: usize) -> CouplingResult {
        let ou = builtin_model("ou", &json!({})).unwrap();
        let frozen = EmpiricalMeasure::dirac(&[0.0], 1).unwrap();
        let c = constants();
        let params = HarnackParams {
            x: vec![x],
            y: vec![y],
            t0: 1.0,
            p: harnack_p0(&c),
            delta_stop,
        };
        harnack_coupling(&ou, &frozen, &c, &params, &SimConfig::new(1e-3, 1.0, 1, 3), n_paths).unwrap()
    }

    #[test]
    fn p0_formula() {
        assert_eq!(harnack_p0(&constants()), 513.0);
        let c = DissipativityConstants {
            delta1: 1.0,
            delta2: 1.0,
            ..constants()
        };
        assert_eq!(harnack_p0(&c), 257.0);
    }

    #[test]
    fn equal_starts_give_unit_density() {
        let r = run(0.5, 0.5, 1e-2, 50);
        assert_eq!(r.r_moment_estimate, 1.0);
        assert!(r.r_moment_estimate <= r.r_moment_bound);
        assert_eq!(r.terminal_gap, 0.0);
    }

    #[test]
    fn ou_pair_meets_and_moment_is_bounded() {
        let r = run(0.5, -0.5, 1e-3, 500);
        assert!(r.terminal_gap <= 0.05, "{}", r.terminal_gap);
        assert!(r.r_moment_estimate <= r.r_moment_bound, "{} vs {}", r.r_moment_estimate, r.r_moment_bound);
        assert_eq!(r.clipped_paths, 0);
        let b = (1.0 / (128.0 * (1f64.exp() - 1.0))).exp();
        assert!((r.r_moment_bound - b).abs() < 1e-15);
    }

    #[test]
    fn ellipticity_is_checked() {
        let ou = builtin_model("ou", &json!({"sigma": 3.0})).unwrap();
        let frozen = EmpiricalMeasure::dirac(&[0.0], 1).unwrap();
        let c = constants();
        let params = HarnackParams {
            x: vec![0.0],
            y: vec![1.0],
            t0: 1.0,
            p: 600.0,
            delta_stop: 0.1,
        };
        let cfg = SimConfig::new(1e-2, 1.0, 1, 0);
        assert!(harnack_coupling(&ou, &frozen, &c, &params, &cfg, 10).is_err());
        let low = HarnackParams { p: 100.0, ..params };
        assert!(harnack_coupling(&builtin_model("ou", &json!({})).unwrap(), &frozen, &c, &low, &cfg, 10).is_err());
    }
}
