//! The invariant-measure map `Φ` of the frozen dynamics and its fixed point.

use std::path::Path;

use serde::Serialize;

use crate::coefficients::{CoefficientModel, DissipativityConstants};
use crate::error::{Error, Result};
use crate::measures::{exp_quadratic_moment, w2_exact, EmpiricalMeasure, EXACT_CAP};
use crate::numeric::{fmt17, NeumaierSum};
use crate::simulator::{simulate_frozen, SimConfig};

/// Relative drift of `‖·‖₂²` above which `Φ` is flagged as not stabilized.
pub const SECOND_MOMENT_DRIFT_LIMIT: f64 = 0.05;

/// Default burn-in: `10/K₂` when the constants are known, else 20 time units.
pub fn default_burn_in(constants: Option<&DissipativityConstants>) -> f64 {
    constants.map_or(20.0, |c| 10.0 / c.k2)
}

/// Relative change between the two quarters of the last half of `values`:
/// `|mean(Q3) − mean(Q4)| / mean(last half)`.
pub fn relative_drift(values: &[f64]) -> f64 {
    let half = &values[values.len() / 2..];
    if half.len() < 2 {
        return 0.0;
    }
    let (a, b) = half.split_at(half.len() / 2);
    let mean = |v: &[f64]| {
        let mut acc = NeumaierSum::default();
        v.iter().for_each(|x| acc.add(*x));
        acc.value() / v.len() as f64
    };
    let all = mean(half);
    if all == 0.0 {
        return 0.0;
    }
    ((mean(a) - mean(b)) / all).abs()
}

#[derive(Clone, Debug, Serialize)]
pub struct PhiResult {
    #[serde(skip)]
    pub cloud: EmpiricalMeasure,
    pub burn_in_used: f64,
    /// `(t, ‖cloud_t‖₂²)` at the recorded times after burn-in.
    pub second_moment_trace: Vec<(f64, f64)>,
    /// `(t, cloud_t(e^{ε|·|²}))` when constants were supplied.
    pub exp_moment_trace: Option<Vec<(f64, f64)>>,
    pub epsilon: Option<f64>,
    pub second_moment_drift: f64,
    pub exp_moment_drift: Option<f64>,
    /// False when the second-moment drift over the last half exceeds 5%.
    pub stabilized: bool,
}

fn check_burn_in(cfg: &SimConfig, burn_in: f64) -> Result<()> {
    if !(burn_in >= 0.0 && burn_in < cfg.t_end) {
        return Err(Error::Parameter(format!(
            "burn_in must lie in [0, t_end), got {burn_in}"
        )));
    }
    Ok(())
}

/// `Φ(μ)`: terminal cloud of the dynamics frozen at `mu`, started from a
/// standard-normal cloud seeded by `cfg.seed`.
pub fn phi(
    model: &CoefficientModel,
    mu: &EmpiricalMeasure,
    cfg: &SimConfig,
    burn_in: f64,
    constants: Option<&DissipativityConstants>,
) -> Result<PhiResult> {
    check_burn_in(cfg, burn_in)?;
    let init = EmpiricalMeasure::standard_normal(model.dim(), cfg.n_particles, cfg.seed)?;
    let ens = simulate_frozen(model, mu, &init, cfg)?;
    let kept: Vec<(f64, &EmpiricalMeasure)> = ens
        .times
        .iter()
        .zip(&ens.clouds)
        .filter(|(t, _)| **t >= burn_in)
        .map(|(t, c)| (*t, c))
        .collect();
    let second: Vec<(f64, f64)> = kept.iter().map(|(t, c)| (*t, c.second_moment())).collect();
    let second_vals: Vec<f64> = second.iter().map(|p| p.1).collect();
    let second_moment_drift = relative_drift(&second_vals);
    let epsilon = constants.map(DissipativityConstants::exp_moment_epsilon);
    let exp_trace = match epsilon {
        Some(eps) => Some(
            kept.iter()
                .map(|(t, c)| Ok((*t, exp_quadratic_moment(c, eps)?.estimate)))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let exp_moment_drift = exp_trace.as_ref().map(|tr| {
        let v: Vec<f64> = tr.iter().map(|p| p.1).collect();
        relative_drift(&v)
    });
    Ok(PhiResult {
        cloud: ens.into_terminal(),
        burn_in_used: burn_in,
        second_moment_trace: second,
        exp_moment_trace: exp_trace,
        epsilon,
        second_moment_drift,
        exp_moment_drift,
        stabilized: second_moment_drift <= SECOND_MOMENT_DRIFT_LIMIT,
    })
}

/// Seed used for the independent replicate in the floor estimate.
fn replicate_seed(seed: u64) -> u64 {
    seed ^ 0xA5A5_5A5A_F00D_CAFE
}

/// Exact W₂ between seeded subsamples (same indices for equal sizes).
pub fn w2_subsampled(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cap: usize, seed: u64) -> Result<f64> {
    let cap = cap.min(a.size()).min(b.size());
    let ia = EmpiricalMeasure::subsample_indices(a.size(), cap, seed);
    let ib = EmpiricalMeasure::subsample_indices(b.size(), cap, seed);
    w2_exact(&a.select(&ia), &b.select(&ib))
}

/// Monte Carlo floor: W₂ between `Φ(μ)` computed with two independent seeds.
pub fn mc_floor(
    model: &CoefficientModel,
    mu: &EmpiricalMeasure,
    cfg: &SimConfig,
    burn_in: f64,
    cap: usize,
) -> Result<f64> {
    let a = phi(model, mu, cfg, burn_in, None)?.cloud;
    let alt = SimConfig {
        seed: replicate_seed(cfg.seed),
        ..cfg.clone()
    };
    let b = phi(model, mu, &alt, burn_in, None)?.cloud;
    w2_subsampled(&a, &b, cap, cfg.seed)
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointResult {
    #[serde(skip)]
    pub cloud: EmpiricalMeasure,
    /// W₂ between consecutive iterates (subsampled to the cap).
    pub iterates: Vec<f64>,
    /// Monte Carlo floor at the final iterate.
    pub floor: f64,
    pub tolerance: f64,
    pub converged: bool,
}

impl FixedPointResult {
    /// CSV with columns `iter,gap,floor`.
    pub fn write_gap_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iter", "gap", "floor"])?;
        for (k, g) in self.iterates.iter().enumerate() {
            w.write_record([(k + 1).to_string(), fmt17(*g), fmt17(self.floor)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Picard iteration `μ_{k+1} = Φ(μ_k)` with common random numbers: every
/// iterate uses `cfg.seed`, so `Φ` acts as a fixed map on clouds.
pub fn picard_fixed_point(
    model: &CoefficientModel,
    mu0: &EmpiricalMeasure,
    cfg: &SimConfig,
    burn_in: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointResult> {
    if !(tol > 0.0) {
        return Err(Error::Parameter("tol must be > 0".into()));
    }
    if max_iter == 0 {
        return Err(Error::Parameter("max_iter must be >= 1".into()));
    }
    let mut current = mu0.clone();
    let mut input = mu0.clone();
    let mut gaps = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let next = phi(model, &current, cfg, burn_in, None)?.cloud;
        let gap = w2_subsampled(&next, &current, EXACT_CAP, cfg.seed)?;
        gaps.push(gap);
        input = std::mem::replace(&mut current, next);
        if gap <= tol {
            converged = true;
            break;
        }
    }
    let floor = mc_floor(model, &input, cfg, burn_in, EXACT_CAP)?;
    Ok(FixedPointResult {
        cloud: current,
        iterates: gaps,
        floor,
        tolerance: tol,
        converged,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ContractionEstimate {
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub floor: f64,
}

/// `W₂(Φμ₁, Φμ₂) / W₂(μ₁, μ₂)` with common random numbers in both runs.
pub fn contraction_estimate(
    model: &CoefficientModel,
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    cfg: &SimConfig,
    burn_in: f64,
) -> Result<ContractionEstimate> {
    let floor = mc_floor(model, mu1, cfg, burn_in, EXACT_CAP)?;
    let denominator = w2_subsampled(mu1, mu2, EXACT_CAP, cfg.seed)?;
    if denominator < 10.0 * floor {
        return Err(Error::BelowFloor {
            distance: denominator,
            floor,
        });
    }
    let a = phi(model, mu1, cfg, burn_in, None)?.cloud;
    let b = phi(model, mu2, cfg, burn_in, None)?.cloud;
    let numerator = w2_subsampled(&a, &b, EXACT_CAP, cfg.seed)?;
    Ok(ContractionEstimate {
        ratio: numerator / denominator,
        numerator,
        denominator,
        floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin_model;
    use crate::measures::moment_match;
    use serde_json::json;

    #[test]
    fn drift_of_flat_and_trending_series() {
        assert_eq!(relative_drift(&[1.0; 8]), 0.0);
        let v = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        assert!((relative_drift(&v) - 1.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn phi_of_ou_is_standard_normal() {
        let m = builtin_model("ou", &json!({})).unwrap();
        let cfg = SimConfig::new(0.01, 8.0, 4000, 1).with_record_every(100);
        let mu = EmpiricalMeasure::dirac(&[5.0], 2).unwrap();
        let r = phi(&m, &mu, &cfg, 4.0, None).unwrap();
        let g = moment_match(&r.cloud).unwrap();
        let se = (1.0f64 / 4000.0).sqrt();
        assert!(g.mean()[0].abs() < 3.0 * se);
        assert!((g.cov()[(0, 0)] - 1.0).abs() < 0.05);
        assert!(r.stabilized);
        assert!(r.exp_moment_trace.is_none());
        // μ-independent model: bitwise equal images
        let other = EmpiricalMeasure::dirac(&[-1.0], 7).unwrap();
        assert_eq!(phi(&m, &other, &cfg, 4.0, None).unwrap().cloud, r.cloud);
    }

    #[test]
    fn phi_of_frozen_linear_model() {
        let m = builtin_model("mean_field_linear", &json!({"kappa": 0.2})).unwrap();
        let cfg = SimConfig::new(0.01, 10.0, 4000, 2).with_record_every(100);
        let mu = EmpiricalMeasure::dirac(&[3.0], 1).unwrap();
        let r = phi(&m, &mu, &cfg, 5.0, None).unwrap();
        let g = moment_match(&r.cloud).unwrap();
        assert!((g.mean()[0] - 0.5).abs() < 0.05, "{}", g.mean()[0]);
        assert!((g.cov()[(0, 0)] - 1.0 / 2.4).abs() < 0.05 / 2.4 * 2.0);
        assert!(phi(&m, &mu, &cfg, 10.0, None).is_err());
    }

    #[test]
    fn contraction_of_mu_independent_model_is_at_floor() {
        let m = builtin_model("ou", &json!({})).unwrap();
        let cfg = SimConfig::new(0.02, 6.0, 256, 3).with_record_every(50);
        let mu1 = EmpiricalMeasure::standard_normal(1, 256, 1).unwrap();
        let mu2 = EmpiricalMeasure::new(mu1.points().iter().map(|v| v + 3.0).collect(), 1).unwrap();
        let c = contraction_estimate(&m, &mu1, &mu2, &cfg, 3.0).unwrap();
        assert_eq!(c.numerator, 0.0);
        assert_eq!(c.ratio, 0.0);
        let near = EmpiricalMeasure::new(mu1.points().iter().map(|v| v + 1e-3).collect(), 1).unwrap();
        assert!(matches!(
            contraction_estimate(&m, &mu1, &near, &cfg, 3.0),
            Err(Error::BelowFloor { .. })
        ));
    }

    #[test]
    fn picard_on_mu_independent_model_stops_after_one_repeat() {
        let m = builtin_model("ou", &json!({})).unwrap();
        let cfg = SimConfig::new(0.02, 4.0, 128, 5).with_record_every(50);
        let mu0 = EmpiricalMeasure::dirac(&[2.0], 128).unwrap();
        let r = picard_fixed_point(&m, &mu0, &cfg, 2.0, 1e-12, 5).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterates.len(), 2);
        assert_eq!(r.iterates[1], 0.0);
        assert!(r.floor > 0.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gaps.csv");
        r.write_gap_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iter,gap,floor\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
