use serde::Serialize;

use super::SeriesPoint;
use crate::coefficients::CoefficientModel;
use crate::error::{Error, Result};
use crate::invariant::w2_subsampled;
use crate::measures::{w2_sliced, EmpiricalMeasure};
use crate::simulator::{simulate_mean_field_sampled, SimConfig};

/// Exponential fit `value ≈ c e^{−λ t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub lambda: f64,
    pub c: f64,
    pub r2: f64,
    pub points_used: usize,
    /// Points at or below the floor, left out of the fit.
    pub excluded: usize,
    pub floor: f64,
}

/// Least squares of `log value` against `t`, skipping points `≤ floor`.
pub fn decay_fit(series: &[(f64, f64)], floor: f64) -> Result<DecayFit> {
    let used: Vec<(f64, f64)> = series
        .iter()
        .filter(|&&(t, v)| v > floor && v > 0.0 && t.is_finite() && v.is_finite())
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    let n = used.len();
    if n < 3 {
        return Err(Error::TooFewPoints { usable: n });
    }
    let nf = n as f64;
    let tm = used.iter().map(|p| p.0).sum::<f64>() / nf;
    let ym = used.iter().map(|p| p.1).sum::<f64>() / nf;
    let stt: f64 = used.iter().map(|p| (p.0 - tm).powi(2)).sum();
    if stt == 0.0 {
        return Err(Error::InvalidInput("decay fit needs distinct times".into()));
    }
    let sty: f64 = used.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let syy: f64 = used.iter().map(|p| (p.1 - ym).powi(2)).sum();
    let sse: f64 = used
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        lambda: -slope,
        c: intercept.exp(),
        r2,
        points_used: n,
        excluded: series.len() - n,
        floor,
    })
}

/// The fit is skipped when the first value is within this factor of the floor.
pub const FLOOR_MARGIN: f64 = 3.0;

#[derive(Clone, Debug, Serialize)]
pub struct W2DecayResult {
    pub series: Vec<SeriesPoint>,
    /// W₂ between two disjoint halves of the reference cloud.
    pub floor: f64,
    pub fit: Option<DecayFit>,
    /// Set when the series never rises clear of the floor and no fit is made.
    pub fit_skipped: bool,
}

/// W₂ between equal-size clouds: sorted matching in 1D, otherwise exact on
/// seeded subsamples of size `cap`.
pub(crate) fn w2_cloud_distance(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cap: usize,
    seed: u64,
) -> Result<f64> {
    if a.dim() == 1 && a.size() == b.size() {
        w2_sliced(a, b, 1, seed)
    } else {
        w2_subsampled(a, b, cap, seed)
    }
}

/// Runs the particle system from `mu0` and tracks `W₂(μ_t, mu_inf)` at `sample_times`.
pub fn w2_decay_experiment(
    model: &CoefficientModel,
    mu0: &EmpiricalMeasure,
    mu_inf: &EmpiricalMeasure,
    cfg: &SimConfig,
    sample_times: &[f64],
    cap: usize,
) -> Result<W2DecayResult> {
    if mu_inf.size() < 4 {
        return Err(Error::InvalidInput("reference cloud needs at least 4 points".into()));
    }
    let run = simulate_mean_field_sampled(model, mu0, cfg, sample_times)?;
    let mut series = Vec::with_capacity(run.times.len());
    for (t, cloud) in run.times.iter().zip(&run.clouds) {
        let reference = if cloud.size() == mu_inf.size() {
            mu_inf.clone()
        } else {
            mu_inf.subsample(cloud.size().min(mu_inf.size()), cfg.seed)
        };
        let probe = if cloud.size() == reference.size() {
            cloud.clone()
        } else {
            cloud.subsample(reference.size(), cfg.seed)
        };
        series.push(SeriesPoint::exact(*t, w2_cloud_distance(&probe, &reference, cap, cfg.seed)?));
    }
    let half = mu_inf.size() / 2;
    let idx: Vec<usize> = (0..2 * half).collect();
    let (lo, hi) = idx.split_at(half);
    let floor = w2_cloud_distance(&mu_inf.select(lo), &mu_inf.select(hi), cap, cfg.seed)?;
    let pairs: Vec<(f64, f64)> = series.iter().map(|p| (p.t, p.value)).collect();
    let clear = pairs.first().is_some_and(|p| p.1 > FLOOR_MARGIN * floor);
    let fit = if clear {
        match decay_fit(&pairs, floor) {
            Ok(f) => Some(f),
            Err(Error::TooFewPoints { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(W2DecayResult {
        series,
        floor,
        fit_skipped: fit.is_none(),
        fit,
    })
}
