//! Numerical checks of the functional inequalities: semigroup log-Sobolev,
//! Harnack coupling, Talagrand, and exponential decay in W₂ and entropy.

mod decay;
mod gaussian_flow;
mod harnack;
mod lsi;

pub use decay::{decay_fit, w2_decay_experiment, DecayFit, W2DecayResult, FLOOR_MARGIN};
pub use gaussian_flow::{
    entropy_decay_experiment, linear_moment_oracle, talagrand_check, EntropyDecayResult,
    LinearSde, TalagrandReport,
};
pub use harnack::{harnack_coupling, harnack_p0, harnack_r_moment_bound, CouplingResult, HarnackParams};
pub use lsi::{semigroup_lsi_gap, test_function_bank, LsiGapReport, LsiSetup, TestFunction};

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::fmt17;

/// One row of an experiment series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

impl SeriesPoint {
    pub fn exact(t: f64, value: f64) -> Self {
        Self {
            t,
            value,
            stderr: 0.0,
        }
    }
}

/// CSV with columns `t,value,stderr`.
pub fn write_series_csv(path: &Path, rows: &[SeriesPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "value", "stderr"])?;
    for r in rows {
        w.write_record([fmt17(r.t), fmt17(r.value), fmt17(r.stderr)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `(e^{k t} − 1) / k`, continuous at `k = 0`.
pub(crate) fn expm1_over(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        t
    } else {
        (k * t).exp_m1() / k
    }
}
