use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::expm1_over;
use crate::coefficients::{CoefficientModel, DissipativityConstants};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::numeric::{mean_and_stderr, norm_sq};
use crate::rng::domain;
use crate::simulator::frozen_terminal;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A positive function together with its gradient.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    f: ScalarFn,
    grad: GradFn,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).finish()
    }
}

impl TestFunction {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            grad: Arc::new(grad),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }
}

/// `2 + sin x₁`, `1 + e^{−|x|²}` and `2 + tanh x₁`.
pub fn test_function_bank() -> Vec<TestFunction> {
    let first = |x: &[f64], g: f64| {
        let mut v = vec![0.0; x.len()];
        v[0] = g;
        v
    };
    vec![
        TestFunction::new("2+sin", |x| 2.0 + x[0].sin(), move |x| first(x, x[0].cos())),
        TestFunction::new(
            "1+exp(-|x|^2)",
            |x| 1.0 + (-norm_sq(x)).exp(),
            |x| {
                let e = (-norm_sq(x)).exp();
                x.iter().map(|v| -2.0 * v * e).collect()
            },
        ),
        TestFunction::new(
            "2+tanh",
            |x| 2.0 + x[0].tanh(),
            move |x| {
                let c = x[0].cosh();
                first(x, 1.0 / (c * c))
            },
        ),
    ]
}

/// Starting point, horizon, sample count and seed of one LSI check.
#[derive(Clone, Debug, PartialEq)]
pub struct LsiSetup {
    pub x: Vec<f64>,
    pub t: f64,
    pub n_mc: usize,
    pub seed: u64,
}

/// Largest step used to reach `t`.
const LSI_MAX_DT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LsiGapReport {
    pub function: String,
    /// `P_t(f log f)(x) − P_t f(x) log P_t f(x)`.
    pub lhs: f64,
    /// `(2δ₁/K₁)(e^{K₁t} − 1) P_t |∇f^{1/2}|²(x)`.
    pub rhs: f64,
    pub mc_stderr_lhs: f64,
    pub mc_stderr_rhs: f64,
    pub t: f64,
    pub dt: f64,
}

impl LsiGapReport {
    /// `lhs ≤ rhs + k (stderr_lhs + stderr_rhs)`.
    pub fn holds_within(&self, k: f64) -> bool {
        self.lhs <= self.rhs + k * (self.mc_stderr_lhs + self.mc_stderr_rhs)
    }
}

/// Monte Carlo evaluation of both sides of the semigroup log-Sobolev inequality
/// for the frozen-measure dynamics started at `x`.
pub fn semigroup_lsi_gap(
    model: &CoefficientModel,
    frozen: &EmpiricalMeasure,
    f: &TestFunction,
    c: &DissipativityConstants,
    setup: &LsiSetup,
) -> Result<LsiGapReport> {
    c.validate()?;
    let t = setup.t;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!("t must be > 0, got {t}")));
    }
    if setup.n_mc < 2 {
        return Err(Error::Parameter("n_mc must be >= 2".into()));
    }
    if setup.x.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "start point has length {}, model lives in R^{}",
            setup.x.len(),
            model.dim()
        )));
    }
    let n_steps = (t / LSI_MAX_DT).ceil().max(1.0) as u64;
    let dt = t / n_steps as f64;
    let init = EmpiricalMeasure::dirac(&setup.x, setup.n_mc)?;
    let seed = setup.seed ^ domain::LSI.rotate_left(32);
    let end = frozen_terminal(model, frozen, &init, dt, n_steps, seed)?;

    let mut values = Vec::with_capacity(end.size());
    let mut energy = Vec::with_capacity(end.size());
    for p in end.iter() {
        let v = f.value(p);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveFunction {
                value: v,
                x: p.to_vec(),
            });
        }
        values.push(v);
        energy.push(norm_sq(&f.gradient(p)) / (4.0 * v));
    }
    let (m, _) = mean_and_stderr(&values);
    let (lhs, mc_stderr_lhs) = if values.iter().all(|&v| v == values[0]) {
        (0.0, 0.0)
    } else {
        let log_m = m.ln();
        let fl: Vec<f64> = values.iter().map(|v| v * v.ln()).collect();
        let (mean_fl, _) = mean_and_stderr(&fl);
        // Delta method: influence of one sample on E[f log f] − E f log E f.
        let influence: Vec<f64> = values
            .iter()
            .zip(&fl)
            .map(|(v, vl)| vl - (log_m + 1.0) * v)
            .collect();
        let (_, se) = mean_and_stderr(&influence);
        (mean_fl - m * log_m, se)
    };
    let factor = 2.0 * c.delta1 * expm1_over(c.k1, t);
    let (e_mean, e_se) = mean_and_stderr(&energy);
    let rhs = factor * e_mean;
    if !(lhs.is_finite() && rhs.is_finite()) {
        return Err(Error::NonFinite {
            sample: 0,
            detail: "log-Sobolev sides are not finite".into(),
        });
    }
    Ok(LsiGapReport {
        function: f.name().to_string(),
        lhs,
        rhs,
        mc_stderr_lhs,
        mc_stderr_rhs: factor * e_se,
        t,
        dt,
    })
}
