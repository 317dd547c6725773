//! Drift/diffusion models with measure dependence, and sampling-based
//! falsifiers for the structural conditions on them.

mod builtin;
mod checks;

pub use builtin::{
    builtin_model, list_models, BuiltinModel, Interaction, KineticGradientSpec, Potential,
};
pub use checks::{
    check_kinetic_c, check_monotonicity_a, check_partial_dissipativity_h, CheckOptions,
    ConditionReport, Witness,
};

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Generic,
    /// State `(x, y)` in `R^{2d}` with `dx = y dt` and noise on `y` only.
    Kinetic,
}

/// The measure argument of the coefficients, with its mean precomputed.
///
/// Built once per time step (or once for a frozen law) and shared by all
/// particle updates.
#[derive(Clone, Debug)]
pub struct MeasureView<'a> {
    cloud: &'a EmpiricalMeasure,
    mean: Vec<f64>,
}

impl<'a> MeasureView<'a> {
    pub fn new(cloud: &'a EmpiricalMeasure) -> Self {
        Self {
            mean: cloud.mean(),
            cloud,
        }
    }

    pub fn cloud(&self) -> &'a EmpiricalMeasure {
        self.cloud
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Cloud average of `f`.
    pub fn average(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = crate::numeric::NeumaierSum::default();
        for p in self.cloud.iter() {
            acc.add(f(p));
        }
        acc.value() / self.cloud.size() as f64
    }
}

/// `(t, state, measure, out)`: writes `b(t, state, measure)` into `out`.
pub type DriftFn = dyn Fn(f64, &[f64], &MeasureView<'_>, &mut [f64]) + Send + Sync;
/// `(t, measure) -> σ(t, measure)`, a `dim x noise_dim` matrix (velocity block for kinetic models).
pub type DiffusionFn = dyn Fn(f64, &MeasureView<'_>) -> DMatrix<f64> + Send + Sync;
/// A measure-free drift `x -> b(t, x)`.
pub type Drift = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Coefficients `b(t, x, μ)` and `σ(t, μ)` of a McKean-Vlasov SDE.
///
/// The diffusion never depends on the spatial variable. For kinetic models
/// `dim` is the full phase-space dimension `2d`, the stored drift is the
/// velocity drift `b(x, y, μ) ∈ R^d` and the stored diffusion is the velocity
/// block `σ(μ) ∈ R^{d x n}`.
#[derive(Clone)]
pub struct CoefficientModel {
    name: String,
    dim: usize,
    noise_dim: usize,
    kind: ModelKind,
    measure_dependent: bool,
    superlinear: bool,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
}

impl fmt::Debug for CoefficientModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("kind", &self.kind)
            .field("measure_dependent", &self.measure_dependent)
            .finish()
    }
}

impl CoefficientModel {
    pub fn generic(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        drift: impl Fn(f64, &[f64], &MeasureView<'_>, &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &MeasureView<'_>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            noise_dim,
            kind: ModelKind::Generic,
            measure_dependent: true,
            superlinear: false,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        }
    }

    /// Kinetic model on `R^{2d}`: `velocity_drift(t, x, y, μ, out)` fills `b ∈ R^d`,
    /// `sigma(t, μ)` is `d x noise_dim`.
    pub fn kinetic(
        name: impl Into<String>,
        d: usize,
        noise_dim: usize,
        velocity_drift: impl Fn(f64, &[f64], &[f64], &MeasureView<'_>, &mut [f64])
            + Send
            + Sync
            + 'static,
        sigma: impl Fn(f64, &MeasureView<'_>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        let drift = move |t: f64, z: &[f64], m: &MeasureView<'_>, out: &mut [f64]| {
            let (x, y) = z.split_at(d);
            velocity_drift(t, x, y, m, out);
        };
        Self {
            name: name.into(),
            dim: 2 * d,
            noise_dim,
            kind: ModelKind::Kinetic,
            measure_dependent: true,
            superlinear: false,
            drift: Arc::new(drift),
            diffusion: Arc::new(sigma),
        }
    }

    /// Declares that the coefficients ignore the measure argument.
    pub fn measure_free(mut self) -> Self {
        self.measure_dependent = false;
        self
    }

    /// Declares superlinear drift growth; the tamed scheme is then the default.
    pub fn superlinear(mut self, yes: bool) -> Self {
        self.superlinear = yes;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension (`2d` for kinetic models).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension of the block the drift/diffusion act on: `dim` or `d`.
    pub fn drift_dim(&self) -> usize {
        match self.kind {
            ModelKind::Generic => self.dim,
            ModelKind::Kinetic => self.dim / 2,
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn is_measure_dependent(&self) -> bool {
        self.measure_dependent
    }

    pub fn is_superlinear(&self) -> bool {
        self.superlinear
    }

    /// Writes the stored drift (velocity drift for kinetic models) into `out`.
    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], m: &MeasureView<'_>, out: &mut [f64]) {
        (self.drift)(t, x, m, out)
    }

    /// Full phase-space drift: `b(t,x,μ)` for generic models, `(y, b(x,y,μ))` for kinetic ones.
    pub fn drift(&self, t: f64, x: &[f64], cloud: &EmpiricalMeasure) -> Vec<f64> {
        self.drift_with_view(t, x, &MeasureView::new(cloud))
    }

    pub fn drift_with_view(&self, t: f64, x: &[f64], m: &MeasureView<'_>) -> Vec<f64> {
        match self.kind {
            ModelKind::Generic => {
                let mut out = vec![0.0; self.dim];
                self.drift_into(t, x, m, &mut out);
                out
            }
            ModelKind::Kinetic => {
                let d = self.dim / 2;
                let mut out = vec![0.0; self.dim];
                out[..d].copy_from_slice(&x[d..]);
                self.drift_into(t, x, m, &mut out[d..]);
                out
            }
        }
    }

    /// `σ(t, μ)` of the driven block (`drift_dim x noise_dim`).
    pub fn diffusion_block(&self, t: f64, m: &MeasureView<'_>) -> DMatrix<f64> {
        (self.diffusion)(t, m)
    }

    /// Full `dim x noise_dim` diffusion; the position rows of a kinetic model are zero.
    pub fn diffusion(&self, t: f64, cloud: &EmpiricalMeasure) -> DMatrix<f64> {
        let block = self.diffusion_block(t, &MeasureView::new(cloud));
        match self.kind {
            ModelKind::Generic => block,
            ModelKind::Kinetic => {
                let d = self.dim / 2;
                let mut full = DMatrix::zeros(self.dim, self.noise_dim);
                full.view_mut((d, 0), (d, self.noise_dim)).copy_from(&block);
                full
            }
        }
    }

    /// Same model with the drift replaced by a measure-free one (generic models only).
    pub fn with_measure_free_drift(&self, name: impl Into<String>, drift: Drift) -> Result<Self> {
        if self.kind != ModelKind::Generic {
            return Err(Error::InvalidInput(
                "drift replacement is only supported for generic models".into(),
            ));
        }
        let mut m = self.clone();
        m.name = name.into();
        m.drift = Arc::new(move |t, x, _m, out: &mut [f64]| {
            out.copy_from_slice(&drift(t, x));
        });
        Ok(m)
    }

    /// The drift with the measure argument frozen at `cloud`.
    pub fn frozen_drift(&self, cloud: &EmpiricalMeasure) -> Drift {
        let owned = cloud.clone();
        let mean = owned.mean();
        let model = self.clone();
        Arc::new(move |t, x| {
            let view = MeasureView {
                cloud: &owned,
                mean: mean.clone(),
            };
            let mut out = vec![0.0; model.drift_dim()];
            model.drift_into(t, x, &view, &mut out);
            out
        })
    }

    /// Scales the diffusion by `factor` (zero gives the deterministic flow).
    pub fn with_diffusion_scale(&self, factor: f64) -> Self {
        let mut m = self.clone();
        let inner = self.diffusion.clone();
        m.diffusion = Arc::new(move |t, view| inner(t, view) * factor);
        m
    }
}

/// Constants of the monotonicity and partial dissipativity conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipativityConstants {
    #[serde(alias = "K1")]
    pub k1: f64,
    #[serde(alias = "K2")]
    pub k2: f64,
    #[serde(alias = "KI")]
    pub ki: f64,
    pub r0: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl DissipativityConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k1, self.k2, self.ki, self.r0, self.delta1, self.delta2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("constants must be finite".into()));
        }
        if self.k1 <= 0.0 || self.k2 <= 0.0 {
            return Err(Error::Parameter("k1 and k2 must be > 0".into()));
        }
        if self.ki < 0.0 || self.r0 < 0.0 {
            return Err(Error::Parameter("ki and r0 must be >= 0".into()));
        }
        if !(self.delta1 >= self.delta2 && self.delta2 > 0.0) {
            return Err(Error::Parameter("need delta1 >= delta2 > 0".into()));
        }
        Ok(())
    }

    /// `ε = K₂ / (4 δ₁)` for the exponential moment bound.
    pub fn exp_moment_epsilon(&self) -> f64 {
        self.k2 / (4.0 * self.delta1)
    }
}

/// Constants of the kinetic Lipschitz and dissipativity conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticConstants {
    pub r: f64,
    pub r0: f64,
    pub theta: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    #[serde(alias = "KM")]
    pub km: f64,
}

impl KineticConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.r, self.r0, self.theta, self.big_r, self.km];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("constants must be finite".into()));
        }
        if self.r < 0.0 || self.theta < 0.0 || self.big_r < 0.0 || self.km < 0.0 {
            return Err(Error::Parameter("r, theta, R, km must be >= 0".into()));
        }
        if self.r0.abs() >= 1.0 {
            return Err(Error::Parameter(format!("|r0| must be < 1, got {}", self.r0)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_validation() {
        let ok = DissipativityConstants {
            k1: 1.0,
            k2: 1.0,
            ki: 0.0,
            r0: 1.0,
            delta1: 2.0,
            delta2: 1.0,
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.exp_moment_epsilon(), 0.125);
        assert!(DissipativityConstants { delta2: 3.0, ..ok }.validate().is_err());
        let kc = KineticConstants {
            r: 1.0,
            r0: 1.0,
            theta: 0.0,
            big_r: 0.0,
            km: 1.0,
        };
        assert!(kc.validate().is_err());
    }

    #[test]
    fn kinetic_drift_starts_with_velocity() {
        let m = builtin_model("kinetic_gradient", &serde_json::json!({})).unwrap();
        let cloud = EmpiricalMeasure::new(vec![0.3, -0.2], 2).unwrap();
        let z = [1.5, -0.75];
        let b = m.drift(0.0, &z, &cloud);
        assert_eq!(b[0], z[1]);
        let s = m.diffusion(0.0, &cloud);
        assert_eq!(s[(0, 0)], 0.0);
        assert_eq!(s[(1, 0)], std::f64::consts::SQRT_2);
    }
}
