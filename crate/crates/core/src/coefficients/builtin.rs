use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CoefficientModel, MeasureView};
use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}
fn one_dim() -> usize {
    1
}
fn sqrt2() -> f64 {
    SQRT_2
}
fn kappa_default() -> f64 {
    0.2
}

/// Confining potential `V` of the kinetic gradient model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `V(x) = k|x|²/2`.
    Harmonic {
        #[serde(default = "one")]
        k: f64,
    },
    /// `V(x) = k|x|²/2 + a Σ cos(x_i)`; non-convex for `a > k`.
    HarmonicCosine {
        #[serde(default = "one")]
        k: f64,
        #[serde(default = "one")]
        a: f64,
    },
}

impl Default for Potential {
    fn default() -> Self {
        Self::Harmonic { k: 1.0 }
    }
}

impl Potential {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Harmonic { k } => 0.5 * k * crate::numeric::norm_sq(x),
            Self::HarmonicCosine { k, a } => {
                0.5 * k * crate::numeric::norm_sq(x) + a * x.iter().map(|v| v.cos()).sum::<f64>()
            }
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Self::Harmonic { k } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = k * v;
                }
            }
            Self::HarmonicCosine { k, a } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = k * v - a * v.sin();
                }
            }
        }
    }

    /// Bound on `‖∇²V‖`.
    pub fn hessian_bound(&self) -> f64 {
        match *self {
            Self::Harmonic { k } => k.abs(),
            Self::HarmonicCosine { k, a } => k.abs() + a.abs(),
        }
    }
}

/// Interaction `W(x, z)`, `x ∈ R^d`, `z = (z_x, z_y) ∈ R^{2d}`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Interaction {
    #[default]
    None,
    /// `W(x, z) = ε ⟨x, z_x⟩`.
    Bilinear { eps: f64 },
    /// `W(x, z) = κ |x − z_x|² / 2`.
    Quadratic { kappa: f64 },
}

impl Interaction {
    pub fn value(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Bilinear { eps } => eps * crate::numeric::dot(x, &z[..x.len()]),
            Self::Quadratic { kappa } => 0.5 * kappa * crate::numeric::dist_sq(x, &z[..x.len()]),
        }
    }

    /// Adds `∫ ∇_x W(x, z) μ(dz)` given the position mean of `μ`.
    pub fn add_mean_gradient(&self, x: &[f64], position_mean: &[f64], out: &mut [f64]) {
        match *self {
            Self::None => {}
            Self::Bilinear { eps } => {
                for (o, m) in out.iter_mut().zip(position_mean) {
                    *o += eps * m;
                }
            }
            Self::Quadratic { kappa } => {
                for ((o, v), m) in out.iter_mut().zip(x).zip(position_mean) {
                    *o += kappa * (v - m);
                }
            }
        }
    }

    /// `(‖∇_x²W‖, ‖∇_z∇_xW‖)`.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Self::None => (0.0, 0.0),
            Self::Bilinear { eps } => (0.0, eps.abs()),
            Self::Quadratic { kappa } => (kappa.abs(), kappa.abs()),
        }
    }
}

/// Parameters of `b = −y − ∇V(x) − ∫∇_x W(x,z) μ(dz)`, `σ = sigma·I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticGradientSpec {
    #[serde(default = "one_dim")]
    pub d: usize,
    #[serde(default)]
    pub potential: Potential,
    #[serde(default)]
    pub interaction: Interaction,
    /// Noise level; `√2` makes `e^{−|y|²/2 − V(x)}` the frozen invariant density.
    #[serde(default = "sqrt2")]
    pub sigma: f64,
}

impl Default for KineticGradientSpec {
    fn default() -> Self {
        Self {
            d: 1,
            potential: Potential::default(),
            interaction: Interaction::None,
            sigma: SQRT_2,
        }
    }
}

impl KineticGradientSpec {
    pub fn build(&self) -> Result<CoefficientModel> {
        let d = self.d;
        if d == 0 {
            return Err(Error::Parameter("kinetic_gradient: d must be >= 1".into()));
        }
        check_finite("kinetic_gradient", &[self.sigma])?;
        let spec = *self;
        let sigma = self.sigma;
        let model = CoefficientModel::kinetic(
            "kinetic_gradient",
            d,
            d,
            move |_t, x, y, m: &MeasureView<'_>, out: &mut [f64]| {
                spec.potential.gradient_into(x, out);
                spec.interaction.add_mean_gradient(x, &m.mean()[..d], out);
                for (o, v) in out.iter_mut().zip(y) {
                    *o = -v - *o;
                }
            },
            move |_t, _m| DMatrix::identity(d, d) * sigma,
        );
        Ok(if matches!(self.interaction, Interaction::None) {
            model.measure_free()
        } else {
            model
        })
    }

    /// `V(x) + mean_z [W(x,z) − W(0,z)]`, the exponent of the frozen invariant density minus `|y|²/2`.
    pub fn effective_potential(&self, x: &[f64], cloud: &crate::measures::EmpiricalMeasure) -> f64 {
        let mut v = self.potential.value(x);
        if !matches!(self.interaction, Interaction::None) {
            let zero = vec![0.0; x.len()];
            let view = MeasureView::new(cloud);
            v += view.average(|z| self.interaction.value(x, z) - self.interaction.value(&zero, z));
        }
        v
    }
}

/// Named builtin model with its parameters; the JSON form is `{"name": ..., params...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinModel {
    /// `b = −θx`, `σ = σ₀ I`.
    Ou {
        #[serde(default = "one")]
        theta: f64,
        #[serde(default = "sqrt2")]
        sigma: f64,
        #[serde(default = "one_dim")]
        dim: usize,
    },
    /// `b = −a x − κ (x − mean μ)`, `σ = σ₀ I`.
    MeanFieldLinear {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "kappa_default")]
        kappa: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_dim")]
        dim: usize,
    },
    /// `b = ∇V + ∫∇W(x−y)μ(dy)` with `V = −|x|⁴ + |x|²`, `W(z) = −kw|z|²/2`;
    /// `σ = (I + ∫∇U∇Uᵀ dμ)^{1/2}` with `U_i(y) = ku sin(y_i)`.
    Exabc {
        #[serde(default = "one_dim")]
        dim: usize,
        #[serde(default)]
        kw: f64,
        #[serde(default)]
        ku: f64,
    },
    KineticGradient(KineticGradientSpec),
}

fn check_finite(name: &str, vals: &[f64]) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("{name}: parameters must be finite")));
    }
    Ok(())
}

fn check_dim(name: &str, dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::Parameter(format!("{name}: dim must be >= 1")));
    }
    Ok(())
}

impl BuiltinModel {
    pub fn build(&self) -> Result<CoefficientModel> {
        match *self {
            Self::Ou { theta, sigma, dim } => {
                check_finite("ou", &[theta, sigma])?;
                check_dim("ou", dim)?;
                Ok(CoefficientModel::generic(
                    "ou",
                    dim,
                    dim,
                    move |_t, x, _m, out: &mut [f64]| {
                        for (o, v) in out.iter_mut().zip(x) {
                            *o = -theta * v;
                        }
                    },
                    move |_t, _m| DMatrix::identity(dim, dim) * sigma,
                )
                .measure_free())
            }
            Self::MeanFieldLinear {
                a,
                kappa,
                sigma,
                dim,
            } => {
                check_finite("mean_field_linear", &[a, kappa, sigma])?;
                check_dim("mean_field_linear", dim)?;
                let model = CoefficientModel::generic(
                    "mean_field_linear",
                    dim,
                    dim,
                    move |_t, x, m: &MeasureView<'_>, out: &mut [f64]| {
                        for ((o, v), mean) in out.iter_mut().zip(x).zip(m.mean()) {
                            *o = -a * v - kappa * (v - mean);
                        }
                    },
                    move |_t, _m| DMatrix::identity(dim, dim) * sigma,
                );
                Ok(if kappa == 0.0 { model.measure_free() } else { model })
            }
            Self::Exabc { dim, kw, ku } => {
                check_finite("exabc", &[kw, ku])?;
                check_dim("exabc", dim)?;
                let model = CoefficientModel::generic(
                    "exabc",
                    dim,
                    dim,
                    move |_t, x, m: &MeasureView<'_>, out: &mut [f64]| {
                        let r2 = crate::numeric::norm_sq(x);
                        for ((o, v), mean) in out.iter_mut().zip(x).zip(m.mean()) {
                            // ∇V = −4|x|²x + 2x; ∫∇W(x−y)μ(dy) = −kw (x − mean μ)
                            *o = -4.0 * r2 * v + 2.0 * v - kw * (v - mean);
                        }
                    },
                    move |_t, m: &MeasureView<'_>| {
                        let mut s = DMatrix::identity(dim, dim);
                        if ku != 0.0 {
                            for i in 0..dim {
                                let c2 = m.average(|p| p[i].cos().powi(2));
                                s[(i, i)] = (1.0 + ku * ku * c2).sqrt();
                            }
                        }
                        s
                    },
                )
                .superlinear(true);
                Ok(if kw == 0.0 && ku == 0.0 {
                    model.measure_free()
                } else {
                    model
                })
            }
            Self::KineticGradient(spec) => spec.build(),
        }
    }
}

/// Builds the builtin `name` from a JSON object of parameters (missing ones take defaults).
pub fn builtin_model(name: &str, params: &serde_json::Value) -> Result<CoefficientModel> {
    if !MODEL_TABLE.iter().any(|(n, _, _)| *n == name) {
        return Err(Error::UnknownModel(name.to_string()));
    }
    let mut obj = match params {
        serde_json::Value::Null => serde_json::Map::new(),
        serde_json::Value::Object(m) => m.clone(),
        _ => return Err(Error::Parameter("model parameters must be a JSON object".into())),
    };
    obj.insert("name".into(), serde_json::Value::String(name.into()));
    let spec: BuiltinModel = serde_json::from_value(serde_json::Value::Object(obj))
        .map_err(|e| Error::Parameter(format!("{name}: {e}")))?;
    spec.build()
}

const MODEL_TABLE: &[(&str, &str, &str)] = &[
    ("ou", "theta=1 sigma=1.414.. dim=1", "b = -theta x, sigma constant"),
    (
        "mean_field_linear",
        "a=1 kappa=0.2 sigma=1 dim=1",
        "b = -a x - kappa (x - mean), sigma constant",
    ),
    (
        "exabc",
        "dim=1 kw=0 ku=0",
        "b = grad(-|x|^4+|x|^2) - kw (x - mean), sigma^2 = I + ku^2 diag(mean cos^2)",
    ),
    (
        "kinetic_gradient",
        "d=1 potential={harmonic k=1 | harmonic_cosine k a} interaction={none | bilinear eps | quadratic kappa} sigma=1.414..",
        "dx = y dt, dy = (-y - grad V - mean grad_x W) dt + sigma dW",
    ),
];

/// Text table of builtin models: name, parameters with defaults, description.
pub fn list_models() -> String {
    let w0 = MODEL_TABLE.iter().map(|r| r.0.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<w0$}  {}\n", "name", "parameters (defaults) | description");
    for (name, params, desc) in MODEL_TABLE {
        s.push_str(&format!("{name:<w0$}  {params} | {desc}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::EmpiricalMeasure;
    use serde_json::json;

    #[test]
    fn ou_drift_definition() {
        let m = builtin_model("ou", &json!({"theta": 1.0, "sigma": SQRT_2})).unwrap();
        let cloud = EmpiricalMeasure::new(vec![100.0, -7.0], 1).unwrap();
        assert_eq!(m.drift(0.3, &[3.0], &cloud), vec![-3.0]);
        assert!(!m.is_measure_dependent());
    }

    #[test]
    fn mean_field_linear_at_cloud_mean() {
        let m = builtin_model("mean_field_linear", &json!({"a": 1.0, "kappa": 0.2, "sigma": 1.0}))
            .unwrap();
        let cloud = EmpiricalMeasure::new(vec![0.5, 1.5], 1).unwrap();
        assert_eq!(m.drift(0.0, &[1.0], &cloud), vec![-1.0]);
    }

    #[test]
    fn exabc_vanishes_at_origin() {
        let m = builtin_model("exabc", &json!({})).unwrap();
        let cloud = EmpiricalMeasure::standard_normal(1, 8, 1).unwrap();
        assert_eq!(m.drift(0.0, &[0.0], &cloud), vec![0.0]);
        assert!(m.is_superlinear());
        assert_eq!(m.drift(0.0, &[1.0], &cloud), vec![-2.0]);
    }

    #[test]
    fn exabc_diffusion_with_u() {
        let m = builtin_model("exabc", &json!({"ku": 0.5})).unwrap();
        let cloud = EmpiricalMeasure::new(vec![0.0, 0.0], 1).unwrap();
        let s = m.diffusion(0.0, &cloud);
        assert!((s[(0, 0)] - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unknown_and_bad_params() {
        assert!(matches!(
            builtin_model("nope", &json!({})),
            Err(Error::UnknownModel(_))
        ));
        assert!(builtin_model("ou", &json!({"thet": 1.0})).is_err());
        assert!(builtin_model("ou", &json!({"dim": 0})).is_err());
    }

    #[test]
    fn kinetic_bilinear_uses_position_mean() {
        let m = builtin_model(
            "kinetic_gradient",
            &json!({"interaction": {"type": "bilinear", "eps": 0.5}}),
        )
        .unwrap();
        let cloud = EmpiricalMeasure::new(vec![2.0, 9.0, 4.0, -9.0], 2).unwrap();
        // b = -y - x - eps * mean_x = -1 - 1 - 1.5
        let b = m.drift(0.0, &[1.0, 1.0], &cloud);
        assert_eq!(b, vec![1.0, -3.5]);
    }

    #[test]
    fn listing() {
        let s = list_models();
        assert!(s.contains("exabc"));
        assert!(s.contains("kinetic_gradient"));
        assert!(s.lines().count() >= 5);
    }

    #[test]
    fn builtins_are_finite_and_dimension_correct() {
        for (name, _, _) in MODEL_TABLE {
            let m = builtin_model(name, &json!({})).unwrap();
            let cloud = EmpiricalMeasure::standard_normal(m.dim(), 16, 3).unwrap();
            let x = vec![0.7; m.dim()];
            let b = m.drift(0.0, &x, &cloud);
            assert_eq!(b.len(), m.dim());
            assert!(b.iter().all(|v| v.is_finite()));
            let s = m.diffusion(0.0, &cloud);
            assert_eq!((s.nrows(), s.ncols()), (m.dim(), m.noise_dim()));
        }
    }
}
