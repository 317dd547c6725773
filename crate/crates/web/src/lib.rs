//! Browser bindings: OU W2 decay, exabc invariant histogram, kinetic density heatmap.

use std::f64::consts::SQRT_2;

use mv_ergo::coefficients::{
    builtin_model, Interaction, KineticGradientSpec, MeasureView, Potential,
};
use mv_ergo::inequalities::w2_decay_experiment;
use mv_ergo::invariant::phi;
use mv_ergo::kinetic::{gradient_case_density, simulate_kinetic, GridSpec};
use mv_ergo::measures::{gaussian_w2, EmpiricalMeasure, GaussianLaw, EXACT_CAP};
use mv_ergo::simulator::SimConfig;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: mv_ergo::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn check_size(name: &str, v: usize, max: usize) -> Result<(), JsError> {
    if v == 0 || v > max {
        return Err(JsError::new(&format!("{name} must be in 1..={max}")));
    }
    Ok(())
}

#[wasm_bindgen]
pub struct DecayCurve {
    times: Vec<f64>,
    simulated: Vec<f64>,
    analytic: Vec<f64>,
    lambda: f64,
    floor: f64,
}

#[wasm_bindgen]
impl DecayCurve {
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn simulated(&self) -> Vec<f64> {
        self.simulated.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn analytic(&self) -> Vec<f64> {
        self.analytic.clone()
    }

    /// Fitted rate, NaN when no fit was possible.
    #[wasm_bindgen(getter)]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[wasm_bindgen(getter)]
    pub fn floor(&self) -> f64 {
        self.floor
    }
}

/// `W₂(μ_t, N(0, σ²/2θ))` for OU from `δ_{x0}`: particles against the closed form.
#[wasm_bindgen]
pub fn ou_w2_decay(theta: f64, x0: f64, n: usize, t_end: f64, seed: u64) -> Result<DecayCurve, JsError> {
    check_size("n", n, 20_000)?;
    if !(theta > 0.0 && t_end > 0.0 && t_end <= 20.0) {
        return Err(JsError::new("need theta > 0 and 0 < t_end <= 20"));
    }
    let model = builtin_model("ou", &json!({ "theta": theta, "sigma": SQRT_2 })).map_err(js_err)?;
    let var_inf = 1.0 / theta;
    let cfg = SimConfig::new(0.01, t_end, n, seed);
    let mu0 = EmpiricalMeasure::dirac(&[x0], n).map_err(js_err)?;
    let inf = GaussianLaw::scalar(0.0, var_inf).map_err(js_err)?;
    let mu_inf = EmpiricalMeasure::sample_gaussian(&inf, n, seed ^ 0x5EED).map_err(js_err)?;
    let steps = 20usize;
    let times: Vec<f64> = (0..=steps)
        .map(|k| ((k as f64 * t_end / steps as f64) / 0.01).round() * 0.01)
        .collect();
    let r = w2_decay_experiment(&model, &mu0, &mu_inf, &cfg, &times, EXACT_CAP).map_err(js_err)?;
    let analytic = r
        .series
        .iter()
        .map(|p| {
            let decay = (-theta * p.t).exp();
            let law = GaussianLaw::scalar(x0 * decay, var_inf * (1.0 - decay * decay))?;
            gaussian_w2(&law, &inf)
        })
        .collect::<mv_ergo::Result<Vec<f64>>>()
        .map_err(js_err)?;
    Ok(DecayCurve {
        times: r.series.iter().map(|p| p.t).collect(),
        simulated: r.series.iter().map(|p| p.value).collect(),
        analytic,
        lambda: r.fit.map_or(f64::NAN, |f| f.lambda),
        floor: r.floor,
    })
}

#[wasm_bindgen]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<f64>,
    reference: Vec<f64>,
    mean: f64,
}

#[wasm_bindgen]
impl Histogram {
    #[wasm_bindgen(getter)]
    pub fn edges(&self) -> Vec<f64> {
        self.edges.clone()
    }

    /// Empirical density per bin.
    #[wasm_bindgen(getter)]
    pub fn counts(&self) -> Vec<f64> {
        self.counts.clone()
    }

    /// Invariant density of the dynamics frozen at the cloud, at bin centres.
    #[wasm_bindgen(getter)]
    pub fn reference(&self) -> Vec<f64> {
        self.reference.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mean(&self) -> f64 {
        self.mean
    }
}

/// Long-run cloud of the one-dimensional exabc model frozen at `N(m0, 1)`.
#[wasm_bindgen]
pub fn exabc_histogram(kw: f64, ku: f64, m0: f64, n: usize, bins: usize, seed: u64) -> Result<Histogram, JsError> {
    check_size("n", n, 20_000)?;
    check_size("bins", bins, 400)?;
    let model = builtin_model("exabc", &json!({ "kw": kw, "ku": ku })).map_err(js_err)?;
    let start = GaussianLaw::scalar(m0, 1.0).map_err(js_err)?;
    let mu = EmpiricalMeasure::sample_gaussian(&start, n, seed).map_err(js_err)?;
    let cfg = SimConfig::new(0.005, 6.0, n, seed).with_record_every(200);
    let cloud = phi(&model, &mu, &cfg, 3.0, None).map_err(js_err)?.cloud;

    let (lo, hi) = (-2.0, 2.0);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0.0; bins];
    for p in cloud.iter() {
        let k = ((p[0] - lo) / width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1.0;
        }
    }
    counts.iter_mut().for_each(|c| *c /= n as f64 * width);

    // frozen at μ: b = ∇V − kw(x − m), σ² = 1 + ku² μ(cos²); density ∝ exp((2V − kw(x − m)²) / σ²)
    let view = MeasureView::new(&mu);
    let m = view.mean()[0];
    let s2 = 1.0 + ku * ku * view.average(|p| p[0].cos().powi(2));
    let log_rho = |x: f64| (2.0 * (-x.powi(4) + x * x) - kw * (x - m).powi(2)) / s2;
    let fine = 4000;
    let h = 8.0 / fine as f64;
    let z: f64 = (0..=fine).map(|k| log_rho(-4.0 + k as f64 * h).exp() * h).sum();
    let reference = edges
        .windows(2)
        .map(|e| log_rho(0.5 * (e[0] + e[1])).exp() / z)
        .collect();
    Ok(Histogram {
        edges,
        counts,
        reference,
        mean: cloud.mean()[0],
    })
}

#[wasm_bindgen]
pub struct KineticView {
    size: usize,
    half: f64,
    density: Vec<f64>,
    particles: Vec<f64>,
    log_partition: f64,
}

#[wasm_bindgen]
impl KineticView {
    /// Grid nodes per axis.
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// The grid covers `[−half, half]²`.
    #[wasm_bindgen(getter)]
    pub fn half(&self) -> f64 {
        self.half
    }

    /// Row-major in `x`, then `y`.
    #[wasm_bindgen(getter)]
    pub fn density(&self) -> Vec<f64> {
        self.density.clone()
    }

    /// Terminal cloud as interleaved `(x, y)` pairs.
    #[wasm_bindgen(getter)]
    pub fn particles(&self) -> Vec<f64> {
        self.particles.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }
}

/// Kinetic gradient model with `V = k x²/2 + a cos x` and `W = κ|x − z|²/2`:
/// particle cloud at `t_end` and the explicit density frozen at that cloud.
#[wasm_bindgen]
pub fn kinetic_density(k: f64, a: f64, kappa: f64, n: usize, t_end: f64, seed: u64) -> Result<KineticView, JsError> {
    check_size("n", n, 10_000)?;
    if !(t_end > 0.0 && t_end <= 30.0) {
        return Err(JsError::new("need 0 < t_end <= 30"));
    }
    let spec = KineticGradientSpec {
        d: 1,
        potential: Potential::HarmonicCosine { k, a },
        interaction: if kappa == 0.0 {
            Interaction::None
        } else {
            Interaction::Quadratic { kappa }
        },
        sigma: SQRT_2,
    };
    let model = spec.build().map_err(js_err)?;
    let start = GaussianLaw::from_slices(&[2.0, 0.0], &[0.25, 0.0, 0.0, 0.25]).map_err(js_err)?;
    let init = EmpiricalMeasure::sample_gaussian(&start, n, seed).map_err(js_err)?;
    let cfg = SimConfig::new(0.01, t_end, n, seed).with_record_every(u64::MAX);
    let run = simulate_kinetic(&model, &init, &cfg).map_err(js_err)?;
    let half = 6.0;
    let size = 121;
    let density = gradient_case_density(&spec, run.terminal(), &GridSpec::square(half, size)).map_err(js_err)?;
    Ok(KineticView {
        size,
        half,
        density: density.values().to_vec(),
        particles: run.terminal().points().to_vec(),
        log_partition: density.log_partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_curve_tracks_the_closed_form() {
        let c = ou_w2_decay(1.0, 3.0, 2000, 3.0, 1).map_err(|_| ()).unwrap();
        assert_eq!(c.times.len(), 21);
        assert!((c.simulated[0] - c.analytic[0]).abs() < 0.1);
        assert!((c.lambda - 1.0).abs() < 0.25, "{}", c.lambda);
    }

    #[test]
    fn histogram_is_a_density() {
        let h = exabc_histogram(0.0, 0.0, 0.0, 4000, 40, 2).map_err(|_| ()).unwrap();
        let w = h.edges[1] - h.edges[0];
        let mass: f64 = h.counts.iter().map(|c| c * w).sum();
        let ref_mass: f64 = h.reference.iter().map(|c| c * w).sum();
        assert!(mass > 0.98 && mass <= 1.0 + 1e-12);
        assert!((ref_mass - 1.0).abs() < 0.02);
        let l1: f64 = h.counts.iter().zip(&h.reference).map(|(a, b)| (a - b).abs() * w).sum();
        assert!(l1 < 0.1, "{l1}");
    }

    #[test]
    fn kinetic_view_has_a_normalized_grid() {
        let v = kinetic_density(1.0, 0.0, 0.0, 500, 2.0, 3).map_err(|_| ()).unwrap();
        assert_eq!(v.density.len(), v.size * v.size);
        assert_eq!(v.particles.len(), 1000);
        assert!((v.log_partition - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-4);
    }
}
