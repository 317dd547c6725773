//! Yosida and mollifier regularizations of a drift.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{simulate_frozen, SimConfig};
use crate::coefficients::{CoefficientModel, Drift};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::numeric::{dist_sq, norm_sq, NeumaierSum};
use crate::rng::{domain, Stream};

/// Target residual of the resolvent solve.
const RESOLVENT_TOL: f64 = 1e-10;
const RESOLVENT_MAX_STEPS: usize = 200;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Mollifier `ρ` supported in `[−1, 1]^d`.
#[derive(Clone)]
pub enum Mollifier {
    /// `2^{-d} 1_{[−1,1]^d}`.
    Uniform,
    /// Normalized `exp(−1 / (1 − |u|²))` on the unit ball.
    Bump,
    /// User density; must vanish outside `[−1, 1]^d` and have unit mass.
    Custom(DensityFn),
}

impl fmt::Debug for Mollifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("Uniform"),
            Self::Bump => f.write_str("Bump"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl Mollifier {
    fn raw(&self, u: &[f64]) -> f64 {
        match self {
            Self::Uniform => {
                if u.iter().all(|v| v.abs() <= 1.0) {
                    0.5f64.powi(u.len() as i32)
                } else {
                    0.0
                }
            }
            Self::Bump => {
                let r2 = norm_sq(u);
                if r2 < 1.0 {
                    (-1.0 / (1.0 - r2)).exp()
                } else {
                    0.0
                }
            }
            Self::Custom(f) => f(u),
        }
    }
}

/// Integration rule over `[−1, 1]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Quadrature {
    /// Panels per axis; even, so that 0 is a panel boundary.
    pub panels: usize,
    /// Gauss-Legendre points per panel.
    pub order: usize,
    /// Monte Carlo sample count used when `d > 2`.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            panels: 8,
            order: 8,
            mc_samples: 4096,
            seed: 0,
        }
    }
}

/// Gauss-Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Nodes `u_k` in `[−1,1]^d` with weights `w_k ρ(u_k)` (zero-weight nodes dropped).
#[derive(Clone, Debug)]
struct WeightedNodes {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn build_nodes(dim: usize, rho: &Mollifier, q: &Quadrature) -> Result<WeightedNodes> {
    let (pts, wts): (Vec<Vec<f64>>, Vec<f64>) = if dim <= 2 {
        if q.panels == 0 || q.panels % 2 != 0 || q.order == 0 {
            return Err(Error::Parameter(
                "quadrature needs an even panel count and order >= 1".into(),
            ));
        }
        let (gx, gw) = gauss_legendre(q.order);
        let h = 2.0 / q.panels as f64;
        let mut axis = Vec::new();
        for p in 0..q.panels {
            let lo = -1.0 + p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                axis.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
            }
        }
        if dim == 1 {
            axis.iter().map(|&(x, w)| (vec![x], w)).unzip()
        } else {
            let mut pts = Vec::new();
            let mut wts = Vec::new();
            for &(x, wx) in &axis {
                for &(y, wy) in &axis {
                    pts.push(vec![x, y]);
                    wts.push(wx * wy);
                }
            }
            (pts, wts)
        }
    } else {
        if q.mc_samples == 0 {
            return Err(Error::Parameter("mc_samples must be >= 1".into()));
        }
        let mut s = Stream::new(q.seed, domain::QUADRATURE, dim as u64);
        let vol = 2f64.powi(dim as i32) / q.mc_samples as f64;
        (0..q.mc_samples)
            .map(|_| {
                let u: Vec<f64> = (0..dim).map(|_| 2.0 * s.uniform() - 1.0).collect();
                (u, vol)
            })
            .unzip()
    };
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut mass = NeumaierSum::default();
    for (u, w) in pts.iter().zip(&wts) {
        let r = rho.raw(u);
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Parameter(format!("mollifier is negative or non-finite at {u:?}")));
        }
        if r > 0.0 {
            nodes.extend_from_slice(u);
            weights.push(w * r);
            mass.add(w * r);
        }
    }
    let mass = mass.value();
    match rho {
        Mollifier::Bump => weights.iter_mut().for_each(|w| *w /= mass),
        _ => {
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::MollifierMass { mass });
            }
        }
    }
    Ok(WeightedNodes {
        dim,
        nodes,
        weights,
    })
}

impl WeightedNodes {
    fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = NeumaierSum::default();
        for (u, w) in self.nodes.chunks_exact(self.dim).zip(&self.weights) {
            acc.add(w * f(u));
        }
        acc.value()
    }
}

#[derive(Clone)]
pub enum Regularization {
    /// Yosida approximation of order `n` with one-sided constant `K(t)`.
    Yosida { n: usize, k: TimeFn },
    /// Convolution with `ρ^m(y) = m^d ρ(m y)`.
    Mollified { m: usize, nodes: Arc<WeightedNodesHandle> },
}

/// Opaque precomputed quadrature for a mollifier.
pub struct WeightedNodesHandle(WeightedNodes);

impl fmt::Debug for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Yosida { n, .. } => write!(f, "Yosida(n = {n})"),
            Self::Mollified { m, .. } => write!(f, "Mollified(m = {m})"),
        }
    }
}

/// A base drift together with its regularization.
#[derive(Clone)]
pub struct RegularizedDrift {
    base: Drift,
    mode: Regularization,
}

impl fmt::Debug for RegularizedDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegularizedDrift").field("mode", &self.mode).finish()
    }
}

pub fn yosida_drift(
    base: Drift,
    n: usize,
    k: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Result<RegularizedDrift> {
    if n == 0 {
        return Err(Error::Parameter("Yosida order n must be >= 1".into()));
    }
    Ok(RegularizedDrift {
        base,
        mode: Regularization::Yosida { n, k: Arc::new(k) },
    })
}

pub fn mollify_drift(
    base: Drift,
    dim: usize,
    m: usize,
    rho: &Mollifier,
    quad: &Quadrature,
) -> Result<RegularizedDrift> {
    if m == 0 {
        return Err(Error::Parameter("mollifier scale m must be >= 1".into()));
    }
    if dim == 0 {
        return Err(Error::Parameter("dimension must be >= 1".into()));
    }
    let nodes = build_nodes(dim, rho, quad)?;
    Ok(RegularizedDrift {
        base,
        mode: Regularization::Mollified {
            m,
            nodes: Arc::new(WeightedNodesHandle(nodes)),
        },
    })
}

impl RegularizedDrift {
    pub fn mode(&self) -> &Regularization {
        &self.mode
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match &self.mode {
            Regularization::Yosida { n, k } => yosida_eval(&self.base, *n, k(t), t, x),
            Regularization::Mollified { m, nodes } => {
                let nodes = &nodes.0;
                if x.len() != nodes.dim {
                    return Err(Error::Dimension(format!(
                        "mollifier built for R^{}, evaluated in R^{}",
                        nodes.dim,
                        x.len()
                    )));
                }
                let inv_m = 1.0 / *m as f64;
                let mut acc = vec![NeumaierSum::default(); x.len()];
                let mut shifted = vec![0.0; x.len()];
                for (u, w) in nodes.nodes.chunks_exact(nodes.dim).zip(&nodes.weights) {
                    for ((s, xi), ui) in shifted.iter_mut().zip(x).zip(u) {
                        *s = xi - ui * inv_m;
                    }
                    for (a, b) in acc.iter_mut().zip((self.base)(t, &shifted)) {
                        a.add(w * b);
                    }
                }
                Ok(acc.iter().map(NeumaierSum::value).collect())
            }
        }
    }

    /// `(L/m) ∫|y| ρ(y) dy`, the uniform distance to the base drift for an `L`-Lipschitz base.
    pub fn mollifier_sup_bound(&self, lipschitz: f64) -> Option<f64> {
        match &self.mode {
            Regularization::Mollified { m, nodes } => {
                Some(lipschitz / *m as f64 * nodes.0.integrate(|u| norm_sq(u).sqrt()))
            }
            Regularization::Yosida { .. } => None,
        }
    }

    /// Infallible drift for simulation: a failed evaluation yields NaN, which the
    /// stepper reports as an explosion.
    pub fn into_drift(self) -> Drift {
        Arc::new(move |t, x| {
            self.eval(t, x)
                .unwrap_or_else(|_| vec![f64::NAN; x.len()])
        })
    }
}

/// `n[(id − b̃/n)⁻¹(x) − x] + ½K x` with `b̃ = b − ½K id`.
fn yosida_eval(base: &Drift, n: usize, k: f64, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let nf = n as f64;
    let shifted = |y: &[f64]| -> Vec<f64> {
        base(t, y)
            .into_iter()
            .zip(y)
            .map(|(b, yi)| b - 0.5 * k * yi)
            .collect()
    };
    // F(y) = y − b̃(y)/n − x
    let residual = |y: &[f64]| -> Vec<f64> {
        shifted(y)
            .iter()
            .zip(y)
            .zip(x)
            .map(|((b, yi), xi)| yi - b / nf - xi)
            .collect()
    };
    let norm = |v: &[f64]| norm_sq(v).sqrt();
    let mut y = x.to_vec();
    let mut r = residual(&y);
    let mut rn = norm(&r);
    let mut damping = 1.0;
    let mut steps = 0;
    let mut stalled = 0;
    while rn > RESOLVENT_TOL && steps < RESOLVENT_MAX_STEPS {
        steps += 1;
        // damped fixed point y ← y − α F(y), i.e. y ← (1−α)y + α(x + b̃(y)/n)
        let cand: Vec<f64> = y.iter().zip(&r).map(|(yi, ri)| yi - damping * ri).collect();
        let rc = residual(&cand);
        let rcn = norm(&rc);
        if rcn.is_finite() && rcn < rn {
            if rcn > 0.5 * rn {
                stalled += 1;
            } else {
                stalled = 0;
            }
            y = cand;
            r = rc;
            rn = rcn;
        } else {
            damping *= 0.5;
            stalled += 1;
        }
        if stalled >= 5 || damping < 1e-6 {
            if let Some((ny, nr)) = newton_step(&residual, &y, &r) {
                if nr < rn {
                    y = ny;
                    r = residual(&y);
                    rn = norm(&r);
                    stalled = 0;
                }
            }
            damping = damping.max(1e-3);
        }
    }
    if !(rn <= RESOLVENT_TOL) {
        return Err(Error::ResolventDiverged {
            x: x.to_vec(),
            n,
            residual: rn,
        });
    }
    // polish: a few Newton steps while they keep reducing the residual
    for _ in 0..4 {
        if rn == 0.0 {
            break;
        }
        match newton_step(&residual, &y, &r) {
            Some((ny, nr)) if nr < rn => {
                y = ny;
                r = residual(&y);
                rn = nr;
            }
            _ => break,
        }
    }
    Ok(y
        .iter()
        .zip(x)
        .map(|(yi, xi)| nf * (yi - xi) + 0.5 * k * xi)
        .collect())
}

/// One Newton step with a central-difference Jacobian; returns the new point and its residual norm.
fn newton_step(
    residual: &impl Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    r: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let d = y.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut probe = y.to_vec();
    for j in 0..d {
        let h = 1e-6 * (1.0 + y[j].abs());
        probe[j] = y[j] + h;
        let fp = residual(&probe);
        probe[j] = y[j] - h;
        let fm = residual(&probe);
        probe[j] = y[j];
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let step = jac.lu().solve(&DVector::from_column_slice(r))?;
    let ny: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
    let nr = norm_sq(&residual(&ny)).sqrt();
    nr.is_finite().then_some((ny, nr))
}

/// One level of a regularization sweep.
#[derive(Clone, Debug)]
pub enum RegLevel {
    /// No regularization (the `n = ∞` sentinel).
    Exact,
    Yosida { n: usize, k: f64 },
    Mollified { m: usize, rho: Mollifier, quad: Quadrature },
}

impl RegLevel {
    fn label(&self) -> (&'static str, f64) {
        match self {
            Self::Exact => ("exact", f64::INFINITY),
            Self::Yosida { n, .. } => ("yosida", *n as f64),
            Self::Mollified { m, .. } => ("mollified", *m as f64),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegRow {
    pub kind: &'static str,
    /// `n` or `m` (`inf` for the exact level).
    pub level: f64,
    /// Mean over particles of `|X_T^{reg} − X_T|²`.
    pub ms_gap: f64,
    pub rms_gap: f64,
}

/// Terminal gap between regularized and base dynamics under shared noise.
///
/// The measure argument is frozen at `init`, so the base drift is `b(·, init)`.
pub fn regularization_convergence(
    model: &CoefficientModel,
    levels: &[RegLevel],
    init: &EmpiricalMeasure,
    cfg: &SimConfig,
) -> Result<Vec<RegRow>> {
    let reference = simulate_frozen(model, init, init, cfg)?.into_terminal();
    let base = model.frozen_drift(init);
    let mut rows = Vec::with_capacity(levels.len());
    for level in levels {
        let regularized = match level {
            RegLevel::Exact => model.clone(),
            RegLevel::Yosida { n, k } => {
                let k = *k;
                let drift = yosida_drift(base.clone(), *n, move |_| k)?.into_drift();
                model.with_measure_free_drift(format!("{}+yosida", model.name()), drift)?
            }
            RegLevel::Mollified { m, rho, quad } => {
                let drift = mollify_drift(base.clone(), model.dim(), *m, rho, quad)?.into_drift();
                model.with_measure_free_drift(format!("{}+mollified", model.name()), drift)?
            }
        };
        let terminal = simulate_frozen(&regularized, init, init, cfg)?.into_terminal();
        let mut acc = NeumaierSum::default();
        for (a, b) in terminal.iter().zip(reference.iter()) {
            acc.add(dist_sq(a, b));
        }
        let ms = acc.value() / terminal.size() as f64;
        let (kind, lv) = level.label();
        rows.push(RegRow {
            kind,
            level: lv,
            ms_gap: ms,
            rms_gap: ms.sqrt(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drift(f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Drift {
        Arc::new(move |_t, x| f(x))
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let int = |p: i32| x.iter().zip(&w).map(|(a, b)| b * a.powi(p)).sum::<f64>();
        assert!((int(0) - 2.0).abs() < 1e-15);
        assert!((int(8) - 2.0 / 9.0).abs() < 1e-15);
        assert!(int(7).abs() < 1e-15);
    }

    #[test]
    fn yosida_linear_closed_form() {
        let y = yosida_drift(drift(|x| vec![-x[0]]), 1, |_| 0.0).unwrap();
        assert!((y.eval(0.0, &[2.0]).unwrap()[0] + 1.0).abs() < 1e-12);
        for n in [1usize, 3, 10, 100] {
            let y = yosida_drift(drift(|x| vec![-x[0]]), n, |_| 0.0).unwrap();
            for x in [-3.0, 0.5, 7.0] {
                let v = y.eval(0.0, &[x]).unwrap()[0];
                let exact = -(n as f64) * x / (n as f64 + 1.0);
                assert!((v - exact).abs() < 1e-12, "n={n} x={x}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn yosida_cubic_root() {
        let y = yosida_drift(drift(|x| vec![-x[0].powi(3)]), 1, |_| 0.0).unwrap();
        let v = y.eval(0.0, &[1.0]).unwrap()[0];
        assert!((v + 0.3176722).abs() < 1e-7, "{v}");
        let zero = y.eval(0.0, &[0.0]).unwrap()[0];
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn yosida_shift_and_two_dimensions() {
        // b(x) = x with K = 4: b̃ = −x, so the output is −n x/(n+1) + 2x
        let y = yosida_drift(drift(|x| x.to_vec()), 2, |_| 4.0).unwrap();
        let v = y.eval(0.0, &[1.5, -0.5]).unwrap();
        assert!((v[0] - (-2.0 * 1.5 / 3.0 + 3.0)).abs() < 1e-12);
        assert!((v[1] - (-2.0 * -0.5 / 3.0 - 1.0)).abs() < 1e-12);
        // coupled cubic in 2D, compared with its defining equation
        let f = |x: &[f64]| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            vec![-r2 * x[0] + 0.5 * x[1], -r2 * x[1] - 0.5 * x[0]]
        };
        let y = yosida_drift(drift(f), 1, |_| 0.0).unwrap();
        let x = [2.0, -1.0];
        let v = y.eval(0.0, &x).unwrap();
        let res: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
        let back = f(&res);
        assert!((back[0] - v[0]).abs() < 1e-9 && (back[1] - v[1]).abs() < 1e-9);
    }

    #[test]
    fn yosida_reports_divergence() {
        // id − b/n is constant for b(y) = y + 1, n = 1, so no resolvent exists
        let y = yosida_drift(drift(|x| vec![x[0] + 1.0]), 1, |_| 0.0).unwrap();
        assert!(matches!(
            y.eval(0.0, &[5.0]),
            Err(Error::ResolventDiverged { n: 1, .. })
        ));
    }

    #[test]
    fn mollifier_examples() {
        let q = Quadrature::default();
        for m in [1usize, 4, 10] {
            let b = mollify_drift(drift(|x| vec![x[0].abs()]), 1, m, &Mollifier::Uniform, &q).unwrap();
            let v = b.eval(0.0, &[0.0]).unwrap()[0];
            assert!((v - 0.5 / m as f64).abs() < 1e-15, "{v}");
        }
        let lin = mollify_drift(drift(|x| x.to_vec()), 2, 3, &Mollifier::Bump, &q).unwrap();
        let v = lin.eval(0.0, &[0.7, -1.2]).unwrap();
        assert!((v[0] - 0.7).abs() < 1e-13 && (v[1] + 1.2).abs() < 1e-13);
        let bad = Mollifier::Custom(Arc::new(|u: &[f64]| if u[0].abs() <= 1.0 { 1.0 } else { 0.0 }));
        assert!(matches!(
            mollify_drift(drift(|x| x.to_vec()), 1, 1, &bad, &q),
            Err(Error::MollifierMass { .. })
        ));
    }

    #[test]
    fn mollifier_sup_bound_for_sine() {
        let q = Quadrature::default();
        for rho in [Mollifier::Uniform, Mollifier::Bump] {
            let b = mollify_drift(drift(|x| vec![x[0].sin()]), 1, 5, &rho, &q).unwrap();
            let bound = b.mollifier_sup_bound(1.0).unwrap();
            for i in 0..=400 {
                let x = -5.0 + i as f64 * 0.025;
                let err = (b.eval(0.0, &[x]).unwrap()[0] - x.sin()).abs();
                assert!(err <= bound + 1e-8, "{x}: {err} > {bound}");
            }
        }
    }

    #[test]
    fn monte_carlo_mollifier_in_three_dimensions() {
        let q = Quadrature {
            mc_samples: 20000,
            ..Quadrature::default()
        };
        let b = mollify_drift(drift(|x| x.iter().map(|v| -v).collect()), 3, 2, &Mollifier::Bump, &q)
            .unwrap();
        let v = b.eval(0.0, &[1.0, 0.0, -1.0]).unwrap();
        assert!((v[0] + 1.0).abs() < 0.02 && (v[2] - 1.0).abs() < 0.02, "{v:?}");
    }
}
