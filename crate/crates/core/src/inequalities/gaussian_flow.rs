use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{decay_fit, DecayFit, SeriesPoint};
use crate::error::{Error, Result};
use crate::measures::{gaussian_kl, gaussian_w2, GaussianLaw};

/// Linear SDE `dZ = A Z dt + S dW`; laws stay Gaussian along the flow.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSde {
    pub a: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl LinearSde {
    pub fn new(a: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || s.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "A is {}x{} and S is {}x{}",
                a.nrows(),
                a.ncols(),
                s.nrows(),
                s.ncols()
            )));
        }
        Ok(Self { a, s })
    }

    /// `dX = −θ X dt + σ dW` in `R^dim`.
    pub fn ou(theta: f64, sigma: f64, dim: usize) -> Self {
        Self {
            a: DMatrix::identity(dim, dim) * -theta,
            s: DMatrix::identity(dim, dim) * sigma,
        }
    }

    /// Kinetic system with `V = k|x|²/2`, no interaction and unit friction, state `(x, y)`.
    pub fn kinetic_harmonic(d: usize, k: f64, sigma: f64) -> Self {
        let mut a = DMatrix::zeros(2 * d, 2 * d);
        let mut s = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            a[(i, d + i)] = 1.0;
            a[(d + i, i)] = -k;
            a[(d + i, d + i)] = -1.0;
            s[(d + i, i)] = sigma;
        }
        Self { a, s }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Stationary law `N(0, M)` with `A M + M Aᵀ + S Sᵀ = 0`.
    pub fn stationary_law(&self) -> Result<GaussianLaw> {
        let d = self.dim();
        let eye = DMatrix::<f64>::identity(d, d);
        let op = eye.kronecker(&self.a) + self.a.kronecker(&eye);
        let rhs = -(&self.s * self.s.transpose());
        let rhs = DVector::from_column_slice(rhs.as_slice());
        let sol = op
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Parameter("Lyapunov equation is singular; no stationary law".into()))?;
        let m = DMatrix::from_column_slice(d, d, sol.as_slice());
        let law = GaussianLaw::new(DVector::zeros(d), (&m + m.transpose()) * 0.5)?;
        if law.cov().clone().cholesky().is_none() {
            return Err(Error::Parameter("drift matrix is not stable; no stationary law".into()));
        }
        Ok(law)
    }
}

/// Mean and covariance of the linear SDE at time `t` by classical RK4 with step `t/2048`.
pub fn linear_moment_oracle(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    m0: &DVector<f64>,
    cov0: &DMatrix<f64>,
    t: f64,
) -> Result<GaussianLaw> {
    let start = GaussianLaw::new(m0.clone(), cov0.clone())?;
    if a.nrows() != start.dim() || a.ncols() != start.dim() || s.nrows() != start.dim() {
        return Err(Error::Dimension("A, S and the initial law disagree in dimension".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!("t must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(start);
    }
    let q = s * s.transpose();
    let at = a.transpose();
    let f = |m: &DVector<f64>, c: &DMatrix<f64>| (a * m, a * c + c * &at + &q);
    let h = t / 2048.0;
    let mut m = m0.clone();
    let mut c = start.cov().clone();
    for _ in 0..2048 {
        let (k1m, k1c) = f(&m, &c);
        let (k2m, k2c) = f(&(&m + &k1m * (h / 2.0)), &(&c + &k1c * (h / 2.0)));
        let (k3m, k3c) = f(&(&m + &k2m * (h / 2.0)), &(&c + &k2c * (h / 2.0)));
        let (k4m, k4c) = f(&(&m + &k3m * h), &(&c + &k3c * h));
        m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (h / 6.0);
        c += (k1c + k2c * 2.0 + k3c * 2.0 + k4c) * (h / 6.0);
    }
    let c = (&c + c.transpose()) * 0.5;
    GaussianLaw::new(m, c)
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyDecayResult {
    /// `Ent(law_t | invariant)`.
    pub entropy: Vec<SeriesPoint>,
    /// `W₂(law_t, invariant)`.
    pub w2: Vec<SeriesPoint>,
    pub entropy_fit: Option<DecayFit>,
    pub w2_fit: Option<DecayFit>,
    /// `λ_ent / λ_W2`, expected near 2.
    pub rate_ratio: Option<f64>,
    /// `|λ_ent − 2 λ_W2| ≤ 0.2 λ_ent`.
    pub consistent: Option<bool>,
}

fn optional_fit(series: &[SeriesPoint]) -> Result<Option<DecayFit>> {
    let pairs: Vec<(f64, f64)> = series.iter().map(|p| (p.t, p.value)).collect();
    match decay_fit(&pairs, 0.0) {
        Ok(f) => Ok(Some(f)),
        Err(Error::TooFewPoints { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Entropy and W₂ to the invariant law along the exact Gaussian flow.
pub fn entropy_decay_experiment(
    sde: &LinearSde,
    mu0: &GaussianLaw,
    invariant: &GaussianLaw,
    sample_times: &[f64],
) -> Result<EntropyDecayResult> {
    if invariant.cov().clone().cholesky().is_none() {
        return Err(Error::SingularCovariance);
    }
    let mut entropy = Vec::with_capacity(sample_times.len());
    let mut w2 = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        let law = linear_moment_oracle(&sde.a, &sde.s, mu0.mean(), mu0.cov(), t)?;
        entropy.push(SeriesPoint::exact(t, gaussian_kl(&law, invariant)?));
        w2.push(SeriesPoint::exact(t, gaussian_w2(&law, invariant)?));
    }
    let entropy_fit = optional_fit(&entropy)?;
    let w2_fit = optional_fit(&w2)?;
    let (rate_ratio, consistent) = match (&entropy_fit, &w2_fit) {
        (Some(e), Some(w)) => (
            Some(e.lambda / w.lambda),
            Some((e.lambda - 2.0 * w.lambda).abs() <= 0.2 * e.lambda),
        ),
        _ => (None, None),
    };
    Ok(EntropyDecayResult {
        entropy,
        w2,
        entropy_fit,
        w2_fit,
        rate_ratio,
        consistent,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TalagrandReport {
    /// `W₂(mu0, invariant)²`.
    pub lhs: f64,
    /// `C · Ent(mu0 | invariant)`.
    pub rhs: f64,
    /// `lhs / rhs`, or 0 when both sides vanish.
    pub ratio: f64,
    /// Both sides are zero (`mu0 = invariant`).
    pub degenerate: bool,
}

/// Compares `W₂² ≤ C · Ent` for Gaussian laws.
pub fn talagrand_check(mu0: &GaussianLaw, invariant: &GaussianLaw, c: f64) -> Result<TalagrandReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("C must be > 0, got {c}")));
    }
    let w = gaussian_w2(mu0, invariant)?;
    let lhs = w * w;
    let rhs = c * gaussian_kl(mu0, invariant)?;
    let degenerate = rhs == 0.0 && lhs == 0.0;
    let ratio = if degenerate { 0.0 } else { lhs / rhs };
    Ok(TalagrandReport {
        lhs,
        rhs,
        ratio,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(m: f64, v: f64) -> GaussianLaw {
        GaussianLaw::scalar(m, v).unwrap()
    }

    #[test]
    fn oracle_stationary_point() {
        let sde = LinearSde::ou(1.0, 2f64.sqrt(), 2);
        for t in [0.3, 1.0, 4.0] {
            let law = linear_moment_oracle(&sde.a, &sde.s, &DVector::zeros(2), &DMatrix::identity(2, 2), t)
                .unwrap();
            assert!((law.cov() - DMatrix::identity(2, 2)).amax() < 1e-14);
            assert_eq!(law.mean().amax(), 0.0);
        }
    }

    #[test]
    fn oracle_closed_forms() {
        let sde = LinearSde::ou(1.0, 2f64.sqrt(), 2);
        let x0 = DVector::from_vec(vec![1.5, -2.0]);
        for t in [0.1, 0.5, 1.0, 3.0] {
            let law = linear_moment_oracle(&sde.a, &sde.s, &x0, &DMatrix::zeros(2, 2), t).unwrap();
            let v = 1.0 - (-2.0 * t).exp();
            assert!((law.cov() - DMatrix::identity(2, 2) * v).amax() < 1e-8);
            assert!((law.mean() - &x0 * (-t).exp()).amax() < 1e-8);
        }
    }

    #[test]
    fn oracle_rejects_non_psd() {
        let sde = LinearSde::ou(1.0, 1.0, 1);
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(linear_moment_oracle(&sde.a, &sde.s, &DVector::zeros(1), &bad, 1.0).is_err());
    }

    #[test]
    fn stationary_laws() {
        let ou = LinearSde::ou(1.0, 2f64.sqrt(), 1).stationary_law().unwrap();
        assert!((ou.cov()[(0, 0)] - 1.0).abs() < 1e-12);
        let kin = LinearSde::kinetic_harmonic(1, 1.0, 2f64.sqrt()).stationary_law().unwrap();
        assert!((kin.cov() - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn ou_entropy_rate_is_two() {
        let sde = LinearSde::ou(1.0, 2f64.sqrt(), 1);
        let times: Vec<f64> = (0..=20).map(|k| 0.25 * k as f64).collect();
        let r = entropy_decay_experiment(&sde, &scalar(3.0, 1.0), &scalar(0.0, 1.0), &times).unwrap();
        for p in &r.entropy {
            assert!((p.value - 4.5 * (-2.0 * p.t).exp()).abs() < 1e-9);
        }
        let ent = r.entropy_fit.unwrap();
        assert!((ent.lambda - 2.0).abs() < 1e-6);
        assert!((r.w2_fit.unwrap().lambda - 1.0).abs() < 1e-6);
        assert_eq!(r.consistent, Some(true));
    }

    #[test]
    fn stationary_start_gives_zero_entropy() {
        let sde = LinearSde::ou(1.0, 2f64.sqrt(), 1);
        let inv = scalar(0.0, 1.0);
        let r = entropy_decay_experiment(&sde, &inv, &inv, &[0.0, 0.5, 1.0, 2.0]).unwrap();
        assert!(r.entropy.iter().all(|p| p.value == 0.0));
        assert!(r.entropy_fit.is_none());
    }

    #[test]
    fn kinetic_entropy_decreases() {
        let sde = LinearSde::kinetic_harmonic(1, 1.0, 2f64.sqrt());
        let inv = sde.stationary_law().unwrap();
        let mu0 = GaussianLaw::from_slices(&[3.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let times: Vec<f64> = (0..=40).map(|k| 0.25 * k as f64).collect();
        let r = entropy_decay_experiment(&sde, &mu0, &inv, &times).unwrap();
        let late: Vec<f64> = r.entropy.iter().filter(|p| p.t > 1.0).map(|p| p.value).collect();
        assert!(late.windows(2).all(|w| w[1] < w[0]));
        assert!(r.entropy_fit.unwrap().r2 >= 0.9);
    }

    #[test]
    fn talagrand_closed_forms() {
        let inv = scalar(0.0, 1.0);
        let shift = talagrand_check(&scalar(1.7, 1.0), &inv, 2.0).unwrap();
        assert!((shift.ratio - 1.0).abs() < 1e-12);
        let wide = talagrand_check(&scalar(0.0, 4.0), &inv, 2.0).unwrap();
        assert!((wide.lhs - 1.0).abs() < 1e-12);
        assert!((wide.rhs - (3.0 - 4f64.ln())).abs() < 1e-12);
        assert!((wide.ratio - 0.6197).abs() < 1e-4);
        let same = talagrand_check(&inv, &inv, 2.0).unwrap();
        assert!(same.degenerate && same.lhs == 0.0 && same.rhs == 0.0);
    }
}
