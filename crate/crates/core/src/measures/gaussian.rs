use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::numeric::{sqrt_clamped, NeumaierSum};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Gaussian law `N(mean, cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLaw {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Gaussian parameters".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * (1.0 + cov[(i, j)].abs()) {
                    return Err(Error::InvalidInput(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let cov = symmetrize(&cov);
        let min_eigenvalue = min_eigenvalue(&cov);
        if min_eigenvalue < -PSD_TOL {
            return Err(Error::NotPsd { min_eigenvalue });
        }
        Ok(Self { mean, cov })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov_row_major.len() != d * d {
            return Err(Error::Dimension("covariance must have d*d entries".into()));
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, cov_row_major),
        )
    }

    /// One-dimensional `N(mean, variance)`.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::from_slices(&[mean], &[variance])
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Log-density at `x`; `None` when the covariance is singular.
    pub fn log_density(&self, x: &[f64]) -> Option<f64> {
        let chol = self.cov.clone().cholesky()?;
        let diff = DVector::from_column_slice(x) - &self.mean;
        let sol = chol.solve(&diff);
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let d = self.dim() as f64;
        Some(-0.5 * (diff.dot(&sol) + log_det + d * (2.0 * std::f64::consts::PI).ln()))
    }

    pub fn max_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric square root of a PSD matrix (round-off negative eigenvalues clamped to 0).
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * (1.0 + m.norm()) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// W2 between Gaussian laws (Bures formula).
pub fn gaussian_w2(a: &GaussianLaw, b: &GaussianLaw) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension("Gaussian laws of different dimension".into()));
    }
    let mean_part = (&a.mean - &b.mean).norm_squared();
    let root_b = psd_sqrt(&b.cov)?;
    let middle = psd_sqrt(&(&root_b * &a.cov * &root_b))?;
    let mut tr = NeumaierSum::default();
    for i in 0..a.dim() {
        tr.add(a.cov[(i, i)]);
        tr.add(b.cov[(i, i)]);
        tr.add(-2.0 * middle[(i, i)]);
    }
    let bures = tr.value();
    let bures = if bures.abs() <= 1e-14 * (1.0 + a.cov.trace() + b.cov.trace()) {
        0.0
    } else {
        bures
    };
    Ok(sqrt_clamped(mean_part + bures))
}

/// `Ent(a | b)` for Gaussians. Infinite when `a` is degenerate.
pub fn gaussian_kl(a: &GaussianLaw, b: &GaussianLaw) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension("Gaussian laws of different dimension".into()));
    }
    let d = a.dim();
    let chol_b = b.cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let log_det_b: f64 = chol_b.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    if !log_det_b.is_finite() {
        return Err(Error::SingularCovariance);
    }
    let Some(chol_a) = a.cov.clone().cholesky() else {
        return Ok(f64::INFINITY);
    };
    let log_det_a: f64 = chol_a.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    if !log_det_a.is_finite() {
        return Ok(f64::INFINITY);
    }
    let trace_term = chol_b.solve(&a.cov).trace();
    let diff = &b.mean - &a.mean;
    let quad = diff.dot(&chol_b.solve(&diff));
    let kl = 0.5 * (trace_term - d as f64 + quad + log_det_b - log_det_a);
    Ok(if kl < 0.0 && kl > -1e-12 { 0.0 } else { kl.max(0.0) })
}

/// Sample mean and covariance (denominator N).
pub fn moment_match(mu: &EmpiricalMeasure) -> Result<GaussianLaw> {
    let n = mu.size();
    if n < 2 {
        return Err(Error::InvalidInput(
            "moment matching needs at least 2 particles".into(),
        ));
    }
    let d = mu.dim();
    let mean = mu.mean();
    let mut acc = vec![NeumaierSum::default(); d * d];
    for p in mu.iter() {
        for i in 0..d {
            let di = p[i] - mean[i];
            for j in i..d {
                acc[i * d + j].add(di * (p[j] - mean[j]));
            }
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = acc[i * d + j].value() / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    GaussianLaw::new(DVector::from_vec(mean), cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w2_closed_forms_1d() {
        let n01 = GaussianLaw::scalar(0.0, 1.0).unwrap();
        assert_eq!(gaussian_w2(&n01, &n01).unwrap(), 0.0);
        let n31 = GaussianLaw::scalar(3.0, 1.0).unwrap();
        assert!((gaussian_w2(&n01, &n31).unwrap() - 3.0).abs() < 1e-12);
        let n04 = GaussianLaw::scalar(0.0, 4.0).unwrap();
        assert!((gaussian_w2(&n01, &n04).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_forms_1d() {
        let n01 = GaussianLaw::scalar(0.0, 1.0).unwrap();
        assert_eq!(gaussian_kl(&n01, &n01).unwrap(), 0.0);
        let n11 = GaussianLaw::scalar(1.0, 1.0).unwrap();
        assert!((gaussian_kl(&n11, &n01).unwrap() - 0.5).abs() < 1e-14);
        let n02 = GaussianLaw::scalar(0.0, 2.0).unwrap();
        let expected = 0.5 * (2.0 - 1.0 - 2f64.ln());
        assert!((gaussian_kl(&n02, &n01).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.153426).abs() < 1e-6);
    }

    #[test]
    fn kl_against_singular_reference_is_an_error() {
        let a = GaussianLaw::scalar(0.0, 1.0).unwrap();
        let b = GaussianLaw::scalar(0.0, 0.0).unwrap();
        assert!(matches!(gaussian_kl(&a, &b), Err(Error::SingularCovariance)));
        assert_eq!(gaussian_kl(&b, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn rejects_non_psd() {
        let r = GaussianLaw::from_slices(&[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(r, Err(Error::NotPsd { .. })));
        let r = GaussianLaw::from_slices(&[0.0, 0.0], &[1.0, 0.5, 0.4, 1.0]);
        assert!(r.is_err());
    }

    #[test]
    fn moment_match_examples() {
        let mu = EmpiricalMeasure::new(vec![-1.0, 1.0], 1).unwrap();
        let g = moment_match(&mu).unwrap();
        assert_eq!(g.mean()[0], 0.0);
        assert_eq!(g.cov()[(0, 0)], 1.0);

        let mu = EmpiricalMeasure::new(vec![2.5, 2.5], 1).unwrap();
        let g = moment_match(&mu).unwrap();
        assert_eq!((g.mean()[0], g.cov()[(0, 0)]), (2.5, 0.0));

        let one = EmpiricalMeasure::new(vec![1.0], 1).unwrap();
        assert!(moment_match(&one).is_err());
    }

    #[test]
    fn moment_match_large_normal_sample() {
        let mu = EmpiricalMeasure::standard_normal(3, 100_000, 12).unwrap();
        let g = moment_match(&mu).unwrap();
        let err = (g.cov() - DMatrix::<f64>::identity(3, 3)).abs().max();
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn log_density_standard_normal() {
        let g = GaussianLaw::standard(2);
        let v = g.log_density(&[0.0, 0.0]).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = psd_sqrt(&m).unwrap();
        assert!((&r * &r - &m).abs().max() < 1e-14);
    }
}
