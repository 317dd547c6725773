//! Particle clouds, Wasserstein metrology and Gaussian oracles.

pub mod assignment;
mod gaussian;
mod io;
mod transport;

pub use gaussian::{gaussian_kl, gaussian_w2, moment_match, psd_sqrt, GaussianLaw};
pub use io::{read_cloud_csv, read_cloud_csv_from, write_cloud_csv, write_cloud_csv_to};
pub use transport::{w2_exact, w2_exact_capped, w2_sliced, EXACT_CAP};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{norm_sq, NeumaierSum};
use crate::rng::{domain, Stream};

/// Equal-weight particle cloud in `R^dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    dim: usize,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("cloud dimension must be >= 1".into()));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not form a non-empty cloud in dimension {dim}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate in particle {}",
                i / dim
            )));
        }
        Ok(Self { points, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("rows have different lengths".into()));
        }
        Self::new(rows.concat(), dim)
    }

    /// `n` copies of the point `x`.
    pub fn dirac(x: &[f64], n: usize) -> Result<Self> {
        let mut points = Vec::with_capacity(x.len() * n);
        for _ in 0..n {
            points.extend_from_slice(x);
        }
        Self::new(points, x.len())
    }

    pub fn standard_normal(dim: usize, n: usize, seed: u64) -> Result<Self> {
        let mut s = Stream::new(seed, domain::INIT, 0);
        let mut points = vec![0.0; dim * n];
        s.fill_normals(&mut points);
        Self::new(points, dim)
    }

    /// `n` i.i.d. draws from `law`, using the symmetric square root of its covariance.
    pub fn sample_gaussian(law: &GaussianLaw, n: usize, seed: u64) -> Result<Self> {
        let d = law.dim();
        let root = psd_sqrt(law.cov())?;
        let mut s = Stream::new(seed, domain::INIT, 1);
        let mut z = vec![0.0; d];
        let mut points = Vec::with_capacity(d * n);
        for _ in 0..n {
            s.fill_normals(&mut z);
            for r in 0..d {
                let mut v = law.mean()[r];
                for (c, zc) in z.iter().enumerate() {
                    v += root[(r, c)] * zc;
                }
                points.push(v);
            }
        }
        Self::new(points, d)
    }

    pub(crate) fn from_trusted(points: Vec<f64>, dim: usize) -> Self {
        debug_assert!(dim > 0 && !points.is_empty() && points.len() % dim == 0);
        Self { points, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn into_points(self) -> Vec<f64> {
        self.points
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![NeumaierSum::default(); self.dim];
        for p in self.iter() {
            for (a, v) in acc.iter_mut().zip(p) {
                a.add(*v);
            }
        }
        let n = self.size() as f64;
        acc.iter().map(|a| a.value() / n).collect()
    }

    /// `‖μ‖₂² = μ(|·|²)`.
    pub fn second_moment(&self) -> f64 {
        let mut acc = NeumaierSum::default();
        for p in self.iter() {
            acc.add(norm_sq(p));
        }
        acc.value() / self.size() as f64
    }

    /// Seeded choice of `min(cap, size)` distinct indices.
    ///
    /// Depends only on `(size, cap, seed)`, so clouds of equal size are
    /// subsampled at the same particle indices.
    pub fn subsample_indices(size: usize, cap: usize, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..size).collect();
        if cap >= size {
            return idx;
        }
        let mut s = Stream::new(seed, domain::SUBSAMPLE, size as u64);
        for i in 0..cap {
            let j = i + s.index(size - i);
            idx.swap(i, j);
        }
        idx.truncate(cap);
        idx
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            points.extend_from_slice(self.point(i));
        }
        Self::from_trusted(points, self.dim)
    }

    pub fn subsample(&self, cap: usize, seed: u64) -> Self {
        if self.size() <= cap {
            return self.clone();
        }
        self.select(&Self::subsample_indices(self.size(), cap, seed))
    }

    /// Multiset equality of the particle positions.
    pub fn same_multiset(&self, other: &Self) -> bool {
        if self.dim != other.dim || self.size() != other.size() {
            return false;
        }
        fn sorted(m: &EmpiricalMeasure) -> Vec<&[f64]> {
            let mut rows: Vec<&[f64]> = m.iter().collect();
            rows.sort_by(|a, b| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            rows
        }
        sorted(self) == sorted(other)
    }
}

/// Cloud estimate of `μ(e^{ε|·|²})`.
#[derive(Clone, Debug, Serialize)]
pub struct ExpMomentReport {
    pub epsilon: f64,
    pub estimate: f64,
    /// Running averages `(particles_used, average)` at evenly spaced checkpoints.
    pub trace: Vec<(usize, f64)>,
    /// Set when some `e^{ε|x|²}` overflowed; `estimate` is then `+∞`.
    pub overflow: bool,
}

const EXP_TRACE_POINTS: usize = 256;

pub fn exp_quadratic_moment(mu: &EmpiricalMeasure, epsilon: f64) -> Result<ExpMomentReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!("epsilon must be > 0, got {epsilon}")));
    }
    let n = mu.size();
    let every = n.div_ceil(EXP_TRACE_POINTS).max(1);
    let mut acc = NeumaierSum::default();
    let mut overflow = false;
    let mut trace = Vec::with_capacity(n / every + 1);
    for (i, p) in mu.iter().enumerate() {
        let term = (epsilon * norm_sq(p)).exp();
        if term.is_infinite() {
            overflow = true;
        }
        acc.add(term);
        let used = i + 1;
        if used % every == 0 || used == n {
            let avg = if overflow { f64::INFINITY } else { acc.value() / used as f64 };
            trace.push((used, avg));
        }
    }
    let estimate = if overflow {
        f64::INFINITY
    } else {
        // each term is >= 1; guard against summation round-off
        (acc.value() / n as f64).max(1.0)
    };
    Ok(ExpMomentReport {
        epsilon,
        estimate,
        trace,
        overflow,
    })
}
