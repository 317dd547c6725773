use super::{assignment, EmpiricalMeasure};
use crate::error::{Error, Result};
use crate::numeric::{dist_sq, sqrt_clamped, NeumaierSum};
use crate::rng::{domain, Stream};

/// Largest cloud the exact solver accepts by default.
pub const EXACT_CAP: usize = 512;

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension(format!(
            "clouds live in R^{} and R^{}",
            mu.dim(),
            nu.dim()
        )));
    }
    if mu.size() != nu.size() {
        return Err(Error::SizeMismatch {
            left: mu.size(),
            right: nu.size(),
        });
    }
    Ok(())
}

/// Exact W2 between equal-size, equal-weight clouds (default cap).
pub fn w2_exact(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    w2_exact_capped(mu, nu, EXACT_CAP)
}

pub fn w2_exact_capped(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cap: usize) -> Result<f64> {
    check_pair(mu, nu)?;
    let n = mu.size();
    if n > cap {
        return Err(Error::OverCap { size: n, cap });
    }
    if n == 1 {
        return Ok(dist_sq(mu.point(0), nu.point(0)).sqrt());
    }
    let mut cost = Vec::with_capacity(n * n);
    for p in mu.iter() {
        for q in nu.iter() {
            cost.push(dist_sq(p, q));
        }
    }
    let matching = assignment::solve(&cost, n);
    let mut total = NeumaierSum::default();
    for (i, &j) in matching.iter().enumerate() {
        total.add(cost[i * n + j]);
    }
    Ok(sqrt_clamped(total.value() / n as f64))
}

fn sorted_projection(mu: &EmpiricalMeasure, dir: &[f64]) -> Vec<f64> {
    let mut proj: Vec<f64> = mu
        .iter()
        .map(|p| p.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect();
    proj.sort_by(f64::total_cmp);
    proj
}

/// Root-mean-square over random unit directions of the 1D W2 of the projections.
///
/// Each projected distance is at most W2 (projections are 1-Lipschitz), so the
/// result is a lower-bound flavoured proxy, not W2 itself. In one dimension it
/// coincides with the exact distance.
pub fn w2_sliced(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    n_dirs: usize,
    seed: u64,
) -> Result<f64> {
    if n_dirs == 0 {
        return Err(Error::InvalidInput("n_dirs must be >= 1".into()));
    }
    check_pair(mu, nu)?;
    let d = mu.dim();
    let n = mu.size() as f64;
    let mut s = Stream::new(seed, domain::DIRECTIONS, 0);
    let mut dir = vec![0.0; d];
    let mut total = NeumaierSum::default();
    for _ in 0..n_dirs {
        if d == 1 {
            dir[0] = 1.0;
        } else {
            loop {
                s.fill_normals(&mut dir);
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    dir.iter_mut().for_each(|x| *x /= norm);
                    break;
                }
            }
        }
        let a = sorted_projection(mu, &dir);
        let b = sorted_projection(nu, &dir);
        let mut w = NeumaierSum::default();
        for (x, y) in a.iter().zip(&b) {
            w.add((x - y) * (x - y));
        }
        total.add(w.value() / n);
    }
    Ok(sqrt_clamped(total.value() / n_dirs as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(v: &[f64], d: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(v.to_vec(), d).unwrap()
    }

    #[test]
    fn identical_clouds_are_at_distance_zero() {
        let mu = EmpiricalMeasure::standard_normal(2, 64, 1).unwrap();
        assert_eq!(w2_exact(&mu, &mu).unwrap(), 0.0);
        assert_eq!(w2_sliced(&mu, &mu, 16, 3).unwrap(), 0.0);
    }

    #[test]
    fn single_points() {
        let d = w2_exact(&cloud(&[1.0, 2.0], 2), &cloud(&[4.0, 6.0], 2)).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn two_point_matching_by_enumeration() {
        // matchings: 0->2,1->3 costs (4+4)/2 = 4; crossing costs (9+1)/2 = 5
        let mu = cloud(&[0.0, 1.0], 1);
        let nu = cloud(&[3.0, 2.0], 1);
        let straight = ((4.0f64 + 4.0) / 2.0).sqrt();
        let crossed = ((9.0f64 + 1.0) / 2.0).sqrt();
        let d = w2_exact(&mu, &nu).unwrap();
        assert_eq!(d, straight.min(crossed));
        assert_eq!(d, 2.0);
    }

    #[test]
    fn errors() {
        let a = cloud(&[0.0, 1.0], 1);
        let b = cloud(&[0.0], 1);
        assert!(matches!(w2_exact(&a, &b), Err(Error::SizeMismatch { .. })));
        assert!(matches!(
            w2_exact_capped(&a, &a, 1),
            Err(Error::OverCap { size: 2, cap: 1 })
        ));
        assert!(w2_sliced(&a, &a, 0, 1).is_err());
        let c = cloud(&[0.0, 1.0], 2);
        assert!(matches!(w2_exact(&b, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn sliced_equals_exact_in_one_dimension() {
        let mu = EmpiricalMeasure::standard_normal(1, 200, 7).unwrap();
        let nu = EmpiricalMeasure::standard_normal(1, 200, 8).unwrap();
        let e = w2_exact(&mu, &nu).unwrap();
        let s = w2_sliced(&mu, &nu, 5, 1).unwrap();
        assert!((e - s).abs() < 1e-12, "{e} vs {s}");
    }

    #[test]
    fn sliced_shift_is_below_exact() {
        let n = 256;
        let mu = EmpiricalMeasure::standard_normal(3, n, 2).unwrap();
        let shifted: Vec<f64> = mu
            .iter()
            .flat_map(|p| [p[0] + 3.0, p[1], p[2]])
            .collect();
        let nu = cloud(&shifted, 3);
        let exact = w2_exact(&mu, &nu).unwrap();
        let sliced = w2_sliced(&mu, &nu, 200, 4).unwrap();
        assert!(exact <= 3.0 + 1e-12);
        assert!(sliced <= 3.0);
        assert!(sliced <= exact * (1.0 + 1e-9));
    }
}
