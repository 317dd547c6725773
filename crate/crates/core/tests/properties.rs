use std::sync::Arc;

use mv_ergo::coefficients::{Drift, KineticConstants, KineticGradientSpec};
use mv_ergo::inequalities::{decay_fit, talagrand_check};
use mv_ergo::kinetic::{c_psi, lyapunov_psi, simulate_kinetic, KineticState};
use mv_ergo::measures::{
    gaussian_kl, gaussian_w2, read_cloud_csv_from, w2_exact, w2_sliced, write_cloud_csv_to,
    EmpiricalMeasure, GaussianLaw,
};
use mv_ergo::rng::{PathNoise, Stream};
use mv_ergo::simulator::{yosida_drift, SimConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn cloud(dim: usize, max_n: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-10.0..10.0f64, n * dim)
            .prop_map(move |pts| EmpiricalMeasure::new(pts, dim).unwrap())
    })
}

fn triple(max_n: usize) -> impl Strategy<Value = [EmpiricalMeasure; 3]> {
    (1..=3usize, 1..=max_n).prop_flat_map(|(dim, n)| {
        prop::collection::vec(prop::collection::vec(-10.0..10.0f64, n * dim), 3).prop_map(move |v| {
            let mut it = v.into_iter().map(|p| EmpiricalMeasure::new(p, dim).unwrap());
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
        })
    })
}

/// Brute-force W2 over all permutations.
fn w2_brute(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    fn go(a: &EmpiricalMeasure, b: &EmpiricalMeasure, i: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if i == a.size() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.size() {
            if !used[j] {
                used[j] = true;
                let c: f64 = a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                go(a, b, i + 1, used, acc + c, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, 0, &mut vec![false; b.size()], 0.0, &mut best);
    (best / a.size() as f64).sqrt()
}

fn spd(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.5..1.5f64, dim * dim).prop_map(move |v| {
        let m = DMatrix::from_vec(dim, dim, v);
        &m * m.transpose() + DMatrix::identity(dim, dim) * 0.1
    })
}

fn gaussian(dim: usize) -> impl Strategy<Value = GaussianLaw> {
    (prop::collection::vec(-3.0..3.0f64, dim), spd(dim))
        .prop_map(|(m, c)| GaussianLaw::new(DVector::from_vec(m), c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn w2_exact_is_a_metric([a, b, c] in triple(128)) {
        let ab = w2_exact(&a, &b).unwrap();
        let ba = w2_exact(&b, &a).unwrap();
        let ac = w2_exact(&a, &c).unwrap();
        let bc = w2_exact(&b, &c).unwrap();
        prop_assert!(w2_exact(&a, &a).unwrap() <= 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
        prop_assert!(ac <= ab + bc + 1e-9);
    }
}

proptest! {
    #[test]
    fn w2_exact_matches_brute_force(a in cloud(2, 6), seed in any::<u64>()) {
        let b = EmpiricalMeasure::standard_normal(2, a.size(), seed).unwrap();
        let exact = w2_exact(&a, &b).unwrap();
        prop_assert!((exact - w2_brute(&a, &b)).abs() <= 1e-9 * (1.0 + exact));
    }

    #[test]
    fn w2_is_at_least_the_mean_gap(a in cloud(2, 40), shift in -5.0..5.0f64) {
        let pts: Vec<f64> = a.points().iter().rev().map(|v| v * 0.5 + shift).collect();
        let b = EmpiricalMeasure::new(pts, 2).unwrap();
        let (ma, mb) = (a.mean(), b.mean());
        let gap = ((ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2)).sqrt();
        prop_assert!(w2_exact(&a, &b).unwrap() >= gap - 1e-9);
    }

    #[test]
    fn sliced_equals_exact_in_one_dimension(a in cloud(1, 128), seed in any::<u64>()) {
        let b = EmpiricalMeasure::standard_normal(1, a.size(), seed).unwrap();
        let exact = w2_exact(&a, &b).unwrap();
        prop_assert!((w2_sliced(&a, &b, 1, seed).unwrap() - exact).abs() <= 1e-12 * (1.0 + exact));
    }

    #[test]
    fn sliced_never_exceeds_exact(a in cloud(3, 40), seed in any::<u64>()) {
        let b = EmpiricalMeasure::standard_normal(3, a.size(), seed).unwrap();
        prop_assert!(w2_sliced(&a, &b, 16, seed).unwrap() <= w2_exact(&a, &b).unwrap() + 1e-9);
    }

    #[test]
    fn gaussian_w2_is_a_metric(a in gaussian(2), b in gaussian(2), c in gaussian(2)) {
        let ab = gaussian_w2(&a, &b).unwrap();
        prop_assert!((ab - gaussian_w2(&b, &a).unwrap()).abs() <= 1e-8 * (1.0 + ab));
        prop_assert!(gaussian_w2(&a, &a).unwrap() <= 1e-6);
        prop_assert!(gaussian_w2(&a, &c).unwrap() <= ab + gaussian_w2(&b, &c).unwrap() + 1e-8);
    }

    #[test]
    fn commuting_gaussians_have_closed_form_w2(
        m in prop::collection::vec(-3.0..3.0f64, 2),
        v in prop::collection::vec(0.1..4.0f64, 4),
    ) {
        let a = GaussianLaw::from_slices(&m, &[v[0], 0.0, 0.0, v[1]]).unwrap();
        let b = GaussianLaw::from_slices(&[0.0, 0.0], &[v[2], 0.0, 0.0, v[3]]).unwrap();
        let want = (m[0] * m[0] + m[1] * m[1]
            + (v[0].sqrt() - v[2].sqrt()).powi(2)
            + (v[1].sqrt() - v[3].sqrt()).powi(2))
        .sqrt();
        prop_assert!((gaussian_w2(&a, &b).unwrap() - want).abs() <= 1e-9);
    }

    #[test]
    fn kl_is_nonnegative_and_talagrand_holds(mu in gaussian(2), inv in gaussian(2)) {
        prop_assert!(gaussian_kl(&mu, &inv).unwrap() >= -1e-12);
        let c = 2.0 * inv.max_eigenvalue();
        let rep = talagrand_check(&mu, &inv, c).unwrap();
        prop_assert!(rep.ratio <= 1.0 + 1e-9, "ratio {}", rep.ratio);
    }

    #[test]
    fn decay_fit_recovers_exponentials(c in 0.1..50.0f64, lambda in 0.01..5.0f64, n in 3usize..40) {
        let series: Vec<(f64, f64)> = (0..n).map(|k| {
            let t = k as f64 * 0.1;
            (t, c * (-lambda * t).exp())
        }).collect();
        let fit = decay_fit(&series, 0.0).unwrap();
        prop_assert!((fit.lambda - lambda).abs() <= 1e-9 * (1.0 + lambda));
        prop_assert!((fit.c - c).abs() <= 1e-9 * c);
        prop_assert!(fit.r2 > 1.0 - 1e-9);
    }

    #[test]
    fn psi_is_equivalent_to_the_euclidean_gap(
        r in 0.1..3.0f64,
        r0_frac in 0.0..0.99f64,
        z in prop::collection::vec(-5.0..5.0f64, 4),
    ) {
        // positive definite form needs r0 < 1
        let kc = KineticConstants { r, r0: r0_frac, theta: 0.5, big_r: 1.0, km: 1.0 };
        let c = c_psi(&kc).unwrap();
        let a = KineticState::new(z[..1].to_vec(), z[1..2].to_vec()).unwrap();
        let b = KineticState::new(z[2..3].to_vec(), z[3..].to_vec()).unwrap();
        let psi2 = lyapunov_psi(&kc, &a, &b).unwrap().powi(2);
        let q = (z[0] - z[2]).powi(2) + (z[1] - z[3]).powi(2);
        prop_assert!(psi2 <= c * q * (1.0 + 1e-12) + 1e-300);
        prop_assert!(q <= c * psi2 * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn yosida_of_linear_drift_has_closed_form(n in 1usize..500, x in -100.0..100.0f64, a in 0.0..5.0f64) {
        let base: Drift = Arc::new(move |_t, x: &[f64]| x.iter().map(|v| -a * v).collect());
        let y = yosida_drift(base, n, |_| 0.0).unwrap();
        let nf = n as f64;
        let want = -nf * a * x / (nf + a);
        prop_assert!((y.eval(0.0, &[x]).unwrap()[0] - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn yosida_is_one_sided_lipschitz(n in 1usize..64, x in -4.0..4.0f64, y in -4.0..4.0f64) {
        // b(x) = −x³ + x satisfies ⟨b(x) − b(y), x − y⟩ ≤ |x − y|², so K = 2
        let base: Drift = Arc::new(|_t, x: &[f64]| vec![-x[0].powi(3) + x[0]]);
        let k = 2.0;
        let reg = yosida_drift(base, n, move |_| k).unwrap();
        let bx = reg.eval(0.0, &[x]).unwrap()[0];
        let by = reg.eval(0.0, &[y]).unwrap()[0];
        let lhs = (bx - by) * (x - y);
        prop_assert!(lhs <= 0.5 * k * (x - y).powi(2) + 1e-9 * (1.0 + (x - y).powi(2)));
    }

    #[test]
    fn cloud_csv_roundtrip_is_exact(a in cloud(3, 50)) {
        let mut buf = Vec::new();
        write_cloud_csv_to(&a, &mut buf).unwrap();
        let back = read_cloud_csv_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back.points(), a.points());
        prop_assert_eq!(back.dim(), 3);
    }

    #[test]
    fn path_noise_is_random_access(seed in any::<u64>(), index in 0usize..1000, step in 0u64..50) {
        let noise = PathNoise::new(seed, 2);
        let mut s = noise.particle(index);
        let mut z = vec![0.0; 2];
        for _ in 0..=step {
            s.fill_normals(&mut z);
        }
        prop_assert_eq!(noise.at(index, step), z);
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), domain in 0u64..16, stream in any::<u64>()) {
        let mut a = Stream::new(seed, domain, stream);
        let mut b = Stream::new(seed, domain, stream);
        for _ in 0..32 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kinetic_position_moves_with_the_old_velocity(seed in any::<u64>(), dt in 1e-4..0.05f64) {
        let model = KineticGradientSpec::default().build().unwrap();
        let init = EmpiricalMeasure::standard_normal(2, 64, seed).unwrap();
        let cfg = SimConfig::new(dt, 20.0 * dt, 64, seed);
        let run = simulate_kinetic(&model, &init, &cfg).unwrap();
        for w in run.clouds.windows(2) {
            for (before, after) in w[0].iter().zip(w[1].iter()) {
                prop_assert_eq!(after[0].to_bits(), (before[0] + before[1] * dt).to_bits());
            }
        }
    }
}
