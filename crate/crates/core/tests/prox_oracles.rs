mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use rmu_core::regularizers::{
    eval_g, eval_r_mu, hard_threshold, prox_r_mu_scalar, prox_r_mu_spectral, prox_r_mu_vector,
    soft_threshold, soft_threshold_spectral, subgrad_g,
};
use rmu_core::seed;

#[test]
fn scalar_prox_matches_grid_oracle() {
    let mut rng = seed::rng(1);
    for _ in 0..1000 {
        let m = rng.random_range(-3.0..=3.0);
        let tau = rng.random_range(1.0..=5.0);
        let mu = rng.random_range(0.1..=4.0);
        let x = prox_r_mu_scalar(m, tau, mu).unwrap();
        let (_, best) = common::prox_oracle(m, tau, mu, 1e-3);
        let ours = common::prox_obj(x, m, tau, mu);
        assert!((ours - best).abs() <= 1e-10, "m={m} tau={tau} mu={mu}: {ours} vs {best}");
    }
}

#[test]
fn inner_root_case_on_a_fine_grid() {
    // m = 0.9, tau = 2, mu = 1: the inner root (2 * 0.9 - 1) / 1 = 0.8 wins
    let x = prox_r_mu_scalar(0.9, 2.0, 1.0).unwrap();
    let (xo, best) = common::prox_oracle(0.9, 2.0, 1.0, 1e-7);
    assert!((x - 0.8).abs() < 1e-14);
    assert!((x - xo).abs() < 1e-9);
    assert!((common::prox_obj(x, 0.9, 2.0, 1.0) - best).abs() < 1e-12);
}

#[test]
fn tau_one_is_hard_thresholding() {
    let m = DVector::from_vec(vec![-2.0, -0.99, 0.3, 1.0, 1.01, 4.0]);
    let p = prox_r_mu_vector(&m, 1.0, 1.0).unwrap();
    assert_eq!(p, hard_threshold(&m, 1.0).unwrap());
    // tie at |m| = sqrt(mu) resolves to zero
    assert_eq!(p[3], 0.0);
}

#[test]
fn spectral_prox_matches_per_value_oracle() {
    let mut rng = seed::rng(2);
    for _ in 0..40 {
        let a = DMatrix::from_fn(5, 5, |_, _| 1.5 * rng.sample::<f64, _>(StandardNormal));
        let tau = rng.random_range(1.0..=5.0);
        let mu = rng.random_range(0.1..=4.0);
        let d = (prox_r_mu_spectral(&a, tau, mu).unwrap() - common::spectral_oracle(&a, tau, mu))
            .norm();
        assert!(d <= 1e-8, "{d}");
    }
}

#[test]
fn soft_threshold_matches_l1_oracle() {
    // argmin 2 s |x| + (x - m)^2 by grid search, s = threshold level
    let mut rng = seed::rng(3);
    for _ in 0..200 {
        let m: f64 = rng.random_range(-3.0..=3.0);
        let s: f64 = rng.random_range(0.05..=2.0);
        let x = soft_threshold(&DVector::from_element(1, m), s).unwrap()[0];
        let f = |t: f64| 2.0 * s * t.abs() + (t - m) * (t - m);
        let best = (-400_000..=400_000)
            .map(|k| k as f64 * 1e-5)
            .map(f)
            .fold(f64::INFINITY, f64::min);
        assert!(f(x) <= best + 1e-12);
    }
}

#[test]
fn nuclear_soft_threshold_shrinks_singular_values() {
    let a = DMatrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
    let s_in = a.singular_values();
    let s_out = soft_threshold_spectral(&a, 0.7).unwrap().singular_values();
    for (x, y) in s_in.iter().zip(s_out.iter()) {
        assert!((y - (x - 0.7).max(0.0)).abs() < 1e-10);
    }
}

proptest! {
    #[test]
    fn g_is_r_plus_square(x in -10.0f64..10.0, mu in 0.01f64..9.0) {
        let g = eval_g(x, mu).unwrap();
        prop_assert!((g - (eval_r_mu(&[x], mu).unwrap() + x * x)).abs() <= 1e-12 * (1.0 + g));
        prop_assert!((g - common::g_oracle(x, mu)).abs() <= 1e-12 * (1.0 + g));
    }

    #[test]
    fn subgradient_supports_g(x in -5.0f64..5.0, y in -5.0f64..5.0, mu in 0.01f64..9.0) {
        // convexity: g(y) >= g(x) + v (y - x) for every v in dg(x)
        let sub = subgrad_g(x, mu).unwrap();
        let (gx, gy) = (common::g_oracle(x, mu), common::g_oracle(y, mu));
        for v in [sub.lower, sub.upper] {
            prop_assert!(gy >= gx + v * (y - x) - 1e-9 * (1.0 + gy.abs()));
        }
    }

    #[test]
    fn prox_output_is_zero_or_shrunk(m in -4.0f64..4.0, tau in 1.0f64..6.0, mu in 0.05f64..4.0) {
        let x = prox_r_mu_scalar(m, tau, mu).unwrap();
        prop_assert!(x == 0.0 || x.signum() == m.signum());
        prop_assert!(x.abs() <= m.abs() + 1e-12);
        prop_assert_eq!(prox_r_mu_scalar(-m, tau, mu).unwrap(), -x);
    }

    #[test]
    fn r_mu_is_bounded_by_mu(x in -10.0f64..10.0, mu in 0.01f64..9.0) {
        let r = eval_r_mu(&[x], mu).unwrap();
        prop_assert!((0.0..=mu * (1.0 + 1e-15)).contains(&r));
    }
}
