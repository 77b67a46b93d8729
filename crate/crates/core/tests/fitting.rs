use cavqfi::scaling::fit_power_law;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn ns() -> Vec<f64> {
    (2..=12).map(|n| n as f64).collect()
}

fn series(a: f64, b: f64, c: f64) -> Vec<f64> {
    ns().iter().map(|n| a * n.powf(b) + c).collect()
}

#[test]
fn exact_power_laws_are_recovered() {
    for (a, b, c) in [(2.0, 2.0, 1.0), (0.3, 0.5, 4.0), (5.0, 1.0, 0.0), (1.2, 1.7, -0.5), (0.05, 2.5, 2.0)] {
        let fit = fit_power_law(&ns(), &series(a, b, c)).unwrap();
        assert!(fit.converged);
        assert!((fit.b - b).abs() < 1e-6, "b={b}: {fit:?}");
        assert!((fit.a - a).abs() / a < 1e-5, "a={a}: {fit:?}");
    }
}

#[test]
fn noisy_exponents_stay_close() {
    let b = 1.5;
    let clean = series(1.0, b, 0.5);
    let noise = Normal::new(0.0, 0.01).unwrap();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<f64> = clean.iter().map(|v| v * (1.0 + noise.sample(&mut rng))).collect();
        let fit = fit_power_law(&ns(), &noisy).unwrap();
        assert!((fit.b - b).abs() < 0.1, "seed {seed}: b = {}", fit.b);
    }
}

#[test]
fn too_few_points_is_an_error() {
    assert!(fit_power_law(&[2.0, 3.0], &[1.0, 2.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponent_is_invariant_under_scaling(
        a in 0.1f64..5.0,
        b in 0.5f64..2.5,
        c in 0.0f64..3.0,
        s in 0.01f64..100.0,
    ) {
        let y = series(a, b, c);
        let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
        let f1 = fit_power_law(&ns(), &y).unwrap();
        let f2 = fit_power_law(&ns(), &ys).unwrap();
        prop_assert!((f1.b - f2.b).abs() < 1e-8, "{} vs {}", f1.b, f2.b);
    }

    #[test]
    fn exponents_in_range_are_recovered(b in 0.5f64..2.5, a in 0.2f64..3.0) {
        let fit = fit_power_law(&ns(), &series(a, b, 1.0)).unwrap();
        prop_assert!((fit.b - b).abs() < 1e-6, "b={}: {:?}", b, fit);
    }
}
