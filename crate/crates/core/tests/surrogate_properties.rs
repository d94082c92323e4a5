use irmc::surrogate::{fit_gp, fit_tps, GpHyper, GpSurrogate, LambdaMode, TpsKernel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(dim: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
    let y = x
        .iter()
        .map(|r| r.iter().map(|v| (0.7 * v).sin() + 0.05 * v * v).sum::<f64>() + 0.1 * rng.random_range(-1.0..1.0))
        .collect();
    (x, y)
}

/// Central difference of `f` along coordinate `j` with a scale-aware step.
fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], j: usize) -> f64 {
    let h = 1e-5 * (1.0 + x[j].abs());
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[j] += h;
    b[j] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

fn close(analytic: f64, numeric: f64, scale: f64) -> bool {
    (analytic - numeric).abs() <= 1e-3 * analytic.abs().max(scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gp_gradient_matches_finite_differences(seed in 0u64..10_000, dim in 1usize..=2, ls in 0.5f64..4.0) {
        let (x, y) = random_data(dim, 30, seed);
        let hyper = GpHyper { lengthscales: vec![ls; dim], process_var: 2.0, noise_var: 1e-3 };
        let gp = GpSurrogate::with_hyper(&x, &y, None, hyper).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut g = vec![0.0; dim];
        for _ in 0..20 {
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..9.5)).collect();
            gp.predict_gradient(&p, &mut g);
            let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())) / 10.0;
            for j in 0..dim {
                let fd = central_diff(|q| gp.predict(q), &p, j);
                prop_assert!(close(g[j], fd, scale), "coord {j}: analytic {} vs fd {fd}", g[j]);
            }
        }
    }

    #[test]
    fn tps_gradient_matches_finite_differences(seed in 0u64..10_000, dim in 1usize..=2, cubic in any::<bool>()) {
        let (x, y) = random_data(dim, 80, seed);
        let kernel = if cubic { TpsKernel::Cubic } else { TpsKernel::ThinPlate };
        let t = fit_tps(&x, &y, LambdaMode::Gcv, kernel, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdef);
        let mut g = vec![0.0; dim];
        for _ in 0..20 {
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..9.5)).collect();
            t.predict_gradient(&p, &mut g);
            for j in 0..dim {
                let fd = central_diff(|q| t.predict(q), &p, j);
                prop_assert!(close(g[j], fd, 0.1), "coord {j}: analytic {} vs fd {fd}", g[j]);
            }
        }
    }

    #[test]
    fn gp_is_invariant_to_row_order(seed in 0u64..10_000, dim in 1usize..=2) {
        let (x, y) = random_data(dim, 25, seed);
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.reverse();
        idx.rotate_left((seed % 25) as usize);
        let xp: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let a = fit_gp(&x, &y, None, None, 1, 5).unwrap();
        let b = fit_gp(&xp, &yp, None, None, 1, 5).unwrap();
        prop_assert_eq!(&a.hyper, &b.hyper);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..10.0)).collect();
            prop_assert!((a.predict(&p) - b.predict(&p)).abs() <= 1e-12 * (1.0 + a.predict(&p).abs()));
        }
    }

    #[test]
    fn tps_side_conditions_hold_for_any_data(seed in 0u64..10_000, dim in 1usize..=2, log_lambda in -6.0f64..6.0) {
        let (x, y) = random_data(dim, 50, seed);
        let t = fit_tps(&x, &y, LambdaMode::Fixed(10f64.powf(log_lambda)), TpsKernel::ThinPlate, 30).unwrap();
        let (s0, s1) = t.side_conditions();
        let amax = t.coef_alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        prop_assert!(s0.abs() <= 1e-8 * (1.0 + amax) && s1 <= 1e-8 * (1.0 + amax), "{s0} {s1}");
    }
}

#[test]
fn fitted_gp_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let (x, y) = random_data(2, 40, 100 + seed);
        let gp = fit_gp(&x, &y, None, None, 2, seed).unwrap();
        let mut g = [0.0; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let p = [rng.random_range(0.5..9.5), rng.random_range(0.5..9.5)];
            gp.predict_gradient(&p, &mut g);
            for j in 0..2 {
                let fd = central_diff(|q| gp.predict(q), &p, j);
                assert!(close(g[j], fd, 0.1), "seed {seed} coord {j}: {} vs {fd}", g[j]);
            }
        }
    }
}
