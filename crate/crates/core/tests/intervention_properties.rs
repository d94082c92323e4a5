use irmc::design::Domain;
use irmc::intervention::{
    find_target, fit_impulse_surrogate, optimal_impulses, predict_impulse, InterventionConfig, InterventionMode,
    StepPolicy,
};
use irmc::model::{make_federico_model, ImpulseModel};
use irmc::surrogate::{fit_surrogate, LambdaMode, StepFit, SurrogateSpec, TpsKernel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LO: f64 = 1.0;
const HI: f64 = 90.0;

/// Interpolating spline of `f` on a fine grid over the Federico training domain.
fn fitted(f: impl Fn(f64) -> f64) -> StepFit {
    let x: Vec<Vec<f64>> = (0..121).map(|i| vec![LO + (HI - LO) * i as f64 / 120.0]).collect();
    let y: Vec<f64> = x.iter().map(|r| f(r[0])).collect();
    let spec = SurrogateSpec::Tps { lambda_mode: LambdaMode::Fixed(0.0), kernel: TpsKernel::Cubic, max_knots: 121 };
    let q = fit_surrogate(&spec, false, &x, &y, None, 1, 0).unwrap();
    StepFit { q, domain: Domain::new(vec![LO], vec![HI]).unwrap(), zhat: None }
}

/// Concave value-like curve peaking in slope near `peak`, plus an optional ripple.
fn value_curve(scale: f64, peak: f64, ripple: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| scale * (x.sqrt() - 0.5 * x / peak.sqrt()) + 1.6 * x + ripple * (0.3 * x).sin()
}

/// Dense-grid maximization of `z ↦ Q̂(x+z) + κ(x,z)` over admissible non-zero impulses.
fn brute_force_m(model: &ImpulseModel, fit: &StepFit, x: f64, n: usize) -> f64 {
    let set = &model.impulse_set;
    let lo = set.z_min[0].max(0.0).max(LO - x);
    let hi = set.z_max[0].min(HI - x);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .filter(|z| *z != 0.0)
        .map(|z| fit.q.value(&[(x + z).clamp(LO, HI)]) + model.impulse_cost(&[x], &[z]))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn grid_then_polish_matches_dense_grid() {
    let model = make_federico_model();
    let cfg = InterventionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fits: Vec<StepFit> = (0..5)
        .map(|i| fitted(value_curve(20.0 + 10.0 * i as f64, 30.0 + 8.0 * i as f64, 0.5 * i as f64)))
        .collect();
    for _ in 0..100 {
        let fit = &fits[rng.random_range(0..fits.len())];
        let x = rng.random_range(LO..HI);
        let policy = StepPolicy::new(&model, fit, &cfg, false);
        let m = policy.decide(&[x]).m_value;
        let oracle = brute_force_m(&model, fit, x, 2000);
        assert!((m - oracle).abs() <= 1e-4 * m.abs(), "x={x}: {m} vs {oracle}");
    }
}

#[test]
fn root_search_target_matches_dense_argmax() {
    let model = make_federico_model();
    for i in 0..5 {
        let fit = fitted(value_curve(20.0 + 10.0 * i as f64, 30.0 + 8.0 * i as f64, 0.0));
        let t = find_target(&fit.q, &fit.domain, 0, &[LO], -1.0).unwrap();
        let n = 20_000;
        let h = (HI - LO) / (n - 1) as f64;
        let argmax = (0..n)
            .map(|j| LO + h * j as f64)
            .max_by(|a, b| (fit.q.value(&[*a]) - a).total_cmp(&(fit.q.value(&[*b]) - b)))
            .unwrap();
        assert!((t.s_star - argmax).abs() < h, "{} vs {argmax}", t.s_star);
        let mut g = [0.0];
        fit.q.gradient(&[t.s_star], &mut g);
        assert!((g[0] - 1.0).abs() < 1e-6);
        // the closed form uses the same target for every state
        let cfg = InterventionConfig { mode: InterventionMode::LinearRootSearch, ..Default::default() };
        let policy = StepPolicy::new(&model, &fit, &cfg, false);
        assert_eq!(policy.target().unwrap().s_star, t.s_star);
    }
}

#[test]
fn zhat_tracks_root_search_on_the_action_region() {
    let model = make_federico_model();
    let mut fit = fitted(value_curve(40.0, 45.0, 0.0));
    let cfg = InterventionConfig { mode: InterventionMode::LinearRootSearch, ..Default::default() };
    let s_star = StepPolicy::new(&model, &fit, &cfg, false).target().unwrap().s_star;
    let sites: Vec<Vec<f64>> = (0..60).map(|i| vec![LO + 0.5 * i as f64]).collect();
    let z_opt = optimal_impulses(&StepPolicy::new(&model, &fit, &cfg, false), &sites);
    let spec = SurrogateSpec::Tps { lambda_mode: LambdaMode::Gcv, kernel: TpsKernel::ThinPlate, max_knots: 60 };
    fit.zhat = Some(fit_impulse_surrogate(&spec, false, &sites, &z_opt, 0).unwrap());
    let policy = StepPolicy::new(&model, &fit, &cfg, false);
    for x in sites.iter().map(|s| s[0]).filter(|x| policy.decide(&[*x]).act) {
        let z = predict_impulse(fit.zhat.as_ref().unwrap(), &[x]);
        let want = s_star - x;
        assert!((z - want).abs() <= 0.02 * want, "x={x}: {z} vs {want}");
    }
}

#[test]
fn constant_impulses_give_constant_zhat() {
    let sites: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0 + i as f64]).collect();
    let z = vec![7.5; 20];
    for spec in [
        SurrogateSpec::Gp { restarts: 1, replicate_noise: false },
        SurrogateSpec::Tps { lambda_mode: LambdaMode::Gcv, kernel: TpsKernel::ThinPlate, max_knots: 20 },
    ] {
        let zhat = fit_impulse_surrogate(&spec, false, &sites, &z, 0).unwrap();
        for i in 0..50 {
            let x = 1.0 + 0.4 * i as f64;
            assert!((predict_impulse(&zhat, &[x]) - 7.5).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decisions_follow_the_tie_rule(
        scale in 5.0f64..60.0,
        peak in 20.0f64..70.0,
        ripple in 0.0f64..2.0,
        root_search in any::<bool>(),
        xs in prop::collection::vec(LO..HI, 50),
    ) {
        let model = make_federico_model();
        let fit = fitted(value_curve(scale, peak, ripple));
        let mode = if root_search { InterventionMode::LinearRootSearch } else { InterventionMode::GridThenPolish };
        let cfg = InterventionConfig { mode, ..Default::default() };
        let policy = StepPolicy::new(&model, &fit, &cfg, false);
        for x in xs {
            let d = policy.decide(&[x]);
            prop_assert_eq!(d.act, d.m_value > d.q_value + cfg.tie_eps * (1.0 + d.q_value.abs()));
            if d.act {
                prop_assert!(d.m_value >= d.q_value);
                prop_assert!(model.impulse_set.is_admissible(&d.impulse) && d.impulse[0] > 0.0);
            } else {
                prop_assert_eq!(&d.impulse, &vec![0.0]);
            }
        }
    }

    #[test]
    fn intervention_value_dominates_probed_impulses(scale in 5.0f64..60.0, peak in 20.0f64..70.0, seed in any::<u64>()) {
        let model = make_federico_model();
        let fit = fitted(value_curve(scale, peak, 0.0));
        let cfg = InterventionConfig { mode: InterventionMode::LinearRootSearch, ..Default::default() };
        let policy = StepPolicy::new(&model, &fit, &cfg, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let x = rng.random_range(LO..HI);
            let z = rng.random_range(0.0..(HI - x));
            let probe = fit.q.value(&[x + z]) + model.impulse_cost(&[x], &[z]);
            let m = policy.decide(&[x]).m_value;
            prop_assert!(m >= probe - 1e-9 * (1.0 + m.abs()), "x={x} z={z}: {m} < {probe}");
        }
    }

    #[test]
    fn concave_action_region_is_a_down_set(scale in 5.0f64..60.0, peak in 20.0f64..70.0) {
        let model = make_federico_model();
        let fit = fitted(value_curve(scale, peak, 0.0));
        let cfg = InterventionConfig { mode: InterventionMode::LinearRootSearch, ..Default::default() };
        let policy = StepPolicy::new(&model, &fit, &cfg, false);
        let mut seen_continue = false;
        for i in 0..500 {
            let x = LO + (HI - LO) * i as f64 / 499.0;
            let d = policy.decide(&[x]);
            if d.act {
                prop_assert!(!seen_continue || (d.m_value - d.q_value).abs() < cfg.tie_eps * (1.0 + d.q_value.abs()),
                    "acting at x={x} above a continuation state");
            } else {
                seen_continue = true;
            }
        }
    }
}

