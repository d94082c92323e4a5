mod common;

use std::sync::Arc;

use common::{short_federico, small_config};
use irmc::model::{ImpulseCost, ImpulseModel, TerminalValue};
use irmc::policy::{forward_evaluate, ForwardReport};
use irmc::solver::{solve, stationary_value};

const N_STEPS: usize = 20;
const FORWARD_PATHS: usize = 4000;

fn value_at(model: &ImpulseModel, seed: u64, x0: f64) -> ForwardReport {
    let cfg = small_config(seed, false);
    let (stack, _) = solve(model, &cfg).unwrap();
    forward_evaluate(model, &stack, &cfg.intervention, &[x0], FORWARD_PATHS, 99, false).unwrap()
}

fn without_impulses(mut model: ImpulseModel) -> ImpulseModel {
    model.impulse_cost = ImpulseCost::Custom(Arc::new(|_, _| f64::NEG_INFINITY));
    model
}

/// Closed-form expectation of the left-endpoint discounted reward sum under GBM
/// with `π(x) = 2√x` and the model's power perpetuity at maturity.
fn uncontrolled_value(model: &ImpulseModel, x: f64) -> f64 {
    let (mu, sigma, gamma, r, dt) = (-0.07f64, 0.25f64, 0.5f64, model.discount_rate, model.dt);
    let moment = |t: f64| x.powf(gamma) * (gamma * (mu - 0.5 * sigma * sigma) * t + 0.5 * gamma * gamma * sigma * sigma * t).exp();
    let running: f64 = (0..model.n_steps()).map(|k| {
        let t = k as f64 * dt;
        (-r * t).exp() * moment(t) / gamma * dt
    }).sum();
    let coef = match model.terminal_value {
        TerminalValue::PowerPerpetuity { coef, .. } => coef,
        _ => unreachable!("federico terminal value"),
    };
    let t = model.horizon;
    running + (-r * t).exp() * coef * moment(t) / gamma
}

#[test]
fn impulse_option_never_hurts() {
    let model = short_federico(N_STEPS, 0.08);
    for x0 in [5.0, 20.0, 50.0] {
        let with = value_at(&model, 3, x0);
        let without = value_at(&without_impulses(model.clone()), 3, x0);
        let se = with.std_error.hypot(without.std_error);
        assert!(with.value_estimate >= without.value_estimate - 2.0 * se, "x0={x0}: {} vs {}", with.value_estimate, without.value_estimate);
    }
}

#[test]
fn doubling_the_discount_rate_lowers_the_value() {
    let base = value_at(&short_federico(N_STEPS, 0.08), 5, 50.0);
    let doubled = value_at(&short_federico(N_STEPS, 0.16), 5, 50.0);
    assert!(doubled.value_estimate < base.value_estimate, "{} vs {}", doubled.value_estimate, base.value_estimate);
}

#[test]
fn no_impulse_model_matches_closed_form() {
    let model = without_impulses(short_federico(N_STEPS, 0.08));
    let cfg = small_config(8, false);
    let (stack, traces) = solve(&model, &cfg).unwrap();
    assert!(traces.iter().all(|t| t.fraction_acted == 0.0));
    let report = forward_evaluate(&model, &stack, &cfg.intervention, &[50.0], FORWARD_PATHS, 4, false).unwrap();
    assert_eq!(report.n_events, 0);
    let exact = uncontrolled_value(&model, 50.0);
    assert!((report.value_estimate - exact).abs() <= 2.0 * report.std_error, "{} vs {exact}", report.value_estimate);
    // the in-sample residual of the step-0 fit measures the standard error of a site mean
    let site_se = traces[0].fit.rmse;
    let stationary = stationary_value(&model, &stack, &cfg.intervention, 0).unwrap();
    for x in [10.0, 30.0, 50.0, 80.0] {
        let exact = uncontrolled_value(&model, x);
        let got = stationary.value(&[x]);
        assert!((got - exact).abs() <= 2.0 * site_se, "x={x}: {got} vs {exact} (se {site_se})");
    }
}

#[test]
fn predictions_depend_only_on_time_to_maturity() {
    let short = solve(&short_federico(N_STEPS, 0.08), &small_config(21, false)).unwrap();
    let long = solve(&short_federico(N_STEPS + 1, 0.08), &small_config(22, false)).unwrap();
    for remaining in [1, 5, 15] {
        let (a, b) = (&short.0.steps[N_STEPS - remaining], &long.0.steps[N_STEPS + 1 - remaining]);
        let noise = short.1[N_STEPS - remaining].fit.rmse.hypot(long.1[N_STEPS + 1 - remaining].fit.rmse);
        for x in [5.0, 20.0, 40.0, 70.0] {
            let (qa, qb) = (a.q.value(&[x]), b.q.value(&[x]));
            assert!((qa - qb).abs() <= 3.0 * noise, "ℓ={remaining} x={x}: {qa} vs {qb} (noise {noise})");
        }
    }
}

#[test]
fn every_step_is_fitted() {
    let model = short_federico(N_STEPS, 0.08);
    let (stack, traces) = solve(&model, &small_config(1, true)).unwrap();
    assert_eq!(stack.n_steps(), N_STEPS);
    assert!(stack.steps.iter().all(|s| s.zhat.is_some()));
    let ks: Vec<usize> = traces.iter().map(|t| t.k).collect();
    assert_eq!(ks, (0..N_STEPS).collect::<Vec<_>>());
    assert!(traces.iter().all(|t| (0.0..=1.0).contains(&t.fraction_acted) && t.n_paths == 1200));
}
