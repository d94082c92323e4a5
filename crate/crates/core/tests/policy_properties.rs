mod common;

use std::sync::OnceLock;

use common::{short_federico, small_config};
use irmc::model::ImpulseModel;
use irmc::policy::forward_evaluate;
use irmc::solver::{solve, SolverConfig};
use irmc::surrogate::{PolicyStack, Regressor};

const N_STEPS: usize = 20;

struct Fitted {
    model: ImpulseModel,
    cfg: SolverConfig,
    stack: PolicyStack,
}

fn fitted() -> &'static Fitted {
    static CELL: OnceLock<Fitted> = OnceLock::new();
    CELL.get_or_init(|| {
        let model = short_federico(N_STEPS, 0.08);
        let cfg = small_config(13, true);
        let (stack, _) = solve(&model, &cfg).unwrap();
        Fitted { model, cfg, stack }
    })
}

#[test]
fn independent_halves_agree() {
    let f = fitted();
    for x0 in [5.0, 50.0] {
        let a = forward_evaluate(&f.model, &f.stack, &f.cfg.intervention, &[x0], 3000, 1, false).unwrap();
        let b = forward_evaluate(&f.model, &f.stack, &f.cfg.intervention, &[x0], 3000, 2, false).unwrap();
        let se = a.std_error.hypot(b.std_error);
        assert!((a.value_estimate - b.value_estimate).abs() <= 3.0 * se, "x0={x0}");
    }
}

#[test]
fn components_sum_to_the_estimate() {
    let f = fitted();
    for (x0, use_zhat) in [(5.0, false), (30.0, true), (80.0, false)] {
        let r = forward_evaluate(&f.model, &f.stack, &f.cfg.intervention, &[x0], 2000, 3, use_zhat).unwrap();
        let total = r.running_mean + r.impulse_mean + r.terminal_mean;
        assert!((total - r.value_estimate).abs() <= 1e-10 * (1.0 + r.value_estimate.abs()));
        assert!(r.std_error > 0.0);
        assert_eq!(r.n_events, r.impulse_events.len());
        for e in &r.impulse_events {
            assert!(e.step < N_STEPS && e.impulse[0] > 0.0 && f.model.impulse_set.is_admissible(&e.impulse));
        }
    }
}

#[test]
fn forward_runs_are_reproducible() {
    let f = fitted();
    let run = || forward_evaluate(&f.model, &f.stack, &f.cfg.intervention, &[10.0], 1000, 9, false).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.value_estimate.to_bits(), b.value_estimate.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    assert_eq!(a.n_events, b.n_events);
}

#[test]
fn zhat_and_direct_optimization_agree() {
    let f = fitted();
    let direct = forward_evaluate(&f.model, &f.stack, &f.cfg.intervention, &[10.0], 4000, 5, false).unwrap();
    let zhat = forward_evaluate(&f.model, &f.stack, &f.cfg.intervention, &[10.0], 4000, 5, true).unwrap();
    let se = direct.std_error.hypot(zhat.std_error);
    assert!((direct.value_estimate - zhat.value_estimate).abs() <= 2.0 * se);
}

#[test]
fn corrupted_impulse_map_lowers_the_value() {
    let f = fitted();
    let mut corrupted = f.stack.clone();
    for step in &mut corrupted.steps {
        match &mut step.zhat.as_mut().unwrap().regressor {
            Regressor::Tps(t) => t.coef_beta[0] += 25.0,
            Regressor::Gp(_) => unreachable!("small config fits splines"),
        }
    }
    let clean = forward_evaluate(&f.model, &f.stack, &f.cfg.intervention, &[5.0], 4000, 6, true).unwrap();
    let bad = forward_evaluate(&f.model, &corrupted, &f.cfg.intervention, &[5.0], 4000, 6, true).unwrap();
    assert!(bad.value_estimate < clean.value_estimate, "{} vs {}", bad.value_estimate, clean.value_estimate);
}
