//! Backward-induction Regression Monte Carlo.
//!
//! Response convention: `Q̂(k,x)` is the value of not acting at `x` on step
//! `k`, and it includes the running reward `π(x)Δt` earned at `x` itself.
//! A training path started at `x` on step `k` therefore collects
//!
//! ```text
//! π(x)Δt + Σ_{ℓ=k+1}^{e−1} e^{−r(ℓ−k)Δt} [κ(x_ℓ, z_ℓ) + π(x_ℓ + z_ℓ)Δt] + e^{−r(e−k)Δt} tail(x_e)
//! ```
//!
//! where decisions at `ℓ` use the already-fitted `Q̂(ℓ,·)`, and the tail is
//! `φ` at maturity or `V̂(e,·) = max(Q̂, M̂)` at an earlier lookahead end.
//! The endpoint running reward enters only through `V̂`, never twice.

use rayon::prelude::*;
use serde::Serialize;

use crate::design::{pre_average, DesignSpec};
use crate::dynamics::{substream, Purpose, Stepper};
use crate::error::{Error, Result};
use crate::intervention::{fit_impulse_surrogate, optimal_impulses, InterventionConfig, StepPolicy};
use crate::model::ImpulseModel;
use crate::surrogate::{fit_surrogate, PolicyStack, Regressor, StepFit, SurrogateSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookahead {
    OneStep,
    FixedW(usize),
    ToMaturity,
}

impl Lookahead {
    /// Last step index reached by a path started at `k`.
    pub fn end(&self, k: usize, n_steps: usize) -> usize {
        match *self {
            Lookahead::OneStep => k + 1,
            Lookahead::FixedW(w) => (k + w).min(n_steps),
            Lookahead::ToMaturity => n_steps,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub lookahead: Lookahead,
    /// Use the most recent fit for every later decision on training paths.
    pub mpc_mode: bool,
    pub design: DesignSpec,
    pub surrogate: SurrogateSpec,
    /// Regress on log-transformed states.
    pub log_inputs: bool,
    pub intervention: InterventionConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitDiagnostics {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengthscales: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    pub rmse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepTrace {
    pub k: usize,
    pub n_paths: usize,
    pub mean_response: f64,
    /// Fraction of training paths with at least one impulse.
    pub fraction_acted: f64,
    pub fit: FitDiagnostics,
}

/// Per-step rollout context shared by all training paths.
struct Rollout<'a> {
    model: &'a ImpulseModel,
    stepper: Stepper,
    k: usize,
    end: usize,
    /// Policies for steps `k+1..K` (a single entry in MPC mode).
    policies: &'a [StepPolicy<'a>],
    mpc: bool,
    seed: u64,
}

impl Rollout<'_> {
    fn policy(&self, l: usize) -> &StepPolicy<'_> {
        if self.mpc { &self.policies[0] } else { &self.policies[l - self.k - 1] }
    }

    fn run(&self, start: &[f64], path: usize) -> Result<(f64, bool)> {
        let m = self.model;
        let n = m.n_steps();
        let disc = (-m.discount_rate * m.dt).exp();
        let mut rng = substream(self.seed, Purpose::Training, self.k as u64, path as u64);
        let mut x = start.to_vec();
        let mut z = vec![0.0; m.impulse_set.controllable.len()];
        let mut y = m.running_reward(&x) * m.dt;
        let mut df = 1.0;
        let mut acted = false;
        for l in self.k + 1..=self.end {
            self.stepper.step(&mut x, &mut rng);
            df *= disc;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: l, path });
            }
            if l == n {
                y += df * m.terminal_value(&x);
            } else if l == self.end {
                let (_, mv, qv) = self.policy(l).decide_into(&x, &mut z);
                y += df * qv.max(mv);
            } else {
                let (act, _, _) = self.policy(l).decide_into(&x, &mut z);
                if act {
                    acted = true;
                    y += df * m.impulse_cost(&x, &z);
                    for (j, &c) in m.impulse_set.controllable.iter().enumerate() {
                        x[c] += z[j];
                    }
                }
                y += df * m.running_reward(&x) * m.dt;
            }
        }
        Ok((y, acted))
    }
}

fn diagnostics(fit: &StepFit, sites: &[Vec<f64>], means: &[f64]) -> FitDiagnostics {
    let rmse = (sites.iter().zip(means).map(|(s, y)| (fit.q.value(s) - y).powi(2)).sum::<f64>()
        / means.len() as f64)
        .sqrt();
    match &fit.q.regressor {
        Regressor::Gp(g) => FitDiagnostics {
            kind: "gp",
            lengthscales: Some(g.hyper.lengthscales.clone()),
            process_var: Some(g.hyper.process_var),
            noise_var: Some(g.hyper.noise_var),
            lambda: None,
            df: None,
            rmse,
        },
        Regressor::Tps(t) => FitDiagnostics {
            kind: "tps",
            lengthscales: None,
            process_var: None,
            noise_var: None,
            lambda: Some(t.lambda),
            df: Some(t.df),
            rmse,
        },
    }
}

fn step_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Runs the backward recursion for `k = K−1, …, 0`.
///
/// `on_step` is invoked with each trace as soon as the step is fitted.
pub fn solve_with<F>(model: &ImpulseModel, cfg: &SolverConfig, mut on_step: F) -> Result<(PolicyStack, Vec<StepTrace>)>
where
    F: FnMut(&StepTrace),
{
    model.validate()?;
    let n = model.n_steps();
    if let Lookahead::FixedW(w) = cfg.lookahead {
        if w == 0 || w > n {
            return Err(Error::InvalidParameters(format!("lookahead window {w} outside 1..={n}")));
        }
    }
    let mut fits: Vec<Option<StepFit>> = vec![None; n];
    let mut traces = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let (fit, trace) = solve_step(model, cfg, k, &fits).map_err(|e| Error::AbortAtStep { step: k, source: Box::new(e) })?;
        on_step(&trace);
        traces.push(trace);
        fits[k] = Some(fit);
    }
    traces.reverse();
    let steps = fits.into_iter().map(|f| f.expect("every step fitted")).collect();
    Ok((PolicyStack { dim: model.dim, steps }, traces))
}

pub fn solve(model: &ImpulseModel, cfg: &SolverConfig) -> Result<(PolicyStack, Vec<StepTrace>)> {
    solve_with(model, cfg, |_| {})
}

fn solve_step(model: &ImpulseModel, cfg: &SolverConfig, k: usize, fits: &[Option<StepFit>]) -> Result<(StepFit, StepTrace)> {
    let n = model.n_steps();
    let design = cfg.design.design_for_step(k, model.time(k), cfg.seed)?;
    let end = cfg.lookahead.end(k, n);
    let use_zhat = cfg.intervention.use_zhat;
    let policies: Vec<StepPolicy<'_>> = if cfg.mpc_mode {
        fits.get(k + 1)
            .and_then(|f| f.as_ref())
            .map(|f| vec![StepPolicy::new(model, f, &cfg.intervention, use_zhat)])
            .unwrap_or_default()
    } else {
        (k + 1..n)
            .map(|l| StepPolicy::new(model, fits[l].as_ref().expect("later steps fitted"), &cfg.intervention, use_zhat))
            .collect()
    };
    let rollout = Rollout {
        model,
        stepper: Stepper::new(model),
        k,
        end,
        policies: &policies,
        mpc: cfg.mpc_mode,
        seed: cfg.seed,
    };
    let n_rep = design.n_rep;
    let n_paths = design.budget();
    let results: Vec<Result<(f64, bool)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| rollout.run(&design.unique_sites[i / n_rep], i))
        .collect();
    let mut responses = Vec::with_capacity(n_paths);
    let mut n_acted = 0usize;
    for r in results {
        let (y, acted) = r?;
        responses.push(y);
        n_acted += acted as usize;
    }
    let (means, vars) = pre_average(&responses, n_rep);
    let sseed = step_seed(cfg.seed, k);
    let q = fit_surrogate(&cfg.surrogate, cfg.log_inputs, &design.unique_sites, &means, Some(&vars), n_rep, sseed)?;
    let mut fit = StepFit { q, domain: design.domain.clone(), zhat: None };
    if use_zhat {
        let plain = StepPolicy::new(model, &fit, &cfg.intervention, false);
        let z_opt = optimal_impulses(&plain, &design.unique_sites);
        fit.zhat = Some(fit_impulse_surrogate(&cfg.surrogate, cfg.log_inputs, &design.unique_sites, &z_opt, sseed ^ 1)?);
    }
    let trace = StepTrace {
        k,
        n_paths,
        mean_response: responses.iter().sum::<f64>() / n_paths as f64,
        fraction_acted: n_acted as f64 / n_paths as f64,
        fit: diagnostics(&fit, &design.unique_sites, &means),
    };
    Ok((fit, trace))
}

/// Infinite-horizon approximation `x ↦ max(Q̂(k,x), M̂(k,x))` read off an early step.
pub struct StationaryValue<'a> {
    policy: StepPolicy<'a>,
    n_controls: usize,
}

impl StationaryValue<'_> {
    pub fn value(&self, x: &[f64]) -> f64 {
        let (_, m, q) = self.policy.decide_into(x, &mut vec![0.0; self.n_controls]);
        q.max(m)
    }
}

pub fn stationary_value<'a>(
    model: &'a ImpulseModel,
    stack: &'a PolicyStack,
    intervention: &'a InterventionConfig,
    k_small: usize,
) -> Result<StationaryValue<'a>> {
    let fit = stack
        .steps
        .get(k_small)
        .ok_or_else(|| Error::InvalidParameters(format!("no fitted step {k_small}")))?;
    Ok(StationaryValue {
        policy: StepPolicy::new(model, fit, intervention, false),
        n_controls: model.impulse_set.controllable.len(),
    })
}
