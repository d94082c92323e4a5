//! Out-of-sample evaluation of a fitted policy stack, impulse-boundary
//! extraction and result writers.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{substream, Purpose, Stepper};
use crate::error::{Error, Result};
use crate::intervention::{find_target, InterventionConfig, InterventionMode, StepPolicy};
use crate::model::{Direction, ImpulseModel};
use crate::surrogate::PolicyStack;

#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseEvent {
    pub path: usize,
    pub step: usize,
    pub pre_state: Vec<f64>,
    pub impulse: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ForwardReport {
    pub value_estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    pub use_zhat: bool,
    pub running_mean: f64,
    pub impulse_mean: f64,
    pub terminal_mean: f64,
    pub n_events: usize,
    /// Mean gap between consecutive impulses on the same path, in model time.
    pub mean_interimpulse_time: Option<f64>,
    /// Mean of `Σ|z|` over events.
    pub mean_impulse_size: Option<f64>,
    /// Per step: most extreme acted pre-state of the first controllable coordinate
    /// (max for upward impulses, min for downward ones).
    pub boundary: Vec<Option<f64>>,
    /// Per step: linear-cost target `S*_k` where it applies.
    pub targets: Vec<Option<f64>>,
    #[serde(skip)]
    pub impulse_events: Vec<ImpulseEvent>,
}

struct PathOutcome {
    running: f64,
    impulse: f64,
    terminal: f64,
    events: Vec<ImpulseEvent>,
}

/// Simulates fresh controlled paths from `x0` under the fitted action maps.
pub fn forward_evaluate(
    model: &ImpulseModel,
    stack: &PolicyStack,
    cfg: &InterventionConfig,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    use_zhat: bool,
) -> Result<ForwardReport> {
    let n = model.n_steps();
    if stack.n_steps() != n {
        return Err(Error::InvalidParameters(format!("stack has {} steps, model needs {n}", stack.n_steps())));
    }
    if x0.len() != model.dim {
        return Err(Error::InvalidParameters("x0 dimension mismatch".into()));
    }
    if n_paths < 2 {
        return Err(Error::InvalidParameters("need at least two forward paths".into()));
    }
    let policies: Vec<StepPolicy<'_>> = stack.steps.iter().map(|f| StepPolicy::new(model, f, cfg, use_zhat)).collect();
    let stepper = Stepper::new(model);
    let r = model.discount_rate;
    let m = model.impulse_set.controllable.len();
    let outcomes: Vec<Result<PathOutcome>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = substream(seed, Purpose::Forward, 0, path as u64);
            let mut x = x0.to_vec();
            let mut z = vec![0.0; m];
            let mut out = PathOutcome { running: 0.0, impulse: 0.0, terminal: 0.0, events: Vec::new() };
            for (k, policy) in policies.iter().enumerate() {
                let df = (-r * model.time(k)).exp();
                let (act, _, _) = policy.decide_into(&x, &mut z);
                if act {
                    model.impulse_set.check(&z)?;
                    out.impulse += df * model.impulse_cost(&x, &z);
                    out.events.push(ImpulseEvent { path, step: k, pre_state: x.clone(), impulse: z.clone() });
                    for (j, &c) in model.impulse_set.controllable.iter().enumerate() {
                        x[c] += z[j];
                    }
                }
                out.running += df * model.running_reward(&x) * model.dt;
                stepper.step(&mut x, &mut rng);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState { step: k + 1, path });
                }
            }
            out.terminal = (-r * model.time(n)).exp() * model.terminal_value(&x);
            Ok(out)
        })
        .collect();

    let mut totals = Vec::with_capacity(n_paths);
    let (mut run, mut imp, mut term) = (0.0, 0.0, 0.0);
    let mut events = Vec::new();
    for o in outcomes {
        let o = o?;
        run += o.running;
        imp += o.impulse;
        term += o.terminal;
        totals.push(o.running + o.impulse + o.terminal);
        events.extend(o.events);
    }
    let nf = n_paths as f64;
    let (run, imp, term) = (run / nf, imp / nf, term / nf);
    let value = run + imp + term;
    let var = totals.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (nf - 1.0);

    let up = model.impulse_set.direction != Direction::Down;
    let c0 = model.impulse_set.controllable[0];
    let mut boundary: Vec<Option<f64>> = vec![None; n];
    for e in &events {
        let v = e.pre_state[c0];
        let b = &mut boundary[e.step];
        *b = Some(match *b {
            None => v,
            Some(cur) if up => cur.max(v),
            Some(cur) => cur.min(v),
        });
    }
    let targets = linear_targets(model, stack, cfg);
    let gaps: Vec<f64> = events
        .windows(2)
        .filter(|w| w[0].path == w[1].path)
        .map(|w| (w[1].step - w[0].step) as f64 * model.dt)
        .collect();
    let mean = |v: &[f64]| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
    let sizes: Vec<f64> = events.iter().map(|e| e.impulse.iter().map(|z| z.abs()).sum()).collect();
    Ok(ForwardReport {
        value_estimate: value,
        std_error: (var / nf).sqrt(),
        n_paths,
        x0: x0.to_vec(),
        seed,
        use_zhat,
        running_mean: run,
        impulse_mean: imp,
        terminal_mean: term,
        n_events: events.len(),
        mean_interimpulse_time: mean(&gaps),
        mean_impulse_size: mean(&sizes),
        boundary,
        targets,
        impulse_events: events,
    })
}

/// `S*_k` for one-dimensional linear-cost models.
pub fn linear_targets(model: &ImpulseModel, stack: &PolicyStack, cfg: &InterventionConfig) -> Vec<Option<f64>> {
    match (model.dim, model.impulse_cost.linear_coefficients()) {
        (1, Some((c0, _))) if cfg.mode == InterventionMode::LinearRootSearch => stack
            .steps
            .iter()
            .map(|f| find_target(&f.q, &f.domain, 0, &[f.domain.lo[0]], c0).ok().map(|t| t.s_star))
            .collect(),
        _ => vec![None; stack.n_steps()],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Extreme acted pre-states on forward paths.
    Events,
    /// Threshold of the action region located on a state grid.
    Scan,
    /// Forward events, with scanning for steps that saw none.
    EventsThenScan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryRow {
    pub step: usize,
    pub s_k: Option<f64>,
    pub target: Option<f64>,
}

const SCAN_POINTS: usize = 400;

/// Action-region threshold on step `k` along the first controllable coordinate
/// of a one-dimensional model, refined by bisection.
///
/// A threshold policy acts on a block touching the domain edge (the bottom for
/// upward impulses, the top for downward ones); the threshold is the inner end
/// of that block, so isolated acted states caused by near-ties elsewhere are
/// ignored. Without such a block the most extreme acted state is used.
pub fn scan_threshold(model: &ImpulseModel, stack: &PolicyStack, cfg: &InterventionConfig, k: usize) -> Result<Option<f64>> {
    if model.dim != 1 {
        return Err(Error::UnsupportedDimension(model.dim));
    }
    let fit = &stack.steps[k];
    let policy = StepPolicy::new(model, fit, cfg, false);
    let (lo, hi) = (fit.domain.lo[0], fit.domain.hi[0]);
    let acts = |x: f64| policy.decide_into(&[x], &mut [0.0]).0;
    let grid: Vec<f64> = (0..SCAN_POINTS).map(|i| lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64).collect();
    let flags: Vec<bool> = grid.iter().map(|&x| acts(x)).collect();
    let up = model.impulse_set.direction != Direction::Down;
    let last = grid.len() - 1;
    let (mut inside, mut outside) = if up {
        let edge_block_end = if flags[0] { flags.iter().position(|&a| !a) } else { None };
        match edge_block_end.or_else(|| flags.iter().rposition(|&a| a).map(|i| i + 1)) {
            None => return Ok(None),
            Some(j) if j > last => return Ok(Some(grid[last])),
            Some(j) => (grid[j - 1], grid[j]),
        }
    } else {
        let edge_block_start = if flags[last] { flags.iter().rposition(|&a| !a).map(|i| i + 1) } else { None };
        match edge_block_start.or_else(|| flags.iter().position(|&a| a)) {
            None => return Ok(None),
            Some(0) => return Ok(Some(grid[0])),
            Some(j) => (grid[j], grid[j - 1]),
        }
    };
    for _ in 0..60 {
        let mid = 0.5 * (inside + outside);
        if acts(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Ok(Some(inside))
}

pub fn extract_boundary(
    report: &ForwardReport,
    stack: &PolicyStack,
    model: &ImpulseModel,
    cfg: &InterventionConfig,
    mode: BoundaryMode,
) -> Result<Vec<BoundaryRow>> {
    if mode != BoundaryMode::Scan && report.impulse_events.is_empty() {
        return Err(Error::NoEvents);
    }
    (0..stack.n_steps())
        .map(|k| {
            let s_k = match mode {
                BoundaryMode::Events => report.boundary[k],
                BoundaryMode::Scan => scan_threshold(model, stack, cfg, k)?,
                BoundaryMode::EventsThenScan => match report.boundary[k] {
                    Some(v) => Some(v),
                    None if model.dim == 1 => scan_threshold(model, stack, cfg, k)?,
                    None => None,
                },
            };
            Ok(BoundaryRow { step: k, s_k, target: report.targets.get(k).copied().flatten() })
        })
        .collect()
}

/// `V̌(0,x₀) ≤ ṽ(x₀) + 3·SE`; returns the check and the slack `ṽ + 3·SE − V̌`.
pub fn lower_bound_check(report: &ForwardReport, analytic_v: f64) -> (bool, f64) {
    let margin = analytic_v + 3.0 * report.std_error - report.value_estimate;
    (margin >= 0.0, margin)
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

pub fn write_events_csv(path: &Path, model: &ImpulseModel, report: &ForwardReport) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "path,step,coord,pre_state,impulse")?;
    for e in &report.impulse_events {
        for (j, &c) in model.impulse_set.controllable.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", e.path, e.step, c, fmt_f64(e.pre_state[c]), fmt_f64(e.impulse[j]))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_boundary_csv(path: &Path, rows: &[BoundaryRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,s_k,S_k")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.step, fmt_opt(r.s_k), fmt_opt(r.target))?;
    }
    w.flush()?;
    Ok(())
}
