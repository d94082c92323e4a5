//! The intervention operator `M̂(k,x) = sup_z {Q̂(k,x+z) + κ(x,z)}` and the
//! resulting action map.
//!
//! Candidate post-impulse states are kept inside the step's training domain,
//! so `Q̂` is never extrapolated while optimizing over impulses.

use serde::{Deserialize, Serialize};

use crate::design::Domain;
use crate::error::{Error, Result};
use crate::model::{Direction, ImpulseModel};
use crate::surrogate::optim::{brent_root, golden_section_max};
use crate::surrogate::{fit_surrogate, PolicyStack, StepFit, Surrogate, SurrogateSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    LinearRootSearch,
    GridThenPolish,
    TargetState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionConfig {
    pub mode: InterventionMode,
    pub grid_points: usize,
    pub polish_iters: usize,
    /// Relative tie tolerance: act only if `M̂ > Q̂ + tie_eps·(1+|Q̂|)`.
    pub tie_eps: f64,
    pub use_zhat: bool,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            mode: InterventionMode::GridThenPolish,
            grid_points: 64,
            polish_iters: 30,
            tie_eps: 1e-9,
            use_zhat: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDecision {
    pub act: bool,
    /// Impulse on the controllable coordinates (zeros when not acting).
    pub impulse: Vec<f64>,
    pub m_value: f64,
    pub q_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetLevel {
    pub s_star: f64,
    pub bracket: (f64, f64),
}

const ROOT_SCAN_POINTS: usize = 200;

/// Global target of a linear-cost impulse: the root of `∂Q̂ + c0` along the
/// controllable coordinate that maximizes `Q̂(y) + c0·y`.
pub fn find_target(q: &Surrogate, domain: &Domain, coord: usize, base: &[f64], c0: f64) -> Result<TargetLevel> {
    let (lo, hi) = (domain.lo[coord], domain.hi[coord]);
    let dim = base.len();
    let mut x = base.to_vec();
    let mut grad = vec![0.0; dim];
    let mut g = |y: f64| {
        x[coord] = y;
        q.gradient(&x, &mut grad);
        grad[coord] + c0
    };
    let ys: Vec<f64> = (0..ROOT_SCAN_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (ROOT_SCAN_POINTS - 1) as f64)
        .collect();
    let gs: Vec<f64> = ys.iter().map(|&y| g(y)).collect();
    let mut roots = Vec::new();
    for i in 0..ys.len() - 1 {
        if gs[i] == 0.0 {
            roots.push(ys[i]);
        } else if gs[i].signum() != gs[i + 1].signum() && gs[i + 1] != 0.0 {
            roots.push(brent_root(&mut g, ys[i], ys[i + 1], 1e-12 * (hi - lo), 200)?);
        }
    }
    if gs[ys.len() - 1] == 0.0 {
        roots.push(hi);
    }
    let mut xq = base.to_vec();
    let objective = |y: f64, xq: &mut Vec<f64>| {
        xq[coord] = y;
        q.value(xq) + c0 * y
    };
    roots
        .into_iter()
        .map(|y| (y, objective(y, &mut xq)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s_star, _)| TargetLevel { s_star, bracket: (lo, hi) })
        .ok_or(Error::BracketFailure { lo, hi })
}

/// Grid local maxima refined by golden section in 1-D impulse searches.
const MAX_POLISH_STARTS: usize = 3;

/// Decision rule for a single time step, with any per-step precomputation cached.
pub struct StepPolicy<'a> {
    model: &'a ImpulseModel,
    fit: &'a StepFit,
    cfg: &'a InterventionConfig,
    use_zhat: bool,
    mode: InterventionMode,
    /// 1-D linear-cost target, computed once per step.
    target: Option<TargetLevel>,
    target_q: f64,
    linear: Option<(f64, f64)>,
}

impl<'a> StepPolicy<'a> {
    pub fn new(model: &'a ImpulseModel, fit: &'a StepFit, cfg: &'a InterventionConfig, use_zhat: bool) -> Self {
        let linear = model.impulse_cost.linear_coefficients();
        let mut mode = cfg.mode;
        let mut target = None;
        let set = &model.impulse_set;
        if mode == InterventionMode::LinearRootSearch {
            if linear.is_none() || set.controllable.len() != 1 {
                mode = InterventionMode::GridThenPolish;
            } else if model.dim == 1 {
                let c0 = linear.unwrap().0;
                match find_target(&fit.q, &fit.domain, 0, &[fit.domain.lo[0]], c0) {
                    Ok(t) => target = Some(t),
                    Err(_) => mode = InterventionMode::GridThenPolish,
                }
            }
        }
        if mode == InterventionMode::TargetState && set.fixed_target.is_none() {
            mode = InterventionMode::GridThenPolish;
        }
        let use_zhat = use_zhat && fit.zhat.is_some();
        let target_q = target.map_or(f64::NAN, |t| fit.q.value(&[t.s_star]));
        Self { model, fit, cfg, use_zhat, mode, target, target_q, linear }
    }

    pub fn target(&self) -> Option<TargetLevel> {
        self.target
    }

    pub fn effective_mode(&self) -> InterventionMode {
        self.mode
    }

    fn q_at(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        self.fit.domain.clamp_into(x, buf);
        self.fit.q.value(buf)
    }

    /// Admissible impulse interval on controllable coordinate `j`, intersected
    /// with the training domain.
    fn z_interval(&self, x: &[f64], j: usize) -> (f64, f64) {
        let set = &self.model.impulse_set;
        let c = set.controllable[j];
        let (mut lo, mut hi) = (set.z_min[j], set.z_max[j]);
        match set.direction {
            Direction::Up => lo = lo.max(0.0),
            Direction::Down => hi = hi.min(0.0),
            Direction::Both => {}
        }
        lo = lo.max(self.fit.domain.lo[c] - x[c]);
        hi = hi.min(self.fit.domain.hi[c] - x[c]);
        (lo, hi)
    }

    /// `Q̂(k, x+z) + κ(x,z)`; the post-impulse state is clamped into the domain.
    fn objective(&self, x: &[f64], z: &[f64], buf: &mut [f64]) -> f64 {
        let set = &self.model.impulse_set;
        buf.copy_from_slice(x);
        for (j, &c) in set.controllable.iter().enumerate() {
            buf[c] += z[j];
        }
        let mut y = [0.0; 4];
        let y = &mut y[..x.len()];
        self.fit.domain.clamp_into(buf, y);
        self.fit.q.value(y) + self.model.impulse_cost(x, z)
    }

    fn tie(&self, q: f64) -> f64 {
        self.cfg.tie_eps * (1.0 + q.abs())
    }

    pub fn decide(&self, x: &[f64]) -> ActionDecision {
        let mut z = vec![0.0; self.model.impulse_set.controllable.len()];
        let (act, m_value, q_value) = self.decide_into(x, &mut z);
        ActionDecision { act, impulse: z, m_value, q_value }
    }

    /// Allocation-light decision: writes the impulse into `z` and returns `(act, M̂, Q̂)`.
    pub fn decide_into(&self, x: &[f64], z: &mut [f64]) -> (bool, f64, f64) {
        let mut buf = [0.0; 4];
        let buf = &mut buf[..x.len()];
        let q = self.q_at(x, buf);
        let m = self.best_impulse(x, z, buf);
        let act = m > q + self.tie(q) && z.iter().any(|v| *v != 0.0) && self.model.impulse_set.check(z).is_ok();
        if !act {
            z.iter_mut().for_each(|v| *v = 0.0);
        }
        (act, m, q)
    }

    /// `M̂(k,x)`, with the maximizing impulse written into `z`.
    pub fn best_impulse(&self, x: &[f64], z: &mut [f64], buf: &mut [f64]) -> f64 {
        z.iter_mut().for_each(|v| *v = 0.0);
        if self.use_zhat {
            return self.zhat_impulse(x, z, buf);
        }
        match self.mode {
            InterventionMode::TargetState => {
                let set = &self.model.impulse_set;
                let target = set.fixed_target.as_ref().expect("checked in new");
                for (j, &c) in set.controllable.iter().enumerate() {
                    z[j] = target[j] - x[c];
                }
                if z.iter().all(|v| *v == 0.0) || set.check(z).is_err() {
                    z.iter_mut().for_each(|v| *v = 0.0);
                    return f64::NEG_INFINITY;
                }
                self.objective(x, z, buf)
            }
            InterventionMode::LinearRootSearch => {
                let (c0, c1) = self.linear.expect("checked in new");
                let c = self.model.impulse_set.controllable[0];
                let target = match self.target {
                    Some(t) => t,
                    None => match find_target(&self.fit.q, &self.fit.domain, c, x, c0) {
                        Ok(t) => t,
                        Err(_) => return self.grid_then_polish(x, z, buf),
                    },
                };
                let (lo, hi) = self.z_interval(x, 0);
                let zz = target.s_star - x[c];
                let wrong_way = match self.model.impulse_set.direction {
                    Direction::Up => zz <= 0.0,
                    Direction::Down => zz >= 0.0,
                    Direction::Both => zz == 0.0,
                };
                if lo > hi || wrong_way {
                    return f64::NEG_INFINITY;
                }
                if zz > hi || zz < lo {
                    z[0] = zz.clamp(lo, hi);
                    if z[0] == 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    return self.objective(x, z, buf);
                }
                z[0] = zz;
                let q_target = if self.target.is_some() {
                    self.target_q
                } else {
                    buf.copy_from_slice(x);
                    buf[c] = target.s_star;
                    self.fit.q.value(buf)
                };
                q_target + c0 * zz + c1
            }
            InterventionMode::GridThenPolish => self.grid_then_polish(x, z, buf),
        }
    }

    fn zhat_impulse(&self, x: &[f64], z: &mut [f64], buf: &mut [f64]) -> f64 {
        let zhat = self.fit.zhat.as_ref().expect("checked in new");
        let mut y = [0.0; 4];
        let y = &mut y[..x.len()];
        self.fit.domain.clamp_into(x, y);
        let pred = zhat.value(y);
        let (lo, hi) = self.z_interval(x, 0);
        if lo > hi {
            return f64::NEG_INFINITY;
        }
        z[0] = pred.clamp(lo, hi);
        if z[0] == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.objective(x, z, buf)
    }

    fn grid_then_polish(&self, x: &[f64], z: &mut [f64], buf: &mut [f64]) -> f64 {
        let m = self.model.impulse_set.controllable.len();
        let intervals: Vec<(f64, f64)> = (0..m).map(|j| self.z_interval(x, j)).collect();
        if intervals.iter().any(|(lo, hi)| lo > hi) {
            return f64::NEG_INFINITY;
        }
        let per_axis = if m == 1 {
            self.cfg.grid_points.max(2)
        } else {
            ((self.cfg.grid_points as f64).powf(1.0 / m as f64).ceil() as usize).max(2)
        };
        let axis = |j: usize, i: usize| {
            let (lo, hi) = intervals[j];
            lo + (hi - lo) * i as f64 / (per_axis - 1) as f64
        };
        let total = per_axis.pow(m as u32);
        let unflatten = |flat: usize, idx: &mut [usize]| {
            let mut r = flat;
            for v in idx.iter_mut() {
                *v = r % per_axis;
                r /= per_axis;
            }
        };
        let mut idx = vec![0usize; m];
        let mut cand = vec![0.0; m];
        let values: Vec<f64> = (0..total)
            .map(|flat| {
                unflatten(flat, &mut idx);
                for j in 0..m {
                    cand[j] = axis(j, idx[j]);
                }
                if cand.iter().all(|v| *v == 0.0) {
                    f64::NEG_INFINITY
                } else {
                    self.objective(x, &cand, buf)
                }
            })
            .collect();
        // In 1-D, polish the best few local maxima of the grid; a peak against the
        // excluded zero impulse can be narrower than a grid cell.
        let mut starts: Vec<usize> = if m == 1 {
            (0..total)
                .filter(|&i| {
                    values[i].is_finite()
                        && (i == 0 || values[i] >= values[i - 1])
                        && (i + 1 == total || values[i] >= values[i + 1])
                })
                .collect()
        } else {
            (0..total).filter(|&i| values[i].is_finite()).collect()
        };
        if starts.is_empty() {
            return f64::NEG_INFINITY;
        }
        starts.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        starts.truncate(if m == 1 { MAX_POLISH_STARTS } else { 1 });

        let mut best = f64::NEG_INFINITY;
        let mut trial = vec![0.0; m];
        let mut scratch = vec![0.0; x.len()];
        for &start in &starts {
            unflatten(start, &mut idx);
            for j in 0..m {
                trial[j] = axis(j, idx[j]);
            }
            let mut local = values[start];
            // coordinate-wise golden-section polish around the grid cell
            for j in 0..m {
                let a = axis(j, idx[j].saturating_sub(1));
                let b = axis(j, (idx[j] + 1).min(per_axis - 1));
                if b <= a {
                    continue;
                }
                let mut probe = trial.clone();
                let (zj, v) = golden_section_max(
                    |t| {
                        probe[j] = t;
                        if probe.iter().all(|v| *v == 0.0) {
                            f64::NEG_INFINITY
                        } else {
                            self.objective(x, &probe, &mut scratch)
                        }
                    },
                    a,
                    b,
                    self.cfg.polish_iters,
                );
                if v > local {
                    local = v;
                    trial[j] = zj;
                }
            }
            if local > best {
                best = local;
                z.copy_from_slice(&trial);
            }
        }
        best
    }
}

/// One-off decision at `(k, x)` on a fitted stack.
pub fn intervention_value(
    model: &ImpulseModel,
    stack: &PolicyStack,
    k: usize,
    x: &[f64],
    cfg: &InterventionConfig,
) -> Result<ActionDecision> {
    if k >= stack.n_steps() {
        return Err(Error::InvalidParameters(format!("step {k} is at or past maturity")));
    }
    Ok(StepPolicy::new(model, &stack.steps[k], cfg, cfg.use_zhat).decide(x))
}

/// Optimal impulses (ignoring the act/continue comparison) at the given sites,
/// used as regression targets for `Ẑ`.
pub fn optimal_impulses(policy: &StepPolicy<'_>, sites: &[Vec<f64>]) -> Vec<f64> {
    let m = policy.model.impulse_set.controllable.len();
    let mut buf = vec![0.0; policy.model.dim];
    sites
        .iter()
        .map(|x| {
            let mut z = vec![0.0; m];
            let v = policy.best_impulse(x, &mut z, &mut buf);
            if v.is_finite() { z[0] } else { 0.0 }
        })
        .collect()
}

/// Regression `Ẑ(k,·)` of the optimal impulse size on the state.
pub fn fit_impulse_surrogate(
    spec: &SurrogateSpec,
    log_inputs: bool,
    x_sites: &[Vec<f64>],
    z_opt: &[f64],
    seed: u64,
) -> Result<Surrogate> {
    if x_sites.len() < 5 {
        return Err(Error::TooFewSites { got: x_sites.len(), need: 5 });
    }
    fit_surrogate(spec, log_inputs, x_sites, z_opt, None, 1, seed)
}

pub fn predict_impulse(zhat: &Surrogate, x: &[f64]) -> f64 {
    zhat.value(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use crate::surrogate::{LambdaMode, TpsKernel};

    fn quad_fit(a: f64, m: f64, lo: f64, hi: f64) -> StepFit {
        // interpolating cubic spline of a quadratic on a fine grid
        let x: Vec<Vec<f64>> = (0..81).map(|i| vec![lo + (hi - lo) * i as f64 / 80.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| a * (r[0] - m).powi(2) + 3.0).collect();
        let q = crate::surrogate::fit_surrogate(
            &SurrogateSpec::Tps { lambda_mode: LambdaMode::Fixed(0.0), kernel: TpsKernel::Cubic, max_knots: 81 },
            false,
            &x,
            &y,
            None,
            1,
            0,
        )
        .unwrap();
        StepFit { q, domain: Domain::new(vec![lo], vec![hi]).unwrap(), zhat: None }
    }

    #[test]
    fn quadratic_target_root() {
        let fit = quad_fit(-0.05, 20.0, 0.0, 40.0);
        let t = find_target(&fit.q, &fit.domain, 0, &[0.0], -1.0).unwrap();
        // a(y−m)·2 = 1 → y = m + 1/(2a)
        assert!((t.s_star - (20.0 + 1.0 / (2.0 * -0.05))).abs() < 1e-3, "{}", t.s_star);
    }

    #[test]
    fn huge_fixed_cost_never_acts() {
        let fit = quad_fit(-0.05, 20.0, 0.0, 40.0);
        let mut model = make_federico_model();
        model.impulse_cost = ImpulseCost::LinearAffine { c0: -1.0, c1: -1e6 };
        for mode in [InterventionMode::GridThenPolish, InterventionMode::LinearRootSearch] {
            let cfg = InterventionConfig { mode, ..Default::default() };
            let p = StepPolicy::new(&model, &fit, &cfg, false);
            for i in 0..50 {
                let d = p.decide(&[0.5 + i as f64 * 0.7]);
                assert!(!d.act);
                assert_eq!(d.impulse, vec![0.0]);
            }
        }
    }

    #[test]
    fn closed_form_and_sup_property() {
        let fit = quad_fit(-0.05, 20.0, 0.0, 40.0);
        let model = make_federico_model();
        let cfg = InterventionConfig { mode: InterventionMode::LinearRootSearch, ..Default::default() };
        let p = StepPolicy::new(&model, &fit, &cfg, false);
        let s = p.target().unwrap().s_star;
        let qs = fit.q.value(&[s]);
        for i in 0..100 {
            let x = 0.1 * i as f64;
            let d = p.decide(&[x]);
            let closed = qs - s + x - 10.0;
            assert!((d.m_value - closed).abs() < 1e-10);
            assert_eq!(d.act, d.m_value > d.q_value + 1e-9 * (1.0 + d.q_value.abs()));
        }
    }

    #[test]
    fn faustmann_target_state() {
        let fit = quad_fit(-0.1, 1.0, -0.25, 2.5);
        let model = make_faustmann_model();
        let cfg = InterventionConfig { mode: InterventionMode::TargetState, ..Default::default() };
        let p = StepPolicy::new(&model, &fit, &cfg, false);
        let d = p.decide(&[2.0]);
        let want = fit.q.value(&[0.0]) + 1.0;
        assert!((d.m_value - want).abs() < 1e-12);
        assert!(d.act);
        assert_eq!(d.impulse, vec![-2.0]);
        assert!(!p.decide(&[0.0]).act);
        assert!(!p.decide(&[-0.1]).act);
    }
}
