//! Reference solutions: the stationary (s,S) policy for GBM irreversible
//! investment, the forest-rotation threshold, reference capacity-expansion
//! statistics, and a brute-force grid dynamic program for 1-D models.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Direction, Dynamics, ImpulseModel};
use crate::policy::fmt_f64;
use crate::surrogate::optim::brent_root;

/// Stationary solution `ṽ(x) = B x^m + C x^γ/γ` with thresholds `s < S`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FedericoSolution {
    pub m: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub s: f64,
    #[serde(rename = "S")]
    pub s_target: f64,
    pub gamma: f64,
    pub c0: f64,
    pub c1: f64,
}

impl FedericoSolution {
    /// Continuation branch `B x^m + C x^γ/γ`.
    pub fn continuation(&self, x: f64) -> f64 {
        self.b * x.powf(self.m) + self.c * x.powf(self.gamma) / self.gamma
    }

    pub fn continuation_derivative(&self, x: f64) -> f64 {
        self.b * self.m * x.powf(self.m - 1.0) + self.c * x.powf(self.gamma - 1.0)
    }

    /// Value function: impulse to `S` below `s`, continuation above.
    pub fn value(&self, x: f64) -> f64 {
        if x < self.s {
            self.continuation(self.s_target) + self.c0 * (self.s_target - x) + self.c1
        } else {
            self.continuation(x)
        }
    }
}

fn federico_constants(r: f64, mu: f64, sigma: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(r > 0.0) || !(sigma > 0.0) || !(gamma > 0.0 && gamma < 1.0) || (1.0 - gamma) < 1e-6 {
        return Err(Error::InvalidParameters(format!("need r>0, σ>0, 0<γ<1 (got r={r}, σ={sigma}, γ={gamma})")));
    }
    let s2 = sigma * sigma;
    let a = 0.5 - mu / s2;
    let m = a - (a * a + 2.0 * r / s2).sqrt();
    let denom = r - mu * gamma + 0.5 * gamma * (1.0 - gamma) * s2;
    if !(denom > 0.0) {
        return Err(Error::InvalidParameters("running-reward perpetuity diverges (C ≤ 0)".into()));
    }
    Ok((m, 1.0 / denom))
}

/// Stationary thresholds from smooth fit at both `s` and `S` plus value matching.
pub fn federico_solution(r: f64, mu: f64, sigma: f64, gamma: f64, c0: f64, c1: f64) -> Result<FedericoSolution> {
    let (m, c) = federico_constants(r, mu, sigma, gamma)?;
    if !(c0 < 0.0 && c1 < 0.0) {
        return Err(Error::InvalidParameters("need a proportional and a fixed cost (c0<0, c1<0)".into()));
    }
    let b_of = |s: f64| (-c0 - c * s.powf(gamma - 1.0)) / (m * s.powf(m - 1.0));
    let make = |s: f64, big_s: f64| FedericoSolution { m, c, b: b_of(s), s, s_target: big_s, gamma, c0, c1 };
    // target: second root of v'(y) = −c0 above s
    let target_for = |s: f64| -> Option<f64> {
        let sol = make(s, f64::NAN);
        let g = |y: f64| sol.continuation_derivative(y) + c0;
        let mut prev = s * (1.0 + 1e-9);
        let mut gp = g(prev);
        for i in 1..=2000 {
            let y = s * (1.0 + 1e-9) * 1.01f64.powi(i);
            let gy = g(y);
            if gy.signum() != gp.signum() {
                return brent_root(g, prev, y, 1e-13 * y, 200).ok();
            }
            prev = y;
            gp = gy;
        }
        None
    };
    let matching = |s: f64| -> f64 {
        match target_for(s) {
            Some(big_s) => {
                let sol = make(s, big_s);
                sol.continuation(big_s) - sol.continuation(s) + c0 * (big_s - s) + c1
            }
            None => f64::NAN,
        }
    };
    // smooth fit at s needs C s^{γ−1} > −c0, i.e. s below this bound
    let s_max = (-c0 / c).powf(1.0 / (gamma - 1.0));
    let mut lo = s_max * 1e-6;
    let mut flo = matching(lo);
    let mut bracket = None;
    for i in 1..=600 {
        let hi = s_max * 1e-6 * (1e6f64).powf(i as f64 / 600.0) * (1.0 - 1e-12);
        let fhi = matching(hi);
        if flo.is_finite() && fhi.is_finite() && flo.signum() != fhi.signum() {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        flo = fhi;
    }
    let (a, b) = bracket.ok_or_else(|| Error::InvalidParameters("no (s,S) pair satisfies value matching".into()))?;
    let s = brent_root(matching, a, b, 1e-13 * b, 200)?;
    let big_s = target_for(s).ok_or_else(|| Error::InvalidParameters("target level not found".into()))?;
    Ok(make(s, big_s))
}

/// Infinite-horizon forest-rotation cut level for an arithmetic Brownian
/// stand value reset to 0, with revenue `(x−1)₊` per cut.
pub fn faustmann_threshold(r: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(r > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidParameters("need r>0 and σ>0".into()));
    }
    let s2 = sigma * sigma;
    let lambda = (-mu + (mu * mu + 2.0 * r * s2).sqrt()) / s2;
    let f = |s: f64| s - 1.0 - (1.0 - (-lambda * s).exp()) / lambda;
    brent_root(f, 1.0, 1.0 + 50.0 / lambda + 50.0, 1e-14, 200)
}

/// Reference statistics of the capacity-expansion example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GuthrieReference {
    /// Return-on-assets level at which capacity is added.
    pub y0: f64,
    pub impulse_size_ref: f64,
    pub interimpulse_years_ref: f64,
}

pub const GUTHRIE_REFERENCE: GuthrieReference =
    GuthrieReference { y0: 0.224, impulse_size_ref: 178.0, interimpulse_years_ref: 11.0 };

/// Nodes and probability weights for `E[f(ξ)]`, `ξ ~ N(0,1)` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(n, n, |a, b| if a + 1 == b || b + 1 == a { (a.max(b) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

pub const DP_QUADRATURE_NODES: usize = 256;
pub const DP_MAX_STATES: usize = 400;

fn quadrature() -> &'static (Vec<f64>, Vec<f64>) {
    static GH: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GH.get_or_init(|| gauss_hermite(DP_QUADRATURE_NODES))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_states: usize,
    /// Geometric spacing (positive states only).
    pub log_spacing: bool,
}

#[derive(Clone, Debug)]
pub struct DpSolution {
    pub grid: Vec<f64>,
    /// `value[k][i]` for `k = 0..=K`.
    pub value: Vec<Vec<f64>>,
    /// `impulse[k][i]` for `k = 0..K` (0 where continuing is optimal).
    pub impulse: Vec<Vec<f64>>,
    log_spacing: bool,
}

impl DpSolution {
    fn coord(&self, x: f64) -> f64 {
        if self.log_spacing { x.max(f64::MIN_POSITIVE).ln() } else { x }
    }

    /// `V(k,x)` by linear interpolation in the grid coordinate.
    pub fn value_at(&self, k: usize, x: f64) -> f64 {
        let u: Vec<f64> = self.grid.iter().map(|&g| self.coord(g)).collect();
        interp(&u, &self.value[k], self.coord(x))
    }

    /// Extreme acted state at step `k`: largest for upward impulses, smallest for downward.
    pub fn boundary(&self, k: usize, direction: Direction) -> Option<f64> {
        let acted = self.grid.iter().zip(&self.impulse[k]).filter(|(_, z)| **z != 0.0).map(|(x, _)| *x);
        match direction {
            Direction::Down => acted.reduce(f64::min),
            _ => acted.reduce(f64::max),
        }
    }

    /// Long-format table `step,state,value,impulse` for `k = 0..K`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "step,state,value,impulse")?;
        for (k, row) in self.impulse.iter().enumerate() {
            for (i, z) in row.iter().enumerate() {
                writeln!(w, "{},{},{},{}", k, fmt_f64(self.grid[i]), fmt_f64(self.value[k][i]), fmt_f64(*z))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Piecewise-linear interpolation on an increasing grid with linear extrapolation.
fn interp(u: &[f64], v: &[f64], t: f64) -> f64 {
    let n = u.len();
    let i = match u.partition_point(|&g| g <= t) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    };
    let w = (t - u[i]) / (u[i + 1] - u[i]);
    v[i] + w * (v[i + 1] - v[i])
}

/// Solves the discrete dynamic program on a state grid.
pub fn brute_force_dp(model: &ImpulseModel, grid: &GridSpec) -> Result<DpSolution> {
    if model.dim != 1 {
        return Err(Error::UnsupportedDimension(model.dim));
    }
    if grid.n_states < 3 || grid.n_states > DP_MAX_STATES || !(grid.lo < grid.hi) {
        return Err(Error::InvalidParameters(format!("grid needs 3..={DP_MAX_STATES} states on lo<hi")));
    }
    if grid.log_spacing && grid.lo <= 0.0 {
        return Err(Error::InvalidParameters("log-spaced grid needs lo>0".into()));
    }
    let n = grid.n_states;
    let k_steps = model.n_steps();
    let dt = model.dt;
    let (lo_u, hi_u) = if grid.log_spacing { (grid.lo.ln(), grid.hi.ln()) } else { (grid.lo, grid.hi) };
    let u: Vec<f64> = (0..n).map(|i| lo_u + (hi_u - lo_u) * i as f64 / (n - 1) as f64).collect();
    let xs: Vec<f64> = u.iter().map(|&v| if grid.log_spacing { v.exp() } else { v }).collect();
    let (nodes, weights) = quadrature();

    // successor coordinate of grid point i under quadrature node q
    let successor: Vec<Vec<f64>> = match &model.dynamics {
        Dynamics::GbmExact { mu, sigma } => {
            let a = (mu - 0.5 * sigma * sigma) * dt;
            let b = sigma * dt.sqrt();
            xs.iter()
                .map(|&x| nodes.iter().map(|q| (x * (a + b * q).exp()).max(f64::MIN_POSITIVE)).collect())
                .collect()
        }
        Dynamics::AbmExact { mu, sigma } => {
            xs.iter().map(|&x| nodes.iter().map(|q| x + mu * dt + sigma * dt.sqrt() * q).collect()).collect()
        }
        Dynamics::EulerGeneric { .. } => xs
            .iter()
            .map(|&x| {
                let (mut d, mut s) = ([0.0], [0.0]);
                model.drift(&[x], &mut d);
                model.vol(&[x], &mut s);
                nodes.iter().map(|q| x + d[0] * dt + s[0] * dt.sqrt() * q).collect()
            })
            .collect(),
        Dynamics::PriceCapacity { .. } => return Err(Error::UnsupportedDimension(2)),
    };
    let succ_u: Vec<Vec<f64>> = successor
        .iter()
        .map(|row| row.iter().map(|&y| if grid.log_spacing { y.ln() } else { y }).collect())
        .collect();

    let disc = (-model.discount_rate * dt).exp();
    let set = &model.impulse_set;
    let mut value = vec![vec![0.0; n]; k_steps + 1];
    let mut impulse = vec![vec![0.0; n]; k_steps];
    value[k_steps] = xs.iter().map(|&x| model.terminal_value(&[x])).collect();
    for k in (0..k_steps).rev() {
        let next = &value[k + 1];
        let q: Vec<f64> = (0..n)
            .map(|i| {
                let ev: f64 = succ_u[i].iter().zip(weights).map(|(&t, w)| w * interp(&u, next, t)).sum();
                model.running_reward(&[xs[i]]) * dt + disc * ev
            })
            .collect();
        for i in 0..n {
            let x = xs[i];
            let mut best = f64::NEG_INFINITY;
            let mut best_z = 0.0;
            let mut consider = |target_q: f64, z: f64| {
                if z != 0.0 && set.is_admissible(&[z]) {
                    let v = target_q + model.impulse_cost(&[x], &[z]);
                    if v > best {
                        best = v;
                        best_z = z;
                    }
                }
            };
            match &set.fixed_target {
                Some(t) => {
                    let tu = if grid.log_spacing { t[0].ln() } else { t[0] };
                    consider(interp(&u, &q, tu), t[0] - x);
                }
                None => {
                    for j in 0..n {
                        consider(q[j], xs[j] - x);
                    }
                }
            }
            let tie = 1e-9 * (1.0 + q[i].abs());
            if best > q[i] + tie {
                value[k][i] = best;
                impulse[k][i] = best_z;
            } else {
                value[k][i] = q[i];
            }
        }
    }
    Ok(DpSolution { grid: xs, value, impulse, log_spacing: grid.log_spacing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    #[test]
    fn federico_reference_pair() {
        let sol = federico_solution(0.08, -0.07, 0.25, 0.5, -1.0, -10.0).unwrap();
        assert!((sol.s - 8.749).abs() / 8.749 < 5e-4, "s={}", sol.s);
        assert!((sol.s_target - 56.99).abs() / 56.99 < 5e-4, "S={}", sol.s_target);
        assert!((sol.c - 1.0 / 0.1228125).abs() < 1e-12);
        assert!(sol.m < 0.0 && sol.c > 0.0 && sol.s < sol.s_target);
        assert!((sol.m - (-0.656_928)).abs() < 1e-5);
        assert!((sol.value(50.0) - 122.58).abs() < 0.01);
    }

    #[test]
    fn federico_defining_equations_hold() {
        let sol = federico_solution(0.08, -0.07, 0.25, 0.5, -1.0, -10.0).unwrap();
        // smooth fit at s from both branches, and at S
        assert!((sol.continuation_derivative(sol.s) - 1.0).abs() < 1e-6);
        assert!((sol.continuation_derivative(sol.s_target) - 1.0).abs() < 1e-8);
        let lhs = sol.continuation(sol.s);
        let rhs = sol.continuation(sol.s_target) - (sol.s_target - sol.s) - 10.0;
        assert!((lhs - rhs).abs() < 1e-8);
        // m solves the characteristic equation ½σ²m(m−1) + μm − r = 0
        let m = sol.m;
        assert!((0.5 * 0.0625 * m * (m - 1.0) - 0.07 * m - 0.08).abs() < 1e-12);
    }

    #[test]
    fn federico_rejects_degenerate_parameters() {
        for (r, s, g) in [(0.08, 0.25, 1.0), (0.08, 0.25, 0.0), (0.0, 0.25, 0.5), (0.08, 0.0, 0.5)] {
            assert!(matches!(
                federico_solution(r, -0.07, s, g, -1.0, -10.0),
                Err(Error::InvalidParameters(_))
            ));
        }
        let other = federico_solution(0.16, -0.07, 0.25, 0.5, -1.0, -10.0).unwrap();
        assert!(other.s.is_finite() && other.s_target.is_finite() && other.s < other.s_target);
    }

    #[test]
    fn faustmann_reference_level() {
        let s = faustmann_threshold(0.1, 0.0, 0.4463).unwrap();
        assert!((s - 1.84).abs() < 5e-3, "{s}");
    }

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(32);
        let mom = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((mom(0) - 1.0).abs() < 1e-12);
        assert!(mom(1).abs() < 1e-12);
        assert!((mom(2) - 1.0).abs() < 1e-11);
        assert!((mom(4) - 3.0).abs() < 1e-10);
        let (x, w) = quadrature();
        assert_eq!(x.len(), 256);
        let e: f64 = x.iter().zip(w).map(|(x, w)| w * (0.3 * x).exp()).sum();
        assert!((e - 0.045f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn dp_without_impulses_matches_closed_form() {
        let mut m = make_federico_model();
        m.impulse_cost = ImpulseCost::LinearAffine { c0: -1.0, c1: -1e9 };
        let g = GridSpec { lo: 0.5, hi: 400.0, n_states: 400, log_spacing: true };
        let dp = brute_force_dp(&m, &g).unwrap();
        let p = FedericoParams::default();
        let h = p.mu / 2.0 - p.sigma * p.sigma / 8.0;
        let mut want = 0.0;
        for k in 0..100 {
            let t = 0.1 * k as f64;
            want += (-p.r * t).exp() * 2.0 * 50f64.sqrt() * (h * t).exp() * 0.1;
        }
        want += (-p.r * 10.0f64).exp() * p.perpetuity_factor() * 2.0 * 50f64.sqrt() * (h * 10.0).exp();
        let got = dp.value_at(0, 50.0);
        assert!((got - want).abs() / want < 1e-3, "{got} vs {want}");
        assert!(dp.impulse.iter().flatten().all(|z| *z == 0.0));
    }

    #[test]
    fn dp_federico_policy_shape() {
        let m = make_federico_model();
        let g = GridSpec { lo: 0.5, hi: 400.0, n_states: 400, log_spacing: true };
        let dp = brute_force_dp(&m, &g).unwrap();
        let v0 = dp.value_at(0, 50.0);
        assert!((v0 - 119.28).abs() < 1.0, "{v0}");
        for k in [10, 30, 60] {
            let s = dp.boundary(k, Direction::Up).unwrap();
            assert!((s - 8.749).abs() / 8.749 < 0.1, "k={k} s={s}");
        }
        for row in &dp.value {
            assert!(row.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        }
        let coarse = brute_force_dp(&m, &GridSpec { n_states: 200, ..g }).unwrap();
        assert!((coarse.value_at(0, 50.0) - v0).abs() / v0 < 2e-3);
    }

    #[test]
    fn dp_faustmann_boundary_below_reference() {
        let m = make_faustmann_model();
        let g = GridSpec { lo: -3.0, hi: 6.0, n_states: 400, log_spacing: false };
        let dp = brute_force_dp(&m, &g).unwrap();
        assert_eq!(dp.impulse.len() * dp.grid.len(), 400 * 50);
        for k in 0..=10 {
            let b = dp.boundary(k, Direction::Down).unwrap();
            assert!((1.55..=1.84).contains(&b), "k={k} b={b}");
        }
        assert!(dp.boundary(45, Direction::Down).unwrap() < dp.boundary(5, Direction::Down).unwrap());
    }

    #[test]
    fn dp_rejects_two_dimensions() {
        let m = make_guthrie_model();
        let g = GridSpec { lo: 1.0, hi: 2.0, n_states: 10, log_spacing: false };
        assert!(matches!(brute_force_dp(&m, &g), Err(Error::UnsupportedDimension(2))));
    }
}
