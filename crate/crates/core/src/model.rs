//! Problem definition for finite-horizon impulse control.
//!
//! An [`ImpulseModel`] bundles the uncontrolled dynamics, the running reward,
//! the impulse revenue `κ(x, z)`, the admissible impulse set, the terminal
//! value and the time grid. Impulse revenue is always *net revenue* added to
//! the objective, so costs are negative.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ImpulseFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Uncontrolled state dynamics together with the sampler used for one step.
#[derive(Clone)]
pub enum Dynamics {
    /// `dX = μX dt + σX dW`, sampled from the exact lognormal transition.
    GbmExact { mu: f64, sigma: f64 },
    /// `dX = μ dt + σ dW`, sampled exactly.
    AbmExact { mu: f64, sigma: f64 },
    /// Euler–Maruyama with diagonal noise for arbitrary coefficients.
    EulerGeneric { drift: VectorFn, vol: VectorFn },
    /// Coordinate 0 is a GBM price, coordinate 1 a capacity decaying at `decay`.
    PriceCapacity { mu: f64, sigma: f64, decay: f64 },
}

impl Dynamics {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Dynamics::GbmExact { .. } => "gbm_exact",
            Dynamics::AbmExact { .. } => "abm_exact",
            Dynamics::EulerGeneric { .. } => "euler_generic",
            Dynamics::PriceCapacity { .. } => "price_capacity",
        }
    }
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::GbmExact { mu, sigma } => write!(f, "GbmExact(mu={mu}, sigma={sigma})"),
            Dynamics::AbmExact { mu, sigma } => write!(f, "AbmExact(mu={mu}, sigma={sigma})"),
            Dynamics::EulerGeneric { .. } => write!(f, "EulerGeneric"),
            Dynamics::PriceCapacity { mu, sigma, decay } => {
                write!(f, "PriceCapacity(mu={mu}, sigma={sigma}, decay={decay})")
            }
        }
    }
}

#[derive(Clone)]
pub enum RunningReward {
    Zero,
    /// `scale · x^γ / γ` on the first coordinate.
    Power { gamma: f64, scale: f64 },
    /// `p · c^α` for a (price, capacity) state.
    CobbDouglas { alpha: f64 },
    Custom(StateFn),
}

impl RunningReward {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RunningReward::Zero => 0.0,
            RunningReward::Power { gamma, scale } => scale * x[0].max(0.0).powf(*gamma) / gamma,
            RunningReward::CobbDouglas { alpha } => x[0] * x[1].max(0.0).powf(*alpha),
            RunningReward::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for RunningReward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunningReward::Zero => write!(f, "Zero"),
            RunningReward::Power { gamma, scale } => write!(f, "Power(gamma={gamma}, scale={scale})"),
            RunningReward::CobbDouglas { alpha } => write!(f, "CobbDouglas(alpha={alpha})"),
            RunningReward::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Net revenue of an impulse. `κ(x, 0) = 0` for every variant.
#[derive(Clone)]
pub enum ImpulseCost {
    /// `c0 · z + c1` for a one-dimensional impulse.
    LinearAffine { c0: f64, c1: f64 },
    /// `(|z| − threshold)_+`, e.g. timber sold above a fixed cutting cost.
    FixedCostPositivePart { threshold: f64 },
    /// `−scale · |z|^β` (concave investment cost).
    PowerCost { beta: f64, scale: f64 },
    Custom(ImpulseFn),
}

impl ImpulseCost {
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        if z.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        match self {
            ImpulseCost::LinearAffine { c0, c1 } => c0 * z.iter().sum::<f64>() + c1,
            ImpulseCost::FixedCostPositivePart { threshold } => {
                let size: f64 = z.iter().map(|v| v.abs()).sum();
                (size - threshold).max(0.0)
            }
            ImpulseCost::PowerCost { beta, scale } => {
                -scale * z.iter().map(|v| v.abs().powf(*beta)).sum::<f64>()
            }
            ImpulseCost::Custom(f) => f(x, z),
        }
    }

    pub fn linear_coefficients(&self) -> Option<(f64, f64)> {
        match self {
            ImpulseCost::LinearAffine { c0, c1 } => Some((*c0, *c1)),
            _ => None,
        }
    }
}

impl fmt::Debug for ImpulseCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImpulseCost::LinearAffine { c0, c1 } => write!(f, "LinearAffine(c0={c0}, c1={c1})"),
            ImpulseCost::FixedCostPositivePart { threshold } => {
                write!(f, "FixedCostPositivePart(threshold={threshold})")
            }
            ImpulseCost::PowerCost { beta, scale } => write!(f, "PowerCost(beta={beta}, scale={scale})"),
            ImpulseCost::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone)]
pub enum TerminalValue {
    Zero,
    /// `coef · x^γ / γ`: perpetual running reward with no further impulses.
    PowerPerpetuity { coef: f64, gamma: f64 },
    /// `factor · p · c^α`.
    CobbDouglasPerpetuity { alpha: f64, factor: f64 },
    Custom(StateFn),
}

impl TerminalValue {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TerminalValue::Zero => 0.0,
            TerminalValue::PowerPerpetuity { coef, gamma } => coef * x[0].max(0.0).powf(*gamma) / gamma,
            TerminalValue::CobbDouglasPerpetuity { alpha, factor } => {
                factor * x[0] * x[1].max(0.0).powf(*alpha)
            }
            TerminalValue::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for TerminalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalValue::Zero => write!(f, "Zero"),
            TerminalValue::PowerPerpetuity { coef, gamma } => {
                write!(f, "PowerPerpetuity(coef={coef}, gamma={gamma})")
            }
            TerminalValue::CobbDouglasPerpetuity { alpha, factor } => {
                write!(f, "CobbDouglasPerpetuity(alpha={alpha}, factor={factor})")
            }
            TerminalValue::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Both,
}

/// Admissible impulses `Ξ`: box bounds on the controllable coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    pub controllable: Vec<usize>,
    pub z_min: Vec<f64>,
    pub z_max: Vec<f64>,
    pub direction: Direction,
    /// Pre-specified post-impulse level for the controllable coordinates,
    /// when impulses always reset the state (forest rotation).
    pub fixed_target: Option<Vec<f64>>,
}

impl ActionSet {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.controllable.is_empty() {
            return Err(Error::InvalidModel("no controllable coordinate".into()));
        }
        let m = self.controllable.len();
        if self.z_min.len() != m || self.z_max.len() != m {
            return Err(Error::InvalidModel("impulse bounds do not match controllable coordinates".into()));
        }
        for (j, &c) in self.controllable.iter().enumerate() {
            if c >= dim {
                return Err(Error::InvalidModel(format!("controllable coordinate {c} >= dim {dim}")));
            }
            let (lo, hi) = (self.z_min[j], self.z_max[j]);
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidModel(format!("impulse bounds [{lo}, {hi}] on coordinate {c}")));
            }
            let ok = match self.direction {
                Direction::Both => lo <= 0.0 && 0.0 <= hi,
                Direction::Up => lo == 0.0,
                Direction::Down => hi == 0.0,
            };
            if !ok {
                return Err(Error::InvalidModel(format!(
                    "bounds [{lo}, {hi}] inconsistent with direction {:?}",
                    self.direction
                )));
            }
        }
        if let Some(t) = &self.fixed_target {
            if t.len() != m {
                return Err(Error::InvalidModel("fixed target length mismatch".into()));
            }
        }
        Ok(())
    }

    /// Checks one impulse (over the controllable coordinates).
    pub fn check(&self, z: &[f64]) -> Result<()> {
        for (j, &v) in z.iter().enumerate() {
            let coord = self.controllable[j];
            if !v.is_finite() {
                return Err(Error::InadmissibleImpulse { coord, impulse: v, reason: "not finite" });
            }
            if v == 0.0 {
                continue;
            }
            if v < self.z_min[j] || v > self.z_max[j] {
                return Err(Error::InadmissibleImpulse { coord, impulse: v, reason: "outside bounds" });
            }
        }
        Ok(())
    }

    pub fn is_admissible(&self, z: &[f64]) -> bool {
        self.check(z).is_ok()
    }
}

#[derive(Clone, Debug)]
pub struct ImpulseModel {
    pub name: String,
    pub dim: usize,
    pub dynamics: Dynamics,
    pub running_reward: RunningReward,
    pub impulse_cost: ImpulseCost,
    pub impulse_set: ActionSet,
    pub terminal_value: TerminalValue,
    pub horizon: f64,
    pub dt: f64,
    pub discount_rate: f64,
    /// Default initial state for forward evaluation.
    pub x0: Vec<f64>,
}

impl ImpulseModel {
    /// Number of time steps `K = T / Δt`.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidModel("dim must be positive".into()));
        }
        if !(self.horizon > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidModel("horizon and dt must be positive".into()));
        }
        let k = (self.horizon / self.dt).round();
        if k < 1.0 || (k * self.dt - self.horizon).abs() >= 1e-12 * self.horizon {
            return Err(Error::InvalidModel(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        if !(self.discount_rate >= 0.0) {
            return Err(Error::InvalidModel("discount rate must be nonnegative".into()));
        }
        if matches!(self.dynamics, Dynamics::PriceCapacity { .. }) && self.dim != 2 {
            return Err(Error::InvalidModel("price/capacity dynamics need dim = 2".into()));
        }
        if self.x0.len() != self.dim {
            return Err(Error::InvalidModel("x0 length differs from dim".into()));
        }
        self.impulse_set.validate(self.dim)
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::GbmExact { mu, .. } => out[0] = mu * x[0],
            Dynamics::AbmExact { mu, .. } => out[0] = *mu,
            Dynamics::EulerGeneric { drift, .. } => drift(x, out),
            Dynamics::PriceCapacity { mu, decay, .. } => {
                out[0] = mu * x[0];
                out[1] = -decay * x[1];
            }
        }
    }

    /// Diagonal diffusion coefficients.
    pub fn vol(&self, x: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::GbmExact { sigma, .. } => out[0] = sigma * x[0],
            Dynamics::AbmExact { sigma, .. } => out[0] = *sigma,
            Dynamics::EulerGeneric { vol, .. } => vol(x, out),
            Dynamics::PriceCapacity { sigma, .. } => {
                out[0] = sigma * x[0];
                out[1] = 0.0;
            }
        }
    }

    pub fn running_reward(&self, x: &[f64]) -> f64 {
        self.running_reward.eval(x)
    }

    /// `κ(x, z)` where `z` lists the increments of the controllable coordinates.
    pub fn impulse_cost(&self, x: &[f64], z: &[f64]) -> f64 {
        self.impulse_cost.eval(x, z)
    }

    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        self.terminal_value.eval(x)
    }

    /// Number of independent Brownian drivers consumed per step.
    pub fn noise_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::PriceCapacity { .. } => 1,
            _ => self.dim,
        }
    }
}

/// Parameters of the 1-D GBM irreversible-investment instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedericoParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub c0: f64,
    pub c1: f64,
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub z_max: f64,
}

impl Default for FedericoParams {
    fn default() -> Self {
        Self {
            r: 0.08,
            mu: -0.07,
            sigma: 0.25,
            gamma: 0.5,
            c0: -1.0,
            c1: -10.0,
            x0: 50.0,
            horizon: 10.0,
            dt: 0.1,
            z_max: 100.0,
        }
    }
}

impl FedericoParams {
    /// `C = 1 / (r − μγ + γ(1−γ)σ²/2)`, the perpetuity factor of `x^γ/γ`.
    pub fn perpetuity_factor(&self) -> f64 {
        1.0 / (self.r - self.mu * self.gamma + 0.5 * self.gamma * (1.0 - self.gamma) * self.sigma.powi(2))
    }
}

pub fn make_federico_model() -> ImpulseModel {
    federico_model(&FedericoParams::default())
}

pub fn federico_model(p: &FedericoParams) -> ImpulseModel {
    ImpulseModel {
        name: "federico".into(),
        dim: 1,
        dynamics: Dynamics::GbmExact { mu: p.mu, sigma: p.sigma },
        running_reward: RunningReward::Power { gamma: p.gamma, scale: 1.0 },
        impulse_cost: ImpulseCost::LinearAffine { c0: p.c0, c1: p.c1 },
        impulse_set: ActionSet {
            controllable: vec![0],
            z_min: vec![0.0],
            z_max: vec![p.z_max],
            direction: Direction::Up,
            fixed_target: None,
        },
        terminal_value: TerminalValue::PowerPerpetuity { coef: p.perpetuity_factor(), gamma: p.gamma },
        horizon: p.horizon,
        dt: p.dt,
        discount_rate: p.r,
        x0: vec![p.x0],
    }
}

/// Parameters of the forest-rotation instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaustmannParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub cut_cost: f64,
    pub reset_level: f64,
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub z_min: f64,
}

impl Default for FaustmannParams {
    fn default() -> Self {
        Self {
            r: 0.1,
            mu: 0.0,
            // Volatility at which the infinite-horizon cut threshold equals 1.84
            // (see `oracle::faustmann_threshold`).
            sigma: 0.4463,
            cut_cost: 1.0,
            reset_level: 0.0,
            x0: 0.0,
            horizon: 5.0,
            dt: 0.1,
            z_min: -20.0,
        }
    }
}

pub fn make_faustmann_model() -> ImpulseModel {
    faustmann_model(&FaustmannParams::default())
}

pub fn faustmann_model(p: &FaustmannParams) -> ImpulseModel {
    ImpulseModel {
        name: "faustmann".into(),
        dim: 1,
        dynamics: Dynamics::AbmExact { mu: p.mu, sigma: p.sigma },
        running_reward: RunningReward::Zero,
        impulse_cost: ImpulseCost::FixedCostPositivePart { threshold: p.cut_cost },
        impulse_set: ActionSet {
            controllable: vec![0],
            z_min: vec![p.z_min],
            z_max: vec![0.0],
            direction: Direction::Down,
            fixed_target: Some(vec![p.reset_level]),
        },
        terminal_value: TerminalValue::Zero,
        horizon: p.horizon,
        dt: p.dt,
        discount_rate: p.r,
        x0: vec![p.x0],
    }
}

/// Parameters of the 2-D price/capacity expansion instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuthrieParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub decay: f64,
    pub beta: f64,
    pub alpha: f64,
    pub p0: f64,
    pub c0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub z_max: f64,
}

impl Default for GuthrieParams {
    fn default() -> Self {
        Self {
            r: 0.04,
            mu: 0.0,
            sigma: 0.08,
            decay: 0.1,
            beta: 0.95,
            alpha: 0.5,
            p0: 3.0,
            c0: 150.0,
            horizon: 50.0,
            dt: 0.5,
            z_max: 5000.0,
        }
    }
}

impl GuthrieParams {
    /// Return on assets `p · c^(α−β)`.
    pub fn roa(&self, p: f64, c: f64) -> f64 {
        p * c.powf(self.alpha - self.beta)
    }
}

pub fn make_guthrie_model() -> ImpulseModel {
    guthrie_model(&GuthrieParams::default())
}

pub fn guthrie_model(p: &GuthrieParams) -> ImpulseModel {
    ImpulseModel {
        name: "guthrie".into(),
        dim: 2,
        dynamics: Dynamics::PriceCapacity { mu: p.mu, sigma: p.sigma, decay: p.decay },
        running_reward: RunningReward::CobbDouglas { alpha: p.alpha },
        impulse_cost: ImpulseCost::PowerCost { beta: p.beta, scale: 1.0 },
        impulse_set: ActionSet {
            controllable: vec![1],
            z_min: vec![0.0],
            z_max: vec![p.z_max],
            direction: Direction::Up,
            fixed_target: None,
        },
        terminal_value: TerminalValue::CobbDouglasPerpetuity { alpha: p.alpha, factor: 1.0 / (p.r - p.mu) },
        horizon: p.horizon,
        dt: p.dt,
        discount_rate: p.r,
        x0: vec![p.p0, p.c0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn federico_preset_values() {
        let m = make_federico_model();
        assert_eq!(m.discount_rate, 0.08);
        let mut v = [0.0];
        m.vol(&[50.0], &mut v);
        assert!((v[0] - 12.5).abs() < 1e-12);
        assert_eq!(m.n_steps(), 100);
        for x in [0.5, 3.0, 50.0, 120.0] {
            assert_eq!(m.impulse_cost(&[x], &[0.0]), 0.0);
        }
        // C = 1/(0.08 + 0.035 + 0.0078125) = 1/0.1228125
        let c = 1.0 / 0.1228125;
        assert!((m.terminal_value(&[25.0]) - 10.0 * c).abs() < 1e-10);
        assert!((m.running_reward(&[25.0]) - 10.0).abs() < 1e-12);
        assert_eq!(m.impulse_cost(&[5.0], &[3.0]), -13.0);
        m.validate().unwrap();
    }

    #[test]
    fn faustmann_preset_values() {
        let m = make_faustmann_model();
        assert_eq!(m.impulse_cost(&[1.0], &[1.0]), 0.0);
        assert!((m.impulse_cost(&[1.84], &[1.84]) - 0.84).abs() < 1e-12);
        assert!((m.impulse_cost(&[1.84], &[-1.84]) - 0.84).abs() < 1e-12);
        assert_eq!(m.terminal_value(&[3.0]), 0.0);
        assert_eq!(m.n_steps(), 50);
        m.validate().unwrap();
    }

    #[test]
    fn guthrie_preset_values() {
        let m = make_guthrie_model();
        assert_eq!(m.running_reward(&[1.0, 1.0]), 1.0);
        assert!((m.impulse_cost(&[1.0, 50.0], &[178.0]) + 178f64.powf(0.95)).abs() < 1e-9);
        assert!((m.terminal_value(&[2.0, 4.0]) - 2.0 * 2.0 / 0.04).abs() < 1e-9);
        m.validate().unwrap();
    }

    #[test]
    fn invalid_horizon_rejected() {
        let mut m = make_federico_model();
        m.dt = 0.3;
        assert!(m.validate().is_err());
    }

    #[test]
    fn action_set_direction_invariants() {
        let mut a = make_federico_model().impulse_set;
        a.z_min = vec![-1.0];
        assert!(a.validate(1).is_err());
        let a = make_faustmann_model().impulse_set;
        assert!(a.check(&[-2.0]).is_ok());
        assert!(a.check(&[2.0]).is_err());
        assert!(a.check(&[0.0]).is_ok());
    }

    #[test]
    fn built_in_models_are_finite_in_domain() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let models = [make_federico_model(), make_faustmann_model(), make_guthrie_model()];
        for m in &models {
            let mut buf = vec![0.0; m.dim];
            for _ in 0..1000 {
                let x: Vec<f64> = (0..m.dim).map(|_| rng.random_range(0.01..100.0)).collect();
                let zeros = vec![0.0; m.impulse_set.controllable.len()];
                assert_eq!(m.impulse_cost(&x, &zeros), 0.0);
                assert!(m.running_reward(&x).is_finite());
                assert!(m.terminal_value(&x).is_finite());
                m.drift(&x, &mut buf);
                assert!(buf.iter().all(|v| v.is_finite()));
                m.vol(&x, &mut buf);
                assert!(buf.iter().all(|v| v.is_finite()));
            }
        }
    }
}
