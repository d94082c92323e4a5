//! Continuation-value surrogates `Q̂(k,·)`: Gaussian processes and
//! thin-plate smoothing splines behind one value/gradient interface.

pub mod gp;
pub mod optim;
pub mod tps;

pub use gp::{fit_gp, GpBounds, GpHyper, GpSurrogate};
pub use tps::{fit_tps, LambdaMode, TpsKernel, TpsSurrogate};

use crate::design::Domain;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub enum Regressor {
    Gp(GpSurrogate),
    Tps(TpsSurrogate),
}

/// A fitted regression, optionally on log-transformed inputs.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub regressor: Regressor,
    pub log_inputs: bool,
}

impl Surrogate {
    pub fn kind_name(&self) -> &'static str {
        match self.regressor {
            Regressor::Gp(_) => "gp",
            Regressor::Tps(_) => "tps",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.regressor {
            Regressor::Gp(g) => g.dim(),
            Regressor::Tps(t) => t.dim,
        }
    }

    #[inline]
    fn map_input<'a>(&self, x: &'a [f64], buf: &'a mut [f64; 4]) -> &'a [f64] {
        if !self.log_inputs {
            return x;
        }
        for (b, v) in buf.iter_mut().zip(x) {
            *b = v.max(f64::MIN_POSITIVE).ln();
        }
        &buf[..x.len()]
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut buf = [0.0; 4];
        let u = self.map_input(x, &mut buf);
        match &self.regressor {
            Regressor::Gp(g) => g.predict(u),
            Regressor::Tps(t) => t.predict(u),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let mut buf = [0.0; 4];
        let u = self.map_input(x, &mut buf);
        match &self.regressor {
            Regressor::Gp(g) => g.predict_gradient(u, out),
            Regressor::Tps(t) => t.predict_gradient(u, out),
        }
        if self.log_inputs {
            for (g, v) in out.iter_mut().zip(x) {
                *g /= v.max(f64::MIN_POSITIVE);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SurrogateSpec {
    Gp {
        restarts: usize,
        /// Use per-site sample variance / `N_rep` as known noise.
        replicate_noise: bool,
    },
    Tps {
        lambda_mode: LambdaMode,
        kernel: TpsKernel,
        max_knots: usize,
    },
}

impl SurrogateSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SurrogateSpec::Gp { .. } => "gp",
            SurrogateSpec::Tps { .. } => "tps",
        }
    }
}

/// Fits a surrogate on pre-averaged responses.
///
/// `site_var` holds per-site sample variances of the replicates (used only
/// when the surrogate spec asks for replicate-based noise).
pub fn fit_surrogate(
    spec: &SurrogateSpec,
    log_inputs: bool,
    x: &[Vec<f64>],
    y: &[f64],
    site_var: Option<&[f64]>,
    n_rep: usize,
    seed: u64,
) -> Result<Surrogate> {
    let mapped;
    let xs = if log_inputs {
        if x.iter().flatten().any(|v| *v <= 0.0) {
            return Err(Error::InvalidParameters("log-input surrogate needs positive sites".into()));
        }
        mapped = x.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect::<Vec<Vec<f64>>>();
        &mapped
    } else {
        x
    };
    let regressor = match spec {
        SurrogateSpec::Gp { restarts, replicate_noise } => {
            let hint: Option<Vec<f64>> = match (replicate_noise, site_var) {
                (true, Some(v)) if n_rep > 1 => {
                    let n = v.len() as f64;
                    let mean_var = v.iter().sum::<f64>() / n;
                    // per-site variances are shrunk towards their mean to stabilize small-N_rep estimates
                    Some(v.iter().map(|s| (0.5 * s + 0.5 * mean_var) / n_rep as f64).collect())
                }
                _ => None,
            };
            Regressor::Gp(fit_gp(xs, y, hint.as_deref(), None, *restarts, seed)?)
        }
        SurrogateSpec::Tps { lambda_mode, kernel, max_knots } => {
            Regressor::Tps(fit_tps(xs, y, *lambda_mode, *kernel, *max_knots)?)
        }
    };
    Ok(Surrogate { regressor, log_inputs })
}

/// Fitted objects for one time step.
#[derive(Clone, Debug)]
pub struct StepFit {
    pub q: Surrogate,
    /// Training domain of this step; decisions clamp into it.
    pub domain: Domain,
    /// Optional regression of the optimal impulse on the state.
    pub zhat: Option<Surrogate>,
}

/// The ordered collection `{Q̂(k,·)}` for `k = 0,…,K−1`; `Q̂(K,·)` is the terminal value.
#[derive(Clone, Debug)]
pub struct PolicyStack {
    pub dim: usize,
    pub steps: Vec<StepFit>,
}

impl PolicyStack {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// `Q̂(k, x)` with `x` clamped into the step's training domain.
    pub fn q_clamped(&self, k: usize, x: &[f64]) -> f64 {
        let s = &self.steps[k];
        let mut buf = [0.0; 4];
        let y = &mut buf[..x.len()];
        s.domain.clamp_into(x, y);
        s.q.value(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_inputs_chain_rule() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0 + i as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0].ln() * 2.0).collect();
        let spec = SurrogateSpec::Tps { lambda_mode: LambdaMode::Fixed(1e12), kernel: TpsKernel::ThinPlate, max_knots: 40 };
        let s = fit_surrogate(&spec, true, &x, &y, None, 1, 0).unwrap();
        let mut g = [0.0];
        s.gradient(&[4.0], &mut g);
        assert!((s.value(&[4.0]) - 2.0 * 4f64.ln()).abs() < 1e-6);
        assert!((g[0] - 0.5).abs() < 1e-6);
    }
}
