//! One-step transitions of the uncontrolled and impulsed state process.
//!
//! Every path owns a ChaCha substream keyed by `(seed, purpose, step, path)`,
//! so a path's noise does not depend on how the batch was partitioned.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Dynamics, ImpulseModel};

/// Purpose tag mixed into substream keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Training = 1,
    Forward = 2,
    Design = 3,
    Hyper = 4,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the generator for path `path` of stream `(seed, purpose, step)`.
pub fn substream(seed: u64, purpose: Purpose, step: u64, path: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix(seed),
        splitmix(seed ^ (purpose as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)),
        splitmix(step.wrapping_add(0x1234_5678)),
        splitmix(seed.rotate_left(17) ^ step ^ purpose as u64),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(path);
    rng
}

/// Precomputed per-model constants for a single step of length `Δt`.
#[derive(Clone, Debug)]
pub struct Stepper {
    dynamics: Dynamics,
    dt: f64,
    sqrt_dt: f64,
    log_drift: f64,
    log_vol: f64,
    decay_factor: f64,
    buf_len: usize,
}

impl Stepper {
    pub fn new(model: &ImpulseModel) -> Self {
        let dt = model.dt;
        let sqrt_dt = dt.sqrt();
        let (log_drift, log_vol, decay_factor) = match model.dynamics {
            Dynamics::GbmExact { mu, sigma } => ((mu - 0.5 * sigma * sigma) * dt, sigma * sqrt_dt, 1.0),
            Dynamics::AbmExact { mu, sigma } => (mu * dt, sigma * sqrt_dt, 1.0),
            Dynamics::PriceCapacity { mu, sigma, decay } => {
                ((mu - 0.5 * sigma * sigma) * dt, sigma * sqrt_dt, (-decay * dt).exp())
            }
            Dynamics::EulerGeneric { .. } => (0.0, 0.0, 1.0),
        };
        Self {
            dynamics: model.dynamics.clone(),
            dt,
            sqrt_dt,
            log_drift,
            log_vol,
            decay_factor,
            buf_len: model.dim,
        }
    }

    /// Advances one state in place.
    #[inline]
    pub fn step(&self, x: &mut [f64], rng: &mut ChaCha8Rng) {
        match &self.dynamics {
            Dynamics::GbmExact { .. } => {
                let xi: f64 = StandardNormal.sample(rng);
                x[0] *= (self.log_drift + self.log_vol * xi).exp();
            }
            Dynamics::AbmExact { .. } => {
                let xi: f64 = StandardNormal.sample(rng);
                x[0] += self.log_drift + self.log_vol * xi;
            }
            Dynamics::PriceCapacity { .. } => {
                let xi: f64 = StandardNormal.sample(rng);
                x[0] *= (self.log_drift + self.log_vol * xi).exp();
                x[1] *= self.decay_factor;
            }
            Dynamics::EulerGeneric { drift, vol } => {
                let mut mu = vec![0.0; self.buf_len];
                let mut sig = vec![0.0; self.buf_len];
                drift(x, &mut mu);
                vol(x, &mut sig);
                for i in 0..x.len() {
                    let xi: f64 = StandardNormal.sample(rng);
                    x[i] += mu[i] * self.dt + sig[i] * self.sqrt_dt * xi;
                }
            }
        }
    }
}

/// A batch of paths advanced in lockstep.
#[derive(Clone, Debug)]
pub struct PathBatch {
    pub dim: usize,
    /// Row-major `[n_paths × dim]`.
    pub states: Vec<f64>,
    pub step_index: usize,
    pub rngs: Vec<ChaCha8Rng>,
}

impl PathBatch {
    /// Creates a batch whose path `i` uses substream `first_path + i`.
    pub fn new(
        dim: usize,
        states: Vec<f64>,
        step_index: usize,
        seed: u64,
        purpose: Purpose,
        stream_step: u64,
        first_path: u64,
    ) -> Self {
        assert_eq!(states.len() % dim, 0);
        let n = states.len() / dim;
        let rngs = (0..n)
            .map(|i| substream(seed, purpose, stream_step, first_path + i as u64))
            .collect();
        Self { dim, states, step_index, rngs }
    }

    pub fn n_paths(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn state_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.states.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(Error::NonFiniteState { step: self.step_index, path: pos / self.dim }),
            None => Ok(()),
        }
    }
}

/// Advances every path one step under the no-impulse dynamics.
pub fn step_uncontrolled(model: &ImpulseModel, batch: &mut PathBatch) -> Result<()> {
    if batch.step_index >= model.n_steps() {
        return Err(Error::InvalidParameters(format!(
            "cannot step past maturity (step {} of {})",
            batch.step_index,
            model.n_steps()
        )));
    }
    let stepper = Stepper::new(model);
    let dim = batch.dim;
    batch
        .states
        .par_chunks_mut(dim)
        .zip(batch.rngs.par_iter_mut())
        .for_each(|(x, rng)| stepper.step(x, rng));
    batch.step_index += 1;
    batch.check_finite()
}

/// Adds impulses (row-major `[n_paths × n_controllable]`) to the controllable coordinates.
pub fn apply_impulse(model: &ImpulseModel, batch: &mut PathBatch, impulses: &[f64]) -> Result<()> {
    let set = &model.impulse_set;
    let m = set.controllable.len();
    if impulses.len() != batch.n_paths() * m {
        return Err(Error::InvalidParameters("impulse array shape mismatch".into()));
    }
    for z in impulses.chunks(m) {
        set.check(z)?;
    }
    for (i, z) in impulses.chunks(m).enumerate() {
        let x = batch.state_mut(i);
        for (j, &c) in set.controllable.iter().enumerate() {
            x[c] += z[j];
        }
    }
    batch.check_finite()
}
