//! Gaussian-process regression with an anisotropic squared-exponential kernel
//! and a constant (GLS-estimated) mean.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::nelder_mead;
use crate::dynamics::{substream, Purpose};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscales: Vec<f64>,
    pub process_var: f64,
    pub noise_var: f64,
}

/// Box constraints for the likelihood maximization.
#[derive(Clone, Debug, PartialEq)]
pub struct GpBounds {
    pub lengthscale: Vec<(f64, f64)>,
    pub process_var: (f64, f64),
    pub noise_var: (f64, f64),
}

impl GpBounds {
    /// `ℓ ∈ [0.05, 5]·range`, `σ_p² ∈ [1e-4, 1e4]·var(y)`, `σ_ε² ∈ [1e-8, 1]·var(y)`.
    pub fn from_data(x: &[Vec<f64>], y: &[f64]) -> Self {
        let d = x[0].len();
        let lengthscale = (0..d)
            .map(|j| {
                let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r[j]), b.max(r[j])));
                let range = if hi > lo { hi - lo } else { 1.0 };
                (0.05 * range, 5.0 * range)
            })
            .collect();
        let v = variance_floor(y);
        Self { lengthscale, process_var: (1e-4 * v, 1e4 * v), noise_var: (1e-8 * v, v) }
    }
}

fn variance_floor(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.max(1e-12 * (1.0 + mean * mean))
}

const NUGGET_START: f64 = 1e-8;
const NUGGET_MAX: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct GpSurrogate {
    dim: usize,
    /// Row-major `[N × dim]`, sorted lexicographically.
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    /// Known per-site noise variances; `None` means homoskedastic `noise_var`.
    site_noise: Option<Vec<f64>>,
    pub hyper: GpHyper,
    pub mean_const: f64,
    pub nugget: f64,
    alpha: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    inv_ls2: Vec<f64>,
}

struct Factored {
    chol: Cholesky<f64, Dyn>,
    nugget: f64,
}

fn factor(
    x: &[f64],
    dim: usize,
    hyper: &GpHyper,
    site_noise: Option<&[f64]>,
) -> Option<Factored> {
    let n = x.len() / dim;
    let inv_ls2: Vec<f64> = hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let xi = &x[i * dim..(i + 1) * dim];
        for j in 0..i {
            let xj = &x[j * dim..(j + 1) * dim];
            let c = hyper.process_var * se_corr(xi, xj, &inv_ls2);
            k[(i, j)] = c;
            k[(j, i)] = c;
        }
        k[(i, i)] = hyper.process_var + site_noise.map_or(hyper.noise_var, |v| v[i]);
    }
    let mut rel = NUGGET_START;
    while rel <= NUGGET_MAX * (1.0 + 1e-9) {
        let nugget = rel * hyper.process_var;
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += nugget;
        }
        if let Some(chol) = m.cholesky() {
            return Some(Factored { chol, nugget });
        }
        rel *= 10.0;
    }
    None
}

#[inline]
fn se_corr(a: &[f64], b: &[f64], inv_ls2: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        let d = a[j] - b[j];
        s += d * d * inv_ls2[j];
    }
    (-0.5 * s).exp()
}

/// GLS mean, residual solve and negative log marginal likelihood.
fn gls(chol: &Cholesky<f64, Dyn>, y: &[f64]) -> (f64, DVector<f64>, f64) {
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let ones = DVector::from_element(n, 1.0);
    let ki1 = chol.solve(&ones);
    let kiy = chol.solve(&yv);
    let beta = kiy.sum() / ki1.sum();
    let alpha = kiy - ki1 * beta;
    let resid = yv.add_scalar(-beta);
    let quad = resid.dot(&alpha);
    let logdet: f64 = chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum();
    (beta, alpha, 0.5 * quad + logdet)
}

/// Sorts rows lexicographically and merges exact duplicates with equal responses.
fn canonicalize(
    x: &[Vec<f64>],
    y: &[f64],
    noise: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    let mut fx = Vec::new();
    let mut fy: Vec<f64> = Vec::new();
    let mut fnoise = noise.map(|_| Vec::new());
    let mut last: Option<usize> = None;
    for &i in &idx {
        if let Some(l) = last {
            if x[l] == x[i] {
                if (y[l] - y[i]).abs() > 1e-12 * (1.0 + y[l].abs()) {
                    return Err(Error::DegenerateDesign(i));
                }
                continue;
            }
        }
        fx.extend_from_slice(&x[i]);
        fy.push(y[i]);
        if let (Some(out), Some(v)) = (fnoise.as_mut(), noise) {
            out.push(v[i]);
        }
        last = Some(i);
    }
    Ok((fx, fy, fnoise))
}

impl GpSurrogate {
    /// Builds the posterior for fixed hyperparameters.
    pub fn with_hyper(x: &[Vec<f64>], y: &[f64], site_noise: Option<&[f64]>, hyper: GpHyper) -> Result<Self> {
        validate(x, y, 1)?;
        let (fx, fy, fnoise) = canonicalize(x, y, site_noise)?;
        Self::from_canonical(x[0].len(), fx, fy, fnoise, hyper)
    }

    fn from_canonical(
        dim: usize,
        train_x: Vec<f64>,
        train_y: Vec<f64>,
        site_noise: Option<Vec<f64>>,
        hyper: GpHyper,
    ) -> Result<Self> {
        let f = factor(&train_x, dim, &hyper, site_noise.as_deref()).ok_or(Error::CholeskyFailure {
            nugget: NUGGET_MAX * hyper.process_var,
        })?;
        let (beta, alpha, _) = gls(&f.chol, &train_y);
        let alpha = alpha.iter().map(|a| a * hyper.process_var).collect();
        let inv_ls2 = hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        Ok(Self {
            dim,
            train_x,
            train_y,
            site_noise,
            hyper,
            mean_const: beta,
            nugget: f.nugget,
            alpha,
            chol: f.chol,
            inv_ls2,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sites(&self) -> usize {
        self.train_y.len()
    }

    pub fn train_x(&self) -> &[f64] {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    pub fn site_noise(&self) -> Option<&[f64]> {
        self.site_noise.as_deref()
    }

    /// Lower Cholesky factor of the (nugget-augmented) covariance.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Rebuilds a fitted surrogate from persisted data and hyperparameters.
    pub fn from_parts(
        dim: usize,
        train_x: Vec<f64>,
        train_y: Vec<f64>,
        site_noise: Option<Vec<f64>>,
        hyper: GpHyper,
    ) -> Result<Self> {
        if dim == 0 || train_x.len() != dim * train_y.len() || hyper.lengthscales.len() != dim {
            return Err(Error::BadFormat("inconsistent GP record".into()));
        }
        Self::from_canonical(dim, train_x, train_y, site_noise, hyper)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut v = self.mean_const;
        for (i, a) in self.alpha.iter().enumerate() {
            v += a * se_corr(x, &self.train_x[i * self.dim..(i + 1) * self.dim], &self.inv_ls2);
        }
        v
    }

    pub fn predict_gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for (i, a) in self.alpha.iter().enumerate() {
            let xi = &self.train_x[i * self.dim..(i + 1) * self.dim];
            let c = a * se_corr(x, xi, &self.inv_ls2);
            for j in 0..self.dim {
                out[j] -= (x[j] - xi[j]) * self.inv_ls2[j] * c;
            }
        }
    }
}

fn validate(x: &[Vec<f64>], y: &[f64], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameters("x and y lengths differ".into()));
    }
    if x.len() < min_n {
        return Err(Error::TooFewSites { got: x.len(), need: min_n });
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameters("non-finite or ragged GP training data".into()));
    }
    Ok(())
}

/// Maximum-likelihood GP fit with `restarts` seeded Nelder–Mead starts in log-parameter space.
///
/// `noise_hint`, when given, fixes the per-site noise variances and only the
/// kernel parameters are estimated.
pub fn fit_gp(
    x: &[Vec<f64>],
    y: &[f64],
    noise_hint: Option<&[f64]>,
    bounds: Option<&GpBounds>,
    restarts: usize,
    seed: u64,
) -> Result<GpSurrogate> {
    validate(x, y, 5)?;
    if let Some(h) = noise_hint {
        if h.len() != y.len() || h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameters("noise hint must be finite, non-negative, one per site".into()));
        }
    }
    let dim = x[0].len();
    let (fx, fy, fnoise) = canonicalize(x, y, noise_hint)?;
    let default_bounds;
    let b = match bounds {
        Some(b) => b,
        None => {
            // canonical rows keep the bounds independent of input order
            let rows: Vec<Vec<f64>> = fx.chunks(dim).map(<[f64]>::to_vec).collect();
            default_bounds = GpBounds::from_data(&rows, &fy);
            &default_bounds
        }
    };
    let n = fy.len();
    let mean = fy.iter().sum::<f64>() / n as f64;
    let var = fy.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 1e-14 * (1.0 + mean * mean) {
        let hyper = GpHyper {
            lengthscales: b.lengthscale.iter().map(|(lo, hi)| (lo * hi).sqrt()).collect(),
            process_var: b.process_var.0,
            noise_var: b.noise_var.0,
        };
        return GpSurrogate::from_canonical(dim, fx, fy, fnoise, hyper);
    }

    let estimate_noise = fnoise.is_none();
    let mut lo: Vec<f64> = b.lengthscale.iter().map(|p| p.0.ln()).collect();
    let mut hi: Vec<f64> = b.lengthscale.iter().map(|p| p.1.ln()).collect();
    lo.push(b.process_var.0.ln());
    hi.push(b.process_var.1.ln());
    if estimate_noise {
        lo.push(b.noise_var.0.ln());
        hi.push(b.noise_var.1.ln());
    }
    let unpack = |t: &[f64]| GpHyper {
        lengthscales: t[..dim].iter().map(|v| v.exp()).collect(),
        process_var: t[dim].exp(),
        noise_var: if estimate_noise { t[dim + 1].exp() } else { 0.0 },
    };
    let nll = |t: &[f64]| -> f64 {
        match factor(&fx, dim, &unpack(t), fnoise.as_deref()) {
            Some(f) => gls(&f.chol, &fy).2,
            None => f64::INFINITY,
        }
    };

    let np = lo.len();
    let mut starts = Vec::with_capacity(restarts.max(1));
    let mut first: Vec<f64> = b.lengthscale.iter().map(|(l, h)| (0.2 * h / 5.0).clamp(*l, *h).ln()).collect();
    first.push(var.clamp(b.process_var.0, b.process_var.1).ln());
    if estimate_noise {
        first.push((1e-3 * var).clamp(b.noise_var.0, b.noise_var.1).ln());
    }
    starts.push(first);
    for r in 1..restarts.max(1) {
        let mut rng = substream(seed, Purpose::Hyper, 0, r as u64);
        starts.push((0..np).map(|i| rng.random_range(lo[i]..hi[i])).collect());
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let (t, v) = nelder_mead(nll, s, &lo, &hi, 150 * np, 1e-10);
        if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some((t, v));
        }
    }
    let (t, v) = best.expect("at least one start");
    if !v.is_finite() {
        return Err(Error::CholeskyFailure { nugget: NUGGET_MAX * b.process_var.1 });
    }
    GpSurrogate::from_canonical(dim, fx, fy, fnoise, unpack(&t))
}
