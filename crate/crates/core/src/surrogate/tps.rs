//! Thin-plate smoothing splines in one or two dimensions.
//!
//! Large designs use a reduced knot set (quantiles in 1-D, greedy maximin in
//! 2-D); the penalty is the spline semi-norm restricted to those knots. The
//! side conditions on the coefficients are built into the parametrization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TpsKernel {
    /// `r² log r`
    ThinPlate,
    /// `r³`
    Cubic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    Gcv,
}

pub const GCV_GRID: usize = 30;

#[derive(Clone, Debug)]
pub struct TpsSurrogate {
    pub kernel: TpsKernel,
    pub dim: usize,
    /// Per-coordinate input standardization `u = (x − shift) / scale`.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Knots in standardized coordinates, row-major.
    pub knots: Vec<f64>,
    pub coef_alpha: Vec<f64>,
    /// Null-space coefficients `(β₀, β₁, …)` in standardized coordinates.
    pub coef_beta: Vec<f64>,
    pub lambda: f64,
    /// Effective degrees of freedom of the smoother.
    pub df: f64,
}

#[inline]
fn radial(kernel: TpsKernel, r2: f64) -> f64 {
    if r2 <= 0.0 {
        return 0.0;
    }
    match kernel {
        TpsKernel::ThinPlate => 0.5 * r2 * r2.ln(),
        TpsKernel::Cubic => r2 * r2.sqrt(),
    }
}

/// Factor `g` with `∇ₓ φ(|x−κ|) = g · (x−κ)`.
#[inline]
fn radial_grad_factor(kernel: TpsKernel, r2: f64) -> f64 {
    if r2 <= 0.0 {
        return 0.0;
    }
    match kernel {
        TpsKernel::ThinPlate => r2.ln() + 1.0,
        TpsKernel::Cubic => 3.0 * r2.sqrt(),
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn select_knots(u: &[f64], dim: usize, max_knots: usize) -> Vec<f64> {
    let n = u.len() / dim;
    if n <= max_knots {
        return u.to_vec();
    }
    if dim == 1 {
        let mut s = u.to_vec();
        s.sort_by(f64::total_cmp);
        s.dedup();
        if s.len() <= max_knots {
            return s;
        }
        let m = max_knots;
        let mut out: Vec<f64> = (0..m)
            .map(|j| s[((j as f64) * (s.len() - 1) as f64 / (m - 1) as f64).round() as usize])
            .collect();
        out.dedup();
        return out;
    }
    let centroid: Vec<f64> = (0..dim).map(|j| (0..n).map(|i| u[i * dim + j]).sum::<f64>() / n as f64).collect();
    let row = |i: usize| &u[i * dim..(i + 1) * dim];
    let first = (0..n)
        .min_by(|&a, &b| dist2(row(a), &centroid).total_cmp(&dist2(row(b), &centroid)))
        .unwrap();
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(row(i), row(first))).collect();
    while chosen.len() < max_knots {
        let (far, d) = nearest
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, d)| (i, *d))
            .unwrap();
        if d <= 0.0 {
            break;
        }
        chosen.push(far);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist2(row(i), row(far)));
        }
    }
    chosen.iter().flat_map(|&i| row(i).to_vec()).collect()
}

fn poly_row(u: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(u.iter().copied()).collect()
}

/// Fits a smoothing spline; `max_knots` bounds the basis size.
pub fn fit_tps(
    x: &[Vec<f64>],
    y: &[f64],
    lambda_mode: LambdaMode,
    kernel: TpsKernel,
    max_knots: usize,
) -> Result<TpsSurrogate> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameters("x and y lengths differ".into()));
    }
    if x.len() < 4 {
        return Err(Error::TooFewSites { got: x.len(), need: 4 });
    }
    let dim = x[0].len();
    if !(1..=2).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    if x.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameters("non-finite or ragged spline training data".into()));
    }
    let n = x.len();
    let p = dim + 1;
    let mut shift = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    for j in 0..dim {
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r[j]), b.max(r[j])));
        if hi <= lo {
            return Err(Error::SingularSystem(format!("coordinate {j} has no spread")));
        }
        shift[j] = 0.5 * (lo + hi);
        scale[j] = 0.5 * (hi - lo);
    }
    let u: Vec<f64> = x.iter().flat_map(|r| (0..dim).map(|j| (r[j] - shift[j]) / scale[j]).collect::<Vec<_>>()).collect();
    let knots = select_knots(&u, dim, max_knots.max(p + 2));
    let m = knots.len() / dim;
    let urow = |i: usize| &u[i * dim..(i + 1) * dim];
    let krow = |i: usize| &knots[i * dim..(i + 1) * dim];

    let t = DMatrix::from_fn(n, p, |i, j| poly_row(urow(i))[j]);
    let tk = DMatrix::from_fn(m, p, |i, j| poly_row(krow(i))[j]);
    let qr_k = tk.clone().qr();
    let rk = qr_k.r();
    if (0..p).any(|i| rk[(i, i)].abs() < 1e-10 * (m as f64).sqrt()) {
        return Err(Error::SingularSystem("knots are collinear".into()));
    }
    let mut qt_full = DMatrix::<f64>::identity(m, m);
    qr_k.q_tr_mul(&mut qt_full);
    let z = qt_full.rows(p, m - p).transpose();

    let kkk = DMatrix::from_fn(m, m, |i, j| radial(kernel, dist2(krow(i), krow(j))));
    let pen = z.transpose() * &kkk * &z;
    let pen = (&pen + pen.transpose()) * 0.5;
    let mut chol = None;
    let tr = pen.trace().abs() / (m - p) as f64;
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut a = pen.clone();
        for i in 0..m - p {
            a[(i, i)] += jitter * tr;
        }
        if let Some(c) = a.cholesky() {
            chol = Some(c);
            break;
        }
    }
    let l = chol.ok_or_else(|| Error::SingularSystem("spline penalty not positive definite".into()))?.l();
    // ZL^{-T}, used for both the design and the coefficient map
    let zlt = l
        .solve_upper_triangular(&z.transpose())
        .map(|s| s.transpose())
        .ok_or_else(|| Error::SingularSystem("triangular solve failed".into()))?;
    let l = zlt; // shape m × (m−p)
    let e = DMatrix::from_fn(n, m, |i, j| radial(kernel, dist2(urow(i), krow(j))));
    let a = &e * &l;

    let qr_t = t.clone().qr();
    let q1 = qr_t.q();
    let rt = qr_t.r();
    if (0..p).any(|i| rt[(i, i)].abs() < 1e-10 * (n as f64).sqrt()) {
        return Err(Error::SingularSystem("sites are collinear".into()));
    }
    let yv = DVector::from_column_slice(y);
    let a_proj = &a - &q1 * (q1.transpose() * &a);
    let y_proj = &yv - &q1 * (q1.transpose() * &yv);
    let svd = a_proj.svd(true, true);
    let uu = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let sig = &svd.singular_values;
    let uty = uu.transpose() * &y_proj;
    let y_perp2 = (y_proj.norm_squared() - uty.norm_squared()).max(0.0);

    let smax2 = sig.iter().fold(0.0f64, |a, s| a.max(s * s)).max(f64::MIN_POSITIVE);
    let stats = |lam: f64| -> (f64, f64) {
        let mut rss = y_perp2;
        let mut trace = p as f64;
        for (s, c) in sig.iter().zip(uty.iter()) {
            let s2 = s * s;
            let shrink = if s2 + lam > 0.0 { s2 / (s2 + lam) } else { 0.0 };
            rss += (c * (1.0 - shrink)).powi(2);
            trace += shrink;
        }
        (rss, trace)
    };
    let lambda = match lambda_mode {
        LambdaMode::Fixed(l) if l >= 0.0 => l,
        LambdaMode::Fixed(l) => return Err(Error::InvalidParameters(format!("negative smoothing parameter {l}"))),
        LambdaMode::Gcv => {
            let (lo, hi) = ((smax2 * 1e-12).ln(), (smax2 * 1e2).ln());
            (0..GCV_GRID)
                .map(|i| (lo + (hi - lo) * i as f64 / (GCV_GRID - 1) as f64).exp())
                .map(|lam| {
                    let (rss, trace) = stats(lam);
                    let dof = (n as f64 - trace).max(1e-9);
                    (lam, n as f64 * rss / (dof * dof))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        }
    };
    let (_, df) = stats(lambda);
    let tol = sig.iter().fold(0.0f64, |a, &s| a.max(s)) * 1e-13 * n as f64;
    let w = DVector::from_fn(sig.len(), |i, _| {
        let s = sig[i];
        if s <= tol && lambda == 0.0 { 0.0 } else { s / (s * s + lambda) * uty[i] }
    });
    let eta = vt.transpose() * w;
    let resid = &yv - &a * &eta;
    let beta = rt
        .solve_upper_triangular(&(q1.transpose() * resid))
        .ok_or_else(|| Error::SingularSystem("null-space solve failed".into()))?;
    let alpha = &l * &eta;
    Ok(TpsSurrogate {
        kernel,
        dim,
        shift,
        scale,
        knots,
        coef_alpha: alpha.iter().copied().collect(),
        coef_beta: beta.iter().copied().collect(),
        lambda,
        df,
    })
}

impl TpsSurrogate {
    pub fn n_knots(&self) -> usize {
        self.coef_alpha.len()
    }

    fn standardize(&self, x: &[f64], u: &mut [f64; 2]) {
        for j in 0..self.dim {
            u[j] = (x[j] - self.shift[j]) / self.scale[j];
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut u = [0.0; 2];
        self.standardize(x, &mut u);
        let u = &u[..self.dim];
        let mut v = self.coef_beta[0];
        for j in 0..self.dim {
            v += self.coef_beta[j + 1] * u[j];
        }
        for (i, a) in self.coef_alpha.iter().enumerate() {
            v += a * radial(self.kernel, dist2(u, &self.knots[i * self.dim..(i + 1) * self.dim]));
        }
        v
    }

    pub fn predict_gradient(&self, x: &[f64], out: &mut [f64]) {
        let mut u = [0.0; 2];
        self.standardize(x, &mut u);
        let u = &u[..self.dim];
        let mut g = [0.0; 2];
        for j in 0..self.dim {
            g[j] = self.coef_beta[j + 1];
        }
        for (i, a) in self.coef_alpha.iter().enumerate() {
            let k = &self.knots[i * self.dim..(i + 1) * self.dim];
            let f = a * radial_grad_factor(self.kernel, dist2(u, k));
            for j in 0..self.dim {
                g[j] += f * (u[j] - k[j]);
            }
        }
        for j in 0..self.dim {
            out[j] = g[j] / self.scale[j];
        }
    }

    /// `(Σα, max_j |Σα·knot_j|)`; both vanish for a valid expansion.
    pub fn side_conditions(&self) -> (f64, f64) {
        let s0 = self.coef_alpha.iter().sum::<f64>();
        let s1 = (0..self.dim)
            .map(|j| {
                self.coef_alpha
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * self.knots[i * self.dim + j])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max);
        (s0, s1)
    }
}
