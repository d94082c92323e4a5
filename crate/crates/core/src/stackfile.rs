//! Versioned binary persistence for a fitted [`PolicyStack`].
//!
//! Layout (all integers and floats little-endian):
//! magic `IRMC`, `u32` format version, `u32` step count, `u32` dimension,
//! `u64`-prefixed UTF-8 run configuration, then one record per step:
//! domain bounds, the continuation surrogate and an optional impulse surrogate.
//! GP records store training data and hyperparameters; the posterior is
//! refactored on load, which reproduces predictions bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::design::Domain;
use crate::error::{Error, Result};
use crate::surrogate::{GpHyper, GpSurrogate, PolicyStack, Regressor, StepFit, Surrogate, TpsKernel, TpsSurrogate};

pub const MAGIC: &[u8; 4] = b"IRMC";
pub const FORMAT_VERSION: u32 = 1;

const KIND_GP: u8 = 0;
const KIND_TPS: u8 = 1;

struct Sink(Vec<u8>);

impl Sink {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
}

struct Source<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Source<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::BadFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        // each element needs at least one byte; rejects absurd lengths before allocating
        if n > self.buf.len() - self.pos {
            return Err(Error::BadFormat(format!("length {n} exceeds file size")));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::BadFormat(format!("invalid flag byte {b}"))),
        }
    }
}

fn put_surrogate(out: &mut Sink, s: &Surrogate) {
    match &s.regressor {
        Regressor::Gp(g) => {
            out.u8(KIND_GP);
            out.u8(s.log_inputs as u8);
            out.u32(g.dim() as u32);
            out.f64s(g.train_x());
            out.f64s(g.train_y());
            match g.site_noise() {
                Some(v) => {
                    out.u8(1);
                    out.f64s(v);
                }
                None => out.u8(0),
            }
            out.f64s(&g.hyper.lengthscales);
            out.f64(g.hyper.process_var);
            out.f64(g.hyper.noise_var);
        }
        Regressor::Tps(t) => {
            out.u8(KIND_TPS);
            out.u8(s.log_inputs as u8);
            out.u32(t.dim as u32);
            out.u8(match t.kernel {
                TpsKernel::ThinPlate => 0,
                TpsKernel::Cubic => 1,
            });
            out.f64s(&t.shift);
            out.f64s(&t.scale);
            out.f64s(&t.knots);
            out.f64s(&t.coef_alpha);
            out.f64s(&t.coef_beta);
            out.f64(t.lambda);
            out.f64(t.df);
        }
    }
}

fn get_surrogate(src: &mut Source, dim: usize) -> Result<Surrogate> {
    let kind = src.u8()?;
    let log_inputs = src.flag()?;
    let d = src.u32()? as usize;
    if d != dim {
        return Err(Error::BadFormat(format!("surrogate dimension {d} differs from stack dimension {dim}")));
    }
    let regressor = match kind {
        KIND_GP => {
            let train_x = src.f64s()?;
            let train_y = src.f64s()?;
            let site_noise = if src.flag()? { Some(src.f64s()?) } else { None };
            let lengthscales = src.f64s()?;
            let process_var = src.f64()?;
            let noise_var = src.f64()?;
            let hyper = GpHyper { lengthscales, process_var, noise_var };
            Regressor::Gp(GpSurrogate::from_parts(dim, train_x, train_y, site_noise, hyper)?)
        }
        KIND_TPS => {
            let kernel = match src.u8()? {
                0 => TpsKernel::ThinPlate,
                1 => TpsKernel::Cubic,
                b => return Err(Error::BadFormat(format!("unknown spline kernel {b}"))),
            };
            let t = TpsSurrogate {
                kernel,
                dim,
                shift: src.f64s()?,
                scale: src.f64s()?,
                knots: src.f64s()?,
                coef_alpha: src.f64s()?,
                coef_beta: src.f64s()?,
                lambda: src.f64()?,
                df: src.f64()?,
            };
            let n = t.coef_alpha.len();
            if t.shift.len() != dim || t.scale.len() != dim || t.knots.len() != n * dim || t.coef_beta.len() != dim + 1 {
                return Err(Error::BadFormat("inconsistent spline record".into()));
            }
            Regressor::Tps(t)
        }
        k => return Err(Error::BadFormat(format!("unknown surrogate kind {k}"))),
    };
    Ok(Surrogate { regressor, log_inputs })
}

/// Serializes a stack together with the run configuration text that produced it.
pub fn encode_stack(stack: &PolicyStack, config_text: &str) -> Vec<u8> {
    let mut out = Sink(Vec::new());
    out.0.extend_from_slice(MAGIC);
    out.u32(FORMAT_VERSION);
    out.u32(stack.n_steps() as u32);
    out.u32(stack.dim as u32);
    out.u64(config_text.len() as u64);
    out.0.extend_from_slice(config_text.as_bytes());
    for step in &stack.steps {
        for (lo, hi) in step.domain.lo.iter().zip(&step.domain.hi) {
            out.f64(*lo);
            out.f64(*hi);
        }
        put_surrogate(&mut out, &step.q);
        match &step.zhat {
            Some(z) => {
                out.u8(1);
                put_surrogate(&mut out, z);
            }
            None => out.u8(0),
        }
    }
    out.0
}

/// Inverse of [`encode_stack`]; returns the stack and the embedded configuration text.
pub fn decode_stack(bytes: &[u8]) -> Result<(PolicyStack, String)> {
    let mut src = Source { buf: bytes, pos: 0 };
    if src.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::BadFormat("missing IRMC header".into()));
    }
    let version = src.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let n_steps = src.u32()? as usize;
    let dim = src.u32()? as usize;
    if dim == 0 {
        return Err(Error::BadFormat("zero dimension".into()));
    }
    let n_text = src.len()?;
    let config_text = String::from_utf8(src.take(n_text)?.to_vec())
        .map_err(|_| Error::BadFormat("configuration text is not UTF-8".into()))?;
    let mut steps = Vec::with_capacity(n_steps.min(1 << 16));
    for _ in 0..n_steps {
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        for _ in 0..dim {
            lo.push(src.f64()?);
            hi.push(src.f64()?);
        }
        let domain = Domain::new(lo, hi)?;
        let q = get_surrogate(&mut src, dim)?;
        let zhat = if src.flag()? { Some(get_surrogate(&mut src, dim)?) } else { None };
        steps.push(StepFit { q, domain, zhat });
    }
    if src.pos != bytes.len() {
        return Err(Error::BadFormat(format!("{} trailing bytes", bytes.len() - src.pos)));
    }
    Ok((PolicyStack { dim, steps }, config_text))
}

pub fn save_stack(path: &Path, stack: &PolicyStack, config_text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_stack(stack, config_text))?;
    Ok(())
}

pub fn load_stack(path: &Path) -> Result<(PolicyStack, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_stack(&bytes)
}
