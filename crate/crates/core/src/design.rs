//! Per-step training designs: lattices, uniform and Latin-hypercube samples,
//! Sobol sequences, and replicated (batched) designs with pre-averaging.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{substream, Purpose};
use crate::error::{Error, Result};

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidParameters("domain bounds length mismatch".into()));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(Error::DomainDegenerate(i));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn clamp_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn range(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SiteScheme {
    ExplicitLattice(Vec<Vec<f64>>),
    IidUniform,
    LatinHypercube,
    Sobol { scramble: bool },
}

impl SiteScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SiteScheme::ExplicitLattice(_) => "explicit_lattice",
            SiteScheme::IidUniform => "iid_uniform",
            SiteScheme::LatinHypercube => "latin_hypercube",
            SiteScheme::Sobol { .. } => "sobol",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingDesign {
    pub unique_sites: Vec<Vec<f64>>,
    pub n_rep: usize,
    pub scheme: SiteScheme,
    pub domain: Domain,
}

impl TrainingDesign {
    pub fn n_unique(&self) -> usize {
        self.unique_sites.len()
    }

    /// Total simulation budget `N_unique · N_rep`.
    pub fn budget(&self) -> usize {
        self.n_unique() * self.n_rep
    }
}

/// `seq(a, b, length = n)`.
pub fn seq_len(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Concatenation of `seq(a, b, length = n)` segments as 1-D sites.
pub fn lattice_segments(segments: &[(f64, f64, usize)]) -> Vec<Vec<f64>> {
    segments
        .iter()
        .flat_map(|&(a, b, n)| seq_len(a, b, n))
        .map(|v| vec![v])
        .collect()
}

pub fn build_design(
    scheme: &SiteScheme,
    domain: &Domain,
    n_unique: usize,
    n_rep: usize,
    seed: u64,
) -> Result<TrainingDesign> {
    let d = domain.dim();
    Domain::new(domain.lo.clone(), domain.hi.clone())?;
    if n_rep == 0 {
        return Err(Error::InvalidParameters("n_rep must be positive".into()));
    }
    let mut rng = substream(seed, Purpose::Design, 0, 0);
    let unit: Vec<Vec<f64>> = match scheme {
        SiteScheme::ExplicitLattice(sites) => {
            if sites.len() < 2 {
                return Err(Error::TooFewSites { got: sites.len(), need: 2 });
            }
            for s in sites {
                if s.len() != d || !domain.contains(s) {
                    return Err(Error::InvalidParameters(format!("lattice site {s:?} outside domain")));
                }
            }
            let mut sorted = sites.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParameters("lattice sites are not distinct".into()));
            }
            return Ok(TrainingDesign {
                unique_sites: sites.clone(),
                n_rep,
                scheme: scheme.clone(),
                domain: domain.clone(),
            });
        }
        _ if n_unique < 2 => return Err(Error::TooFewSites { got: n_unique, need: 2 }),
        SiteScheme::IidUniform => (0..n_unique)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect(),
        SiteScheme::LatinHypercube => {
            let mut pts = vec![vec![0.0; d]; n_unique];
            for j in 0..d {
                let mut perm: Vec<usize> = (0..n_unique).collect();
                perm.shuffle(&mut rng);
                for (i, p) in perm.into_iter().enumerate() {
                    pts[i][j] = (p as f64 + rng.random::<f64>()) / n_unique as f64;
                }
            }
            pts
        }
        SiteScheme::Sobol { scramble } => {
            let shift: Vec<u32> = if *scramble { (0..d).map(|_| rng.random()).collect() } else { vec![0; d] };
            let seq = Sobol::new(d)?;
            seq.points(n_unique + 1)
                .into_iter()
                .skip(1)
                .map(|p| {
                    p.iter()
                        .zip(&shift)
                        .map(|(&v, &s)| ((v ^ s) as f64 + 0.5) / 4_294_967_296.0)
                        .collect()
                })
                .collect()
        }
    };
    let sites = unit
        .into_iter()
        .map(|u| {
            u.iter()
                .enumerate()
                .map(|(j, v)| domain.lo[j] + v * domain.range(j))
                .collect()
        })
        .collect();
    Ok(TrainingDesign { unique_sites: sites, n_rep, scheme: scheme.clone(), domain: domain.clone() })
}

/// Per-site means and sample variances of a row-major `[N_unique × N_rep]` response array.
pub fn pre_average(responses: &[f64], n_rep: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n_rep >= 1 && responses.len() % n_rep == 0);
    responses
        .chunks(n_rep)
        .map(|row| {
            let mean = row.iter().sum::<f64>() / n_rep as f64;
            let var = if n_rep > 1 {
                row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_rep - 1) as f64
            } else {
                0.0
            };
            (mean, var)
        })
        .unzip()
}

/// Gray-code Sobol generator (Joe–Kuo direction numbers, up to 8 dimensions).
#[derive(Clone, Debug)]
pub struct Sobol {
    directions: Vec<[u32; 32]>,
}

// (s, a, m_1..m_s) for dimensions 2..=8.
const JOE_KUO: [(u32, u32, &[u32]); 7] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

impl Sobol {
    pub const MAX_DIM: usize = 8;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > Self::MAX_DIM {
            return Err(Error::InvalidParameters(format!("Sobol supports 1..={} dimensions", Self::MAX_DIM)));
        }
        let mut directions = Vec::with_capacity(dim);
        let mut first = [0u32; 32];
        for (i, v) in first.iter_mut().enumerate() {
            *v = 1u32 << (31 - i);
        }
        directions.push(first);
        for &(s, a, m) in JOE_KUO.iter().take(dim - 1) {
            let s = s as usize;
            let mut v = [0u32; 32];
            for i in 0..32 {
                if i < s {
                    v[i] = m[i] << (31 - i);
                } else {
                    let mut x = v[i - s] ^ (v[i - s] >> s);
                    for k in 1..s {
                        if (a >> (s - 1 - k)) & 1 == 1 {
                            x ^= v[i - k];
                        }
                    }
                    v[i] = x;
                }
            }
            directions.push(v);
        }
        Ok(Self { directions })
    }

    /// First `n` points as 32-bit integers (point 0 is the origin).
    pub fn points(&self, n: usize) -> Vec<Vec<u32>> {
        let d = self.directions.len();
        let mut cur = vec![0u32; d];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                let c = (i - 1).trailing_ones() as usize;
                for j in 0..d {
                    cur[j] ^= self.directions[j][c];
                }
            }
            out.push(cur.clone());
        }
        out
    }

    pub fn unit_points(&self, n: usize) -> Vec<Vec<f64>> {
        self.points(n)
            .into_iter()
            .map(|p| p.iter().map(|&v| v as f64 / 4_294_967_296.0).collect())
            .collect()
    }
}

/// Optional widening of one coordinate's bounds with elapsed time, for
/// coordinates that diffuse geometrically (e.g. an uncontrolled price).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricGrowth {
    pub coord: usize,
    pub anchor: f64,
    pub vol: f64,
    pub n_sd: f64,
}

/// Time-dependent design region `D̄(t_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSchedule {
    pub base: Domain,
    pub growth: Option<GeometricGrowth>,
}

impl DomainSchedule {
    pub fn fixed(base: Domain) -> Self {
        Self { base, growth: None }
    }

    pub fn at(&self, t: f64) -> Domain {
        let mut d = self.base.clone();
        if let Some(g) = &self.growth {
            let spread = (g.n_sd * g.vol * t.sqrt()).exp();
            d.lo[g.coord] = d.lo[g.coord].min(g.anchor / spread);
            d.hi[g.coord] = d.hi[g.coord].max(g.anchor * spread);
        }
        d
    }
}

/// Full per-step design specification used by the solver.
#[derive(Clone, Debug)]
pub struct DesignSpec {
    pub scheme: SiteScheme,
    pub domain: DomainSchedule,
    pub n_unique: usize,
    pub n_rep: usize,
    /// Place sites uniformly in log-coordinates (positive domains only).
    pub log_scale: bool,
}

impl DesignSpec {
    pub fn design_for_step(&self, k: usize, t: f64, seed: u64) -> Result<TrainingDesign> {
        let domain = self.domain.at(t);
        let step_seed = seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        if !self.log_scale || matches!(self.scheme, SiteScheme::ExplicitLattice(_)) {
            return build_design(&self.scheme, &domain, self.n_unique, self.n_rep, step_seed);
        }
        if domain.lo.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidParameters("log-scale design needs a positive domain".into()));
        }
        let log_domain = Domain::new(
            domain.lo.iter().map(|v| v.ln()).collect(),
            domain.hi.iter().map(|v| v.ln()).collect(),
        )?;
        let mut d = build_design(&self.scheme, &log_domain, self.n_unique, self.n_rep, step_seed)?;
        for s in &mut d.unique_sites {
            for (j, v) in s.iter_mut().enumerate() {
                *v = v.exp().clamp(domain.lo[j], domain.hi[j]);
            }
        }
        d.domain = domain;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize) -> Domain {
        Domain::new(vec![0.0; d], vec![1.0; d]).unwrap()
    }

    #[test]
    fn federico_lattice_budget() {
        let sites = lattice_segments(&[(1.0, 18.0, 350), (18.2, 90.0, 250)]);
        let dom = Domain::new(vec![1.0], vec![90.0]).unwrap();
        let d = build_design(&SiteScheme::ExplicitLattice(sites), &dom, 0, 40, 1).unwrap();
        assert_eq!(d.n_unique(), 600);
        assert_eq!(d.budget(), 24_000);
    }

    #[test]
    fn iid_uniform_inside_and_distinct() {
        for seed in 0..5 {
            let d = build_design(&SiteScheme::IidUniform, &unit(1), 10, 1, seed).unwrap();
            let mut v: Vec<f64> = d.unique_sites.iter().map(|s| s[0]).collect();
            assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn sobol_first_points_match_reference() {
        // Standard unscrambled 2-D Sobol: (0,0), (.5,.5), (.75,.25), (.25,.75), (.375,.375)
        let p = Sobol::new(2).unwrap().unit_points(5);
        let want = [[0.0, 0.0], [0.5, 0.5], [0.75, 0.25], [0.25, 0.75], [0.375, 0.375]];
        for (a, b) in p.iter().zip(want) {
            assert_eq!(a.as_slice(), &b);
        }
        let p3 = Sobol::new(3).unwrap().unit_points(4);
        assert_eq!(p3[1], vec![0.5, 0.5, 0.5]);
        assert_eq!(p3[2], vec![0.75, 0.25, 0.25]);
        assert_eq!(p3[3], vec![0.25, 0.75, 0.75]);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(Domain::new(vec![1.0], vec![1.0]), Err(Error::DomainDegenerate(0))));
        assert!(matches!(
            build_design(&SiteScheme::IidUniform, &unit(1), 1, 1, 0),
            Err(Error::TooFewSites { .. })
        ));
    }

    #[test]
    fn pre_average_examples() {
        let (m, v) = pre_average(&[4.0, 4.0, 4.0], 3);
        assert_eq!((m[0], v[0]), (4.0, 0.0));
        let (m, v) = pre_average(&[1.0, 2.0, 3.0, 0.0, 0.0, 3.0], 3);
        assert_eq!((m[0], v[0]), (2.0, 1.0));
        assert_eq!((m[1], v[1]), (1.0, 3.0));
        let (m, v) = pre_average(&[1.5, -2.0], 1);
        assert_eq!(m, vec![1.5, -2.0]);
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn domain_schedule_widens() {
        let s = DomainSchedule {
            base: Domain::new(vec![1.0, 10.0], vec![2.0, 20.0]).unwrap(),
            growth: Some(GeometricGrowth { coord: 0, anchor: 1.5, vol: 0.1, n_sd: 2.0 }),
        };
        let d0 = s.at(0.0);
        assert_eq!(d0, s.base);
        let d = s.at(25.0);
        assert!((d.hi[0] - 1.5 * 1f64.exp()).abs() < 1e-12);
        assert_eq!(d.lo[1], 10.0);
    }

    #[test]
    fn log_scale_design_stays_in_domain() {
        let spec = DesignSpec {
            scheme: SiteScheme::Sobol { scramble: true },
            domain: DomainSchedule::fixed(Domain::new(vec![1.0, 10.0], vec![9.0, 1000.0]).unwrap()),
            n_unique: 64,
            n_rep: 2,
            log_scale: true,
        };
        let d = spec.design_for_step(3, 1.5, 9).unwrap();
        assert!(d.unique_sites.iter().all(|s| d.domain.contains(s)));
        let below_100 = d.unique_sites.iter().filter(|s| s[1] < 100.0).count();
        assert!(below_100 > 20 && below_100 < 44);
    }
}
