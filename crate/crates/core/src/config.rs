//! Run configuration: a TOML document with `model`, `design`, `surrogate`,
//! `intervention`, `solver`, `forward`, `boundary`, `dp` and `output`
//! sections. Every key is optional; missing keys take the preset's default.
//! Unknown keys and ill-typed values are rejected with the offending key named.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Serialize};
use toml::{Table, Value};

use crate::design::{lattice_segments, DesignSpec, Domain, DomainSchedule, GeometricGrowth, SiteScheme};
use crate::error::{Error, Result};
use crate::intervention::{InterventionConfig, InterventionMode};
use crate::model::{
    faustmann_model, federico_model, guthrie_model, FaustmannParams, FedericoParams, GuthrieParams, ImpulseModel,
};
use crate::oracle::GridSpec;
use crate::policy::BoundaryMode;
use crate::solver::{Lookahead, SolverConfig};
use crate::surrogate::{LambdaMode, SurrogateSpec, TpsKernel};

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Federico(FedericoParams),
    Faustmann(FaustmannParams),
    Guthrie(GuthrieParams),
}

impl ModelParams {
    pub fn preset_name(&self) -> &'static str {
        match self {
            ModelParams::Federico(_) => "federico",
            ModelParams::Faustmann(_) => "faustmann",
            ModelParams::Guthrie(_) => "guthrie",
        }
    }

    pub fn build(&self) -> ImpulseModel {
        match self {
            ModelParams::Federico(p) => federico_model(p),
            ModelParams::Faustmann(p) => faustmann_model(p),
            ModelParams::Guthrie(p) => guthrie_model(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardConfig {
    pub n_paths: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub params: ModelParams,
    pub model: ImpulseModel,
    pub solver: SolverConfig,
    pub forward: ForwardConfig,
    pub boundary: BoundaryMode,
    pub dp: GridSpec,
    pub output_dir: Option<PathBuf>,
}

pub const DEFAULT_FORWARD_PATHS: usize = 10_000;
pub const MIN_FORWARD_PATHS: usize = 100;

impl RunConfig {
    /// Defaults for a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        let params = match name {
            "federico" => ModelParams::Federico(FedericoParams::default()),
            "faustmann" => ModelParams::Faustmann(FaustmannParams::default()),
            "guthrie" => ModelParams::Guthrie(GuthrieParams::default()),
            other => return Err(Error::config("model.preset", format!("unknown preset `{other}` (expected federico, faustmann or guthrie)"))),
        };
        Ok(Self::defaults_for(params))
    }

    fn defaults_for(params: ModelParams) -> Self {
        let model = params.build();
        let (design, surrogate, log_inputs, intervention, boundary, dp) = match &params {
            ModelParams::Federico(_) => (
                DesignSpec {
                    scheme: SiteScheme::ExplicitLattice(lattice_segments(&[(1.0, 18.0, 350), (18.2, 90.0, 250)])),
                    domain: DomainSchedule::fixed(Domain::new(vec![1.0], vec![90.0]).unwrap()),
                    n_unique: 600,
                    n_rep: 40,
                    log_scale: false,
                },
                SurrogateSpec::Tps { lambda_mode: LambdaMode::Gcv, kernel: TpsKernel::ThinPlate, max_knots: 60 },
                false,
                InterventionConfig { mode: InterventionMode::LinearRootSearch, ..Default::default() },
                BoundaryMode::Events,
                GridSpec { lo: 0.5, hi: 400.0, n_states: 400, log_spacing: true },
            ),
            ModelParams::Faustmann(_) => {
                let sites = lattice_segments(&[(-0.25, 2.5, 100)]);
                (
                    DesignSpec {
                        scheme: SiteScheme::ExplicitLattice(sites),
                        domain: DomainSchedule::fixed(Domain::new(vec![-0.25], vec![2.5]).unwrap()),
                        n_unique: 100,
                        n_rep: 100,
                        log_scale: false,
                    },
                    SurrogateSpec::Gp { restarts: 2, replicate_noise: false },
                    false,
                    InterventionConfig { mode: InterventionMode::TargetState, ..Default::default() },
                    BoundaryMode::Scan,
                    GridSpec { lo: -3.0, hi: 6.0, n_states: 400, log_spacing: false },
                )
            }
            ModelParams::Guthrie(p) => (
                DesignSpec {
                    scheme: SiteScheme::Sobol { scramble: true },
                    domain: DomainSchedule {
                        // capacity reaches thousands: the terminal value ignores decay, which
                        // rewards large investments close to maturity
                        base: Domain::new(vec![1.0, 30.0], vec![8.0, 8000.0]).unwrap(),
                        growth: Some(GeometricGrowth { coord: 0, anchor: p.p0, vol: p.sigma, n_sd: 2.5 }),
                    },
                    n_unique: 256,
                    n_rep: 16,
                    log_scale: true,
                },
                SurrogateSpec::Gp { restarts: 1, replicate_noise: true },
                true,
                InterventionConfig { mode: InterventionMode::GridThenPolish, use_zhat: true, ..Default::default() },
                BoundaryMode::Events,
                GridSpec { lo: 1.0, hi: 10.0, n_states: 10, log_spacing: false },
            ),
        };
        let forward = ForwardConfig { n_paths: DEFAULT_FORWARD_PATHS, x0: model.x0.clone(), seed: 1 };
        Self {
            solver: SolverConfig {
                lookahead: Lookahead::ToMaturity,
                mpc_mode: false,
                design,
                surrogate,
                log_inputs,
                intervention,
                seed: 1,
            },
            params,
            model,
            forward,
            boundary,
            dp,
            output_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses configuration text; relative file references resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let doc: Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.to_string().trim()))?;
        let sections = ["model", "design", "surrogate", "intervention", "solver", "forward", "boundary", "dp", "output"];
        for (key, v) in &doc {
            if !sections.contains(&key.as_str()) {
                return Err(Error::config(key, "unknown section"));
            }
            if !v.is_table() {
                return Err(Error::config(key, "expected a section table"));
            }
        }
        let empty = Table::new();
        let section = |name: &str| doc.get(name).and_then(Value::as_table).unwrap_or(&empty);

        let model_sec = Section::new("model", section("model"));
        let preset = model_sec.string("preset")?.unwrap_or_else(|| "federico".to_string());
        let mut cfg = Self::preset(&preset)?;
        cfg.params = parse_params(&cfg.params, model_sec.table)?;
        cfg.model = cfg.params.build();
        cfg.model.validate().map_err(|e| Error::config("model", e.to_string()))?;
        cfg.forward.x0 = cfg.model.x0.clone();
        if let ModelParams::Guthrie(p) = &cfg.params {
            if let Some(g) = cfg.solver.design.domain.growth.as_mut() {
                g.anchor = p.p0;
                g.vol = p.sigma;
            }
        }

        cfg.apply_design(Section::new("design", section("design")), base_dir)?;
        cfg.apply_surrogate(Section::new("surrogate", section("surrogate")))?;
        cfg.apply_intervention(Section::new("intervention", section("intervention")))?;
        cfg.apply_solver(Section::new("solver", section("solver")))?;
        cfg.apply_forward(Section::new("forward", section("forward")))?;
        cfg.apply_boundary(Section::new("boundary", section("boundary")))?;
        cfg.apply_dp(Section::new("dp", section("dp")))?;
        let out = Section::new("output", section("output"));
        out.allow(&["dir"])?;
        if let Some(d) = out.string("dir")? {
            cfg.output_dir = Some(base_dir.join(d));
        }
        Ok(cfg)
    }

    fn apply_design(&mut self, s: Section, base_dir: &Path) -> Result<()> {
        s.allow(&["scheme", "domain", "n_unique", "n_rep", "sites", "sites_file", "lattice", "log_scale", "scramble", "growth"])?;
        let dim = self.model.dim;
        let d = &mut self.solver.design;
        if let Some(dom) = s.get("domain") {
            d.domain.base = parse_domain(dom, dim)?;
        }
        if let Some(n) = s.usize("n_unique")? {
            d.n_unique = n;
        }
        if let Some(n) = s.usize("n_rep")? {
            if n == 0 {
                return Err(Error::config("design.n_rep", "must be at least 1"));
            }
            d.n_rep = n;
        }
        if let Some(b) = s.bool("log_scale")? {
            d.log_scale = b;
        }
        let scramble = s.bool("scramble")?;
        let given = ["lattice", "sites", "sites_file"].into_iter().filter(|k| s.get(k).is_some()).count();
        if given > 1 {
            return Err(Error::config("design.sites", "give only one of `lattice`, `sites` or `sites_file`"));
        }
        let sites = if let Some(v) = s.get("lattice") {
            Some(parse_lattice(v, dim)?)
        } else if let Some(v) = s.get("sites") {
            Some(parse_sites(v, dim)?)
        } else if let Some(f) = s.string("sites_file")? {
            Some(read_sites_csv(&base_dir.join(f), dim)?)
        } else {
            None
        };
        if let Some(name) = s.string("scheme")? {
            d.scheme = match name.as_str() {
                "explicit_lattice" | "lattice" => match (&sites, &d.scheme) {
                    (Some(_), _) => SiteScheme::ExplicitLattice(Vec::new()),
                    (None, SiteScheme::ExplicitLattice(v)) => SiteScheme::ExplicitLattice(v.clone()),
                    (None, _) => return Err(Error::config("design.scheme", "explicit_lattice needs `lattice`, `sites` or `sites_file`")),
                },
                "iid_uniform" | "uniform" => SiteScheme::IidUniform,
                "latin_hypercube" | "lhs" => SiteScheme::LatinHypercube,
                "sobol" => SiteScheme::Sobol { scramble: true },
                other => return Err(Error::config("design.scheme", format!("unknown scheme `{other}`"))),
            };
        } else if sites.is_some() {
            d.scheme = SiteScheme::ExplicitLattice(Vec::new());
        }
        match (&mut d.scheme, sites) {
            (SiteScheme::ExplicitLattice(v), Some(list)) => *v = list,
            (_, Some(_)) => return Err(Error::config("design.lattice", "explicit sites require scheme = \"explicit_lattice\"")),
            _ => {}
        }
        if let (SiteScheme::Sobol { scramble: sc }, Some(b)) = (&mut d.scheme, scramble) {
            *sc = b;
        } else if scramble.is_some() {
            return Err(Error::config("design.scramble", "only meaningful for the sobol scheme"));
        }
        if let SiteScheme::ExplicitLattice(v) = &d.scheme {
            d.n_unique = v.len();
            if let Some(bad) = v.iter().position(|r| !d.domain.base.contains(r)) {
                return Err(Error::config("design.lattice", format!("site {bad} lies outside design.domain")));
            }
        }
        if d.n_unique == 0 {
            return Err(Error::config("design.n_unique", "must be positive"));
        }
        if let Some(g) = s.get("growth") {
            d.domain.growth = match g {
                Value::Boolean(false) => None,
                Value::Table(_) => Some(
                    g.clone()
                        .try_into::<GeometricGrowth>()
                        .map_err(|e| Error::config("design.growth", e.to_string().trim()))?,
                ),
                _ => return Err(Error::config("design.growth", "expected a table {coord, anchor, vol, n_sd} or false")),
            };
            if let Some(gr) = &d.domain.growth {
                if gr.coord >= dim {
                    return Err(Error::config("design.growth", "coordinate out of range"));
                }
            }
        }
        if d.log_scale && d.domain.base.lo.iter().any(|v| *v <= 0.0) {
            return Err(Error::config("design.log_scale", "log-scale designs need a positive domain"));
        }
        Ok(())
    }

    fn apply_surrogate(&mut self, s: Section) -> Result<()> {
        s.allow(&["kind", "kernel", "lambda_mode", "restarts", "max_knots", "replicate_noise", "log_inputs"])?;
        let kind = s.string("kind")?.unwrap_or_else(|| self.solver.surrogate.kind_name().to_string());
        let spec = match kind.as_str() {
            "gp" => {
                let (mut restarts, mut replicate_noise) = match self.solver.surrogate {
                    SurrogateSpec::Gp { restarts, replicate_noise } => (restarts, replicate_noise),
                    _ => (2, false),
                };
                match s.string("kernel")?.as_deref() {
                    None | Some("se") => {}
                    Some(k) => return Err(Error::config("surrogate.kernel", format!("unsupported GP kernel `{k}` (only se)"))),
                }
                for key in ["lambda_mode", "max_knots"] {
                    if s.get(key).is_some() {
                        return Err(Error::config(format!("surrogate.{key}"), "only applies to kind = \"tps\""));
                    }
                }
                if let Some(r) = s.usize("restarts")? {
                    restarts = r.max(1);
                }
                if let Some(b) = s.bool("replicate_noise")? {
                    replicate_noise = b;
                }
                SurrogateSpec::Gp { restarts, replicate_noise }
            }
            "tps" => {
                let (mut lambda_mode, mut kernel, mut max_knots) = match self.solver.surrogate {
                    SurrogateSpec::Tps { lambda_mode, kernel, max_knots } => (lambda_mode, kernel, max_knots),
                    _ => (LambdaMode::Gcv, TpsKernel::ThinPlate, 60),
                };
                for key in ["restarts", "replicate_noise"] {
                    if s.get(key).is_some() {
                        return Err(Error::config(format!("surrogate.{key}"), "only applies to kind = \"gp\""));
                    }
                }
                match s.string("kernel")?.as_deref() {
                    None => {}
                    Some("thin_plate") => kernel = TpsKernel::ThinPlate,
                    Some("cubic") => kernel = TpsKernel::Cubic,
                    Some(k) => return Err(Error::config("surrogate.kernel", format!("unknown spline kernel `{k}` (thin_plate or cubic)"))),
                }
                match s.get("lambda_mode") {
                    None => {}
                    Some(Value::String(m)) if m == "gcv" => lambda_mode = LambdaMode::Gcv,
                    Some(v) => {
                        let l = as_f64(v).filter(|l| *l >= 0.0 && l.is_finite()).ok_or_else(|| {
                            Error::config("surrogate.lambda_mode", "expected \"gcv\" or a nonnegative number")
                        })?;
                        lambda_mode = LambdaMode::Fixed(l);
                    }
                }
                if let Some(n) = s.usize("max_knots")? {
                    if n < 4 {
                        return Err(Error::config("surrogate.max_knots", "must be at least 4"));
                    }
                    max_knots = n;
                }
                SurrogateSpec::Tps { lambda_mode, kernel, max_knots }
            }
            other => return Err(Error::config("surrogate.kind", format!("unknown surrogate `{other}` (gp or tps)"))),
        };
        if matches!(spec, SurrogateSpec::Tps { .. }) && self.model.dim > 2 {
            return Err(Error::config("surrogate.kind", "splines support at most two dimensions"));
        }
        self.solver.surrogate = spec;
        if let Some(b) = s.bool("log_inputs")? {
            self.solver.log_inputs = b;
        }
        Ok(())
    }

    fn apply_intervention(&mut self, s: Section) -> Result<()> {
        s.allow(&["mode", "use_zhat", "grid_points", "polish_iters", "tie_eps"])?;
        let c = &mut self.solver.intervention;
        if let Some(m) = s.string("mode")? {
            c.mode = match m.as_str() {
                "linear_root_search" => InterventionMode::LinearRootSearch,
                "grid_then_polish" => InterventionMode::GridThenPolish,
                "target_state" => InterventionMode::TargetState,
                other => return Err(Error::config("intervention.mode", format!("unknown mode `{other}`"))),
            };
        }
        if c.mode == InterventionMode::TargetState && self.model.impulse_set.fixed_target.is_none() {
            return Err(Error::config("intervention.mode", "target_state needs a model with a fixed post-impulse target"));
        }
        if let Some(b) = s.bool("use_zhat")? {
            c.use_zhat = b;
        }
        if let Some(n) = s.usize("grid_points")? {
            if n < 2 {
                return Err(Error::config("intervention.grid_points", "must be at least 2"));
            }
            c.grid_points = n;
        }
        if let Some(n) = s.usize("polish_iters")? {
            c.polish_iters = n;
        }
        if let Some(t) = s.f64("tie_eps")? {
            if t < 0.0 {
                return Err(Error::config("intervention.tie_eps", "must be nonnegative"));
            }
            c.tie_eps = t;
        }
        Ok(())
    }

    fn apply_solver(&mut self, s: Section) -> Result<()> {
        s.allow(&["lookahead", "window", "mpc_mode", "seed"])?;
        let window = s.usize("window")?;
        let n = self.model.n_steps();
        if let Some(l) = s.string("lookahead")? {
            self.solver.lookahead = match l.as_str() {
                "one_step" => Lookahead::OneStep,
                "to_maturity" => Lookahead::ToMaturity,
                "fixed" => Lookahead::FixedW(window.ok_or_else(|| Error::config("solver.window", "required when lookahead = \"fixed\""))?),
                other => return Err(Error::config("solver.lookahead", format!("unknown lookahead `{other}`"))),
            };
        } else if window.is_some() {
            return Err(Error::config("solver.window", "only used with lookahead = \"fixed\""));
        }
        if let Lookahead::FixedW(w) = self.solver.lookahead {
            if w == 0 || w > n {
                return Err(Error::config("solver.window", format!("must lie in [1, {n}]")));
            }
        }
        if let Some(b) = s.bool("mpc_mode")? {
            self.solver.mpc_mode = b;
        }
        if let Some(seed) = s.u64("seed")? {
            self.solver.seed = seed;
        }
        Ok(())
    }

    fn apply_forward(&mut self, s: Section) -> Result<()> {
        s.allow(&["n_paths", "x0", "seed"])?;
        if let Some(n) = s.usize("n_paths")? {
            if n < MIN_FORWARD_PATHS {
                return Err(Error::config("forward.n_paths", format!("must be at least {MIN_FORWARD_PATHS}")));
            }
            self.forward.n_paths = n;
        }
        if let Some(v) = s.get("x0") {
            let x0 = match v {
                Value::Array(_) => as_f64_vec(v),
                _ => as_f64(v).map(|x| vec![x]),
            }
            .ok_or_else(|| Error::config("forward.x0", "expected a number or an array of numbers"))?;
            if x0.len() != self.model.dim {
                return Err(Error::config("forward.x0", format!("expected {} coordinates", self.model.dim)));
            }
            self.forward.x0 = x0;
        }
        if let Some(seed) = s.u64("seed")? {
            self.forward.seed = seed;
        }
        Ok(())
    }

    fn apply_boundary(&mut self, s: Section) -> Result<()> {
        s.allow(&["mode"])?;
        if let Some(m) = s.string("mode")? {
            self.boundary = match m.as_str() {
                "events" => BoundaryMode::Events,
                "scan" => BoundaryMode::Scan,
                "events_then_scan" => BoundaryMode::EventsThenScan,
                other => return Err(Error::config("boundary.mode", format!("unknown mode `{other}`"))),
            };
        }
        Ok(())
    }

    fn apply_dp(&mut self, s: Section) -> Result<()> {
        s.allow(&["lo", "hi", "n_states", "log_spacing"])?;
        if let Some(v) = s.f64("lo")? {
            self.dp.lo = v;
        }
        if let Some(v) = s.f64("hi")? {
            self.dp.hi = v;
        }
        if let Some(n) = s.usize("n_states")? {
            self.dp.n_states = n;
        }
        if let Some(b) = s.bool("log_spacing")? {
            self.dp.log_spacing = b;
        }
        if self.dp.lo >= self.dp.hi {
            return Err(Error::config("dp.hi", "must exceed dp.lo"));
        }
        if self.dp.log_spacing && self.dp.lo <= 0.0 {
            return Err(Error::config("dp.lo", "log spacing needs a positive lower bound"));
        }
        Ok(())
    }
}

/// Typed, key-naming accessors over one section.
struct Section<'a> {
    name: &'static str,
    table: &'a Table,
}

impl<'a> Section<'a> {
    fn new(name: &'static str, table: &'a Table) -> Self {
        Self { name, table }
    }

    fn key(&self, k: &str) -> String {
        format!("{}.{k}", self.name)
    }

    fn allow(&self, keys: &[&str]) -> Result<()> {
        match self.table.keys().find(|k| !keys.contains(&k.as_str())) {
            Some(k) => Err(Error::config(self.key(k), "unknown key")),
            None => Ok(()),
        }
    }

    fn get(&self, k: &str) -> Option<&'a Value> {
        self.table.get(k)
    }

    fn string(&self, k: &str) -> Result<Option<String>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::config(self.key(k), "expected a string")),
        }
    }

    fn bool(&self, k: &str) -> Result<Option<bool>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(Error::config(self.key(k), "expected true or false")),
        }
    }

    fn f64(&self, k: &str) -> Result<Option<f64>> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => as_f64(v).filter(|x| x.is_finite()).map(Some).ok_or_else(|| Error::config(self.key(k), "expected a finite number")),
        }
    }

    fn u64(&self, k: &str) -> Result<Option<u64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(Error::config(self.key(k), "expected a nonnegative integer")),
        }
    }

    fn usize(&self, k: &str) -> Result<Option<usize>> {
        Ok(self.u64(k)?.map(|v| v as usize))
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_f64_vec(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(as_f64).collect()
}

/// Overlays `[model]` overrides on the preset parameters; only known numeric fields are accepted.
fn parse_params(base: &ModelParams, table: &Table) -> Result<ModelParams> {
    fn overlay<P: Serialize + DeserializeOwned>(base: &P, table: &Table, preset: &str) -> Result<P> {
        let mut merged = Table::try_from(base).map_err(|e| Error::config("model", e.to_string()))?;
        for (k, v) in table {
            if k == "preset" {
                continue;
            }
            let key = format!("model.{k}");
            if !merged.contains_key(k) {
                return Err(Error::config(key, format!("unknown parameter for preset `{preset}`")));
            }
            let x = as_f64(v).filter(|x| x.is_finite()).ok_or_else(|| Error::config(&key, "expected a finite number"))?;
            merged.insert(k.clone(), Value::Float(x));
        }
        Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::config("model", e.to_string().trim()))
    }
    let preset = base.preset_name();
    Ok(match base {
        ModelParams::Federico(p) => ModelParams::Federico(overlay(p, table, preset)?),
        ModelParams::Faustmann(p) => ModelParams::Faustmann(overlay(p, table, preset)?),
        ModelParams::Guthrie(p) => ModelParams::Guthrie(overlay(p, table, preset)?),
    })
}

/// `[[lo, hi], …]` with one pair per coordinate.
fn parse_domain(v: &Value, dim: usize) -> Result<Domain> {
    let bad = || Error::config("design.domain", format!("expected {dim} pairs [lo, hi]"));
    let rows = v.as_array().ok_or_else(bad)?;
    if rows.len() != dim {
        return Err(bad());
    }
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    for r in rows {
        let p = as_f64_vec(r).filter(|p| p.len() == 2).ok_or_else(bad)?;
        lo.push(p[0]);
        hi.push(p[1]);
    }
    Domain::new(lo, hi).map_err(|e| Error::config("design.domain", e.to_string()))
}

/// `[[a, b, n], …]` segments `seq(a, b, length = n)`; 1-D only.
fn parse_lattice(v: &Value, dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim != 1 {
        return Err(Error::config("design.lattice", "segment lattices are 1-D; use sites_file in higher dimensions"));
    }
    let bad = || Error::config("design.lattice", "expected segments [[a, b, n], …] with integer n ≥ 1");
    let mut segs = Vec::new();
    for s in v.as_array().ok_or_else(bad)? {
        let p = s.as_array().filter(|p| p.len() == 3).ok_or_else(bad)?;
        let a = as_f64(&p[0]).ok_or_else(bad)?;
        let b = as_f64(&p[1]).ok_or_else(bad)?;
        let n = p[2].as_integer().filter(|n| *n >= 1).ok_or_else(bad)? as usize;
        segs.push((a, b, n));
    }
    if segs.is_empty() {
        return Err(bad());
    }
    Ok(lattice_segments(&segs))
}

/// `[[x₁, …, x_d], …]` explicit sites.
fn parse_sites(v: &Value, dim: usize) -> Result<Vec<Vec<f64>>> {
    let bad = || Error::config("design.sites", format!("expected a non-empty array of {dim}-coordinate sites"));
    let rows = v.as_array().filter(|r| !r.is_empty()).ok_or_else(bad)?;
    rows.iter().map(|r| as_f64_vec(r).filter(|p| p.len() == dim && p.iter().all(|x| x.is_finite())).ok_or_else(bad)).collect()
}

/// Configuration text with command-line overrides applied and any
/// `design.sites_file` inlined as `design.sites`, so that the result is
/// self-contained. Parses back to the same run configuration.
pub fn resolved_config_text(text: &str, base_dir: &Path, seed: Option<u64>, use_zhat: Option<bool>) -> Result<String> {
    let cfg = RunConfig::from_toml_str(text, base_dir)?;
    let mut doc: Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.to_string().trim()))?;
    fn section<'a>(doc: &'a mut Table, name: &str) -> &'a mut Table {
        doc.entry(name).or_insert_with(|| Value::Table(Table::new())).as_table_mut().expect("sections are tables")
    }
    if let Some(seed) = seed {
        section(&mut doc, "solver").insert("seed".into(), Value::Integer(seed as i64));
    }
    if let Some(b) = use_zhat {
        section(&mut doc, "intervention").insert("use_zhat".into(), Value::Boolean(b));
    }
    let design = section(&mut doc, "design");
    if design.remove("sites_file").is_some() {
        if let SiteScheme::ExplicitLattice(sites) = &cfg.solver.design.scheme {
            let rows = sites.iter().map(|r| Value::Array(r.iter().map(|x| Value::Float(*x)).collect())).collect();
            design.insert("sites".into(), Value::Array(rows));
        }
    }
    let out = toml::to_string(&doc).map_err(|e| Error::config("<document>", e.to_string()))?;
    Ok(out)
}

/// One site per line, comma-separated coordinates; a non-numeric first line is treated as a header.
pub fn read_sites_csv(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let key = "design.sites_file";
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(key, format!("cannot read {}: {e}", path.display())))?;
    let mut sites = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match row {
            Ok(r) if r.len() == dim && r.iter().all(|v| v.is_finite()) => sites.push(r),
            Ok(_) => return Err(Error::config(key, format!("line {}: expected {dim} finite values", i + 1))),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::config(key, format!("line {}: not numeric", i + 1))),
        }
    }
    if sites.is_empty() {
        return Err(Error::config(key, "no sites"));
    }
    Ok(sites)
}
