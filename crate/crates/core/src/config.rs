//! Scenario configuration: a TOML file with one table per stage.
//!
//! ```toml
//! [scenario]
//! name = "sphere-affine"
//! seed = 7
//! tol = 1e-10
//! stages = ["reduce", "orbits", "trap"]
//!
//! [surface]
//! kind = "sphere"          # sphere | oblate | revolution | torus
//! radius = 1.0
//!
//! [field]
//! family = "affine-height" # constant | affine-height | radial-cos | torus-trig | resonant | expr
//! c0 = 2.0
//! c1 = 1.0
//! ```
//!
//! Stage tables carry the parameters of their stage; see the README for the
//! full key list. [`validate_config`] reports every violation it can find.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{FieldKind, FieldSpec, Profile, Revolution, Surface, Torus};
use crate::special::build_resonant_field;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Simulate,
    Reduce,
    Poincare,
    Orbits,
    Trap,
    Saddle,
    Symmetric,
    ActionCheck,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Reduce => "reduce",
            Stage::Poincare => "poincare",
            Stage::Orbits => "orbits",
            Stage::Trap => "trap",
            Stage::Saddle => "saddle",
            Stage::Symmetric => "symmetric",
            Stage::ActionCheck => "action-check",
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCfg {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub stages: Vec<Stage>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceCfg {
    pub kind: String,
    pub radius: Option<f64>,
    /// Oblateness of `sin r (1 + eps sin^2 r)`.
    pub eps: Option<f64>,
    /// Profile `a(r)` for `kind = "revolution"`.
    pub profile: Option<String>,
    pub length: Option<f64>,
    pub lx: Option<f64>,
    pub ly: Option<f64>,
    /// Conformal factor of a torus metric.
    pub lambda: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldCfg {
    pub family: String,
    pub value: Option<f64>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub expr: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateCfg {
    pub s: f64,
    pub start: [f64; 2],
    #[serde(default)]
    pub angle: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub every: usize,
    pub tol: Option<f64>,
}

fn d_grid() -> usize {
    20
}
fn d_budget() -> usize {
    64
}
fn d_res_tol() -> f64 {
    1e-6
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceCfg {
    /// Seed point of the guiding circle.
    pub seed_point: [f64; 2],
    /// Level of the guiding circle; defaults to `H(seed_point)`.
    pub level: Option<f64>,
    #[serde(default = "d_grid")]
    pub grid: usize,
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default = "d_res_tol")]
    pub resonance_tol: f64,
    /// `field` or `curvature`.
    pub mode: Option<String>,
    /// Analytic `K` for curvature mode on conformal tori.
    pub curvature: Option<String>,
    #[serde(default = "yes")]
    pub dichotomy: bool,
}

fn d_iterates() -> usize {
    2000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareCfg {
    pub s: f64,
    /// Band of the first coordinate; omitted means the whole torus.
    pub region: Option<[f64; 2]>,
    pub start: [f64; 2],
    #[serde(default = "d_iterates")]
    pub iterates: usize,
    #[serde(default)]
    pub angle: f64,
    pub tol: Option<f64>,
    /// Random section points for the weighted-determinant check.
    #[serde(default)]
    pub symplectic_points: usize,
}

fn d_count() -> usize {
    5
}
fn d_max_q() -> u64 {
    100_000
}
fn d_starts() -> usize {
    32
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitsCfg {
    pub s: f64,
    pub region: Option<[f64; 2]>,
    pub annulus: [f64; 2],
    /// Explicit `[p, q]` pairs; omitted means the smallest denominators inside the boundary interval.
    pub targets: Option<Vec<[i64; 2]>>,
    #[serde(default = "d_count")]
    pub count: usize,
    #[serde(default = "d_max_q")]
    pub max_q: u64,
    #[serde(default = "d_starts")]
    pub starts: usize,
    pub tol: Option<f64>,
}

fn d_height() -> String {
    "height".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapCfg {
    pub s: f64,
    /// `height`, `q1` or `q2`.
    #[serde(default = "d_height")]
    pub coord: String,
    pub inner: [f64; 2],
    pub outer: [f64; 2],
    /// A point of the guiding circle `L`.
    pub level_point: [f64; 2],
    pub horizon: usize,
    pub samples: usize,
    pub tol: Option<f64>,
    #[serde(default = "d_res_tol")]
    pub resonance_tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleCfg {
    pub s: f64,
    pub at: [f64; 2],
    pub delta: f64,
    pub eps: f64,
    pub delta_start: f64,
    pub horizon: usize,
    pub samples: usize,
    pub tol: Option<f64>,
}

fn d_rat_q() -> u64 {
    100
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalCfg {
    pub s_max: f64,
    pub count: usize,
    #[serde(default = "d_rat_q")]
    pub max_q: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetricCfg {
    pub r: f64,
    pub speeds: Vec<f64>,
    #[serde(default = "d_iterates")]
    pub iterates: usize,
    pub tol: Option<f64>,
    pub rational: Option<RationalCfg>,
}

fn d_action_tol() -> f64 {
    1e-13
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionCfg {
    pub c1: Vec<f64>,
    /// Profile length after normalization; defaults to the configured surface's.
    pub length: Option<f64>,
    #[serde(default = "d_action_tol")]
    pub tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Config {
    pub scenario: ScenarioCfg,
    pub surface: SurfaceCfg,
    pub field: FieldCfg,
    pub simulate: Option<SimulateCfg>,
    pub reduce: Option<ReduceCfg>,
    pub poincare: Option<PoincareCfg>,
    pub orbits: Option<OrbitsCfg>,
    pub trap: Option<TrapCfg>,
    pub saddle: Option<SaddleCfg>,
    pub symmetric: Option<SymmetricCfg>,
    pub action_check: Option<ActionCfg>,
}

/// One schema or consistency violation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    /// Dotted key path, e.g. `saddle.eps`.
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn diag(path: &str, message: impl Into<String>) -> Diagnostic {
    Diagnostic { path: path.to_string(), message: message.into() }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

/// Parse TOML text into a table, mapping syntax errors to [`Error::Parse`].
pub fn parse_table(src: &str) -> Result<toml::Table> {
    src.parse::<toml::Table>().map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(src, s.start));
        Error::Parse { line, column, msg: e.message().to_string() }
    })
}

const SECTIONS: [&str; 11] =
    ["scenario", "surface", "field", "simulate", "reduce", "poincare", "orbits", "trap", "saddle", "symmetric", "action-check"];

fn section<T: DeserializeOwned>(table: &toml::Table, key: &str, out: &mut Vec<Diagnostic>) -> Option<T> {
    let v = table.get(key)?;
    match T::deserialize(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            out.push(diag(key, e.message().trim().to_string()));
            None
        }
    }
}

/// Check a parsed table; returns the typed config when no diagnostic was raised.
pub fn check_table(table: &toml::Table) -> (Option<Config>, Vec<Diagnostic>) {
    let mut d = Vec::new();
    for k in table.keys() {
        if !SECTIONS.contains(&k.as_str()) {
            d.push(diag(k, "unknown section"));
        }
    }
    for k in ["scenario", "surface", "field"] {
        if !table.contains_key(k) {
            d.push(diag(k, "missing section"));
        }
    }
    let scenario: Option<ScenarioCfg> = section(table, "scenario", &mut d);
    let surface: Option<SurfaceCfg> = section(table, "surface", &mut d);
    let field: Option<FieldCfg> = section(table, "field", &mut d);
    let simulate = section(table, "simulate", &mut d);
    let reduce = section(table, "reduce", &mut d);
    let poincare = section(table, "poincare", &mut d);
    let orbits = section(table, "orbits", &mut d);
    let trap = section(table, "trap", &mut d);
    let saddle = section(table, "saddle", &mut d);
    let symmetric = section(table, "symmetric", &mut d);
    let action_check = section(table, "action-check", &mut d);
    let (Some(scenario), Some(surface), Some(field)) = (scenario, surface, field) else {
        return (None, d);
    };
    let cfg = Config { scenario, surface, field, simulate, reduce, poincare, orbits, trap, saddle, symmetric, action_check };
    cfg.semantic(&mut d, table);
    if d.is_empty() {
        (Some(cfg), d)
    } else {
        (None, d)
    }
}

/// All diagnostics of a config file; empty on valid input.
pub fn validate_config(path: &Path) -> Result<Vec<Diagnostic>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    validate_str(&src)
}

pub fn validate_str(src: &str) -> Result<Vec<Diagnostic>> {
    let table = parse_table(src)?;
    Ok(check_table(&table).1)
}

/// Parse and validate; any diagnostic becomes a config error.
pub fn load_str(src: &str) -> Result<Config> {
    let table = parse_table(src)?;
    match check_table(&table) {
        (Some(c), _) => Ok(c),
        (None, d) => Err(Error::Config(d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))),
    }
}

pub fn load(path: &Path) -> Result<Config> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    load_str(&src)
}

/// Surface and field from the `[surface]` and `[field]` tables of `src`; other tables are ignored.
pub fn system_from_str(src: &str) -> Result<(Surface, FieldSpec)> {
    let table = parse_table(src)?;
    let mut d = Vec::new();
    for k in ["surface", "field"] {
        if !table.contains_key(k) {
            d.push(diag(k, "missing section"));
        }
    }
    let sc: Option<SurfaceCfg> = section(&table, "surface", &mut d);
    let fc: Option<FieldCfg> = section(&table, "field", &mut d);
    let surface = sc.and_then(|c| c.build_inner(&mut d));
    let field = match (&surface, fc) {
        (Some(s), Some(f)) => f.build_inner(s, &mut d),
        _ => None,
    };
    match (surface, field) {
        (Some(s), Some(f)) if d.is_empty() => Ok((s, f)),
        _ => Err(Error::Config(d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))),
    }
}

fn need(v: Option<f64>, path: &str, d: &mut Vec<Diagnostic>) -> f64 {
    match v {
        Some(x) if x.is_finite() => x,
        Some(x) => {
            d.push(diag(path, format!("must be finite, got {x}")));
            f64::NAN
        }
        None => {
            d.push(diag(path, "missing"));
            f64::NAN
        }
    }
}

impl SurfaceCfg {
    fn build_inner(&self, d: &mut Vec<Diagnostic>) -> Option<Surface> {
        let before = d.len();
        let unused = |d: &mut Vec<Diagnostic>, keys: &[(&str, bool)]| {
            for (k, set) in keys {
                if *set {
                    d.push(diag(&format!("surface.{k}"), format!("not used by kind = \"{}\"", self.kind)));
                }
            }
        };
        let built = match self.kind.as_str() {
            "sphere" => {
                unused(d, &[("eps", self.eps.is_some()), ("profile", self.profile.is_some()), ("lx", self.lx.is_some()), ("lambda", self.lambda.is_some())]);
                let r = self.radius.unwrap_or(1.0);
                if !(r > 0.0) {
                    d.push(diag("surface.radius", "must be positive"));
                    return None;
                }
                Revolution::new(Profile::Round { radius: r }).map(Surface::Revolution)
            }
            "oblate" => {
                let eps = need(self.eps, "surface.eps", d);
                if d.len() > before {
                    return None;
                }
                Revolution::new(Profile::Bumpy { eps }).map(Surface::Revolution)
            }
            "revolution" => {
                let len = need(self.length, "surface.length", d);
                let Some(src) = &self.profile else {
                    d.push(diag("surface.profile", "missing"));
                    return None;
                };
                if d.len() > before {
                    return None;
                }
                Expr::parse(src).and_then(|expr| Revolution::new(Profile::Expr { expr, length: len })).map(Surface::Revolution)
            }
            "torus" => {
                unused(d, &[("radius", self.radius.is_some()), ("eps", self.eps.is_some()), ("profile", self.profile.is_some())]);
                let lx = self.lx.unwrap_or(2.0 * PI);
                let ly = self.ly.unwrap_or(2.0 * PI);
                let lam = match &self.lambda {
                    Some(s) => match Expr::parse(s) {
                        Ok(e) => Some(e),
                        Err(e) => {
                            d.push(diag("surface.lambda", e.to_string()));
                            return None;
                        }
                    },
                    None => None,
                };
                Torus::new(lx, ly, lam).map(Surface::Torus)
            }
            other => {
                d.push(diag("surface.kind", format!("unknown surface kind \"{other}\"")));
                return None;
            }
        };
        match built {
            Ok(s) => Some(s),
            Err(e) => {
                d.push(diag("surface", e.to_string()));
                None
            }
        }
    }

    pub fn build(&self) -> Result<Surface> {
        let mut d = Vec::new();
        let s = self.build_inner(&mut d);
        match s {
            Some(s) if d.is_empty() => Ok(s),
            _ => Err(Error::Config(d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))),
        }
    }
}

impl FieldCfg {
    fn build_inner(&self, surface: &Surface, d: &mut Vec<Diagnostic>) -> Option<FieldSpec> {
        let before = d.len();
        let kind = match self.family.as_str() {
            "constant" => FieldKind::Constant(need(self.value, "field.value", d)),
            "affine-height" => FieldKind::AffineHeight { c0: need(self.c0, "field.c0", d), c1: need(self.c1, "field.c1", d) },
            "radial-cos" => FieldKind::RadialCos { c0: need(self.c0, "field.c0", d), c1: need(self.c1, "field.c1", d) },
            "torus-trig" => FieldKind::TorusTrig { c0: need(self.c0, "field.c0", d), cx: need(self.cx, "field.cx", d), cy: need(self.cy, "field.cy", d) },
            "resonant" => {
                let (a, b) = (need(self.alpha, "field.alpha", d), need(self.beta, "field.beta", d));
                if d.len() > before {
                    return None;
                }
                return match build_resonant_field(surface, a, b) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        d.push(diag("field", e.to_string()));
                        None
                    }
                };
            }
            "expr" => match &self.expr {
                Some(s) => match Expr::parse(s) {
                    Ok(e) => FieldKind::Expr(e),
                    Err(e) => {
                        d.push(diag("field.expr", e.to_string()));
                        return None;
                    }
                },
                None => {
                    d.push(diag("field.expr", "missing"));
                    return None;
                }
            },
            other => {
                d.push(diag("field.family", format!("unknown field family \"{other}\"")));
                return None;
            }
        };
        if d.len() > before {
            return None;
        }
        if matches!(kind, FieldKind::Constant(c) if c == 0.0) {
            d.push(diag("field.value", "b = 0 identically"));
            return None;
        }
        match FieldSpec::new(kind, surface) {
            Ok(f) => Some(f),
            Err(e) => {
                d.push(diag("field", e.to_string()));
                None
            }
        }
    }

    pub fn build(&self, surface: &Surface) -> Result<FieldSpec> {
        let mut d = Vec::new();
        match self.build_inner(surface, &mut d) {
            Some(f) if d.is_empty() => Ok(f),
            _ => Err(Error::Config(d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))),
        }
    }
}

fn positive(v: f64, path: &str, d: &mut Vec<Diagnostic>) {
    if !(v > 0.0 && v.is_finite()) {
        d.push(diag(path, format!("must be positive, got {v}")));
    }
}

fn interval(v: [f64; 2], path: &str, d: &mut Vec<Diagnostic>) {
    if !(v[0] < v[1]) {
        d.push(diag(path, format!("needs lo < hi, got [{}, {}]", v[0], v[1])));
    }
}

impl Config {
    fn semantic(&self, d: &mut Vec<Diagnostic>, table: &toml::Table) {
        if self.scenario.name.is_empty() || self.scenario.name.contains(['/', '\\']) || self.scenario.name.starts_with('.') {
            d.push(diag("scenario.name", "must be a plain non-empty directory name"));
        }
        positive(self.scenario.tol, "scenario.tol", d);
        let mut seen = BTreeSet::new();
        for st in &self.scenario.stages {
            if !seen.insert(*st) {
                d.push(diag("scenario.stages", format!("stage {} listed twice", st.name())));
            }
            let key = st.name();
            if !table.contains_key(key) {
                d.push(diag(key, format!("stage {key} is listed but has no [{key}] table")));
            }
        }
        let surface = self.surface.build_inner(d);
        let field = surface.as_ref().and_then(|s| self.field.build_inner(s, d));
        let rev = surface.as_ref().and_then(|s| s.revolution());
        if let Some(c) = &self.simulate {
            positive(c.s, "simulate.s", d);
            if !(c.t_end.is_finite() && c.t_end != 0.0) {
                d.push(diag("simulate.t_end", "must be finite and nonzero"));
            }
        }
        if let Some(c) = &self.reduce {
            positive(c.resonance_tol, "reduce.resonance_tol", d);
            if let Some(m) = &c.mode {
                if m != "field" && m != "curvature" {
                    d.push(diag("reduce.mode", format!("unknown mode \"{m}\" (field or curvature)")));
                }
            }
            if let Some(k) = &c.curvature {
                if let Err(e) = Expr::parse(k) {
                    d.push(diag("reduce.curvature", e.to_string()));
                }
            }
        }
        if let Some(c) = &self.poincare {
            positive(c.s, "poincare.s", d);
            if let Some(r) = c.region {
                interval(r, "poincare.region", d);
            } else if rev.is_some() {
                d.push(diag("poincare.region", "required on surfaces of revolution"));
            }
            if c.iterates < crate::section::MIN_ROTATION_ITERATES {
                d.push(diag("poincare.iterates", format!("needs at least {}", crate::section::MIN_ROTATION_ITERATES)));
            }
        }
        if let Some(c) = &self.orbits {
            positive(c.s, "orbits.s", d);
            interval(c.annulus, "orbits.annulus", d);
            if let Some(r) = c.region {
                interval(r, "orbits.region", d);
                if !(c.annulus[0] > r[0] && c.annulus[1] < r[1]) {
                    d.push(diag("orbits.annulus", "must lie strictly inside orbits.region"));
                }
            }
            if c.starts == 0 {
                d.push(diag("orbits.starts", "must be at least 1"));
            }
            if let Some(t) = &c.targets {
                for (i, pq) in t.iter().enumerate() {
                    if pq[1] <= 0 {
                        d.push(diag(&format!("orbits.targets[{i}]"), "q must be positive"));
                    }
                }
            }
        }
        if let Some(c) = &self.trap {
            positive(c.s, "trap.s", d);
            interval(c.inner, "trap.inner", d);
            interval(c.outer, "trap.outer", d);
            if !(c.inner[0] >= c.outer[0] && c.inner[1] <= c.outer[1]) {
                d.push(diag("trap.inner", "U' must lie inside U (inner within outer)"));
            }
            match c.coord.as_str() {
                "height" if rev.is_none() => d.push(diag("trap.coord", "height bands need a surface of revolution")),
                "height" | "q1" | "q2" => {}
                o => d.push(diag("trap.coord", format!("unknown coordinate \"{o}\""))),
            }
        }
        if let Some(c) = &self.saddle {
            positive(c.s, "saddle.s", d);
            positive(c.delta, "saddle.delta", d);
            positive(c.eps, "saddle.eps", d);
            if !(c.eps < c.delta) {
                d.push(diag("saddle.eps", format!("needs eps < delta, got eps = {} and delta = {}", c.eps, c.delta)));
            }
            if !(c.delta_start > 0.0 && c.delta_start < c.delta) {
                d.push(diag("saddle.delta_start", "needs 0 < delta_start < delta"));
            }
        }
        if let Some(c) = &self.symmetric {
            if surface.is_some() && rev.is_none() {
                d.push(diag("symmetric", "needs a surface of revolution"));
            }
            if let Some(f) = &field {
                if !f.axisymmetric() {
                    d.push(diag("symmetric", "needs an axisymmetric field"));
                }
            }
            for (i, s) in c.speeds.iter().enumerate() {
                positive(*s, &format!("symmetric.speeds[{i}]"), d);
            }
            if let Some(r) = &c.rational {
                positive(r.s_max, "symmetric.rational.s_max", d);
            }
        }
        if let Some(c) = &self.action_check {
            if let Some(l) = c.length {
                positive(l, "action-check.length", d);
            }
            positive(c.tol, "action-check.tol", d);
            if c.c1.iter().any(|x| !x.is_finite()) {
                d.push(diag("action-check.c1", "values must be finite"));
            }
        }
    }

    pub fn surface(&self) -> Result<Surface> {
        self.surface.build()
    }

    pub fn field(&self, surface: &Surface) -> Result<FieldSpec> {
        self.field.build(surface)
    }
}
