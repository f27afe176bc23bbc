//! Scenario runner: executes the stages of a [`Config`] and writes
//! `out/<scenario>/<stage>/*` plus `manifest.json`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Config, Stage};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{self, ChartPoint, FieldSpec, QuadratureOpts, Surface};
use crate::magflow::{curvature_residual, integrate, write_trajectory_csv, Flow};
use crate::reduced::critical::critical_points;
use crate::reduced::cylinder::{classify_resonance, maximal_cylinder, period_area_profile, write_cylinder_csv};
use crate::reduced::{dichotomy_report, make_reduced, trace_level_circle, Mode, ReducedSystem};
use crate::section::{
    find_periodic_orbits, rotation_number, saddle_escape_experiment, trapping_experiment, write_iterates_csv, Band, BandCoord,
    PeriodicTargets, Region, SaddleSpec, SectionMap, SectionOpts, ShootingOpts, TrapSpec,
};
use crate::special::{
    calibrate_rotation_sign, circle_action_conditions, measured_rotation, normalized_length, rational_speed_search,
    revolution_action_ode_test, symmetric_rotation_number, write_action_csv, RationalOpts, SymmetricSystem, ROTATION_SIGN,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileEntry {
    /// Path relative to the scenario directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub tolerances: BTreeMap<String, f64>,
    /// Orientation convention of the symmetric rotation-number formula.
    pub rotation_sign: f64,
    /// Sign measured against the full flow, when the symmetric stage ran.
    pub rotation_sign_measured: Option<f64>,
    pub files: Vec<FileEntry>,
    pub wall_clock: Vec<StageTiming>,
}

/// Command-line overrides applied on top of a config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub s: Option<f64>,
    pub horizon: Option<usize>,
    pub samples: Option<usize>,
    pub annulus: Option<[f64; 2]>,
}

fn hex_sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Single owner of every file written by a run.
struct Sink {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Sink {
    fn put(&mut self, stage: Stage, name: &str, bytes: &[u8]) -> Result<()> {
        let rel = format!("{}/{name}", stage.name());
        let path = self.root.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.push(FileEntry { path: rel, sha256: hex_sha(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, stage: Stage, name: &str, v: &T) -> Result<()> {
        let mut b = serde_json::to_vec_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
        b.push(b'\n');
        self.put(stage, name, &b)
    }
}

/// Load a config file and run it into `out_dir`.
pub fn run_scenario(config: &Path, out_dir: &Path) -> Result<RunManifest> {
    run_scenario_with(config, out_dir, &Overrides::default())
}

pub fn run_scenario_with(config: &Path, out_dir: &Path, ov: &Overrides) -> Result<RunManifest> {
    let src = std::fs::read_to_string(config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
    run_source(&src, out_dir, ov)
}

/// Run config text; overrides are applied before validation.
pub fn run_source(src: &str, out_dir: &Path, ov: &Overrides) -> Result<RunManifest> {
    let mut table = crate::config::parse_table(src)?;
    // Validate the overridden config, not the file as written.
    apply_to_table(&mut table, ov);
    let (cfg, diags) = crate::config::check_table(&table);
    let Some(cfg) = cfg else {
        return Err(Error::Config(diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")));
    };
    run_config(&cfg, src.as_bytes(), out_dir)
}

fn apply_to_table(table: &mut toml::Table, ov: &Overrides) {
    // Round-trip through the typed config would drop unknown keys before they are diagnosed,
    // so overrides edit the raw table.
    let set = |t: &mut toml::Table, sec: &str, key: &str, v: toml::Value| {
        if let Some(toml::Value::Table(s)) = t.get_mut(sec) {
            s.insert(key.to_string(), v);
        }
    };
    if let Some(x) = ov.seed {
        set(table, "scenario", "seed", toml::Value::Integer(x as i64));
    }
    if let Some(x) = ov.tol {
        set(table, "scenario", "tol", toml::Value::Float(x));
    }
    if let Some(s) = ov.s {
        for sec in ["simulate", "poincare", "orbits", "trap", "saddle"] {
            set(table, sec, "s", toml::Value::Float(s));
        }
        set(table, "symmetric", "speeds", toml::Value::Array(vec![toml::Value::Float(s)]));
    }
    for (val, key) in [(ov.horizon, "horizon"), (ov.samples, "samples")] {
        if let Some(n) = val {
            for sec in ["trap", "saddle"] {
                set(table, sec, key, toml::Value::Integer(n as i64));
            }
        }
    }
    if let Some(a) = ov.annulus {
        set(table, "orbits", "annulus", toml::Value::Array(vec![toml::Value::Float(a[0]), toml::Value::Float(a[1])]));
    }
}

fn in_stage(stage: Stage) -> impl Fn(Error) -> Error {
    move |e| Error::Stage { stage: stage.name().to_string(), inner: Box::new(e) }
}

/// Execute every declared stage in order.
pub fn run_config(cfg: &Config, source: &[u8], out_dir: &Path) -> Result<RunManifest> {
    let surface = cfg.surface()?;
    let field = cfg.field(&surface)?;
    let root = out_dir.join(&cfg.scenario.name);
    std::fs::create_dir_all(&root)?;
    let mut sink = Sink { root: root.clone(), files: Vec::new() };
    let mut tolerances = BTreeMap::new();
    tolerances.insert("scenario".to_string(), cfg.scenario.tol);
    let mut wall_clock = Vec::new();
    let mut measured_sign = None;
    let ctx = Ctx { cfg, surface: &surface, field: &field };
    for &stage in &cfg.scenario.stages {
        let t0 = Instant::now();
        let tol = ctx
            .run_stage(stage, &mut sink, &mut measured_sign)
            .map_err(in_stage(stage))?;
        if let Some(t) = tol {
            tolerances.insert(stage.name().to_string(), t);
        }
        wall_clock.push(StageTiming { stage: stage.name().to_string(), seconds: t0.elapsed().as_secs_f64() });
    }
    let manifest = RunManifest {
        scenario: cfg.scenario.name.clone(),
        config_sha256: hex_sha(source),
        seed: cfg.scenario.seed,
        version: VERSION.to_string(),
        tolerances,
        rotation_sign: ROTATION_SIGN,
        rotation_sign_measured: measured_sign,
        files: sink.files,
        wall_clock,
    };
    let mut b = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    b.push(b'\n');
    std::fs::write(root.join("manifest.json"), b)?;
    Ok(manifest)
}

struct Ctx<'a> {
    cfg: &'a Config,
    surface: &'a Surface,
    field: &'a FieldSpec,
}

fn missing(stage: Stage) -> Error {
    Error::Config(format!("stage {} has no [{}] table", stage.name(), stage.name()))
}

fn region_of(surface: &Surface, r: Option<[f64; 2]>) -> Result<Region> {
    match (r, surface) {
        (Some([lo, hi]), _) => Ok(Region::band(lo, hi)),
        (None, Surface::Torus(_)) => Ok(Region::whole()),
        (None, Surface::Revolution(_)) => Err(Error::Config("a section region is required on surfaces of revolution".into())),
    }
}

impl Ctx<'_> {
    /// Runs one stage and returns the integration tolerance it used.
    fn run_stage(&self, stage: Stage, sink: &mut Sink, sign: &mut Option<f64>) -> Result<Option<f64>> {
        let c = self.cfg;
        let base = c.scenario.tol;
        match stage {
            Stage::Simulate => {
                let p = c.simulate.as_ref().ok_or_else(|| missing(stage))?;
                let tol = p.tol.unwrap_or(base);
                let flow = Flow::new(self.surface, self.field, p.s, tol)?;
                let st = flow.state_at(ChartPoint::main(p.start[0], p.start[1]), p.angle)?;
                let traj = integrate(&flow, st, p.t_end, p.every)?;
                let mut csv = Vec::new();
                write_trajectory_csv(&flow, &traj, &mut csv)?;
                sink.put(stage, "trajectory.csv", &csv)?;
                let curv = if traj.samples.len() >= 3 { Some(curvature_residual(&flow, &traj)?) } else { None };
                let (first, last) = (traj.samples[0], traj.samples[traj.samples.len() - 1]);
                let closure = self.surface.distance(first.chart_point(), last.chart_point());
                let summary = json!({
                    "s": p.s,
                    "t_end": p.t_end,
                    "samples": traj.samples.len(),
                    "stats": traj.stats,
                    "curvature_residual": curv,
                    "start": first.chart_point(),
                    "end": last.chart_point(),
                    "start_end_distance": closure,
                    "max_speed_error": traj.samples.iter().map(|x| x.speed_err).fold(0.0, f64::max),
                });
                sink.json(stage, "summary.json", &summary)?;
                Ok(Some(tol))
            }
            Stage::Reduce => {
                let p = c.reduce.as_ref().ok_or_else(|| missing(stage))?;
                let rs = self.reduced(p.mode.as_deref(), p.curvature.as_deref())?;
                let crit = critical_points(&rs)?;
                let level = match p.level {
                    Some(l) => l,
                    None => rs.h(p.seed_point)?,
                };
                let seed = rs.move_to_level(p.seed_point, level)?;
                let l0 = trace_level_circle(&rs, level, seed)?;
                let cyl = maximal_cylinder(&rs, &crit, &l0, p.budget)?;
                let lo = if cyl.c_minus.is_finite() { cyl.c_minus } else { cyl.circles.first().map_or(level, |x| x.c) };
                let hi = if cyl.c_plus.is_finite() { cyl.c_plus } else { cyl.circles.last().map_or(level, |x| x.c) };
                let grid: Vec<f64> = (1..=p.grid).map(|i| lo + (hi - lo) * i as f64 / (p.grid + 1) as f64).collect();
                let profile = period_area_profile(&rs, &cyl, &grid)?;
                let verdicts: Vec<_> = profile.rows.iter().map(|r| classify_resonance(&rs, &cyl, r.c, p.resonance_tol).ok()).collect();
                let mut csv = Vec::new();
                write_cylinder_csv(&profile, &verdicts, &mut csv)?;
                sink.put(stage, "cylinder.csv", &csv)?;
                let base_verdict = classify_resonance(&rs, &cyl, level, p.resonance_tol)?;
                let dichotomy = if p.dichotomy { Some(dichotomy_report(&rs, p.resonance_tol)?) } else { None };
                let rep = json!({
                    "system": rs.describe(),
                    "critical_points": crit,
                    "level": level,
                    "base_circle": l0,
                    "cylinder": { "c_minus": cyl.c_minus, "c_plus": cyl.c_plus, "lower": cyl.lower, "upper": cyl.upper, "notes": cyl.notes },
                    "verdict": base_verdict,
                    "max_mismatch": profile.max_mismatch,
                    "area_monotone": profile.area_monotone,
                    "skipped": profile.skipped,
                    "dichotomy": dichotomy,
                });
                sink.json(stage, "reduce.json", &rep)?;
                Ok(None)
            }
            Stage::Poincare => {
                let p = c.poincare.as_ref().ok_or_else(|| missing(stage))?;
                let tol = p.tol.unwrap_or(base);
                let region = region_of(self.surface, p.region)?;
                let map = SectionMap::new(self.surface, self.field, p.s, region, SectionOpts { tol, angle: p.angle, ..Default::default() })?;
                let rho = rotation_number(&map, p.start, p.iterates)?;
                let mut csv = Vec::new();
                write_iterates_csv(p.start, &rho.orbit, &mut csv)?;
                sink.put(stage, "iterates.csv", &csv)?;
                let mut rng = ChaCha8Rng::seed_from_u64(c.scenario.seed);
                let mut dets = Vec::new();
                for _ in 0..p.symplectic_points {
                    let x = random_section_point(&mut rng, self.surface, &map.region);
                    dets.push(json!({ "x": x, "det": map.weighted_det(x, 1e-6)? }));
                }
                let worst = dets.iter().filter_map(|d| d["det"].as_f64()).map(|d| (d - 1.0).abs()).fold(0.0, f64::max);
                let rep = json!({
                    "s": p.s,
                    "start": p.start,
                    "rotation": rho,
                    "rotation_turns": rho.value / (2.0 * PI),
                    "weighted_det": dets,
                    "max_det_deviation": worst,
                });
                sink.json(stage, "poincare.json", &rep)?;
                Ok(Some(tol))
            }
            Stage::Orbits => {
                let p = c.orbits.as_ref().ok_or_else(|| missing(stage))?;
                let tol = p.tol.unwrap_or(base);
                let region = region_of(self.surface, p.region)?;
                let map = SectionMap::new(self.surface, self.field, p.s, region, SectionOpts { tol, ..Default::default() })?;
                let targets = match &p.targets {
                    Some(t) => PeriodicTargets::List(t.iter().map(|pq| (pq[0], pq[1] as u64)).collect()),
                    None => PeriodicTargets::Auto { count: p.count, max_q: p.max_q },
                };
                let opts = ShootingOpts { starts: p.starts, ..Default::default() };
                let rep = find_periodic_orbits(&map, (p.annulus[0], p.annulus[1]), &targets, opts)?;
                sink.json(stage, "orbits.json", &rep)?;
                Ok(Some(tol))
            }
            Stage::Trap => {
                let p = c.trap.as_ref().ok_or_else(|| missing(stage))?;
                let tol = p.tol.unwrap_or(base);
                let rs = make_reduced(self.surface, self.field, None)?;
                let level = rs.h(p.level_point)?;
                let l = trace_level_circle(&rs, level, p.level_point)?;
                let coord = match p.coord.as_str() {
                    "height" => BandCoord::Height,
                    "q2" => BandCoord::Q2,
                    _ => BandCoord::Q1,
                };
                let spec = TrapSpec {
                    inner: Band { coord, lo: p.inner[0], hi: p.inner[1] },
                    outer: Band { coord, lo: p.outer[0], hi: p.outer[1] },
                    horizon: p.horizon,
                    samples: p.samples,
                    seed: c.scenario.seed,
                    tol,
                    resonance_tol: p.resonance_tol,
                };
                let rep = trapping_experiment(&rs, self.field, &l, p.s, &spec)?;
                sink.json(stage, "trap.json", &rep)?;
                Ok(Some(tol))
            }
            Stage::Saddle => {
                let p = c.saddle.as_ref().ok_or_else(|| missing(stage))?;
                let tol = p.tol.unwrap_or(base);
                let rs = make_reduced(self.surface, self.field, None)?;
                let spec = SaddleSpec {
                    at: p.at,
                    delta: p.delta,
                    eps: p.eps,
                    delta_start: p.delta_start,
                    horizon: p.horizon,
                    samples: p.samples,
                    seed: c.scenario.seed,
                    tol,
                };
                let rep = saddle_escape_experiment(&rs, self.field, p.s, &spec)?;
                sink.json(stage, "saddle.json", &rep)?;
                Ok(Some(tol))
            }
            Stage::Symmetric => {
                let p = c.symmetric.as_ref().ok_or_else(|| missing(stage))?;
                let tol = p.tol.unwrap_or(base);
                let sys = SymmetricSystem::new(self.surface, self.field)?;
                let mut rows = Vec::new();
                if let Some(&s0) = p.speeds.first() {
                    *sign = Some(calibrate_rotation_sign(&sys, p.r, s0, tol)?);
                }
                for &s in &p.speeds {
                    let predicted = symmetric_rotation_number(&sys, p.r, s)?;
                    let measured = measured_rotation(&sys, p.r, s, p.iterates, tol)?;
                    rows.push(json!({
                        "s": s,
                        "predicted": predicted,
                        "measured": measured,
                        "abs_error": (measured.abs() - predicted.abs()).abs(),
                    }));
                }
                let errs: Vec<f64> = rows.iter().filter_map(|r| r["abs_error"].as_f64()).collect();
                let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
                let rational = match &p.rational {
                    Some(r) => {
                        let opts = RationalOpts { max_q: r.max_q, flow_tol: tol, ..Default::default() };
                        Some(rational_speed_search(&sys, p.r, r.s_max, r.count, opts)?)
                    }
                    None => None,
                };
                let rep = json!({
                    "r": p.r,
                    "rotation_sign": ROTATION_SIGN,
                    "rotation_sign_measured": *sign,
                    "speeds": rows,
                    "error_ratios": ratios,
                    "rational": rational,
                });
                sink.json(stage, "symmetric.json", &rep)?;
                Ok(Some(tol))
            }
            Stage::ActionCheck => {
                let p = c.action_check.as_ref().ok_or_else(|| missing(stage))?;
                let length = match (p.length, self.surface.revolution()) {
                    (Some(l), _) => l,
                    (None, Some(rev)) => normalized_length(rev),
                    (None, None) => return Err(Error::Config("action-check.length is required off surfaces of revolution".into())),
                };
                let ode = revolution_action_ode_test(length, &p.c1, p.tol)?;
                let mut csv = Vec::new();
                write_action_csv(&ode, &mut csv)?;
                sink.put(stage, "action.csv", &csv)?;
                let samples = geometry::curvature_samples(self.surface, QuadratureOpts::default())?;
                let total: f64 = samples.iter().map(|x| x.1).sum();
                let gauss_bonnet: f64 = samples.iter().map(|x| x.0 * x.1).sum();
                let circle = if self.surface.revolution().is_some() {
                    Some(circle_action_conditions(&samples, total, 1e-9)?)
                } else {
                    None
                };
                let rep = json!({
                    "ode": ode,
                    "circle_action": circle,
                    "gauss_bonnet": gauss_bonnet,
                    "gauss_bonnet_expected": 2.0 * PI * self.surface.euler_characteristic() as f64,
                });
                sink.json(stage, "action.json", &rep)?;
                Ok(Some(p.tol))
            }
        }
    }

    fn reduced(&self, mode: Option<&str>, k: Option<&str>) -> Result<ReducedSystem<'_>> {
        match (mode, k) {
            (_, Some(k)) => ReducedSystem::with_curvature(self.surface, self.field, Expr::parse(k)?),
            (Some("curvature"), None) => make_reduced(self.surface, self.field, Some(Mode::Curvature)),
            (Some("field"), None) => make_reduced(self.surface, self.field, Some(Mode::Field)),
            _ => make_reduced(self.surface, self.field, None),
        }
    }
}

/// Uniform section point `(q1, q2)` inside the map's region.
fn random_section_point(rng: &mut ChaCha8Rng, surface: &Surface, region: &Region) -> [f64; 2] {
    let (x, y) = match surface {
        Surface::Revolution(s) => ((s.eps, s.length - s.eps), (0.0, 2.0 * PI)),
        Surface::Torus(t) => ((0.0, t.lx), (0.0, t.ly)),
    };
    let x = region.q1.unwrap_or(x);
    let y = region.q2.unwrap_or(y);
    [rng.gen_range(x.0..x.1), rng.gen_range(y.0..y.1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_is_hex() {
        assert_eq!(hex_sha(b"").len(), 64);
        assert!(hex_sha(b"abc").starts_with("ba7816bf"));
    }

    #[test]
    fn overrides_reach_stages() {
        let src = "[scenario]\nname='x'\nstages=['simulate']\n[surface]\nkind='torus'\n[field]\nfamily='constant'\nvalue=1.0\n[simulate]\ns=0.1\nstart=[0.0,0.0]\nt_end=1.0\n";
        let mut t = crate::config::parse_table(src).unwrap();
        apply_to_table(&mut t, &Overrides { s: Some(0.2), seed: Some(9), ..Default::default() });
        let (c, d) = crate::config::check_table(&t);
        assert!(d.is_empty(), "{d:?}");
        let c = c.unwrap();
        assert_eq!(c.simulate.unwrap().s, 0.2);
        assert_eq!(c.scenario.seed, 9);
    }
}
