//! Non-resonant boundary locator and the dichotomy report.
//!
//! Each target spawns approach branches; along a branch the distance to the
//! target halves until a circle with a non-resonant verdict turns up.

use std::f64::consts::PI;

use serde::Serialize;

use super::critical::{critical_points, saddle_frame, CriticalSet, SaddleFrame};
use super::cylinder::{classify_resonance, OrbitCylinder, ResonanceVerdict, Verdict};
use super::{trace_level_circle, LevelCircle, Mode, ReducedSystem};
use crate::error::{Error, Result};
use crate::geometry::{ChartId, Surface, ZeroSet};

/// What the locator walks toward.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Target {
    /// Zero set of `b` (field mode only).
    ZeroSet,
    /// Strict local extremum point of `H`, in main-chart coordinates.
    Extremum { at: [f64; 2] },
    /// A point on an extremal critical circle.
    Circle { at: [f64; 2] },
    /// Non-degenerate saddle with the quadrant box `|x| <= delta, |y| <= eps`.
    Saddle { at: [f64; 2], delta: f64, eps: f64 },
}

/// Compact record of a traced circle.
#[derive(Clone, Debug, Serialize)]
pub struct CircleSummary {
    pub c: f64,
    pub seed: [f64; 2],
    pub period: f64,
    pub area: f64,
    pub winding: [i64; 2],
    pub component: i8,
    pub closure: f64,
}

impl From<&LevelCircle> for CircleSummary {
    fn from(l: &LevelCircle) -> Self {
        CircleSummary { c: l.c, seed: l.seed, period: l.period, area: l.area, winding: l.winding, component: l.component, closure: l.closure }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Attempt {
    /// Distance parameter along the branch.
    pub distance: f64,
    pub point: [f64; 2],
    pub c: f64,
    /// Saddle-frame coordinates of the point, for saddle targets.
    pub local: Option<[f64; 2]>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

/// One approach direction toward the target.
#[derive(Clone, Debug, Serialize)]
pub struct Branch {
    pub label: String,
    pub origin: [f64; 2],
    pub direction: [f64; 2],
    pub attempts: Vec<Attempt>,
    pub circle: Option<CircleSummary>,
    pub verdict: Option<ResonanceVerdict>,
}

/// Region enclosed by the certificate circles.
#[derive(Clone, Debug, Serialize)]
pub struct Neighborhood {
    pub levels: Vec<f64>,
    /// Range of `H` over the certificate levels.
    pub c_range: Option<(f64, f64)>,
    /// Largest chart distance between a certificate seed and the target origin.
    pub max_distance: f64,
    pub description: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryReport {
    pub target: Target,
    pub branches: Vec<Branch>,
    pub neighborhood: Neighborhood,
    /// Every branch produced a non-resonant circle.
    pub certificate: bool,
    pub frame: Option<SaddleFrame>,
    pub notes: Vec<String>,
}

/// Halvings tried per branch.
const MAX_HALVINGS: usize = 12;

/// Locate non-resonant circles around `target`.
pub fn locate_nonresonant_boundary(rs: &ReducedSystem, target: &Target, tol: f64) -> Result<BoundaryReport> {
    let crit = critical_points(rs)?;
    let l = rs.length_scale();
    let mut notes = Vec::new();
    let mut frame = None;
    let mut branches = Vec::new();
    match target {
        Target::ZeroSet => {
            let field = match (rs.mode, rs.field) {
                (Mode::Field, Some(f)) => f,
                _ => return Err(Error::Precondition("zero-set target requires field mode".into())),
            };
            if field.zero_set == ZeroSet::Empty {
                return Err(Error::Precondition("field has no zeros".into()));
            }
            let roots = zero_crossings(rs);
            if roots.is_empty() {
                return Err(Error::Precondition("line scans found no zero of b".into()));
            }
            for p0 in roots {
                let g = field.jet(rs.surface, ChartId::Main, p0).g;
                let n = g[0].hypot(g[1]);
                let u = [g[0] / n, g[1] / n];
                for s in [1.0, -1.0] {
                    let dir = [s * u[0], s * u[1]];
                    let lab = format!("zero({:.4},{:.4}){}", p0[0], p0[1], if s > 0.0 { "+" } else { "-" });
                    let pts = (0..MAX_HALVINGS)
                        .map(|k| {
                            let d = 0.05 * l * 0.5f64.powi(k as i32);
                            (d, [p0[0] + d * dir[0], p0[1] + d * dir[1]], None)
                        })
                        .filter(|(_, p, _)| field.value(rs.surface, ChartId::Main, *p) * s > 0.0)
                        .collect();
                    branches.push(walk(rs, &crit, lab, p0, dir, pts, tol));
                }
            }
        }
        Target::Extremum { at } => {
            let h0 = rs_h(rs, *at)?;
            let ring = ring(rs, *at, 1e-3 * l);
            let diffs: Vec<f64> = ring.iter().filter_map(|p| rs_h(rs, *p).ok()).map(|h| h - h0).collect();
            let strict = !diffs.is_empty() && (diffs.iter().all(|d| *d > 0.0) || diffs.iter().all(|d| *d < 0.0));
            if !strict {
                return Err(Error::Precondition(format!("({:.6}, {:.6}) is not a strict local extremum of H", at[0], at[1])));
            }
            let dir = approach_direction(rs, *at, l);
            let pts = (0..MAX_HALVINGS)
                .map(|k| {
                    let d = 0.05 * l * 0.5f64.powi(k as i32);
                    (d, [at[0] + d * dir[0], at[1] + d * dir[1]], None)
                })
                .collect();
            branches.push(walk(rs, &crit, "extremum".into(), *at, dir, pts, tol));
        }
        Target::Circle { at } => {
            let gn = rs.grad_norm(*at)?;
            let h0 = rs_h(rs, *at)?;
            if gn > 1e-6 * h0.abs().max(1.0) / l {
                return Err(Error::Precondition(format!("|dH| = {gn:.3e} at ({:.6}, {:.6}); not on a critical circle", at[0], at[1])));
            }
            let u = approach_direction(rs, *at, l);
            for (s, side) in [(1.0, "+"), (-1.0, "-")] {
                let dir = [s * u[0], s * u[1]];
                let pts = (0..MAX_HALVINGS)
                    .map(|k| {
                        let d = 0.05 * l * 0.5f64.powi(k as i32);
                        (d, [at[0] + d * dir[0], at[1] + d * dir[1]], None)
                    })
                    .collect();
                branches.push(walk(rs, &crit, format!("circle{side}"), *at, dir, pts, tol));
            }
        }
        Target::Saddle { at, delta, eps } => {
            if !(*delta > 0.0 && *eps > 0.0) {
                return Err(Error::Precondition("saddle box needs delta > 0 and eps > 0".into()));
            }
            let p = crit
                .points
                .iter()
                .filter(|p| p.chart == ChartId::Main)
                .min_by(|a, b| dist(rs, a.main, *at).total_cmp(&dist(rs, b.main, *at)))
                .filter(|p| dist(rs, p.main, *at) < 1e-6 * l)
                .ok_or_else(|| Error::Precondition(format!("no critical point at ({:.6}, {:.6})", at[0], at[1])))?;
            let fr = saddle_frame(rs, p)?;
            notes.push(
                "quadrants are taken in chart coordinates after a linear normalization of the Hessian; \
                 no symplectic Morse chart is constructed"
                    .into(),
            );
            for (i, (sx, sy)) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)].into_iter().enumerate() {
                let pts = (0..MAX_HALVINGS)
                    .map(|k| {
                        let t = 0.5 * 0.5f64.powi(k as i32);
                        let (x, y) = (sx * delta * t, sy * eps * t);
                        (t, fr.point(x, y), Some([x, y]))
                    })
                    .collect();
                let dir = fr.point(sx * delta, sy * eps);
                let n = (dir[0] - fr.at[0]).hypot(dir[1] - fr.at[1]);
                let dir = [(dir[0] - fr.at[0]) / n, (dir[1] - fr.at[1]) / n];
                branches.push(walk(rs, &crit, format!("B{}", i + 1), fr.at, dir, pts, tol));
            }
            frame = Some(fr);
        }
    }
    let certificate = !branches.is_empty() && branches.iter().all(|b| b.circle.is_some());
    if !certificate {
        notes.push("no certificate found on some branch: resonance cannot be refuted numerically".into());
    }
    let neighborhood = neighborhood(rs, target, &branches);
    Ok(BoundaryReport { target: target.clone(), branches, neighborhood, certificate, frame, notes })
}

fn rs_h(rs: &ReducedSystem, q: [f64; 2]) -> Result<f64> {
    let h = rs.h(q)?;
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::Domain(q[0], q[1], "H is not finite"))
    }
}

fn dist(rs: &ReducedSystem, a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = rs.wrap([a[0] - b[0], a[1] - b[1]]);
    d[0].hypot(d[1])
}

fn at_pole(rs: &ReducedSystem, q: [f64; 2]) -> Option<f64> {
    match rs.surface {
        Surface::Revolution(s) if q[0] < s.eps => Some(1.0),
        Surface::Revolution(s) if q[0] > s.length - s.eps => Some(-1.0),
        _ => None,
    }
}

/// Small loop of points around `q` (a latitude when `q` is a pole).
fn ring(rs: &ReducedSystem, q: [f64; 2], rad: f64) -> Vec<[f64; 2]> {
    (0..16)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 16.0;
            match (at_pole(rs, q), rs.surface) {
                (Some(s), Surface::Revolution(rv)) => [if s > 0.0 { rad } else { rv.length - rad }, t],
                _ => [q[0] + rad * t.cos(), q[1] + rad * t.sin()],
            }
        })
        .collect()
}

/// Direction of strongest variation of `H` away from `q`.
fn approach_direction(rs: &ReducedSystem, q: [f64; 2], l: f64) -> [f64; 2] {
    if let Some(s) = at_pole(rs, q) {
        return [s, 0.0];
    }
    if rs.axisymmetric() {
        return [1.0, 0.0];
    }
    let d = 1e-2 * l;
    let h0 = rs.h(q).unwrap_or(0.0);
    (0..16)
        .map(|k| {
            let t = PI * k as f64 / 16.0;
            let u = [t.cos(), t.sin()];
            let var = [1.0, -1.0]
                .iter()
                .filter_map(|s| rs_h(rs, [q[0] + s * d * u[0], q[1] + s * d * u[1]]).ok())
                .map(|h| (h - h0).abs())
                .sum::<f64>();
            (var, u)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, u)| u)
        .unwrap_or([1.0, 0.0])
}

/// Whether `c` sits on a critical value (relative gap 1e-9).
fn on_critical_value(crit: &CriticalSet, c: f64) -> bool {
    crit.values().iter().any(|v| (v - c).abs() <= 1e-9 * v.abs().max(c.abs()).max(1e-300))
}

/// Classify the circle through each approach point in turn; stop at the first non-resonant one.
fn walk(
    rs: &ReducedSystem,
    crit: &CriticalSet,
    label: String,
    origin: [f64; 2],
    direction: [f64; 2],
    points: Vec<(f64, [f64; 2], Option<[f64; 2]>)>,
    tol: f64,
) -> Branch {
    let mut br = Branch { label, origin, direction, attempts: Vec::new(), circle: None, verdict: None };
    for (d, p, local) in points {
        let mut at = Attempt { distance: d, point: p, c: f64::NAN, local, verdict: None, error: None };
        let res = (|| -> Result<(LevelCircle, ResonanceVerdict)> {
            let c = rs_h(rs, p)?;
            at.c = c;
            if on_critical_value(crit, c) {
                return Err(Error::NearCritical(format!("level {c} is a critical value")));
            }
            let l = trace_level_circle(rs, c, p)?;
            let cyl = OrbitCylinder::around(crit, l.clone());
            let v = classify_resonance(rs, &cyl, c, tol)?;
            Ok((l, v))
        })();
        match res {
            Ok((l, v)) => {
                at.verdict = Some(v.verdict);
                br.attempts.push(at);
                if v.verdict == Verdict::NonResonant {
                    br.circle = Some(CircleSummary::from(&l));
                    br.verdict = Some(v);
                    break;
                }
            }
            Err(e) => {
                at.error = Some(e.to_string());
                br.attempts.push(at);
            }
        }
    }
    br
}

fn neighborhood(rs: &ReducedSystem, target: &Target, branches: &[Branch]) -> Neighborhood {
    let found: Vec<&CircleSummary> = branches.iter().filter_map(|b| b.circle.as_ref()).collect();
    let levels: Vec<f64> = found.iter().map(|c| c.c).collect();
    let c_range = if levels.is_empty() {
        None
    } else {
        Some((levels.iter().copied().fold(f64::INFINITY, f64::min), levels.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
    };
    let max_distance = branches
        .iter()
        .filter_map(|b| b.circle.as_ref().map(|c| dist(rs, c.seed, b.origin)))
        .fold(0.0, f64::max);
    let what = match target {
        Target::ZeroSet => "the zero set of b",
        Target::Extremum { .. } => "the extremum",
        Target::Circle { .. } => "the critical circle",
        Target::Saddle { .. } => "the saddle",
    };
    let description = if found.is_empty() {
        format!("no non-resonant circle found around {what}")
    } else {
        format!("{} of {} branches bounded by non-resonant circles around {what}", found.len(), branches.len())
    };
    Neighborhood { levels, c_range, max_distance, description }
}

/// Scan lines of the main chart used to seed searches.
fn scan_lines(rs: &ReducedSystem, n: usize) -> Vec<Vec<[f64; 2]>> {
    let pts = 2000;
    match rs.surface {
        Surface::Torus(t) => {
            let mut out = Vec::new();
            for k in 0..n {
                let fy = (0.3183 + k as f64 / n as f64).fract() * t.ly;
                let fx = (0.2718 + k as f64 / n as f64).fract() * t.lx;
                out.push((0..=pts).map(|i| [t.lx * i as f64 / pts as f64, fy]).collect());
                out.push((0..=pts).map(|i| [fx, t.ly * i as f64 / pts as f64]).collect());
            }
            out
        }
        Surface::Revolution(s) => {
            let m = if rs.axisymmetric() { 1 } else { n };
            (0..m)
                .map(|k| {
                    let phi = 2.0 * PI * (0.3183 + k as f64 / m as f64).fract();
                    let (a, b) = (s.eps, s.length - s.eps);
                    (0..=pts).map(|i| [a + (b - a) * i as f64 / pts as f64, phi]).collect()
                })
                .collect()
        }
    }
}

/// Sign changes of `f` along the scan lines, bisected.
fn line_roots(rs: &ReducedSystem, lines: &[Vec<[f64; 2]>], f: impl Fn([f64; 2]) -> Option<f64>) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::new();
    let l = rs.length_scale();
    for line in lines {
        for w in line.windows(2) {
            let (Some(fa), Some(fb)) = (f(w[0]), f(w[1])) else { continue };
            if fa == 0.0 {
                if !out.iter().any(|q| dist(rs, *q, w[0]) < 1e-6 * l) {
                    out.push(w[0]);
                }
                continue;
            }
            if fa * fb >= 0.0 {
                continue;
            }
            let (mut a, mut b, mut fa) = (w[0], w[1], fa);
            for _ in 0..80 {
                let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                let Some(fm) = f(m) else { break };
                if fm * fa > 0.0 {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            let r = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            if !out.iter().any(|q| dist(rs, *q, r) < 1e-6 * l) {
                out.push(r);
            }
        }
    }
    out
}

fn zero_crossings(rs: &ReducedSystem) -> Vec<[f64; 2]> {
    let Some(field) = rs.field else { return Vec::new() };
    line_roots(rs, &scan_lines(rs, 1), |q| Some(field.value(rs.surface, ChartId::Main, q)))
}

/// Which alternative of the dichotomy the evidence supports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DichotomyBranch {
    /// Some scanned circle is non-resonant.
    NonResonantFound,
    /// Every scanned cylinder is resonant within tolerance on a sphere whose `H` has exactly two critical points.
    ResonantSphere,
    /// `H` is constant; there are no regular circles to scan.
    ConstantHamiltonian,
    /// Neither alternative is supported by the numerics.
    Unresolved,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScannedCircle {
    pub circle: CircleSummary,
    pub verdict: Option<ResonanceVerdict>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DichotomyReport {
    pub branch: DichotomyBranch,
    pub is_sphere: bool,
    pub critical_points: usize,
    pub critical_nondegenerate: bool,
    pub levels: Vec<f64>,
    pub scanned: Vec<ScannedCircle>,
    pub witness: Option<usize>,
    pub notes: Vec<String>,
}

/// Scan regular levels between critical values until a non-resonant circle turns up.
pub fn dichotomy_report(rs: &ReducedSystem, tol: f64) -> Result<DichotomyReport> {
    let is_sphere = rs.surface.is_sphere();
    let mut rep = DichotomyReport {
        branch: DichotomyBranch::Unresolved,
        is_sphere,
        critical_points: 0,
        critical_nondegenerate: false,
        levels: Vec::new(),
        scanned: Vec::new(),
        witness: None,
        notes: Vec::new(),
    };
    if rs.is_constant() {
        rep.branch = DichotomyBranch::ConstantHamiltonian;
        rep.notes.push("reduced Hamiltonian is constant".into());
        return Ok(rep);
    }
    let crit = critical_points(rs)?;
    let (count, nondeg) = crit.isolated_count();
    rep.critical_points = count;
    rep.critical_nondegenerate = nondeg;
    let vals = crit.values();
    let mut levels: Vec<f64> = vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if let (Some(lo), Some(hi)) = (vals.first(), vals.last()) {
        let span = (hi - lo).max(hi.abs().max(lo.abs())).max(1e-3);
        levels.push(hi + span);
        levels.insert(0, lo - span);
    }
    let lines = scan_lines(rs, 3);
    let l = rs.length_scale();
    let mut all_resonant = true;
    let mut circles: Vec<LevelCircle> = Vec::new();
    'levels: for &c in &levels {
        let seeds = line_roots(rs, &lines, |q| rs_h(rs, q).ok().map(|h| h - c));
        if seeds.is_empty() {
            continue;
        }
        rep.levels.push(c);
        let mut per_level = 0;
        for s in seeds {
            if per_level >= 6 {
                break;
            }
            if circles.iter().any(|k| k.c == c && k.distance_to(rs, s) < 1e-6 * l) {
                continue;
            }
            let res = trace_level_circle(rs, c, s).and_then(|lc| {
                let cyl = OrbitCylinder::around(&crit, lc.clone());
                let v = classify_resonance(rs, &cyl, c, tol);
                Ok((lc, v))
            });
            per_level += 1;
            match res {
                Ok((lc, v)) => {
                    let summary = CircleSummary::from(&lc);
                    circles.push(lc);
                    match v {
                        Ok(v) => {
                            let nr = v.verdict == Verdict::NonResonant;
                            all_resonant &= v.verdict == Verdict::ResonantWithinTolerance;
                            rep.scanned.push(ScannedCircle { circle: summary, verdict: Some(v), error: None });
                            if nr {
                                rep.witness = Some(rep.scanned.len() - 1);
                                break 'levels;
                            }
                        }
                        Err(e) => {
                            all_resonant = false;
                            rep.scanned.push(ScannedCircle { circle: summary, verdict: None, error: Some(e.to_string()) });
                        }
                    }
                }
                Err(e) => {
                    all_resonant = false;
                    rep.notes.push(format!("level {c}: {e}"));
                }
            }
        }
    }
    rep.branch = if rep.witness.is_some() {
        DichotomyBranch::NonResonantFound
    } else if all_resonant && !rep.scanned.is_empty() && is_sphere && count == 2 && nondeg {
        DichotomyBranch::ResonantSphere
    } else {
        DichotomyBranch::Unresolved
    };
    if rep.branch == DichotomyBranch::ResonantSphere {
        rep.notes.push("resonance is a numerical verdict within tolerance, not a proof".into());
    }
    Ok(rep)
}
