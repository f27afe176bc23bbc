//! Orbit cylinders, period/area profiles and resonance verdicts.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::critical::{CriticalKind, CriticalSet};
use super::{trace_level_circle, LevelCircle, ReducedSystem};
use crate::error::{Error, Result};
use crate::geometry::{ChartId, Surface};
use crate::magflow::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Increasing `c`.
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// How one side of a cylinder ends.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Endpoint {
    /// Circles degenerate onto a critical point `z_inf` at level `c`.
    Critical { c: f64, at: [f64; 2], chart: ChartId, kind: CriticalKind, distance: f64 },
    /// No critical value on this side; `H` grows without bound (zero set of `b`).
    Open { c_reached: f64 },
    DomainBoundary { c_reached: f64, detail: String },
    Budget { c_reached: f64 },
    /// Circles stopped being traceable without a small gradient or a nearby critical point.
    Inconsistent { c_reached: f64, detail: String },
    /// Side not continued; bounded by the nearest critical value from the oracle.
    Bracket { c: Option<f64> },
}

/// Sampled isotopy of level circles.
#[derive(Clone, Debug, Serialize)]
pub struct OrbitCylinder {
    pub c_minus: f64,
    pub c_plus: f64,
    pub base: LevelCircle,
    /// Traced circles sorted by level (includes `base`).
    pub circles: Vec<LevelCircle>,
    pub lower: Endpoint,
    pub upper: Endpoint,
    pub notes: Vec<String>,
}

impl OrbitCylinder {
    /// Cylinder through `circle` with both sides bounded by the oracle's critical values.
    pub fn around(crit: &CriticalSet, circle: LevelCircle) -> OrbitCylinder {
        let (lo, hi) = crit.bracket(circle.c);
        OrbitCylinder {
            c_minus: lo.unwrap_or(f64::NEG_INFINITY),
            c_plus: hi.unwrap_or(f64::INFINITY),
            base: circle.clone(),
            circles: vec![circle],
            lower: Endpoint::Bracket { c: lo },
            upper: Endpoint::Bracket { c: hi },
            notes: Vec::new(),
        }
    }

    /// Finite width of the parameter interval (explored range for open ends).
    pub fn width(&self) -> f64 {
        let lo = if self.c_minus.is_finite() { self.c_minus } else { self.circles.first().map_or(self.base.c, |c| c.c) };
        let hi = if self.c_plus.is_finite() { self.c_plus } else { self.circles.last().map_or(self.base.c, |c| c.c) };
        let w = hi - lo;
        if w > 0.0 {
            w
        } else {
            self.base.c.abs().max(1e-300)
        }
    }

    pub fn contains(&self, c: f64) -> bool {
        c > self.c_minus && c < self.c_plus
    }

    fn nearest(&self, c: f64) -> &LevelCircle {
        self.circles
            .iter()
            .min_by(|a, b| (a.c - c).abs().total_cmp(&(b.c - c).abs()))
            .unwrap_or(&self.base)
    }

    /// Trace the member circle at level `c`.
    pub fn circle_at(&self, rs: &ReducedSystem, c: f64) -> Result<LevelCircle> {
        let near = self.nearest(c);
        let seed = rs.move_to_level(near.seed, c)?;
        let l = trace_level_circle(rs, c, seed)?;
        // Keep the lift continuous with the cylinder so primitives stay comparable.
        if l.winding != near.winding && near.winding != [0, 0] {
            return Err(Error::Inconsistent(format!("circle at {c} changed class {:?} -> {:?}", near.winding, l.winding)));
        }
        Ok(l)
    }

    fn insert(&mut self, l: LevelCircle) {
        let i = self.circles.partition_point(|x| x.c < l.c);
        self.circles.insert(i, l);
    }
}

fn point_distance(rs: &ReducedSystem, l: &LevelCircle, chart: ChartId, main: [f64; 2]) -> f64 {
    match (rs.surface, chart) {
        (Surface::Revolution(_), ChartId::South) => l.points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
        (Surface::Revolution(s), ChartId::North) => l.points.iter().map(|p| s.length - p[0]).fold(f64::INFINITY, f64::min),
        _ => l.distance_to(rs, main),
    }
}

fn length_scale(rs: &ReducedSystem) -> f64 {
    match rs.surface {
        Surface::Revolution(s) => s.length,
        Surface::Torus(t) => t.lx.min(t.ly),
    }
}

/// Critical point at level `ct` closest to the circle, with its distance.
fn closest_at(rs: &ReducedSystem, crit: &CriticalSet, ct: f64, l: &LevelCircle) -> Option<(f64, Endpoint)> {
    crit.at_value(ct)
        .map(|p| {
            let d = point_distance(rs, l, p.chart, p.main);
            (d, Endpoint::Critical { c: p.value, at: p.main, chart: p.chart, kind: p.kind, distance: d })
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Continue a cylinder from `l0` in one direction until it degenerates.
///
/// Levels approach the nearest critical value geometrically; a critical
/// value whose critical points stay far from the circles does not bound the
/// cylinder and the walk moves on to the next one.
pub fn continue_cylinder(rs: &ReducedSystem, crit: &CriticalSet, l0: &LevelCircle, dir: Direction, budget: usize) -> Result<OrbitCylinder> {
    let sgn = dir.sign();
    let mut cyl = OrbitCylinder::around(crit, l0.clone());
    let mut targets: Vec<f64> = crit.values().into_iter().filter(|v| (v - l0.c) * sgn > 1e-12 * l0.c.abs().max(1e-300)).collect();
    targets.sort_by(|a, b| ((a - l0.c) * sgn).total_cmp(&((b - l0.c) * sgn)));
    let lscale = length_scale(rs);
    let mut cur = l0.clone();
    let mut used = 0usize;
    let mut end: Option<Endpoint> = None;
    let mut ti = 0;
    'walk: while end.is_none() {
        let Some(&ct) = targets.get(ti) else {
            // No critical value left on this side: H is unbounded here.
            let mut c = cur.c;
            while used < budget {
                let next = if sgn > 0.0 { c + c.abs().max(1e-3) } else { c - c.abs().max(1e-3) };
                match step_to(rs, &cur, next) {
                    Ok(l) => {
                        used += 1;
                        c = l.c;
                        cur = l.clone();
                        cyl.insert(l);
                        if c.abs() > 1e8 * l0.c.abs().max(1e-300) {
                            end = Some(Endpoint::Open { c_reached: c });
                            break 'walk;
                        }
                    }
                    Err(e) => {
                        end = Some(Endpoint::DomainBoundary { c_reached: cur.c, detail: e.to_string() });
                        break 'walk;
                    }
                }
            }
            end = Some(Endpoint::Budget { c_reached: cur.c });
            break;
        };
        let c_start = cur.c;
        let gap0 = ct - c_start;
        let mut k = 1;
        loop {
            if used >= budget {
                end = Some(Endpoint::Budget { c_reached: cur.c });
                break 'walk;
            }
            let gap = gap0 * 0.5f64.powi(k);
            if gap.abs() < 1e-6 * gap0.abs() {
                match closest_at(rs, crit, ct, &cur) {
                    Some((d, ep)) if d < 0.05 * lscale => end = Some(ep),
                    _ => {
                        cyl.notes.push(format!("critical value {ct:.12e} passed without degeneration"));
                        ti += 1;
                    }
                }
                continue 'walk;
            }
            match step_to(rs, &cur, ct - gap) {
                Ok(l) => {
                    used += 1;
                    if l.radius(rs) < 1e-7 * lscale && l.winding == [0, 0] {
                        end = Some(match closest_at(rs, crit, ct, &l) {
                            Some((d, ep)) if d < 1e-3 * lscale => ep,
                            _ => Endpoint::Inconsistent { c_reached: l.c, detail: "circle collapsed away from critical points".into() },
                        });
                        cyl.insert(l);
                        break 'walk;
                    }
                    cur = l.clone();
                    cyl.insert(l);
                }
                Err(e) => {
                    let ep = match closest_at(rs, crit, ct, &cur) {
                        Some((d, ep)) if d < 0.1 * lscale && matches!(e, Error::NearCritical(_) | Error::Domain(..) | Error::StepUnderflow { .. }) => ep,
                        _ if matches!(e, Error::Budget(_)) => Endpoint::Budget { c_reached: cur.c },
                        _ if matches!(e, Error::Domain(..)) => Endpoint::DomainBoundary { c_reached: cur.c, detail: e.to_string() },
                        _ => Endpoint::Inconsistent { c_reached: cur.c, detail: e.to_string() },
                    };
                    end = Some(ep);
                    break 'walk;
                }
            }
            k += 1;
        }
    }
    let end = end.expect("walk ends with an endpoint");
    let c_end = match &end {
        Endpoint::Critical { c, .. } => *c,
        Endpoint::Open { .. } => sgn * f64::INFINITY,
        Endpoint::DomainBoundary { c_reached, .. } | Endpoint::Budget { c_reached } | Endpoint::Inconsistent { c_reached, .. } => *c_reached,
        Endpoint::Bracket { c } => c.unwrap_or(sgn * f64::INFINITY),
    };
    if matches!(end, Endpoint::Inconsistent { .. }) {
        cyl.notes.push("inconsistent endpoint: circles collapsed without a small gradient".into());
    }
    match dir {
        Direction::Forward => {
            cyl.c_plus = c_end;
            cyl.upper = end;
        }
        Direction::Backward => {
            cyl.c_minus = c_end;
            cyl.lower = end;
        }
    }
    Ok(cyl)
}

/// Continue in both directions and merge.
pub fn maximal_cylinder(rs: &ReducedSystem, crit: &CriticalSet, l0: &LevelCircle, budget: usize) -> Result<OrbitCylinder> {
    let up = continue_cylinder(rs, crit, l0, Direction::Forward, budget)?;
    let down = continue_cylinder(rs, crit, l0, Direction::Backward, budget)?;
    let mut out = up;
    out.c_minus = down.c_minus;
    out.lower = down.lower;
    for l in down.circles {
        if l.c != l0.c {
            out.insert(l);
        }
    }
    out.notes.extend(down.notes);
    Ok(out)
}

fn step_to(rs: &ReducedSystem, from: &LevelCircle, c: f64) -> Result<LevelCircle> {
    let seed = rs.move_to_level(from.seed, c)?;
    trace_level_circle(rs, c, seed)
}

/// One row of a period/area profile.
#[derive(Clone, Debug, Serialize)]
pub struct ProfileRow {
    pub c: f64,
    pub period: f64,
    /// `A(c) - A(c_0)` with `c_0` the cylinder's base level.
    pub area: f64,
    /// Five-point estimate of `dA/dc`.
    pub dadc: f64,
    /// `|dA/dc - T| / T`.
    pub mismatch: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodAreaProfile {
    pub rows: Vec<ProfileRow>,
    pub skipped: Vec<(f64, String)>,
    pub max_mismatch: f64,
    /// `A` strictly monotone along the rows.
    pub area_monotone: bool,
}

/// Period and area along a cylinder, with the `dA/dc = T` consistency check.
pub fn period_area_profile(rs: &ReducedSystem, cyl: &OrbitCylinder, grid: &[f64]) -> Result<PeriodAreaProfile> {
    let w = cyl.width();
    let a0 = cyl.base.area;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &c in grid {
        let dist = (c - cyl.c_minus).min(cyl.c_plus - c);
        if !cyl.contains(c) || dist < 1e-3 * w {
            skipped.push((c, "too close to (or outside) the cylinder ends".to_string()));
            continue;
        }
        let h = (2e-3 * w).min(0.2 * dist);
        let l = cyl.circle_at(rs, c)?;
        let mut a = [0.0; 4];
        for (i, k) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
            let seed = rs.move_to_level(l.seed, c + k * h)?;
            a[i] = trace_level_circle(rs, c + k * h, seed)?.area;
        }
        let dadc = (a[0] - 8.0 * a[1] + 8.0 * a[2] - a[3]) / (12.0 * h);
        rows.push(ProfileRow { c, period: l.period, area: l.area - a0, dadc, mismatch: (dadc - l.period).abs() / l.period });
    }
    let max_mismatch = rows.iter().map(|r| r.mismatch).fold(0.0, f64::max);
    let mut sorted: Vec<&ProfileRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.c.total_cmp(&b.c));
    let incr = sorted.windows(2).all(|p| p[1].area > p[0].area);
    let decr = sorted.windows(2).all(|p| p[1].area < p[0].area);
    Ok(PeriodAreaProfile { rows, skipped, max_mismatch, area_monotone: incr || decr })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    NonResonant,
    ResonantWithinTolerance,
    Undetermined,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::NonResonant => "non-resonant",
            Verdict::ResonantWithinTolerance => "resonant-within-tolerance",
            Verdict::Undetermined => "undetermined",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResonanceVerdict {
    pub verdict: Verdict,
    pub c0: f64,
    pub t0: f64,
    pub dtdc: f64,
    pub dtdc_err: f64,
    /// `dT/dc * W / T` with `W` the cylinder width.
    pub normalized_slope: f64,
    pub normalized_err: f64,
    /// `(max T - min T) / T` over the window.
    pub spread: f64,
    pub tol: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub note: Option<String>,
}

pub const WINDOW_SAMPLES: usize = 11;
pub const WINDOW_FRACTION: f64 = 0.02;

/// Three-way resonance verdict at `c0` from a local fit of `T(c)`.
pub fn classify_resonance(rs: &ReducedSystem, cyl: &OrbitCylinder, c0: f64, tol: f64) -> Result<ResonanceVerdict> {
    if !cyl.contains(c0) {
        return Err(Error::Precondition(format!("level {c0} is not interior to the cylinder ({}, {})", cyl.c_minus, cyl.c_plus)));
    }
    let w = cyl.width();
    let margin = 1e-3 * w;
    let (lo_lim, hi_lim) = ((cyl.c_minus + margin).max(c0 - w), (cyl.c_plus - margin).min(c0 + w));
    let mut half = 0.5 * WINDOW_FRACTION * w;
    let mut note = None;
    if hi_lim - lo_lim < 2.0 * half {
        half = 0.5 * (hi_lim - lo_lim);
        note = Some("window shrunk to fit the cylinder".to_string());
    }
    let center = c0.clamp(lo_lim + half, hi_lim - half);
    let mut cs = Vec::with_capacity(WINDOW_SAMPLES);
    let mut ts = Vec::with_capacity(WINDOW_SAMPLES);
    let mut seed_circle = cyl.circle_at(rs, center)?;
    for i in 0..WINDOW_SAMPLES {
        let c = center - half + 2.0 * half * i as f64 / (WINDOW_SAMPLES - 1) as f64;
        let seed = rs.move_to_level(seed_circle.seed, c)?;
        let l = trace_level_circle(rs, c, seed)?;
        cs.push(c);
        ts.push(l.period);
        seed_circle = l;
    }
    let mut v = classify_samples(&cs, &ts, c0, w, tol);
    if v.note.is_none() {
        v.note = note;
    }
    Ok(v)
}

/// Verdict from sampled `(c, T)` pairs; `width` normalizes the slope.
pub fn classify_samples(cs: &[f64], ts: &[f64], c0: f64, width: f64, tol: f64) -> ResonanceVerdict {
    let n = cs.len().min(ts.len());
    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = ResonanceVerdict {
        verdict: Verdict::Undetermined,
        c0,
        t0: f64::NAN,
        dtdc: f64::NAN,
        dtdc_err: f64::NAN,
        normalized_slope: f64::NAN,
        normalized_err: f64::NAN,
        spread: f64::NAN,
        tol,
        window: (lo, hi),
        samples: n,
        note: None,
    };
    let deg = 4;
    if n < deg + 2 || !(hi > lo) {
        out.note = Some("insufficient samples".into());
        return out;
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let a = DMatrix::from_fn(n, deg + 1, |i, j| ((cs[i] - mid) / half).powi(j as i32));
    let b = DVector::from_iterator(n, ts[..n].iter().copied());
    let ata = a.transpose() * &a;
    let Some(inv) = ata.clone().try_inverse() else {
        out.note = Some("singular fit".into());
        return out;
    };
    let coef = &inv * (a.transpose() * &b);
    let resid = &b - &a * &coef;
    let dof = (n - deg - 1) as f64;
    let sigma2 = resid.norm_squared() / dof;
    let u0 = (c0 - mid) / half;
    let grad = DVector::from_fn(deg + 1, |j, _| if j == 0 { 0.0 } else { j as f64 * u0.powi(j as i32 - 1) });
    let val = DVector::from_fn(deg + 1, |j, _| u0.powi(j as i32));
    let slope = grad.dot(&coef) / half;
    let var = (grad.transpose() * (&inv * &grad))[(0, 0)] * sigma2;
    let err = var.max(0.0).sqrt() / half;
    let t0 = val.dot(&coef);
    let tmax = ts[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tmin = ts[..n].iter().copied().fold(f64::INFINITY, f64::min);
    out.t0 = t0;
    out.dtdc = slope;
    out.dtdc_err = err;
    out.normalized_slope = slope * width / t0;
    out.normalized_err = err * width / t0.abs();
    out.spread = (tmax - tmin) / t0.abs();
    out.verdict = if out.normalized_slope.abs() > out.normalized_err + tol {
        Verdict::NonResonant
    } else if out.spread < tol {
        Verdict::ResonantWithinTolerance
    } else {
        Verdict::Undetermined
    };
    out
}

/// Write `c,T,A,dTdc_fit,verdict` rows.
pub fn write_cylinder_csv<W: Write>(profile: &PeriodAreaProfile, verdicts: &[Option<ResonanceVerdict>], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(["c", "T", "A", "dTdc_fit", "verdict"]).map_err(io)?;
    for (i, r) in profile.rows.iter().enumerate() {
        let v = verdicts.get(i).and_then(|v| v.as_ref());
        wr.write_record([
            fmt(r.c),
            fmt(r.period),
            fmt(r.area),
            v.map_or("".to_string(), |v| fmt(v.dtdc)),
            v.map_or("".to_string(), |v| v.verdict.name().to_string()),
        ])
        .map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FieldKind, FieldSpec};
    use crate::reduced::{critical_points, make_reduced};
    use std::f64::consts::PI;

    fn sphere() -> (Surface, FieldSpec) {
        let s = Surface::unit_sphere();
        let f = FieldSpec::new(FieldKind::AffineHeight { c0: 2.0, c1: 1.0 }, &s).unwrap();
        (s, f)
    }

    #[test]
    fn affine_sphere_cylinder_ends_at_poles() {
        let (s, f) = sphere();
        let rs = make_reduced(&s, &f, None).unwrap();
        let crit = critical_points(&rs).unwrap();
        let l0 = trace_level_circle(&rs, 0.125, [PI / 2.0, 0.0]).unwrap();
        let fw = continue_cylinder(&rs, &crit, &l0, Direction::Forward, 64).unwrap();
        assert_eq!(fw.c_plus, 0.5);
        assert!(matches!(fw.upper, Endpoint::Critical { chart: ChartId::South, .. }), "{:?}", fw.upper);
        let bw = continue_cylinder(&rs, &crit, &l0, Direction::Backward, 64).unwrap();
        assert!((bw.c_minus - 1.0 / 18.0).abs() < 1e-15);
        assert!(matches!(bw.lower, Endpoint::Critical { chart: ChartId::North, .. }), "{:?}", bw.lower);
    }

    #[test]
    fn noisy_periods_are_undetermined() {
        let cs: Vec<f64> = (0..11).map(|i| 1.0 + 0.01 * i as f64).collect();
        let ts: Vec<f64> = (0..11).map(|i| 5.0 * (1.0 + if i % 2 == 0 { 1e-3 } else { -1e-3 })).collect();
        assert_eq!(classify_samples(&cs, &ts, 1.05, 1.0, 1e-6).verdict, Verdict::Undetermined);
        let flat = vec![5.0; 11];
        assert_eq!(classify_samples(&cs, &flat, 1.05, 1.0, 1e-6).verdict, Verdict::ResonantWithinTolerance);
        assert_eq!(classify_samples(&cs[..4], &flat[..4], 1.05, 1.0, 1e-6).verdict, Verdict::Undetermined);
    }
}
