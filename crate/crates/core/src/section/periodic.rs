//! Periodic orbits of the return map by multi-start shooting.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use super::{rotation_number, SectionMap};
use crate::error::{Error, Result};
use crate::geometry::{ChartId, ChartPoint, Surface};
use crate::magflow::geodesic_curvature;

/// Which rotation data to shoot for.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeriodicTargets {
    /// The `count` smallest-denominator rationals strictly inside the boundary interval.
    Auto { count: usize, max_q: u64 },
    List(Vec<(i64, u64)>),
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicOrbit {
    pub s: f64,
    pub p: i64,
    pub q: u64,
    /// Section point with `map^q(x) = x + (0, 2 pi p)`.
    pub x: [f64; 2],
    pub residual: f64,
    /// Distance in the surface between the start and the end of the reconstruction.
    pub closure: f64,
    pub curvature_residual: f64,
    /// Net turns of the reconstruction around the guiding circle.
    pub winding: i64,
    pub period: f64,
    pub start_index: usize,
    #[serde(skip)]
    pub orbit: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TargetStatus {
    Found { orbits: usize },
    NotFound { best_residual: f64 },
    Skipped { note: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct TargetEntry {
    pub p: i64,
    pub q: u64,
    #[serde(flatten)]
    pub status: TargetStatus,
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicReport {
    pub s: f64,
    pub annulus: (f64, f64),
    /// Rotation numbers at the annulus ends (radians per return).
    pub boundary_rotation: (f64, f64),
    pub targets: Vec<TargetEntry>,
    pub orbits: Vec<PeriodicOrbit>,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShootingOpts {
    pub starts: usize,
    pub fd_step: f64,
    pub max_iter: usize,
    pub residual: f64,
    /// Returns used for the boundary rotation numbers.
    pub rotation_iterates: usize,
    /// Orbits closer than this (Hausdorff, section coordinates) are one orbit.
    pub dedup: f64,
}

impl Default for ShootingOpts {
    fn default() -> Self {
        ShootingOpts { starts: 32, fd_step: 1e-7, max_iter: 12, residual: 1e-9, rotation_iterates: 400, dedup: 1e-6 }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest-denominator reduced fractions strictly inside `(lo, hi)`.
pub fn rationals_between(lo: f64, hi: f64, count: usize, max_q: u64) -> Vec<(i64, u64)> {
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut out = Vec::new();
    for q in 1..=max_q {
        let p0 = (lo * q as f64).floor() as i64;
        let p1 = (hi * q as f64).ceil() as i64;
        for p in p0..=p1 {
            let r = p as f64 / q as f64;
            if r > lo && r < hi && gcd(p.unsigned_abs(), q) == 1 {
                out.push((p, q));
                if out.len() >= count {
                    return out;
                }
            }
        }
    }
    out
}

/// Shoot for periodic orbits in the annulus `r in (lo, hi)` of the section map.
pub fn find_periodic_orbits(map: &SectionMap, annulus: (f64, f64), targets: &PeriodicTargets, opts: ShootingOpts) -> Result<PeriodicReport> {
    let (lo, hi) = annulus;
    if !(lo < hi) || !map.region.q1.map_or(true, |(a, b)| lo > a && hi < b) {
        return Err(Error::Precondition(format!("annulus ({lo}, {hi}) is not interior to the section region")));
    }
    let phi0 = 0.0;
    let rho_lo = rotation_number(map, [lo, phi0], opts.rotation_iterates)?;
    let rho_hi = rotation_number(map, [hi, phi0], opts.rotation_iterates)?;
    if rho_lo.escaped || rho_hi.escaped {
        return Err(Error::Precondition("annulus boundary orbits leave the section region".into()));
    }
    let (r0, r1) = (rho_lo.value / (2.0 * PI), rho_hi.value / (2.0 * PI));
    let (blo, bhi) = (r0.min(r1), r0.max(r1));
    let mut notes = Vec::new();
    let list = match targets {
        PeriodicTargets::Auto { count, max_q } => {
            let l = rationals_between(blo, bhi, *count, *max_q);
            if l.is_empty() {
                notes.push(format!("no rational with q <= {max_q} lies strictly between {blo:.6e} and {bhi:.6e}"));
            }
            l
        }
        PeriodicTargets::List(l) => l.clone(),
    };
    let mut entries = Vec::new();
    let mut orbits: Vec<PeriodicOrbit> = Vec::new();
    for (p, q) in list {
        if q == 0 {
            entries.push(TargetEntry { p, q, status: TargetStatus::Skipped { note: "q must be positive".into() } });
            continue;
        }
        let r = p as f64 / q as f64;
        if !(r > blo && r < bhi) {
            entries.push(TargetEntry {
                p,
                q,
                status: TargetStatus::Skipped { note: format!("p/q = {r:.6e} outside the boundary interval [{blo:.6e}, {bhi:.6e}]") },
            });
            continue;
        }
        // Starting radii from the linear model of the twist between the boundary rotation numbers.
        let guess = lo + (hi - lo) * (r - r0) / (r1 - r0);
        // An r-grid of width a tenth of the annulus, shifted to stay inside it.
        let nr = 8.min(opts.starts).max(1);
        let nphi = opts.starts.div_ceil(nr);
        let half = 0.05 * (hi - lo);
        let centre = guess.clamp(lo + 1.01 * half, hi - 1.01 * half);
        let starts: Vec<[f64; 2]> = (0..opts.starts)
            .map(|k| {
                let (i, j) = (k % nr, k / nr);
                let u = if nr > 1 { i as f64 / (nr - 1) as f64 - 0.5 } else { 0.0 };
                [centre + 2.0 * half * u, 2.0 * PI * j as f64 / nphi as f64]
            })
            .collect();
        // One Jacobian at the model guess serves as the first chord for every start.
        let shared = residual_of(map, [centre, 0.0], p, q).and_then(|(f, _)| fd_jacobian(map, [centre, 0.0], f, p, q, opts.fd_step)).ok();
        if let Some(j) = shared {
            let (c0, c1) = (j[0][0].hypot(j[1][0]), j[0][1].hypot(j[1][1]));
            if c1 < 1e-6 * c0 && !notes.iter().any(|n: &String| n.starts_with("rotation")) {
                notes.push("rotationally invariant map: periodic points form circles and orbits of one family differ by a rotation".into());
            }
        }
        let results: Vec<(usize, Result<([f64; 2], f64)>)> =
            starts.par_iter().enumerate().map(|(k, x)| (k, shoot(map, *x, p, q, annulus, &opts, shared))).collect();
        let mut best = f64::INFINITY;
        let mut found = 0;
        for (k, res) in results {
            let (x, resid) = match res {
                Ok(v) => v,
                Err(_) => continue,
            };
            best = best.min(resid);
            if resid >= opts.residual {
                continue;
            }
            let rec = match reconstruct(map, x, q as usize)? {
                Some(r) => r,
                None => continue,
            };
            if orbits.iter().any(|o| o.p == p && o.q == q && same_orbit(&o.orbit, &rec.points, opts.dedup)) {
                continue;
            }
            found += 1;
            orbits.push(PeriodicOrbit {
                s: map.flow.s,
                p,
                q,
                x,
                residual: resid,
                closure: rec.closure,
                curvature_residual: rec.curvature_residual,
                winding: rec.winding,
                period: rec.period,
                start_index: k,
                orbit: rec.points,
            });
        }
        entries.push(TargetEntry {
            p,
            q,
            status: if found > 0 { TargetStatus::Found { orbits: found } } else { TargetStatus::NotFound { best_residual: best } },
        });
    }
    Ok(PeriodicReport { s: map.flow.s, annulus, boundary_rotation: (rho_lo.value, rho_hi.value), targets: entries, orbits, notes })
}

fn residual_of(map: &SectionMap, x: [f64; 2], p: i64, q: u64) -> Result<([f64; 2], f64)> {
    let y = map.iterate_to(x, q as usize, 1.0)?;
    let f = [y.q[0] - x[0], y.q[1] - x[1] - 2.0 * PI * p as f64];
    Ok((f, f[0].hypot(f[1])))
}

fn fd_jacobian(map: &SectionMap, x: [f64; 2], f: [f64; 2], p: i64, q: u64, h: f64) -> Result<[[f64; 2]; 2]> {
    let mut j = [[0.0; 2]; 2];
    for k in 0..2 {
        let mut xk = x;
        xk[k] += h;
        let (fk, _) = residual_of(map, xk, p, q)?;
        for i in 0..2 {
            j[i][k] = (fk[i] - f[i]) / h;
        }
    }
    Ok(j)
}

/// Damped Gauss-Newton on `F(x) = map^q(x) - x - (0, 2 pi p)`.
///
/// Starts from the shared Jacobian `j0` when given. The Jacobian is kept while
/// steps keep reducing `|F|` and rebuilt once at the current point when one does not.
fn shoot(
    map: &SectionMap,
    x0: [f64; 2],
    p: i64,
    q: u64,
    annulus: (f64, f64),
    opts: &ShootingOpts,
    j0: Option<[[f64; 2]; 2]>,
) -> Result<([f64; 2], f64)> {
    let mut x = x0;
    let (mut f, mut nf) = residual_of(map, x, p, q)?;
    let (mut j, mut fresh) = match j0 {
        Some(j) => (j, false),
        None => (fd_jacobian(map, x, f, p, q, opts.fd_step)?, true),
    };
    let mut mu = 1e-9;
    let mut tries = 0;
    for _ in 0..opts.max_iter {
        if nf < 0.5 * opts.residual {
            break;
        }
        // Normal equations with Levenberg damping; the angle column vanishes for symmetric systems.
        let a = [
            j[0][0] * j[0][0] + j[1][0] * j[1][0],
            j[0][0] * j[0][1] + j[1][0] * j[1][1],
            j[0][1] * j[0][1] + j[1][1] * j[1][1],
        ];
        let g = [j[0][0] * f[0] + j[1][0] * f[1], j[0][1] * f[0] + j[1][1] * f[1]];
        let scale = a[0].max(a[2]).max(1e-300);
        let (d0, d2) = (a[0] + mu * scale, a[2] + mu * scale);
        let det = d0 * d2 - a[1] * a[1];
        let dx = [-(d2 * g[0] - a[1] * g[1]) / det, -(d0 * g[1] - a[1] * g[0]) / det];
        let xn = [x[0] + dx[0], x[1] + dx[1]];
        let trial = if xn[0] > annulus.0 && xn[0] < annulus.1 { residual_of(map, xn, p, q).ok() } else { None };
        match trial {
            Some((fnew, nnew)) if nnew < nf => {
                x = xn;
                f = fnew;
                nf = nnew;
                fresh = false;
                tries = 0;
                mu = (mu * 0.1).max(1e-12);
            }
            _ if !fresh => {
                j = fd_jacobian(map, x, f, p, q, opts.fd_step)?;
                fresh = true;
            }
            _ => {
                tries += 1;
                if tries > 3 {
                    break;
                }
                mu *= 100.0;
            }
        }
    }
    Ok((x, nf))
}

/// Whether two section orbits lie within `tol` of each other (Hausdorff).
fn same_orbit(a: &[[f64; 2]], b: &[[f64; 2]], tol: f64) -> bool {
    if a.len() != b.len() || a.is_empty() {
        return false;
    }
    let wrap = |d: f64| d - 2.0 * PI * (d / (2.0 * PI)).round();
    let dist = |u: [f64; 2], v: [f64; 2]| (u[0] - v[0]).hypot(wrap(u[1] - v[1]));
    // An invariant set containing b[0] must pass within tol of it.
    let (j, d0) = a.iter().enumerate().map(|(i, u)| (i, dist(*u, b[0]))).min_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
    if d0 > tol {
        return false;
    }
    let n = a.len();
    (0..n).all(|k| dist(a[(k + j) % n], b[k]) <= tol)
}

/// Integrate the closed orbit once, recording the section points along with
/// closure in the surface, the curvature residual and the winding.
fn reconstruct(map: &SectionMap, x: [f64; 2], q: usize) -> Result<Option<Reconstruction>> {
    let flow = &map.flow;
    let mut kres: f64 = 0.0;
    let mut k = 0usize;
    let mut failed = None;
    let run = map.run(x, q, 1.0, true, |st| {
        k += 1;
        if k % 7 == 0 {
            match geodesic_curvature(flow, st.chart, st.q, st.v) {
                Ok(kap) => kres = kres.max((kap - flow.b(st.chart, st.q) / flow.s).abs()),
                Err(e) => {
                    failed = Some(e);
                    return false;
                }
            }
        }
        true
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    let end = match (run.exit, run.points.last()) {
        (None, Some(p)) if run.points.len() == q => *p,
        _ => return Ok(None),
    };
    let closure = flow.surface.distance(ChartPoint { chart: ChartId::Main, q: x }, ChartPoint { chart: ChartId::Main, q: end.q });
    let winding = match flow.surface {
        Surface::Revolution(_) => ((end.q[1] - x[1]) / (2.0 * PI)).round() as i64,
        Surface::Torus(t) => ((end.q[1] - x[1]) / t.ly).round() as i64,
    };
    let points = std::iter::once(x).chain(run.points[..q - 1].iter().map(|p| p.q)).collect();
    Ok(Some(Reconstruction { points, period: end.t, closure, curvature_residual: kres, winding }))
}

struct Reconstruction {
    points: Vec<[f64; 2]>,
    period: f64,
    closure: f64,
    curvature_residual: f64,
    winding: i64,
}
