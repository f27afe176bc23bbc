//! Return maps of the full flow on the velocity-angle section.
//!
//! A section point is a main-chart base point `x`; the velocity there is
//! `s` times the frame vector at angle `t0`. The map integrates to the next
//! crossing of the angle `t0` swept in the direction of `sign(b)`.

pub mod periodic;
pub mod trap;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ChartId, ChartPoint, FieldSpec, Surface};
use crate::magflow::{fmt, Flow, Integrator, PhaseState, StepInfo};

pub use periodic::{ShootingOpts, find_periodic_orbits, PeriodicOrbit, PeriodicReport, PeriodicTargets, TargetEntry};
pub use trap::{saddle_escape_experiment, trapping_experiment, Band, BandCoord, ExitCounts, SaddleReport, SaddleSpec, TrapReport, TrapSpec};

/// Main-chart rectangle; `None` leaves a coordinate unrestricted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Region {
    pub q1: Option<(f64, f64)>,
    pub q2: Option<(f64, f64)>,
}

impl Region {
    pub fn band(lo: f64, hi: f64) -> Region {
        Region { q1: Some((lo, hi)), q2: None }
    }

    pub fn whole() -> Region {
        Region { q1: None, q2: None }
    }

    #[inline]
    pub fn contains(&self, q: [f64; 2]) -> bool {
        self.q1.map_or(true, |(a, b)| q[0] >= a && q[0] <= b) && self.q2.map_or(true, |(a, b)| q[1] >= a && q[1] <= b)
    }
}

/// Section point with the time of the crossing that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SectionPoint {
    pub q: [f64; 2],
    pub t: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SectionOpts {
    /// Local error tolerance of the flow.
    pub tol: f64,
    /// Section angle relative to the frame.
    pub angle: f64,
    /// Accepted steps allowed per return.
    pub max_steps: usize,
    /// Largest speed accepted by [`SectionMap::new`].
    pub s_max: f64,
}

impl Default for SectionOpts {
    fn default() -> Self {
        SectionOpts { tol: 1e-10, angle: 0.0, max_steps: 20_000, s_max: 2.0 }
    }
}

/// Crossings were found where an event refinement left this much on the crossing function.
pub const CROSSING_TOL: f64 = 1e-10;

/// First-return map of the magnetic flow to `{angle = t0}` over a region.
pub struct SectionMap<'a> {
    pub flow: Flow<'a>,
    pub region: Region,
    pub opts: SectionOpts,
    /// `sign(b)` on the region: the sweep direction of the velocity angle.
    pub sweep: f64,
}

/// How an iteration ended.
#[derive(Clone, Debug)]
pub struct Run {
    pub points: Vec<SectionPoint>,
    /// Last state when the orbit left the region.
    pub exit: Option<PhaseState>,
    pub last: PhaseState,
}

impl<'a> SectionMap<'a> {
    pub fn new(surface: &'a Surface, field: &'a FieldSpec, s: f64, region: Region, opts: SectionOpts) -> Result<SectionMap<'a>> {
        if !(s > 0.0) {
            return Err(Error::Precondition("the section map needs s > 0".into()));
        }
        if s > opts.s_max {
            return Err(Error::Precondition(format!("s = {s} exceeds s_max = {}", opts.s_max)));
        }
        if let Surface::Revolution(rv) = surface {
            match region.q1 {
                Some((a, b)) if a >= 3.0 * rv.eps && b <= rv.length - 3.0 * rv.eps => {}
                _ => return Err(Error::Precondition("section region on a surface of revolution must be a band inside the main chart".into())),
            }
        }
        let flow = Flow::new(surface, field, s, opts.tol)?;
        let sweep = check_field_sign(surface, field, &region)?;
        Ok(SectionMap { flow, region, opts, sweep })
    }

    pub fn surface(&self) -> &'a Surface {
        self.flow.surface
    }

    /// Phase state on the section over `x`.
    pub fn state(&self, x: [f64; 2]) -> Result<PhaseState> {
        let st = self.flow.state_at(ChartPoint::main(x[0], x[1]), self.opts.angle)?;
        if st.chart != ChartId::Main {
            return Err(Error::Domain(x[0], x[1], "section point outside the main chart"));
        }
        Ok(st)
    }

    /// Crossing function `s sin(theta - t0)` and `cos(theta - t0)`.
    #[inline]
    fn crossing(&self, y: &[f64; 4]) -> (f64, f64) {
        let q = [y[0], y[1]];
        let v = [y[2], y[3]];
        let m = match self.flow.surface.metric(ChartId::Main, q) {
            Ok(m) => m,
            Err(_) => return (f64::NAN, f64::NAN),
        };
        let se = m.e.sqrt();
        let e1 = [1.0 / se, 0.0];
        let e2 = m.perp(e1);
        let (c1, c2) = (m.dot(v, e1), m.dot(v, e2));
        let (st, ct) = self.opts.angle.sin_cos();
        (ct * c2 - st * c1, ct * c1 + st * c2)
    }

    /// Integrate from `x` through `n` returns in direction `dir`.
    ///
    /// With `record` every crossing is refined; otherwise only the last one.
    /// `on_step` sees every accepted state and may stop the run by returning `false`.
    pub fn run<S: FnMut(&PhaseState) -> bool>(&self, x: [f64; 2], n: usize, dir: f64, record: bool, mut on_step: S) -> Result<Run> {
        let st = self.state(x)?;
        let mut it = Integrator::new(&self.flow, st, dir)?;
        let sigma = dir.signum() * self.sweep;
        let mut points = Vec::with_capacity(if record { n } else { 1 });
        let mut g_prev = 0.0;
        let mut count = 0;
        let mut steps = 0;
        while count < n {
            let info: StepInfo = it.advance(None)?;
            steps += 1;
            if steps > self.opts.max_steps * (count + 1) {
                return Err(Error::Budget(format!("no section crossing within {} steps", self.opts.max_steps)));
            }
            let stt = it.state;
            if !on_step(&stt) {
                return Ok(Run { points, exit: None, last: stt });
            }
            if info.chart != ChartId::Main || stt.chart != ChartId::Main || !self.region.contains(stt.q) {
                return Ok(Run { points, exit: Some(stt), last: stt });
            }
            let (g, c) = self.crossing(&info.y1);
            if sigma * g_prev < 0.0 && sigma * g >= 0.0 && c > 0.0 {
                count += 1;
                if record || count == n {
                    let (t, y) = it.refine(&info, |y| self.crossing(y).0)?;
                    let gr = self.crossing(&y).0;
                    if !(gr.abs() <= CROSSING_TOL * self.flow.s.max(1.0)) {
                        return Err(Error::Inconsistent(format!("section crossing refined to |g| = {gr:.3e}")));
                    }
                    points.push(SectionPoint { q: [y[0], y[1]], t });
                }
            }
            g_prev = g;
        }
        Ok(Run { points, exit: None, last: it.state })
    }

    fn exit_error(e: &PhaseState) -> Error {
        Error::Domain(e.q[0], e.q[1], "section region exit")
    }

    /// Forward return map.
    pub fn apply(&self, x: [f64; 2]) -> Result<SectionPoint> {
        self.iterate_to(x, 1, 1.0)
    }

    /// Backward return map.
    pub fn inverse(&self, x: [f64; 2]) -> Result<SectionPoint> {
        self.iterate_to(x, 1, -1.0)
    }

    /// `n`-th return along one continuous integration.
    pub fn iterate_to(&self, x: [f64; 2], n: usize, dir: f64) -> Result<SectionPoint> {
        let r = self.run(x, n, dir, false, |_| true)?;
        match (r.exit, r.points.last()) {
            (Some(e), _) => Err(Self::exit_error(&e)),
            (None, Some(p)) => Ok(*p),
            (None, None) => Err(Error::Inconsistent("no crossing recorded".into())),
        }
    }

    /// All `n` returns (refined) along one continuous integration.
    pub fn orbit(&self, x: [f64; 2], n: usize, dir: f64) -> Result<Run> {
        self.run(x, n, dir, true, |_| true)
    }

    /// Area density of the preserved form on the section, `|b sqrt(g) - s D|`
    /// with `D dq1^dq2 = d(g(e1, .))`.
    pub fn density(&self, q: [f64; 2]) -> Result<f64> {
        let mj = self.flow.surface.metric_jet(ChartId::Main, q)?;
        let b = self.flow.b(ChartId::Main, q);
        let se = mj.e.v.sqrt();
        // d1 (F / sqrt E) - d2 sqrt E
        let d = (mj.f.g[0] * se - mj.f.v * mj.e.g[0] / (2.0 * se)) / mj.e.v - mj.e.g[1] / (2.0 * se);
        Ok((b * mj.sqrt_det - self.flow.s * d).abs())
    }

    /// Forward-difference Jacobian of the `n`-fold map.
    pub fn jacobian_n(&self, x: [f64; 2], n: usize, h: f64) -> Result<([[f64; 2]; 2], SectionPoint)> {
        let p0 = self.iterate_to(x, n, 1.0)?;
        let mut j = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut xk = x;
            xk[k] += h;
            let pk = self.iterate_to(xk, n, 1.0)?;
            for i in 0..2 {
                j[i][k] = (pk.q[i] - p0.q[i]) / h;
            }
        }
        Ok((j, p0))
    }

    /// Determinant of the return-map Jacobian weighted by [`SectionMap::density`]; 1 for an exact map.
    pub fn weighted_det(&self, x: [f64; 2], h: f64) -> Result<f64> {
        // Central differences keep the error at O(h^2).
        let mut j = [[0.0; 2]; 2];
        let mut image = [0.0; 2];
        for k in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let (pp, pm) = (self.apply(xp)?, self.apply(xm)?);
            for i in 0..2 {
                j[i][k] = (pp.q[i] - pm.q[i]) / (2.0 * h);
            }
        }
        let p = self.apply(x)?;
        image.copy_from_slice(&p.q);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        Ok(det * self.density(image)? / self.density(x)?)
    }
}

/// Sign of `b` on the region, checked on a sample grid.
fn check_field_sign(surface: &Surface, field: &FieldSpec, region: &Region) -> Result<f64> {
    let ((a1, b1), (a2, b2)) = crate::reduced::main_box(surface);
    let (a1, b1) = region.q1.unwrap_or((a1, b1));
    let (a2, b2) = region.q2.unwrap_or((a2, b2));
    let n = 33;
    let mut sign = 0.0;
    for i in 0..n {
        for j in 0..n {
            let q = [a1 + (b1 - a1) * i as f64 / (n - 1) as f64, a2 + (b2 - a2) * j as f64 / (n - 1) as f64];
            let b = field.value(surface, ChartId::Main, q);
            if b == 0.0 || !b.is_finite() || (sign != 0.0 && b.signum() != sign) {
                return Err(Error::Precondition(format!("b vanishes or changes sign in the section region near ({:.4}, {:.4})", q[0], q[1])));
            }
            sign = b.signum();
        }
    }
    Ok(sign)
}

/// Rotation-number estimate along a section orbit.
#[derive(Clone, Debug, Serialize)]
pub struct RotationNumberEstimate {
    /// Mean advance of the angular coordinate per return (radians).
    pub value: f64,
    /// Plain average `(theta_N - theta_0) / N`.
    pub plain: f64,
    pub iterations: usize,
    /// Difference between weighted averages over `N` and `N/2` returns.
    pub error: f64,
    pub escaped: bool,
    /// Mean return time.
    pub return_time: f64,
    #[serde(skip)]
    pub orbit: Vec<SectionPoint>,
}

pub const MIN_ROTATION_ITERATES: usize = 100;

/// Weighted Birkhoff average of increments.
fn weighted_mean(d: &[f64]) -> f64 {
    let n = d.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, x) in d.iter().enumerate() {
        let t = (k as f64 + 0.5) / n as f64;
        let w = (-1.0 / (t * (1.0 - t))).exp();
        num += w * x;
        den += w;
    }
    num / den
}

/// Estimate the rotation number of the orbit through `start`.
pub fn rotation_number(map: &SectionMap, start: [f64; 2], n: usize) -> Result<RotationNumberEstimate> {
    if n < MIN_ROTATION_ITERATES {
        return Err(Error::Precondition(format!("rotation number needs N >= {MIN_ROTATION_ITERATES}, got {n}")));
    }
    let run = map.orbit(start, n, 1.0)?;
    let mut theta = vec![start[1]];
    theta.extend(run.points.iter().map(|p| p.q[1]));
    let d: Vec<f64> = theta.windows(2).map(|w| w[1] - w[0]).collect();
    let escaped = run.exit.is_some();
    if d.len() < 2 {
        return Ok(RotationNumberEstimate {
            value: f64::NAN,
            plain: f64::NAN,
            iterations: d.len(),
            error: f64::INFINITY,
            escaped,
            return_time: f64::NAN,
            orbit: run.points,
        });
    }
    let value = weighted_mean(&d);
    let half = weighted_mean(&d[..d.len() / 2]);
    let t_last = run.points.last().map_or(0.0, |p| p.t);
    Ok(RotationNumberEstimate {
        value,
        plain: (theta[theta.len() - 1] - theta[0]) / d.len() as f64,
        iterations: d.len(),
        error: (value - half).abs(),
        escaped,
        return_time: t_last / d.len() as f64,
        orbit: run.points,
    })
}

/// CSV of section iterates `iter,r,theta_lift`.
pub fn write_iterates_csv<W: Write>(start: [f64; 2], points: &[SectionPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(["iter", "r", "theta_lift"]).map_err(io)?;
    wr.write_record(["0".to_string(), fmt(start[0]), fmt(start[1])]).map_err(io)?;
    for (i, p) in points.iter().enumerate() {
        wr.write_record([(i + 1).to_string(), fmt(p.q[0]), fmt(p.q[1])]).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}
