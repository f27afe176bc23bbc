//! Full magnetic geodesic flow `nabla_{g'} g' = b g'^perp` on the speed-`s` bundle.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{lift, ChartId, ChartPoint, FieldSpec, Metric, Surface};
use crate::ode::{dp45_step, refine_event, Controller, Tolerance};

/// Point of the speed-`s` bundle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseState {
    pub t: f64,
    pub chart: ChartId,
    pub q: [f64; 2],
    pub v: [f64; 2],
    /// Continuous lift of the revolution angle (tracks the angle inside caps).
    pub phi: f64,
}

impl PhaseState {
    pub fn point(&self) -> ChartPoint {
        ChartPoint { chart: self.chart, q: self.q }
    }

    pub fn y(&self) -> [f64; 4] {
        [self.q[0], self.q[1], self.v[0], self.v[1]]
    }
}

/// Orthonormal frame `e1 = d_1 / sqrt(E)`, `e2 = e1^perp`.
pub fn frame(m: &Metric) -> ([f64; 2], [f64; 2]) {
    let e1 = [1.0 / m.e.sqrt(), 0.0];
    (e1, m.perp(e1))
}

/// Velocity angle relative to [`frame`].
pub fn velocity_angle(m: &Metric, v: [f64; 2]) -> f64 {
    let (e1, e2) = frame(m);
    m.dot(v, e2).atan2(m.dot(v, e1))
}

/// Velocity of speed `s` at angle `theta` relative to [`frame`].
pub fn velocity_at_angle(m: &Metric, theta: f64, s: f64) -> [f64; 2] {
    let (e1, e2) = frame(m);
    let (sn, c) = theta.sin_cos();
    [s * (c * e1[0] + sn * e2[0]), s * (c * e1[1] + sn * e2[1])]
}

/// Magnetic flow of a fixed speed on a surface.
#[derive(Clone, Debug)]
pub struct Flow<'a> {
    pub surface: &'a Surface,
    pub field: &'a FieldSpec,
    pub s: f64,
    pub tol: Tolerance,
    /// Largest allowed step.
    pub h_max: f64,
    /// Multiplier on `b` (use -1 for the reversed field).
    pub b_scale: f64,
}

impl<'a> Flow<'a> {
    pub fn new(surface: &'a Surface, field: &'a FieldSpec, s: f64, tol: f64) -> Result<Flow<'a>> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Precondition(format!("speed must be positive, got {s}")));
        }
        if !(tol > 0.0) {
            return Err(Error::Precondition("tolerance must be positive".into()));
        }
        Ok(Flow { surface, field, s, tol: Tolerance::uniform(tol), h_max: 0.5, b_scale: 1.0 })
    }

    #[inline]
    pub fn b(&self, chart: ChartId, q: [f64; 2]) -> f64 {
        self.b_scale * self.field.value(self.surface, chart, q)
    }

    #[inline]
    pub fn rhs(&self, chart: ChartId, y: &[f64; 4]) -> Result<[f64; 4]> {
        let q = [y[0], y[1]];
        let v = [y[2], y[3]];
        if let (Surface::Revolution(rev), ChartId::Main) = (self.surface, chart) {
            // Hot path: one sin/cos evaluation serves profile, height and field.
            if let Some((a, da, z)) = rev.kernel(q[0]) {
                if q[0] < rev.eps || q[0] > rev.length - rev.eps {
                    return Err(Error::Domain(q[0], q[1], "revolution main (r,phi)"));
                }
                let b = self.b_scale
                    * match self.field.constant_value() {
                        Some(c) => c,
                        None => self.field.eval(&[q[0], q[1], z, 0.0, 0.0]),
                    };
                return Ok([v[0], v[1], a * da * v[1] * v[1] - b * a * v[1], -2.0 * (da / a) * v[0] * v[1] + b * v[0] / a]);
            }
        }
        let (acc, _) = self.surface.accel(chart, q, v, self.b(chart, q))?;
        Ok([v[0], v[1], acc[0], acc[1]])
    }

    /// Initial state at a point with the given velocity angle.
    pub fn state_at(&self, p: ChartPoint, angle: f64) -> Result<PhaseState> {
        let chart = self.surface.preferred_chart(p.chart, p.q);
        let (q, _) = self.surface.transform(p.chart, chart, p.q, [0.0; 2], phi_of(self.surface, p));
        let m = self.surface.metric(chart, q)?;
        let v = velocity_at_angle(&m, angle, self.s);
        Ok(PhaseState { t: 0.0, chart, q, v, phi: phi_of(self.surface, p) })
    }

    /// Rescale a state's velocity to speed exactly `s`.
    pub fn project(&self, st: &mut PhaseState) -> Result<f64> {
        let m = self.surface.metric(st.chart, st.q)?;
        let lam = self.s / m.norm(st.v);
        st.v = [st.v[0] * lam, st.v[1] * lam];
        Ok(lam)
    }
}

fn phi_of(surface: &Surface, p: ChartPoint) -> f64 {
    match (surface, p.chart) {
        (Surface::Revolution(_), ChartId::Main) => p.q[1],
        (Surface::Revolution(_), _) => surface.natural(p.chart, p.q)[1],
        _ => 0.0,
    }
}

/// Integrator statistics.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Stats {
    pub steps: usize,
    pub rejected: usize,
    pub chart_switches: usize,
    pub max_local_error: f64,
    /// Largest relative speed error before renormalization.
    pub max_speed_error: f64,
    /// Sum of |lambda - 1| over all renormalizations.
    pub renormalization: f64,
}

/// Data of one accepted step, expressed in the chart it was taken in.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub chart: ChartId,
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; 4],
    pub f0: [f64; 4],
    pub y1: [f64; 4],
    pub f1: [f64; 4],
}

/// Stateful stepper with projection and transparent chart switching.
pub struct Integrator<'f, 'a> {
    pub flow: &'f Flow<'a>,
    pub state: PhaseState,
    f: [f64; 4],
    h: f64,
    dir: f64,
    ctl: Controller,
    pub stats: Stats,
}

impl<'f, 'a> Integrator<'f, 'a> {
    /// `dir` is +1 for forward and -1 for backward time.
    pub fn new(flow: &'f Flow<'a>, mut state: PhaseState, dir: f64) -> Result<Integrator<'f, 'a>> {
        flow.project(&mut state)?;
        let f = flow.rhs(state.chart, &state.y())?;
        let b0 = flow.b(state.chart, state.q).abs();
        let h0 = if b0 > 0.0 { (0.05 / b0).min(flow.h_max) } else { 0.05f64.min(flow.h_max) };
        Ok(Integrator {
            flow,
            state,
            f,
            h: dir.signum() * h0,
            dir: dir.signum(),
            ctl: Controller { h_min: 1e-13, h_max: flow.h_max },
            stats: Stats::default(),
        })
    }

    pub fn direction(&self) -> f64 {
        self.dir
    }

    /// Replace the state (e.g. after an event) keeping the step size.
    pub fn reset(&mut self, mut state: PhaseState) -> Result<()> {
        self.flow.project(&mut state)?;
        let chart = self.flow.surface.preferred_chart(state.chart, state.q);
        if chart != state.chart {
            let (q, v) = self.flow.surface.transform(state.chart, chart, state.q, state.v, state.phi);
            state.chart = chart;
            state.q = q;
            state.v = v;
        }
        self.f = self.flow.rhs(state.chart, &state.y())?;
        self.state = state;
        Ok(())
    }

    /// Take one accepted step, not passing `t_stop` (in the direction of integration).
    pub fn advance(&mut self, t_stop: Option<f64>) -> Result<StepInfo> {
        let flow = self.flow;
        let chart = self.state.chart;
        let y0 = self.state.y();
        let f0 = self.f;
        let t0 = self.state.t;
        let mut rhs = |y: &[f64; 4]| flow.rhs(chart, y);
        loop {
            let mut h = self.h;
            if let Some(ts) = t_stop {
                if (t0 + h - ts) * self.dir > 0.0 {
                    h = ts - t0;
                }
            }
            if h * self.dir <= 0.0 {
                return Err(Error::Precondition("advance called at the stop time".into()));
            }
            match dp45_step(&mut rhs, &y0, &f0, h, flow.tol) {
                Ok(st) if st.err <= 1.0 => {
                    self.h = if t_stop.is_some() && h != self.h { self.h } else { self.ctl.next(h, st.err) };
                    self.stats.steps += 1;
                    self.stats.max_local_error = self.stats.max_local_error.max(st.err * flow.tol.atol);
                    self.finish_step(chart, t0 + h, st.y, st.f1)?;
                    return Ok(StepInfo { chart, t0, h, y0, f0, y1: st.y, f1: st.f1 });
                }
                Ok(st) => {
                    self.stats.rejected += 1;
                    self.h = self.ctl.next(h, st.err).abs().min(0.9 * h.abs()) * self.dir;
                }
                Err(e) if e.is_domain() => {
                    self.stats.rejected += 1;
                    self.h = 0.5 * h;
                }
                Err(e) => return Err(e),
            }
            if self.h.abs() < self.ctl.h_min {
                return Err(Error::StepUnderflow {
                    t: t0,
                    detail: format!("near ({:.6e}, {:.6e}) in chart {}", y0[0], y0[1], chart.name()),
                });
            }
        }
    }

    fn finish_step(&mut self, chart: ChartId, t: f64, y: [f64; 4], f1: [f64; 4]) -> Result<()> {
        let flow = self.flow;
        let surface = flow.surface;
        let q = [y[0], y[1]];
        let m = surface.metric(chart, q)?;
        let speed = m.norm([y[2], y[3]]);
        let lam = flow.s / speed;
        self.stats.max_speed_error = self.stats.max_speed_error.max((speed - flow.s).abs() / flow.s);
        self.stats.renormalization += (lam - 1.0).abs();
        let mut st = PhaseState { t, chart, q, v: [y[2] * lam, y[3] * lam], phi: self.state.phi };
        // The seventh stage stands in for the derivative at the projected point;
        // the speeds differ by far less than the local tolerance.
        self.f = [st.v[0], st.v[1], f1[2], f1[3]];
        if let Surface::Revolution(_) = surface {
            st.phi = match chart {
                ChartId::Main => st.q[1],
                _ => lift(surface.natural(chart, st.q)[1], st.phi),
            };
        }
        let to = surface.preferred_chart(chart, st.q);
        if to != chart {
            let (q2, v2) = surface.transform(chart, to, st.q, st.v, st.phi);
            st.chart = to;
            st.q = q2;
            st.v = v2;
            self.f = flow.rhs(to, &st.y())?;
            self.stats.chart_switches += 1;
        }
        self.state = st;
        Ok(())
    }

    /// Locate a zero of `g` inside an accepted step where `g` changes sign.
    pub fn refine<G>(&self, info: &StepInfo, g: G) -> Result<(f64, [f64; 4])>
    where
        G: Fn(&[f64; 4]) -> f64,
    {
        let flow = self.flow;
        let mut rhs = |y: &[f64; 4]| flow.rhs(info.chart, y);
        let (th, y) = refine_event(&mut rhs, &info.y0, &info.f0, &info.y1, &info.f1, info.h, flow.tol, g)?;
        Ok((info.t0 + th * info.h, y))
    }
}

/// One stored trajectory sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Sample {
    pub t: f64,
    pub chart: ChartId,
    pub q: [f64; 2],
    pub v: [f64; 2],
    pub b: f64,
    pub k: f64,
    pub speed_err: f64,
}

/// Sampled solution of the magnetic geodesic equation.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub s: f64,
    pub samples: Vec<Sample>,
    pub stats: Stats,
}

fn sample(flow: &Flow, st: &PhaseState) -> Result<Sample> {
    let m = flow.surface.metric(st.chart, st.q)?;
    Ok(Sample {
        t: st.t,
        chart: st.chart,
        q: st.q,
        v: st.v,
        b: flow.b(st.chart, st.q),
        k: flow.surface.gauss_curvature(st.chart, st.q)?,
        speed_err: (m.norm(st.v) - flow.s).abs() / flow.s,
    })
}

/// Integrate over `[0, t_end]` (negative `t_end` integrates backward),
/// recording every `every`-th accepted step.
pub fn integrate(flow: &Flow, state0: PhaseState, t_end: f64, every: usize) -> Result<Trajectory> {
    let m = flow.surface.metric(state0.chart, state0.q)?;
    let sp = m.norm(state0.v);
    if (sp - flow.s).abs() > 1e-6 * flow.s {
        return Err(Error::Precondition(format!("initial speed {sp} differs from s = {}", flow.s)));
    }
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let mut it = Integrator::new(flow, PhaseState { t: 0.0, ..state0 }, dir)?;
    let mut samples = vec![sample(flow, &it.state)?];
    let every = every.max(1);
    let mut n = 0;
    while (t_end - it.state.t) * dir > 0.0 {
        it.advance(Some(t_end))?;
        n += 1;
        if n % every == 0 || (t_end - it.state.t) * dir <= 0.0 {
            samples.push(sample(flow, &it.state)?);
        }
    }
    Ok(Trajectory { s: flow.s, samples, stats: it.stats })
}

/// Geodesic curvature of a sample computed from the chart right-hand side.
///
/// The acceleration comes from the integrated right-hand side and the
/// Christoffel symbols from the independent metric-jet path, so the result
/// checks both the fast geometry kernels and the speed constraint.
pub fn geodesic_curvature(flow: &Flow, chart: ChartId, q: [f64; 2], v: [f64; 2]) -> Result<f64> {
    let y = [q[0], q[1], v[0], v[1]];
    let d = flow.rhs(chart, &y)?;
    let mj = flow.surface.metric_jet(chart, q)?;
    let gam = mj.christoffel();
    let m = mj.metric();
    let mut cov = [d[2], d[3]];
    for (k, c) in cov.iter_mut().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                *c += gam[k][i][j] * v[i] * v[j];
            }
        }
    }
    let sp = m.norm(v);
    Ok(m.dot(cov, m.perp(v)) / (sp * sp * sp))
}

/// Result of [`curvature_residual`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvatureResidual {
    pub max: f64,
    pub at_t: f64,
    pub at: ChartPoint,
}

/// Maximum over samples of `|kappa - b/s|`.
pub fn curvature_residual(flow: &Flow, traj: &Trajectory) -> Result<CurvatureResidual> {
    if traj.samples.len() < 3 {
        return Err(Error::Precondition("curvature residual needs at least 3 samples".into()));
    }
    let mut out = CurvatureResidual { max: 0.0, at_t: 0.0, at: traj.samples[0].chart_point() };
    for w in traj.samples.windows(2) {
        if w[0].q == w[1].q && w[0].chart == w[1].chart {
            return Err(Error::Precondition(format!("zero displacement between samples at t = {}; resample", w[1].t)));
        }
    }
    for smp in &traj.samples {
        let kappa = geodesic_curvature(flow, smp.chart, smp.q, smp.v)?;
        let r = (kappa - flow.b(smp.chart, smp.q) / flow.s).abs();
        if r > out.max {
            out = CurvatureResidual { max: r, at_t: smp.t, at: smp.chart_point() };
        }
    }
    Ok(out)
}

impl Sample {
    pub fn chart_point(&self) -> ChartPoint {
        ChartPoint { chart: self.chart, q: self.q }
    }
}

/// Observable for [`adiabatic_drift`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Observable {
    Field,
    Curvature,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Drift {
    pub max_drift: f64,
    pub drift_per_time: f64,
}

/// `max_t |obs(t) - obs(0)|` and its ratio to the elapsed time.
pub fn adiabatic_drift(traj: &Trajectory, obs: Observable) -> Drift {
    let val = |s: &Sample| match obs {
        Observable::Field => s.b,
        Observable::Curvature => s.k,
    };
    let Some(first) = traj.samples.first() else {
        return Drift { max_drift: 0.0, drift_per_time: 0.0 };
    };
    let o0 = val(first);
    let max = traj.samples.iter().map(|s| (val(s) - o0).abs()).fold(0.0, f64::max);
    let elapsed = (traj.samples.last().map(|s| s.t).unwrap_or(0.0) - first.t).abs();
    Drift { max_drift: max, drift_per_time: if elapsed > 0.0 { max / elapsed } else { 0.0 } }
}

/// Write a trajectory as CSV.
pub fn write_trajectory_csv<W: Write>(flow: &Flow, traj: &Trajectory, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(["t", "chart", "q1", "q2", "v1", "v2", "b", "K", "speed_err", "kappa_residual"]).map_err(io)?;
    for s in &traj.samples {
        let kap = geodesic_curvature(flow, s.chart, s.q, s.v)?;
        let res = (kap - s.b / flow.s).abs();
        wr.write_record([
            fmt(s.t),
            s.chart.name().to_string(),
            fmt(s.q[0]),
            fmt(s.q[1]),
            fmt(s.v[0]),
            fmt(s.v[1]),
            fmt(s.b),
            fmt(s.k),
            fmt(s.speed_err),
            fmt(res),
        ])
        .map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Shortest round-trip float formatting for CSV payloads.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FieldKind;
    use std::f64::consts::PI;

    #[test]
    fn flat_torus_circle_returns_after_2pi() {
        let t = Surface::flat_torus();
        let f = FieldSpec::constant(1.0);
        let flow = Flow::new(&t, &f, 0.1, 1e-10).unwrap();
        let st = flow.state_at(ChartPoint::main(0.0, 0.0), 0.0).unwrap();
        let tr = integrate(&flow, st, 2.0 * PI, 1).unwrap();
        let last = tr.samples.last().unwrap();
        assert!(last.q[0].hypot(last.q[1]) < 1e-8);
        // Centre is at s/b along the left normal.
        let mid = tr.samples.iter().map(|s| (s.q[0].hypot(s.q[1] - 0.1) - 0.1).abs()).fold(0.0, f64::max);
        assert!(mid < 1e-8);
    }

    #[test]
    fn sphere_latitude_orbit() {
        let s = Surface::unit_sphere();
        let f = FieldSpec::constant(1.0);
        let flow = Flow::new(&s, &f, 0.1, 1e-10).unwrap();
        let r0 = (0.1f64).atan();
        let st = flow.state_at(ChartPoint::main(r0, 0.0), PI / 2.0).unwrap();
        let period = 2.0 * PI / 1.01f64.sqrt();
        let tr = integrate(&flow, st, period, 1).unwrap();
        let last = tr.samples.last().unwrap();
        assert!((last.q[0] - r0).abs() < 1e-8, "{:?}", last.q);
        assert!((last.q[1] - 2.0 * PI).abs() < 1e-8, "{:?}", last.q);
        let spread = tr.samples.iter().map(|s| (s.q[0] - r0).abs()).fold(0.0, f64::max);
        assert!(spread < 1e-9);
    }

    #[test]
    fn great_circle_through_both_poles() {
        let s = Surface::unit_sphere();
        let f = FieldSpec::constant(0.0);
        let flow = Flow::new(&s, &f, 0.1, 1e-10).unwrap();
        let st = flow.state_at(ChartPoint::main(PI / 2.0, 0.3), 0.0).unwrap();
        let tr = integrate(&flow, st, 2.0 * PI / 0.1, 1).unwrap();
        let last = tr.samples.last().unwrap();
        assert!(tr.stats.chart_switches >= 4);
        let d = s.distance(last.chart_point(), ChartPoint::main(PI / 2.0, 0.3));
        assert!(d < 1e-7, "{d} {:?}", last);
        let res = curvature_residual(&flow, &tr).unwrap();
        assert!(res.max < 1e-6);
    }

    #[test]
    fn curvature_prescribed_on_sphere_field() {
        let s = Surface::unit_sphere();
        let f = FieldSpec::new(FieldKind::AffineHeight { c0: 2.0, c1: 1.0 }, &s).unwrap();
        let flow = Flow::new(&s, &f, 0.05, 1e-10).unwrap();
        let st = flow.state_at(ChartPoint::main(1.2, 0.0), 0.4).unwrap();
        let tr = integrate(&flow, st, 50.0, 1).unwrap();
        assert!(curvature_residual(&flow, &tr).unwrap().max < 1e-5);
        assert!(tr.stats.max_speed_error < 10.0 * 1e-10);
    }

    #[test]
    fn backward_integration_retraces() {
        let s = Surface::unit_sphere();
        let f = FieldSpec::new(FieldKind::AffineHeight { c0: 2.0, c1: 1.0 }, &s).unwrap();
        let flow = Flow::new(&s, &f, 0.05, 1e-10).unwrap();
        let st = flow.state_at(ChartPoint::main(1.0, 0.5), 1.0).unwrap();
        let fw = integrate(&flow, st, 10.0, 1).unwrap();
        let mut end = *fw.samples.last().unwrap();
        end.t = 0.0;
        let e = PhaseState { t: 0.0, chart: end.chart, q: end.q, v: end.v, phi: end.q[1] };
        let bw = integrate(&flow, e, -10.0, 1).unwrap();
        let back = bw.samples.last().unwrap();
        assert!((back.q[0] - 1.0).abs() < 1e-6 && (back.q[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn constant_field_has_zero_drift() {
        let t = Surface::flat_torus();
        let f = FieldSpec::constant(1.0);
        let flow = Flow::new(&t, &f, 0.1, 1e-10).unwrap();
        let st = flow.state_at(ChartPoint::main(0.0, 0.0), 0.0).unwrap();
        let tr = integrate(&flow, st, 20.0, 1).unwrap();
        assert_eq!(adiabatic_drift(&tr, Observable::Field).max_drift, 0.0);
        assert_eq!(adiabatic_drift(&tr, Observable::Curvature).max_drift, 0.0);
    }

    #[test]
    fn csv_header() {
        let t = Surface::flat_torus();
        let f = FieldSpec::constant(1.0);
        let flow = Flow::new(&t, &f, 0.1, 1e-10).unwrap();
        let st = flow.state_at(ChartPoint::main(0.0, 0.0), 0.0).unwrap();
        let tr = integrate(&flow, st, 1.0, 1).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&flow, &tr, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,chart,q1,q2,v1,v2,b,K,speed_err,kappa_residual\n"));
    }
}
