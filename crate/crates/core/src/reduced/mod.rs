//! Limiting planar Hamiltonian systems of the strong-field normal form.
//!
//! Field mode uses `H = b^-2 / 2` with the area form, curvature mode uses
//! `H = K` (constant `b` only). Hamiltonian vector fields follow
//! `omega(X_H, .) = -dH`, i.e. `X_H = (-d2 H, d1 H) / sqrt(g)` in a
//! positively oriented chart.
//!
//! The reduced flow lives on the main chart of either surface family. On a
//! surface of revolution this excludes the pole caps, so cylinders that
//! shrink onto a pole are diagnosed through the critical-point oracle.

pub mod boundary;
pub mod critical;
pub mod cylinder;

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::geometry::{ChartId, FieldSpec, Surface};
use crate::jet::{Jet2, Jet3};
use crate::ode::{dp45_step, refine_event, Controller, Tolerance};

pub use boundary::{dichotomy_report, locate_nonresonant_boundary, BoundaryReport, Branch, DichotomyBranch, DichotomyReport, Target};
pub use critical::{critical_points, CriticalKind, CriticalPoint, CriticalSet};
pub use cylinder::{
    classify_resonance, classify_samples, continue_cylinder, period_area_profile, Direction, Endpoint, OrbitCylinder,
    ProfileRow, ResonanceVerdict, Verdict, PeriodAreaProfile,
};

/// Which reduced Hamiltonian is in use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Field,
    Curvature,
    /// User-supplied test Hamiltonian.
    Synthetic,
}

#[derive(Clone, Debug)]
enum Source {
    Field,
    RevolutionCurvature,
    Expr(Expr),
    Zero,
}

/// Numerical controls of the reduced flow.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReducedOpts {
    /// Local error tolerance for tracing level circles.
    pub tol: f64,
    /// `|dH|_g` below this counts as critical.
    pub grad_floor: f64,
    pub max_steps: usize,
}

impl Default for ReducedOpts {
    fn default() -> Self {
        ReducedOpts { tol: 1e-13, grad_floor: 1e-9, max_steps: 400_000 }
    }
}

/// Planar Hamiltonian system on a surface with its area form.
#[derive(Clone, Debug)]
pub struct ReducedSystem<'a> {
    pub surface: &'a Surface,
    pub field: Option<&'a FieldSpec>,
    pub mode: Mode,
    source: Source,
    /// Multiplier on `H`.
    pub scale: f64,
    pub opts: ReducedOpts,
}

/// Build the reduced system; `mode = None` picks field mode for non-constant `b`.
pub fn make_reduced<'a>(surface: &'a Surface, field: &'a FieldSpec, mode: Option<Mode>) -> Result<ReducedSystem<'a>> {
    let constant = field.constant_value();
    let mode = mode.unwrap_or(if constant.is_some() { Mode::Curvature } else { Mode::Field });
    let source = match mode {
        Mode::Field => {
            if constant == Some(0.0) || identically_zero(surface, field) {
                return Err(Error::Config("b vanishes identically; the reduced system is undefined".into()));
            }
            Source::Field
        }
        Mode::Curvature => {
            match constant {
                None => return Err(Error::Mode("curvature mode requires a constant field".into())),
                Some(c) if c == 0.0 => return Err(Error::Config("curvature mode requires b nonzero".into())),
                _ => {}
            }
            match surface {
                Surface::Revolution(_) => Source::RevolutionCurvature,
                Surface::Torus(t) if t.lambda.is_none() => Source::Zero,
                Surface::Torus(_) => {
                    return Err(Error::Mode(
                        "curvature mode on a conformal torus needs an analytic K expression (use ReducedSystem::with_curvature)".into(),
                    ))
                }
            }
        }
        Mode::Synthetic => return Err(Error::Mode("synthetic mode needs an expression (use ReducedSystem::synthetic)".into())),
    };
    Ok(ReducedSystem { surface, field: Some(field), mode, source, scale: 1.0, opts: ReducedOpts::default() })
}

fn identically_zero(surface: &Surface, field: &FieldSpec) -> bool {
    let (x, y) = main_box(surface);
    (0..17).all(|i| {
        (0..17).all(|j| {
            let q = [x.0 + (x.1 - x.0) * (i as f64 + 0.37) / 17.0, y.0 + (y.1 - y.0) * (j as f64 + 0.61) / 17.0];
            field.value(surface, ChartId::Main, q) == 0.0
        })
    })
}

/// Coordinate box of the main chart.
pub(crate) fn main_box(surface: &Surface) -> ((f64, f64), (f64, f64)) {
    match surface {
        Surface::Revolution(s) => ((s.eps, s.length - s.eps), (0.0, 2.0 * PI)),
        Surface::Torus(t) => ((0.0, t.lx), (0.0, t.ly)),
    }
}

impl<'a> ReducedSystem<'a> {
    /// Test Hamiltonian given as an expression in the field variables.
    pub fn synthetic(surface: &'a Surface, h: Expr) -> Result<ReducedSystem<'a>> {
        check_vars(surface, &h)?;
        Ok(ReducedSystem { surface, field: None, mode: Mode::Synthetic, source: Source::Expr(h), scale: 1.0, opts: ReducedOpts::default() })
    }

    /// Curvature mode with an analytic `K` expression (needed on conformal tori).
    pub fn with_curvature(surface: &'a Surface, field: &'a FieldSpec, k: Expr) -> Result<ReducedSystem<'a>> {
        match field.constant_value() {
            Some(c) if c != 0.0 => {}
            _ => return Err(Error::Mode("curvature mode requires a constant nonzero field".into())),
        }
        check_vars(surface, &k)?;
        Ok(ReducedSystem { surface, field: Some(field), mode: Mode::Curvature, source: Source::Expr(k), scale: 1.0, opts: ReducedOpts::default() })
    }

    /// The same system with `H` multiplied by `k`.
    pub fn scaled(&self, k: f64) -> ReducedSystem<'a> {
        ReducedSystem { scale: self.scale * k, ..self.clone() }
    }

    pub fn describe(&self) -> String {
        let base = match (&self.source, self.field) {
            (Source::Field, Some(f)) => format!("H = 1/(2 b^2), {}", f.describe()),
            (Source::RevolutionCurvature, _) => "H = K (surface of revolution)".to_string(),
            (Source::Expr(e), _) => format!("H = {}", e.source()),
            (Source::Zero, _) => "H = K = 0 (flat torus)".to_string(),
            _ => "H".to_string(),
        };
        if self.scale == 1.0 {
            base
        } else {
            format!("{} x ({base})", self.scale)
        }
    }

    /// True when `H` is identically constant.
    pub fn is_constant(&self) -> bool {
        match &self.source {
            Source::Zero => true,
            Source::Field => self.field.and_then(|f| f.constant_value()).is_some(),
            Source::RevolutionCurvature => match self.surface {
                Surface::Revolution(s) => matches!(s.profile, crate::geometry::Profile::Round { .. }),
                _ => false,
            },
            Source::Expr(e) => e.vars().is_empty(),
        }
    }

    /// True when `H` depends only on `r` on a surface of revolution.
    pub fn axisymmetric(&self) -> bool {
        if !matches!(self.surface, Surface::Revolution(_)) {
            return false;
        }
        match &self.source {
            Source::Field => self.field.map(|f| f.axisymmetric()).unwrap_or(false),
            Source::RevolutionCurvature | Source::Zero => true,
            Source::Expr(e) => !e.uses(Var::Phi),
        }
    }

    /// `H` and its r-derivatives (axisymmetric systems on surfaces of revolution).
    pub fn radial(&self, r: f64) -> Result<Jet3> {
        let s = self.surface.revolution().ok_or_else(|| Error::Mode("radial jet needs a surface of revolution".into()))?;
        let j = match &self.source {
            Source::Field => {
                let b = self.field.expect("field").radial_jet(self.surface, r);
                field_h3(b)?
            }
            Source::RevolutionCurvature => {
                let kp = |r: f64| {
                    let a = s.profile.eval(Jet3::var(r));
                    let k = -a.d[2] / a.d[0];
                    let dk = -(a.d[3] * a.d[0] - a.d[2] * a.d[1]) / (a.d[0] * a.d[0]);
                    (k, dk)
                };
                let h = 1e-5 * s.length;
                let rr = r.clamp(2.0 * h, s.length - 2.0 * h);
                let (k, dk) = kp(rr);
                let d2 = (kp(rr + h).1 - kp(rr - h).1) / (2.0 * h);
                Jet3::new(k, dk, d2, 0.0)
            }
            Source::Expr(e) => {
                let zero = Jet3::constant(0.0);
                e.eval(&[Jet3::var(r), zero, s.height_jet(r), zero, zero])
            }
            Source::Zero => Jet3::constant(0.0),
        };
        Ok(Jet3::new(j.d[0] * self.scale, j.d[1] * self.scale, j.d[2] * self.scale, j.d[3] * self.scale))
    }

    /// Value, gradient and Hessian of `H` in chart coordinates.
    pub fn jet_in(&self, chart: ChartId, q: [f64; 2]) -> Result<Jet2> {
        if chart == ChartId::Main {
            self.surface.check_domain(chart, q)?;
            if self.axisymmetric() {
                return Ok(Jet2::from_univariate(self.radial(q[0])?, 0));
            }
        }
        let j = match &self.source {
            Source::Field => {
                let b = self.field.expect("field").jet(self.surface, chart, q);
                if b.v.abs() < 1e-300 {
                    return Err(Error::Domain(q[0], q[1], "reduced domain {b != 0}"));
                }
                let iv = 1.0 / b.v;
                b.compose(0.5 * iv * iv, -iv * iv * iv, 3.0 * iv * iv * iv * iv)
            }
            Source::Expr(e) => e.eval(&self.surface.natural_jet(chart, q)),
            Source::Zero => Jet2::constant(0.0),
            Source::RevolutionCurvature => {
                let s = self.surface.revolution().expect("revolution");
                let nat = self.surface.natural(chart, q);
                let r = nat[0];
                if chart == ChartId::Main {
                    Jet2::from_univariate(self.radial(r)?, 0)
                } else {
                    // Even expansion around the pole from the radial jet at a small radius.
                    let rp = if chart == ChartId::North { s.length - 2e-5 * s.length } else { 2e-5 * s.length };
                    let j = self.radial(rp)?;
                    let h2 = j.d[2] / self.scale;
                    let w = q[0] * q[0] + q[1] * q[1];
                    Jet2 { v: j.d[0] / self.scale + 0.5 * h2 * w, g: [h2 * q[0], h2 * q[1]], h: [h2, 0.0, h2] }
                }
            }
        };
        Ok(Jet2 { v: j.v * self.scale, g: [j.g[0] * self.scale, j.g[1] * self.scale], h: [j.h[0] * self.scale, j.h[1] * self.scale, j.h[2] * self.scale] })
    }

    #[inline]
    pub fn jet(&self, q: [f64; 2]) -> Result<Jet2> {
        self.jet_in(ChartId::Main, q)
    }

    pub fn h(&self, q: [f64; 2]) -> Result<f64> {
        Ok(self.jet(q)?.v)
    }

    /// Area density of the main chart.
    #[inline]
    pub fn density(&self, q: [f64; 2]) -> f64 {
        match self.surface {
            Surface::Revolution(s) => s.profile.eval(q[0]),
            Surface::Torus(t) => t.lambda_f64(q[0], q[1]),
        }
    }

    /// Inverse metric `(g^11, g^22)` of the (diagonal) main chart metric.
    #[inline]
    fn inv_metric(&self, q: [f64; 2]) -> [f64; 2] {
        match self.surface {
            Surface::Revolution(s) => {
                let a = s.profile.eval(q[0]);
                [1.0, 1.0 / (a * a)]
            }
            Surface::Torus(t) => {
                let l = t.lambda_f64(q[0], q[1]);
                [1.0 / l, 1.0 / l]
            }
        }
    }

    /// `|dH|_g` at a main-chart point.
    pub fn grad_norm(&self, q: [f64; 2]) -> Result<f64> {
        let j = self.jet(q)?;
        let gi = self.inv_metric(q);
        Ok((j.g[0] * j.g[0] * gi[0] + j.g[1] * j.g[1] * gi[1]).sqrt())
    }

    /// Hamiltonian vector field.
    #[inline]
    pub fn xh(&self, q: [f64; 2]) -> Result<[f64; 2]> {
        let j = self.jet(q)?;
        let d = self.density(q);
        Ok([-j.g[1] / d, j.g[0] / d])
    }

    /// Transversal field `grad H / |dH|^2` (moves levels at unit rate).
    pub fn transversal(&self, q: [f64; 2]) -> Result<[f64; 2]> {
        let j = self.jet(q)?;
        let gi = self.inv_metric(q);
        let n2 = j.g[0] * j.g[0] * gi[0] + j.g[1] * j.g[1] * gi[1];
        if n2.sqrt() < self.opts.grad_floor {
            return Err(Error::NearCritical(format!("|dH| = {:.3e} at ({:.6}, {:.6})", n2.sqrt(), q[0], q[1])));
        }
        Ok([gi[0] * j.g[0] / n2, gi[1] * j.g[1] / n2])
    }

    /// Coordinate displacement reduced by the periods of the chart.
    #[inline]
    pub fn wrap(&self, d: [f64; 2]) -> [f64; 2] {
        match self.surface {
            Surface::Revolution(_) => [d[0], d[1] - 2.0 * PI * (d[1] / (2.0 * PI)).round()],
            Surface::Torus(t) => t.wrap_delta(d),
        }
    }

    fn periods(&self) -> [f64; 2] {
        match self.surface {
            Surface::Revolution(_) => [f64::INFINITY, 2.0 * PI],
            Surface::Torus(t) => [t.lx, t.ly],
        }
    }

    pub(crate) fn length_scale(&self) -> f64 {
        match self.surface {
            Surface::Revolution(s) => s.length,
            Surface::Torus(t) => t.lx.min(t.ly),
        }
    }

    /// Primitives of the area form: `P dq2` and `-Q dq1` with `dP/dq1 = dQ/dq2 = density`.
    fn primitives(&self, q: [f64; 2]) -> [f64; 2] {
        match self.surface {
            Surface::Revolution(s) => [s.primitive(q[0]), 0.0],
            Surface::Torus(t) => match &t.lambda {
                None => [q[0], q[1]],
                Some(_) => {
                    let rule = crate::geometry::quadrature::Rule::new(16);
                    let p = rule.integrate(0.0, q[0], 2, |x| t.lambda_f64(x, q[1]));
                    let qq = rule.integrate(0.0, q[1], 2, |y| t.lambda_f64(q[0], y));
                    [p, qq]
                }
            },
        }
    }

    pub(crate) fn component(&self, q: [f64; 2]) -> i8 {
        match (&self.source, self.field) {
            (Source::Field, Some(f)) => {
                if f.value(self.surface, ChartId::Main, q) > 0.0 {
                    1
                } else {
                    -1
                }
            }
            _ => 0,
        }
    }

    /// Project a point onto the level `c` along the gradient.
    pub fn correct_to_level(&self, q: [f64; 2], c: f64) -> Result<[f64; 2]> {
        let mut q = q;
        let j0 = self.jet(q)?;
        // Level spacing over the chart size, so c = 0 still has a scale.
        let scale = c.abs().max(j0.g[0].hypot(j0.g[1]) * self.length_scale()).max(1e-300);
        let cap = 0.05 * self.length_scale();
        for _ in 0..200 {
            let j = self.jet(q)?;
            let dh = j.v - c;
            if dh.abs() <= 1e-15 * scale {
                return Ok(q);
            }
            let g2 = j.g[0] * j.g[0] + j.g[1] * j.g[1];
            if g2.sqrt() < self.opts.grad_floor {
                return Err(Error::NearCritical(format!("gradient vanishes near ({:.6}, {:.6})", q[0], q[1])));
            }
            // Newton step, capped in length and halved until it stays in the chart.
            let mut step = [-dh * j.g[0] / g2, -dh * j.g[1] / g2];
            let len = step[0].hypot(step[1]);
            if len > cap {
                step = [step[0] * cap / len, step[1] * cap / len];
            }
            let mut k = 0;
            while self.jet([q[0] + step[0], q[1] + step[1]]).map_or(true, |jn| !jn.v.is_finite()) {
                k += 1;
                if k > 40 {
                    return Err(Error::Domain(q[0], q[1], "level correction left the chart"));
                }
                step = [0.5 * step[0], 0.5 * step[1]];
            }
            q = [q[0] + step[0], q[1] + step[1]];
        }
        let j = self.jet(q)?;
        if (j.v - c).abs() <= 1e-12 * scale {
            Ok(q)
        } else {
            Err(Error::Inconsistent(format!("could not reach level {c} from ({:.6}, {:.6})", q[0], q[1])))
        }
    }

    /// Move a point from its level to level `c` along the transversal field.
    pub fn move_to_level(&self, q: [f64; 2], c: f64) -> Result<[f64; 2]> {
        let c0 = self.h(q)?;
        let n = 32;
        let dc = (c - c0) / n as f64;
        let mut p = q;
        for _ in 0..n {
            let k1 = self.transversal(p)?;
            let k2 = self.transversal([p[0] + 0.5 * dc * k1[0], p[1] + 0.5 * dc * k1[1]])?;
            let k3 = self.transversal([p[0] + 0.5 * dc * k2[0], p[1] + 0.5 * dc * k2[1]])?;
            let k4 = self.transversal([p[0] + dc * k3[0], p[1] + dc * k3[1]])?;
            for i in 0..2 {
                p[i] += dc / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        self.correct_to_level(p, c)
    }
}

fn check_vars(surface: &Surface, e: &Expr) -> Result<()> {
    for v in e.vars() {
        let ok = match surface {
            Surface::Torus(_) => matches!(v, Var::X | Var::Y),
            Surface::Revolution(_) => matches!(v, Var::R | Var::Phi | Var::Z),
        };
        if !ok {
            return Err(Error::Config(format!("expression uses '{}' which is not a coordinate of a {} surface", v.name(), surface.kind_name())));
        }
    }
    Ok(())
}

fn field_h3(b: Jet3) -> Result<Jet3> {
    if b.d[0] == 0.0 {
        return Err(Error::Domain(f64::NAN, f64::NAN, "reduced domain {b != 0}"));
    }
    let iv = 1.0 / b.d[0];
    let i2 = iv * iv;
    Ok(b.compose([0.5 * i2, -i2 * iv, 3.0 * i2 * i2, -12.0 * i2 * i2 * iv]))
}

/// Regular level circle of the reduced Hamiltonian.
#[derive(Clone, Debug, Serialize)]
pub struct LevelCircle {
    pub c: f64,
    /// Start point on the level (unwrapped coordinates).
    pub seed: [f64; 2],
    /// Closed polyline of accepted steps, starting and ending at `seed`.
    pub points: Vec<[f64; 2]>,
    /// Return time of the `X_H` flow.
    pub period: f64,
    /// `oint theta` along the circle with `d theta = mu`.
    pub area: f64,
    /// Lattice class of the circle (revolution: `[0, turns in phi]`).
    pub winding: [i64; 2],
    /// Sign of `b` on the circle in field mode, 0 otherwise.
    pub component: i8,
    /// `max |H - c| / |c|` over the samples.
    pub h_spread: f64,
    /// Distance between the last sample and the seed.
    pub closure: f64,
    /// Smallest `|dH|_g` on the samples.
    pub min_grad: f64,
}

impl LevelCircle {
    /// Smallest Euclidean chart distance from the polyline to `p` (wrapped).
    pub fn distance_to(&self, rs: &ReducedSystem, p: [f64; 2]) -> f64 {
        self.points
            .iter()
            .map(|q| {
                let d = rs.wrap([q[0] - p[0], q[1] - p[1]]);
                d[0].hypot(d[1])
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest wrapped distance from the seed (a size proxy).
    pub fn radius(&self, rs: &ReducedSystem) -> f64 {
        self.points
            .iter()
            .map(|q| {
                let d = rs.wrap([q[0] - self.seed[0], q[1] - self.seed[1]]);
                d[0].hypot(d[1])
            })
            .fold(0.0, f64::max)
    }
}

/// Trace the regular level circle of `c` through (a corrected) `seed`.
pub fn trace_level_circle(rs: &ReducedSystem, c: f64, seed: [f64; 2]) -> Result<LevelCircle> {
    if let Surface::Revolution(s) = rs.surface {
        if seed[0] < s.eps || seed[0] > s.length - s.eps {
            let (chart, t) = if seed[0] < s.eps { (ChartId::South, seed[0]) } else { (ChartId::North, s.length - seed[0]) };
            let j = rs.jet_in(chart, [t.max(0.0) * seed[1].cos(), t.max(0.0) * seed[1].sin()])?;
            if j.g[0].hypot(j.g[1]) < rs.opts.grad_floor.max(1e-6 * j.h[0].abs().max(j.h[2].abs())) {
                return Err(Error::NearCritical(format!("seed at the {} pole is a critical point", chart.name())));
            }
            return Err(Error::Domain(seed[0], seed[1], "reduced flow is restricted to the main chart"));
        }
    }
    let q0 = rs.correct_to_level(seed, c)?;
    let g0 = rs.grad_norm(q0)?;
    if g0 < rs.opts.grad_floor {
        return Err(Error::NearCritical(format!("|dH| = {g0:.3e} at the seed")));
    }
    let x0 = rs.xh(q0)?;
    let speed0 = x0[0].hypot(x0[1]);
    let tol = Tolerance::uniform(rs.opts.tol);
    let f = |y: &[f64; 4]| -> Result<[f64; 4]> {
        let q = [y[0], y[1]];
        let x = rs.xh(q)?;
        let p = rs.primitives(q);
        Ok([x[0], x[1], p[0] * x[1], -p[1] * x[0]])
    };
    let mut rhs = f;
    let mut y = [q0[0], q0[1], 0.0, 0.0];
    let mut fy = rhs(&y)?;
    let lscale = rs.length_scale();
    let ctl = Controller { h_min: 1e-14 * lscale / speed0, h_max: 0.02 * lscale / speed0 };
    let mut h = 1e-3 * lscale / speed0;
    let mut t = 0.0;
    let mut points = vec![q0];
    let mut h_spread: f64 = 0.0;
    let mut min_grad = g0;
    let mut far: f64 = 0.0;
    let sigma = move |y: &[f64; 4]| -> f64 {
        let d = rs.wrap([y[0] - q0[0], y[1] - q0[1]]);
        d[0] * x0[0] + d[1] * x0[1]
    };
    let scale = c.abs().max(1e-300);
    let mut steps = 0;
    loop {
        if steps >= rs.opts.max_steps {
            return Err(Error::Budget(format!("level circle {c} did not close within {} steps", rs.opts.max_steps)));
        }
        match dp45_step(&mut rhs, &y, &fy, h, tol) {
            Ok(st) if st.err <= 1.0 => {
                steps += 1;
                let y1 = st.y;
                let d = rs.wrap([y1[0] - q0[0], y1[1] - q0[1]]);
                let dist = d[0].hypot(d[1]);
                let s0 = sigma(&y);
                let s1 = sigma(&y1);
                let near = dist < 0.25 * far;
                if s0 < 0.0 && s1 >= 0.0 && near {
                    let (th, ye) = refine_event(&mut rhs, &y, &fy, &y1, &st.f1, h, tol, sigma)?;
                    let period = t + th * h;
                    points.push([ye[0], ye[1]]);
                    let dl = [ye[0] - q0[0], ye[1] - q0[1]];
                    let per = rs.periods();
                    let winding = [
                        if per[0].is_finite() { (dl[0] / per[0]).round() as i64 } else { 0 },
                        (dl[1] / per[1]).round() as i64,
                    ];
                    let area = match (rs.surface, winding) {
                        (Surface::Revolution(_), _) => ye[2],
                        (Surface::Torus(_), [0, _]) => ye[2],
                        (Surface::Torus(_), [_, 0]) => ye[3],
                        _ => f64::NAN,
                    };
                    let dw = rs.wrap(dl);
                    return Ok(LevelCircle {
                        c,
                        seed: q0,
                        points,
                        period,
                        area,
                        winding,
                        component: rs.component(q0),
                        h_spread,
                        closure: dw[0].hypot(dw[1]),
                        min_grad,
                    });
                }
                far = far.max(dist);
                t += h;
                y = y1;
                fy = st.f1;
                let q = [y[0], y[1]];
                points.push(q);
                let j = rs.jet(q)?;
                h_spread = h_spread.max((j.v - c).abs() / scale);
                let gn = rs.grad_norm(q)?;
                min_grad = min_grad.min(gn);
                if gn < rs.opts.grad_floor {
                    return Err(Error::NearCritical(format!("|dH| = {gn:.3e} on level {c} near ({:.6}, {:.6})", q[0], q[1])));
                }
                h = ctl.next(h, st.err);
            }
            Ok(st) => h = ctl.next(h, st.err).min(0.9 * h),
            Err(e) if e.is_domain() => h *= 0.5,
            Err(e) => return Err(e),
        }
        if h < ctl.h_min {
            return Err(Error::Domain(y[0], y[1], "reduced flow left the main chart"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FieldKind;

    fn sphere_affine() -> (Surface, FieldSpec) {
        let s = Surface::unit_sphere();
        let f = FieldSpec::new(FieldKind::AffineHeight { c0: 2.0, c1: 1.0 }, &s).unwrap();
        (s, f)
    }

    #[test]
    fn field_mode_value_at_equator() {
        let (s, f) = sphere_affine();
        let rs = make_reduced(&s, &f, None).unwrap();
        assert_eq!(rs.mode, Mode::Field);
        assert!((rs.h([PI / 2.0, 0.3]).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn mode_errors() {
        let s = Surface::unit_sphere();
        let zero = FieldSpec::constant(0.0);
        assert!(matches!(make_reduced(&s, &zero, Some(Mode::Field)), Err(Error::Config(_))));
        let (s2, f) = sphere_affine();
        assert!(matches!(make_reduced(&s2, &f, Some(Mode::Curvature)), Err(Error::Mode(_))));
        let one = FieldSpec::constant(1.0);
        assert_eq!(make_reduced(&s, &one, None).unwrap().mode, Mode::Curvature);
    }

    #[test]
    fn height_hamiltonian_equator() {
        let s = Surface::unit_sphere();
        let rs = ReducedSystem::synthetic(&s, Expr::parse("z").unwrap()).unwrap();
        let l = trace_level_circle(&rs, 0.0, [PI / 2.0 + 0.01, 0.0]).unwrap();
        assert!((l.period - 2.0 * PI).abs() < 1e-10, "{}", l.period);
        assert_eq!(l.winding, [0, 1]);
        assert!((l.area - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn affine_field_level_period() {
        let (s, f) = sphere_affine();
        let rs = make_reduced(&s, &f, None).unwrap();
        let l = trace_level_circle(&rs, 0.125, [1.4, 0.0]).unwrap();
        assert!((l.period - 16.0 * PI).abs() < 1e-9 * 16.0 * PI);
        assert!((l.seed[0] - PI / 2.0).abs() < 1e-12);
        assert_eq!(l.winding, [0, -1]);
        assert!(l.h_spread < 1e-12 && l.closure < 1e-8);
    }

    #[test]
    fn torus_contractible_circle() {
        let t = Surface::flat_torus();
        let f = FieldSpec::new(FieldKind::TorusTrig { c0: 3.0, cx: 1.0, cy: 1.0 }, &t).unwrap();
        let rs = make_reduced(&t, &f, None).unwrap();
        let c = rs.h([0.5, 0.0]).unwrap();
        let l = trace_level_circle(&rs, c, [0.5, 0.0]).unwrap();
        assert_eq!(l.winding, [0, 0]);
        assert!(l.period > 0.0 && l.closure < 1e-8 && l.h_spread < 1e-9);
        // Symmetric about the diagonal through the minimum of H.
        let ymax = l.points.iter().map(|p| p[1]).fold(f64::MIN, f64::max);
        assert!((ymax - 0.5).abs() < 1e-3);
    }

    #[test]
    fn pole_seed_is_near_critical() {
        let (s, f) = sphere_affine();
        let rs = make_reduced(&s, &f, None).unwrap();
        let e = trace_level_circle(&rs, 0.5, [0.0, 0.0]);
        assert!(matches!(e, Err(Error::NearCritical(_))), "{e:?}");
    }
}
