use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{vars_with, Expr, Var, N_VARS};
use crate::geometry::quadrature::Rule;
use crate::jet::{Jet2, Jet3, Real};

/// Chart identifiers. Tori use `Main` only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChartId {
    /// (r, phi) on a surface of revolution, (x, y) on a torus.
    Main,
    /// (r cos phi, r sin phi) around r = 0.
    South,
    /// ((R-r) cos phi, -(R-r) sin phi) around r = R.
    North,
}

impl ChartId {
    pub fn name(self) -> &'static str {
        match self {
            ChartId::Main => "main",
            ChartId::South => "south-cap",
            ChartId::North => "north-cap",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ChartId::Main => 0,
            ChartId::South => 1,
            ChartId::North => 2,
        }
    }
}

/// Profile function `a(r)` of a surface of revolution `dr^2 + a(r)^2 dphi^2`.
#[derive(Clone, Debug)]
pub enum Profile {
    /// Round sphere of the given radius: `a = rho sin(r / rho)`.
    Round { radius: f64 },
    /// `a = sin r (1 + eps sin^2 r)` on [0, pi]; oblate for eps > 0.
    Bumpy { eps: f64 },
    /// Arbitrary closed form in the variable `r` on [0, length].
    Expr { expr: Expr, length: f64 },
}

impl Profile {
    pub fn length(&self) -> f64 {
        match self {
            Profile::Round { radius } => PI * radius,
            Profile::Bumpy { .. } => PI,
            Profile::Expr { length, .. } => *length,
        }
    }

    pub fn eval<T: Real>(&self, r: T) -> T {
        match self {
            Profile::Round { radius } => r.mul_f(1.0 / radius).sin().mul_f(*radius),
            Profile::Bumpy { eps } => {
                let s = r.sin();
                s * (s * s).mul_f(*eps).add_f(1.0)
            }
            Profile::Expr { expr, .. } => expr.eval(&vars_with(T::cst(0.0), &[(Var::R, r)])),
        }
    }

    /// `(a, a')` without going through jets where a closed form exists.
    #[inline]
    pub fn a_d1(&self, r: f64) -> (f64, f64) {
        match self {
            Profile::Round { radius } => {
                let (s, c) = (r / radius).sin_cos();
                (radius * s, c)
            }
            Profile::Bumpy { eps } => {
                let (s, c) = r.sin_cos();
                (s * (1.0 + eps * s * s), c * (1.0 + 3.0 * eps * s * s))
            }
            Profile::Expr { .. } => {
                let j = self.eval(Jet3::var(r));
                (j.d[0], j.d[1])
            }
        }
    }

    /// Closed-form primitive with `P(0) = 0`, where one exists.
    fn primitive_closed(&self, r: f64) -> Option<f64> {
        match self {
            Profile::Round { radius } => Some(radius * radius * (1.0 - (r / radius).cos())),
            Profile::Bumpy { eps } => {
                let c = r.cos();
                Some((1.0 - c) + eps * (2.0 / 3.0 - c + c * c * c / 3.0))
            }
            Profile::Expr { .. } => None,
        }
    }
}

/// Cumulative primitive of an expression profile on a uniform grid.
#[derive(Clone, Debug)]
struct PrimitiveTable {
    h: f64,
    cum: Vec<f64>,
    rule: Rule,
}

impl PrimitiveTable {
    fn build(p: &Profile, length: f64) -> PrimitiveTable {
        let n = 512;
        let h = length / n as f64;
        let rule = Rule::new(10);
        let mut cum = vec![0.0; n + 1];
        for k in 0..n {
            let lo = k as f64 * h;
            cum[k + 1] = cum[k] + rule.integrate(lo, lo + h, 1, |r| p.eval(r));
        }
        PrimitiveTable { h, cum, rule }
    }

    fn eval(&self, p: &Profile, r: f64) -> f64 {
        let n = self.cum.len() - 1;
        let k = ((r / self.h).floor().max(0.0) as usize).min(n - 1);
        let lo = k as f64 * self.h;
        self.cum[k] + self.rule.integrate(lo, r, 1, |t| p.eval(t))
    }
}

/// Closed surface of revolution with poles at r = 0 and r = R.
#[derive(Clone, Debug)]
pub struct Revolution {
    pub profile: Profile,
    pub length: f64,
    /// Pole exclusion radius of the main chart.
    pub eps: f64,
    p_total: f64,
    alpha_s: f64,
    alpha_n: f64,
    table: Option<PrimitiveTable>,
}

impl Revolution {
    pub fn new(profile: Profile) -> Result<Revolution> {
        let length = profile.length();
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Config(format!("profile length must be positive, got {length}")));
        }
        if let Profile::Round { radius } = profile {
            if !(radius > 0.0) {
                return Err(Error::Config("sphere radius must be positive".into()));
            }
        }
        if let Profile::Bumpy { eps } = profile {
            if !(eps > -1.0) {
                return Err(Error::Config("bumpy profile requires eps > -1".into()));
            }
        }
        let j0 = profile.eval(Jet3::var(0.0));
        let j1 = profile.eval(Jet3::var(length));
        let tol = 1e-8;
        if j0.d[0].abs() > tol || j1.d[0].abs() > tol {
            return Err(Error::Config("profile must vanish at both poles".into()));
        }
        if (j0.d[1] - 1.0).abs() > tol || (j1.d[1] + 1.0).abs() > tol {
            return Err(Error::Config("profile must satisfy a'(0) = 1 and a'(R) = -1".into()));
        }
        for k in 1..400 {
            let r = length * k as f64 / 400.0;
            if !(profile.eval(r) > 0.0) {
                return Err(Error::Config(format!("profile not positive at r = {r}")));
            }
        }
        let table = match profile {
            Profile::Expr { .. } => Some(PrimitiveTable::build(&profile, length)),
            _ => None,
        };
        let mut s = Revolution {
            profile,
            length,
            eps: 1e-3 * length,
            p_total: 0.0,
            alpha_s: j0.d[3] / 6.0,
            alpha_n: -j1.d[3] / 6.0,
            table,
        };
        s.p_total = s.primitive(length);
        Ok(s)
    }

    pub fn round(radius: f64) -> Revolution {
        Revolution::new(Profile::Round { radius }).expect("valid radius")
    }

    /// Primitive `P(r) = int_0^r a`.
    pub fn primitive(&self, r: f64) -> f64 {
        self.profile
            .primitive_closed(r)
            .unwrap_or_else(|| self.table.as_ref().expect("table").eval(&self.profile, r))
    }

    /// `int a dr` over the whole profile; the area is `2 pi` times this.
    pub fn p_total(&self) -> f64 {
        self.p_total
    }

    /// Normalized height `z = 2 P(r) / P(R) - 1` in [-1, 1].
    pub fn height(&self, r: f64) -> f64 {
        match self.profile {
            Profile::Round { radius } => -(r / radius).cos(),
            _ => 2.0 * self.primitive(r) / self.p_total - 1.0,
        }
    }

    /// Height and its first three r-derivatives.
    pub fn height_jet(&self, r: f64) -> Jet3 {
        let a = self.profile.eval(Jet3::var(r));
        let k = 2.0 / self.p_total;
        Jet3::new(self.height(r), k * a.d[0], k * a.d[1], k * a.d[2])
    }

    /// `(a, a', z)` from a single sine/cosine evaluation for closed-form profiles.
    #[inline]
    pub fn kernel(&self, r: f64) -> Option<(f64, f64, f64)> {
        match self.profile {
            Profile::Round { radius } => {
                let (s, c) = (r / radius).sin_cos();
                Some((radius * s, c, -c))
            }
            Profile::Bumpy { eps } => {
                let (s, c) = r.sin_cos();
                let p = (1.0 - c) + eps * (2.0 / 3.0 - c + c * c * c / 3.0);
                Some((s * (1.0 + eps * s * s), c * (1.0 + 3.0 * eps * s * s), 2.0 * p / self.p_total - 1.0))
            }
            Profile::Expr { .. } => None,
        }
    }

    /// Invert the height function by safeguarded Newton iteration.
    pub fn r_of_height(&self, z: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&z) {
            return Err(Error::Precondition(format!("height {z} outside [-1, 1]")));
        }
        if let Profile::Round { radius } = self.profile {
            return Ok(radius * (-z).acos());
        }
        let (mut lo, mut hi) = (0.0, self.length);
        let mut r = self.length * (-z).acos() / PI;
        for _ in 0..200 {
            let f = self.height(r) - z;
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let d = 2.0 * self.profile.eval(r) / self.p_total;
            let mut next = r - f / d;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - r).abs() < 1e-15 * self.length {
                return Ok(next);
            }
            r = next;
        }
        Ok(r)
    }

    fn cap_profile<T: Real>(&self, chart: ChartId, t: T) -> T {
        match chart {
            ChartId::North => self.profile.eval(t.mul_f(-1.0).add_f(self.length)),
            _ => self.profile.eval(t),
        }
    }

    fn alpha(&self, chart: ChartId) -> f64 {
        if chart == ChartId::North {
            self.alpha_n
        } else {
            self.alpha_s
        }
    }

    /// `f(w) = (a/t)^2` and `k(w) = (1 - f)/w` as jets in `w = t^2`.
    fn cap_fk(&self, chart: ChartId, w: f64) -> (Jet3, Jet3) {
        if w < 1e-10 {
            let al = self.alpha(chart);
            let f = Jet3::new(1.0 + 2.0 * al * w, 2.0 * al, 2.0 * al * al, 0.0);
            let k = Jet3::new(-2.0 * al - al * al * w, -al * al, 0.0, 0.0);
            return (f, k);
        }
        let wj = Jet3::var(w);
        let a = self.cap_profile(chart, wj.sqrt());
        let f = a * a / wj;
        let k = (Jet3::constant(1.0) - f) / wj;
        (f, k)
    }
}

/// Torus `[0, Lx) x [0, Ly)` with metric `lambda (dx^2 + dy^2)`.
#[derive(Clone, Debug)]
pub struct Torus {
    pub lx: f64,
    pub ly: f64,
    /// Conformal factor; `None` is the flat metric.
    pub lambda: Option<Expr>,
}

impl Torus {
    pub fn flat(lx: f64, ly: f64) -> Torus {
        Torus { lx, ly, lambda: None }
    }

    pub fn new(lx: f64, ly: f64, lambda: Option<Expr>) -> Result<Torus> {
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Config("torus periods must be positive".into()));
        }
        if let Some(e) = &lambda {
            for v in e.vars() {
                if v != Var::X && v != Var::Y {
                    return Err(Error::Config(format!("conformal factor may not use '{}'", v.name())));
                }
            }
            let t = Torus { lx, ly, lambda: lambda.clone() };
            for i in 0..24 {
                for j in 0..24 {
                    let x = lx * i as f64 / 24.0;
                    let y = ly * j as f64 / 24.0;
                    let l = t.lambda_f64(x, y);
                    if !(l > 0.0) {
                        return Err(Error::Config(format!("conformal factor not positive at ({x}, {y})")));
                    }
                    let px = t.lambda_f64(x + lx, y);
                    let py = t.lambda_f64(x, y + ly);
                    if (px - l).abs() > 1e-9 * l.abs().max(1.0) || (py - l).abs() > 1e-9 * l.abs().max(1.0) {
                        return Err(Error::Config("conformal factor is not periodic".into()));
                    }
                }
            }
        }
        Ok(Torus { lx, ly, lambda })
    }

    #[inline]
    pub fn lambda_f64(&self, x: f64, y: f64) -> f64 {
        match &self.lambda {
            None => 1.0,
            Some(e) => e.eval_f64(&vars_with(0.0, &[(Var::X, x), (Var::Y, y)])),
        }
    }

    pub fn lambda_jet(&self, x: f64, y: f64) -> Jet2 {
        match &self.lambda {
            None => Jet2::constant(1.0),
            Some(e) => e.eval(&vars_with(Jet2::constant(0.0), &[(Var::X, Jet2::var(x, 0)), (Var::Y, Jet2::var(y, 1))])),
        }
    }

    /// Reduce a displacement to the nearest lattice image.
    pub fn wrap_delta(&self, d: [f64; 2]) -> [f64; 2] {
        [d[0] - self.lx * (d[0] / self.lx).round(), d[1] - self.ly * (d[1] / self.ly).round()]
    }
}

/// Metric coefficients at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub sqrt_det: f64,
}

impl Metric {
    #[inline]
    pub fn dot(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.e * a[0] * b[0] + self.f * (a[0] * b[1] + a[1] * b[0]) + self.g * a[1] * b[1]
    }

    #[inline]
    pub fn norm(&self, a: [f64; 2]) -> f64 {
        self.dot(a, a).sqrt()
    }

    /// Positive ninety-degree rotation.
    #[inline]
    pub fn perp(&self, v: [f64; 2]) -> [f64; 2] {
        [
            -(self.f * v[0] + self.g * v[1]) / self.sqrt_det,
            (self.e * v[0] + self.f * v[1]) / self.sqrt_det,
        ]
    }

    /// Raise an index: solve `g x = w`.
    #[inline]
    pub fn raise(&self, w: [f64; 2]) -> [f64; 2] {
        let det = self.sqrt_det * self.sqrt_det;
        [(self.g * w[0] - self.f * w[1]) / det, (self.e * w[1] - self.f * w[0]) / det]
    }
}

/// Metric coefficients with first and second partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricJet {
    pub e: Jet2,
    pub f: Jet2,
    pub g: Jet2,
    pub sqrt_det: f64,
}

impl MetricJet {
    pub fn metric(&self) -> Metric {
        Metric { e: self.e.v, f: self.f.v, g: self.g.v, sqrt_det: self.sqrt_det }
    }

    /// Christoffel symbols `gamma[k][i][j]`.
    pub fn christoffel(&self) -> [[[f64; 2]; 2]; 2] {
        // dg[l][i][j] = d_l g_ij
        let mut dg = [[[0.0; 2]; 2]; 2];
        for l in 0..2 {
            dg[l] = [[self.e.g[l], self.f.g[l]], [self.f.g[l], self.g.g[l]]];
        }
        let det = self.sqrt_det * self.sqrt_det;
        let ginv = [[self.g.v / det, -self.f.v / det], [-self.f.v / det, self.e.v / det]];
        let mut out = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for l in 0..2 {
                        s += ginv[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                    }
                    out[k][i][j] = 0.5 * s;
                }
            }
        }
        out
    }

    /// Gaussian curvature by the Brioschi formula.
    pub fn brioschi(&self) -> f64 {
        let (e, f, g) = (self.e.v, self.f.v, self.g.v);
        let (eu, ev) = (self.e.g[0], self.e.g[1]);
        let (fu, fv) = (self.f.g[0], self.f.g[1]);
        let (gu, gv) = (self.g.g[0], self.g.g[1]);
        let evv = self.e.h[2];
        let fuv = self.f.h[1];
        let guu = self.g.h[0];
        let m1 = [
            [-0.5 * evv + fuv - 0.5 * guu, 0.5 * eu, fu - 0.5 * ev],
            [fv - 0.5 * gu, e, f],
            [0.5 * gv, f, g],
        ];
        let m2 = [[0.0, 0.5 * ev, 0.5 * gu], [0.5 * ev, e, f], [0.5 * gu, f, g]];
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        (det3(m1) - det3(m2)) / (e * g - f * f).powi(2)
    }
}

/// A point of the surface in a specific chart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: ChartId,
    pub q: [f64; 2],
}

impl ChartPoint {
    pub fn main(q1: f64, q2: f64) -> ChartPoint {
        ChartPoint { chart: ChartId::Main, q: [q1, q2] }
    }
}

/// Closed oriented surface with an atlas of analytic charts.
#[derive(Clone, Debug)]
pub enum Surface {
    Revolution(Revolution),
    Torus(Torus),
}

impl Surface {
    pub fn unit_sphere() -> Surface {
        Surface::Revolution(Revolution::round(1.0))
    }

    pub fn flat_torus() -> Surface {
        Surface::Torus(Torus::flat(2.0 * PI, 2.0 * PI))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Surface::Revolution(_) => "revolution",
            Surface::Torus(_) => "torus",
        }
    }

    pub fn revolution(&self) -> Option<&Revolution> {
        match self {
            Surface::Revolution(r) => Some(r),
            _ => None,
        }
    }

    pub fn torus(&self) -> Option<&Torus> {
        match self {
            Surface::Torus(t) => Some(t),
            _ => None,
        }
    }

    /// Euler characteristic.
    pub fn euler_characteristic(&self) -> i32 {
        match self {
            Surface::Revolution(_) => 2,
            Surface::Torus(_) => 0,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, Surface::Revolution(_))
    }

    /// Chart-level domain check.
    pub fn check_domain(&self, chart: ChartId, q: [f64; 2]) -> Result<()> {
        let ok = match (self, chart) {
            (Surface::Torus(_), ChartId::Main) => q[0].is_finite() && q[1].is_finite(),
            (Surface::Torus(_), _) => false,
            (Surface::Revolution(s), ChartId::Main) => q[0] >= s.eps && q[0] <= s.length - s.eps && q[1].is_finite(),
            (Surface::Revolution(s), _) => (q[0] * q[0] + q[1] * q[1]).sqrt() <= 0.5 * s.length,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(q[0], q[1], self.chart_label(chart)))
        }
    }

    fn chart_label(&self, chart: ChartId) -> &'static str {
        match (self, chart) {
            (Surface::Torus(_), ChartId::Main) => "torus (x,y)",
            (Surface::Torus(_), _) => "torus (no cap charts)",
            (Surface::Revolution(_), ChartId::Main) => "revolution main (r,phi)",
            (Surface::Revolution(_), ChartId::South) => "revolution south cap",
            (Surface::Revolution(_), ChartId::North) => "revolution north cap",
        }
    }

    /// Metric coefficients.
    #[inline]
    pub fn metric(&self, chart: ChartId, q: [f64; 2]) -> Result<Metric> {
        match (self, chart) {
            (Surface::Torus(t), ChartId::Main) => {
                let l = t.lambda_f64(q[0], q[1]);
                Ok(Metric { e: l, f: 0.0, g: l, sqrt_det: l })
            }
            (Surface::Revolution(s), ChartId::Main) => {
                self.check_domain(chart, q)?;
                let a = s.profile.eval(q[0]);
                Ok(Metric { e: 1.0, f: 0.0, g: a * a, sqrt_det: a })
            }
            _ => Ok(self.metric_jet(chart, q)?.metric()),
        }
    }

    /// Metric coefficients with derivatives up to second order.
    pub fn metric_jet(&self, chart: ChartId, q: [f64; 2]) -> Result<MetricJet> {
        self.check_domain(chart, q)?;
        match self {
            Surface::Torus(t) => {
                let l = t.lambda_jet(q[0], q[1]);
                Ok(MetricJet { e: l, f: Jet2::constant(0.0), g: l, sqrt_det: l.v })
            }
            Surface::Revolution(s) => match chart {
                ChartId::Main => {
                    let a = s.profile.eval(Jet2::var(q[0], 0));
                    let g = a * a;
                    Ok(MetricJet { e: Jet2::constant(1.0), f: Jet2::constant(0.0), g, sqrt_det: a.v })
                }
                _ => {
                    let u = Jet2::var(q[0], 0);
                    let v = Jet2::var(q[1], 1);
                    let w = u * u + v * v;
                    let (fj, kj) = s.cap_fk(chart, w.v);
                    let f = w.compose(fj.d[0], fj.d[1], fj.d[2]);
                    let k = w.compose(kj.d[0], kj.d[1], kj.d[2]);
                    let e = f + k * u * u;
                    let ff = k * u * v;
                    let g = f + k * v * v;
                    let det = e.v * g.v - ff.v * ff.v;
                    Ok(MetricJet { e, f: ff, g, sqrt_det: det.sqrt() })
                }
            },
        }
    }

    /// Covariant acceleration `-Gamma(v, v) + b v_perp` in chart components,
    /// together with the metric at `q`.
    #[inline]
    pub fn accel(&self, chart: ChartId, q: [f64; 2], v: [f64; 2], b: f64) -> Result<([f64; 2], Metric)> {
        match (self, chart) {
            (Surface::Revolution(s), ChartId::Main) => {
                self.check_domain(chart, q)?;
                let (a, da) = s.profile.a_d1(q[0]);
                let m = Metric { e: 1.0, f: 0.0, g: a * a, sqrt_det: a };
                let acc = [a * da * v[1] * v[1] - b * a * v[1], -2.0 * (da / a) * v[0] * v[1] + b * v[0] / a];
                Ok((acc, m))
            }
            (Surface::Torus(t), ChartId::Main) if t.lambda.is_none() => {
                let m = Metric { e: 1.0, f: 0.0, g: 1.0, sqrt_det: 1.0 };
                Ok(([-b * v[1], b * v[0]], m))
            }
            (Surface::Torus(t), ChartId::Main) => {
                let l = t.lambda_jet(q[0], q[1]);
                let px = l.g[0] / (2.0 * l.v);
                let py = l.g[1] / (2.0 * l.v);
                let m = Metric { e: l.v, f: 0.0, g: l.v, sqrt_det: l.v };
                let ax = -(px * v[0] * v[0] + 2.0 * py * v[0] * v[1] - px * v[1] * v[1]) - b * v[1];
                let ay = -(-py * v[0] * v[0] + 2.0 * px * v[0] * v[1] + py * v[1] * v[1]) + b * v[0];
                Ok(([ax, ay], m))
            }
            _ => {
                let mj = self.metric_jet(chart, q)?;
                let gam = mj.christoffel();
                let m = mj.metric();
                let p = m.perp(v);
                let mut acc = [0.0; 2];
                for k in 0..2 {
                    let mut s = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            s += gam[k][i][j] * v[i] * v[j];
                        }
                    }
                    acc[k] = -s + b * p[k];
                }
                Ok((acc, m))
            }
        }
    }

    /// Gaussian curvature.
    pub fn gauss_curvature(&self, chart: ChartId, q: [f64; 2]) -> Result<f64> {
        self.check_domain(chart, q)?;
        match self {
            Surface::Torus(t) => match &t.lambda {
                None => Ok(0.0),
                Some(_) => {
                    let l = t.lambda_jet(q[0], q[1]);
                    let ll = l.ln();
                    Ok(-(ll.h[0] + ll.h[2]) / (2.0 * l.v))
                }
            },
            Surface::Revolution(s) => match chart {
                ChartId::Main => {
                    let a = s.profile.eval(Jet3::var(q[0]));
                    Ok(-a.d[2] / a.d[0])
                }
                _ => {
                    let t = (q[0] * q[0] + q[1] * q[1]).sqrt();
                    if t < 1e-5 {
                        return Ok(-6.0 * s.alpha(chart));
                    }
                    let a = s.cap_profile(chart, Jet3::var(t));
                    Ok(-a.d[2] / a.d[0])
                }
            },
        }
    }

    /// Field variables `[r, phi, z, x, y]` at a chart point.
    #[inline]
    pub fn natural(&self, chart: ChartId, q: [f64; 2]) -> [f64; N_VARS] {
        match self {
            Surface::Torus(_) => [0.0, 0.0, 0.0, q[0], q[1]],
            Surface::Revolution(s) => {
                let (r, phi) = match chart {
                    ChartId::Main => (q[0], q[1]),
                    ChartId::South => (q[0].hypot(q[1]), q[1].atan2(q[0])),
                    ChartId::North => (s.length - q[0].hypot(q[1]), (-q[1]).atan2(q[0])),
                };
                [r, phi, s.height(r), 0.0, 0.0]
            }
        }
    }

    /// Field variables as second-order jets in the chart coordinates.
    pub fn natural_jet(&self, chart: ChartId, q: [f64; 2]) -> [Jet2; N_VARS] {
        let zero = Jet2::constant(0.0);
        match self {
            Surface::Torus(_) => [zero, zero, zero, Jet2::var(q[0], 0), Jet2::var(q[1], 1)],
            Surface::Revolution(s) => match chart {
                ChartId::Main => {
                    let z = s.height_jet(q[0]);
                    [Jet2::var(q[0], 0), Jet2::var(q[1], 1), Jet2::from_univariate(z, 0), zero, zero]
                }
                _ => {
                    let u = Jet2::var(q[0], 0);
                    let v = Jet2::var(q[1], 1);
                    let w = u * u + v * v;
                    let t = Jet3::var(w.v).sqrt();
                    let (rw, r0) = if chart == ChartId::North {
                        (-t + Jet3::constant(s.length), s.length - t.d[0])
                    } else {
                        (t, t.d[0])
                    };
                    let zw = rw.compose(s.height_jet(r0).d);
                    let r = w.compose(rw.d[0], rw.d[1], rw.d[2]);
                    let z = w.compose(zw.d[0], zw.d[1], zw.d[2]);
                    let (uu, vv, ww) = (q[0], q[1], w.v);
                    let mut phi = Jet2 {
                        v: vv.atan2(uu),
                        g: [-vv / ww, uu / ww],
                        h: [2.0 * uu * vv / (ww * ww), (vv * vv - uu * uu) / (ww * ww), -2.0 * uu * vv / (ww * ww)],
                    };
                    if chart == ChartId::North {
                        phi = -phi;
                    }
                    [r, phi, z, zero, zero]
                }
            },
        }
    }

    /// Preferred chart at a point of `chart`, with switching hysteresis.
    #[inline]
    pub fn preferred_chart(&self, chart: ChartId, q: [f64; 2]) -> ChartId {
        match self {
            Surface::Torus(_) => ChartId::Main,
            Surface::Revolution(s) => match chart {
                ChartId::Main => {
                    if q[0] < 2.0 * s.eps {
                        ChartId::South
                    } else if q[0] > s.length - 2.0 * s.eps {
                        ChartId::North
                    } else {
                        ChartId::Main
                    }
                }
                c => {
                    if q[0].hypot(q[1]) > 3.0 * s.eps {
                        ChartId::Main
                    } else {
                        c
                    }
                }
            },
        }
    }

    /// Change of chart for a point and tangent vector.
    ///
    /// `phi_ref` selects the lift of the angle when entering the main chart.
    pub fn transform(&self, from: ChartId, to: ChartId, q: [f64; 2], v: [f64; 2], phi_ref: f64) -> ([f64; 2], [f64; 2]) {
        if from == to {
            return (q, v);
        }
        let s = match self {
            Surface::Revolution(s) => s,
            Surface::Torus(_) => return (q, v),
        };
        // Through polar (r, phi) as the common intermediate.
        let (r, phi, dr, dphi) = match from {
            ChartId::Main => (q[0], q[1], v[0], v[1]),
            ChartId::South => {
                let t = q[0].hypot(q[1]);
                let phi = lift(q[1].atan2(q[0]), phi_ref);
                (t, phi, (q[0] * v[0] + q[1] * v[1]) / t, (q[0] * v[1] - q[1] * v[0]) / (t * t))
            }
            ChartId::North => {
                let t = q[0].hypot(q[1]);
                let phi = lift((-q[1]).atan2(q[0]), phi_ref);
                (s.length - t, phi, -(q[0] * v[0] + q[1] * v[1]) / t, (q[1] * v[0] - q[0] * v[1]) / (t * t))
            }
        };
        let (c, sn) = (phi.cos(), phi.sin());
        match to {
            ChartId::Main => ([r, phi], [dr, dphi]),
            ChartId::South => ([r * c, r * sn], [c * dr - r * sn * dphi, sn * dr + r * c * dphi]),
            ChartId::North => {
                let t = s.length - r;
                let dt = -dr;
                ([t * c, -t * sn], [c * dt - t * sn * dphi, -sn * dt - t * c * dphi])
            }
        }
    }

    /// Total area.
    pub fn area(&self) -> f64 {
        match self {
            Surface::Revolution(s) => 2.0 * PI * s.p_total,
            Surface::Torus(t) => match &t.lambda {
                None => t.lx * t.ly,
                Some(_) => Rule::new(16).integrate2((0.0, t.lx), (0.0, t.ly), (8, 8), |x, y| t.lambda_f64(x, y)),
            },
        }
    }

    /// Embedding proxy used for chart-independent distances.
    pub fn ambient(&self, chart: ChartId, q: [f64; 2]) -> [f64; 3] {
        match self {
            Surface::Torus(_) => [q[0], q[1], 0.0],
            Surface::Revolution(s) => {
                let nat = self.natural(chart, q);
                let th = PI * nat[0] / s.length;
                let sc = s.length / PI;
                [sc * th.sin() * nat[1].cos(), sc * th.sin() * nat[1].sin(), -sc * th.cos()]
            }
        }
    }

    /// Chart-independent distance between two points (lattice-reduced on tori).
    pub fn distance(&self, a: ChartPoint, b: ChartPoint) -> f64 {
        match self {
            Surface::Torus(t) => {
                let d = t.wrap_delta([a.q[0] - b.q[0], a.q[1] - b.q[1]]);
                d[0].hypot(d[1])
            }
            Surface::Revolution(_) => {
                let (x, y) = (self.ambient(a.chart, a.q), self.ambient(b.chart, b.q));
                ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
            }
        }
    }
}

/// Lift `angle` by multiples of 2 pi to the value nearest `reference`.
#[inline]
pub fn lift(angle: f64, reference: f64) -> f64 {
    angle + 2.0 * PI * ((reference - angle) / (2.0 * PI)).round()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bumpy() -> Surface {
        Surface::Revolution(Revolution::new(Profile::Bumpy { eps: 0.1 }).unwrap())
    }

    #[test]
    fn sphere_metric_examples() {
        let s = Surface::unit_sphere();
        let m = s.metric_jet(ChartId::Main, [PI / 2.0, 0.3]).unwrap();
        assert!((m.e.v - 1.0).abs() < 1e-15 && m.f.v == 0.0 && (m.g.v - 1.0).abs() < 1e-15);
        let m = s.metric_jet(ChartId::Main, [PI / 3.0, 0.0]).unwrap();
        assert!((m.g.v - 0.75).abs() < 1e-15);
        assert!((m.g.g[0] - 3f64.sqrt() / 2.0).abs() < 1e-15);
        let t = Surface::flat_torus();
        let m = t.metric_jet(ChartId::Main, [1.0, 2.0]).unwrap();
        assert_eq!((m.e.v, m.f.v, m.g.v), (1.0, 0.0, 1.0));
        assert_eq!(m.e.g, [0.0; 2]);
    }

    #[test]
    fn main_chart_excludes_caps() {
        let s = Surface::unit_sphere();
        assert!(s.metric(ChartId::Main, [1e-4, 0.0]).unwrap_err().is_domain());
        assert!(s.metric(ChartId::Main, [PI - 1e-4, 0.0]).is_err());
        assert!(s.metric(ChartId::South, [1e-4, 0.0]).is_ok());
    }

    #[test]
    fn brioschi_matches_profile_curvature_in_every_chart() {
        for s in [Surface::unit_sphere(), bumpy()] {
            for &(c, q) in &[
                (ChartId::Main, [0.7, 0.2]),
                (ChartId::Main, [2.1, -1.0]),
                (ChartId::South, [0.01, 0.02]),
                (ChartId::North, [-0.03, 0.005]),
                (ChartId::South, [3e-6, 1e-6]),
            ] {
                let mj = s.metric_jet(c, q).unwrap();
                let k = s.gauss_curvature(c, q).unwrap();
                let kb = mj.brioschi();
                assert!((k - kb).abs() < 2e-6 * k.abs().max(1.0), "{c:?} {q:?}: {k} vs {kb}");
            }
        }
    }

    #[test]
    fn curvature_matches_finite_difference_oracle() {
        let s = bumpy();
        let a = |r: f64| r.sin() * (1.0 + 0.1 * r.sin().powi(2));
        for r in [0.3, 1.0, 1.6, 2.5] {
            let h = 1e-4;
            let fd = -(a(r + h) - 2.0 * a(r) + a(r - h)) / (h * h) / a(r);
            let k = s.gauss_curvature(ChartId::Main, [r, 0.0]).unwrap();
            assert!((k - fd).abs() < 1e-6 * fd.abs(), "{k} {fd}");
        }
    }

    #[test]
    fn chart_transforms_round_trip() {
        let s = bumpy();
        let q = [0.004, 0.4];
        let v = [0.03, -2.0];
        for to in [ChartId::South, ChartId::North] {
            let qm = if to == ChartId::North { [PI - q[0], q[1]] } else { q };
            let (qc, vc) = s.transform(ChartId::Main, to, qm, v, qm[1]);
            let (qb, vb) = s.transform(to, ChartId::Main, qc, vc, qm[1] + 0.1);
            for i in 0..2 {
                assert!((qb[i] - qm[i]).abs() < 1e-13);
                assert!((vb[i] - v[i]).abs() < 1e-10);
            }
            // Speed invariance across charts.
            let m0 = s.metric(ChartId::Main, qm).unwrap();
            let m1 = s.metric(to, qc).unwrap();
            assert!((m0.norm(v) - m1.norm(vc)).abs() < 1e-12);
            // Orientation: perp commutes with the chart change.
            let (_, pc) = s.transform(ChartId::Main, to, qm, m0.perp(v), qm[1]);
            let p1 = m1.perp(vc);
            assert!((pc[0] - p1[0]).abs() < 1e-10 && (pc[1] - p1[1]).abs() < 1e-10, "{to:?}");
        }
    }

    #[test]
    fn expression_profile_matches_closed_form() {
        let e = Expr::parse("sin(r)*(1 + 0.1*sin(r)^2)").unwrap();
        let s = Revolution::new(Profile::Expr { expr: e, length: PI }).unwrap();
        let b = Revolution::new(Profile::Bumpy { eps: 0.1 }).unwrap();
        for r in [0.1, 1.0, 2.0, 3.0] {
            assert!((s.primitive(r) - b.primitive(r)).abs() < 1e-13);
        }
        assert!((s.p_total() - (2.0 + 0.4 / 3.0)).abs() < 1e-13);
        let z = 0.37;
        let r = b.r_of_height(z).unwrap();
        assert!((b.height(r) - z).abs() < 1e-14);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let e = Expr::parse("2*sin(r)").unwrap();
        assert!(Revolution::new(Profile::Expr { expr: e, length: PI }).is_err());
        let e = Expr::parse("sin(r) + 0.1").unwrap();
        assert!(Revolution::new(Profile::Expr { expr: e, length: PI }).is_err());
    }

    #[test]
    fn conformal_torus_curvature() {
        let t = Torus::new(2.0 * PI, 2.0 * PI, Some(Expr::parse("exp(0.2*sin(x))").unwrap())).unwrap();
        let s = Surface::Torus(t);
        // ln lambda = 0.2 sin x so K = 0.2 sin x / (2 lambda).
        let x = 0.8;
        let k = s.gauss_curvature(ChartId::Main, [x, 0.3]).unwrap();
        let exact = 0.2 * x.sin() / (2.0 * (0.2 * x.sin()).exp());
        assert!((k - exact).abs() < 1e-14);
        let mj = s.metric_jet(ChartId::Main, [x, 0.3]).unwrap();
        assert!((mj.brioschi() - exact).abs() < 1e-12);
        assert!(Torus::new(1.0, 1.0, Some(Expr::parse("1 + x").unwrap())).is_err());
    }
}
