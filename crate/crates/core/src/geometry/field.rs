use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var, N_VARS};
use crate::geometry::surface::{ChartId, Surface};
use crate::jet::{Jet2, Jet3, Real};

/// Built-in magnetic field families and free-form expressions.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldKind {
    Constant(f64),
    /// `c0 + c1 z` with z the normalized height.
    AffineHeight { c0: f64, c1: f64 },
    /// `c0 + c1 cos r`.
    RadialCos { c0: f64, c1: f64 },
    /// `c0 + cx cos x + cy cos y`.
    TorusTrig { c0: f64, cx: f64, cy: f64 },
    /// `(2 (alpha z + beta))^(-1/2)`, whose reduced Hamiltonian is `alpha z + beta`.
    ResonantHeight { alpha: f64, beta: f64 },
    Expr(Expr),
}

/// Whether the field vanishes somewhere on the surface.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ZeroSet {
    Empty,
    /// Nonempty; carries a sample point of a sign change.
    Nonempty { near: [f64; 2] },
}

/// Magnetic field `b` on a surface.
#[derive(Clone, Debug)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub zero_set: ZeroSet,
}

impl FieldSpec {
    /// Build a field, checking its variables against the surface and scanning for zeros.
    pub fn new(kind: FieldKind, surface: &Surface) -> Result<FieldSpec> {
        match (&kind, surface) {
            (FieldKind::TorusTrig { .. }, Surface::Revolution(_)) => {
                return Err(Error::Config("torus_trig field requires a torus".into()))
            }
            (FieldKind::AffineHeight { .. } | FieldKind::RadialCos { .. } | FieldKind::ResonantHeight { .. }, Surface::Torus(_)) => {
                return Err(Error::Config("height and radial fields require a surface of revolution".into()))
            }
            (FieldKind::ResonantHeight { alpha, beta }, _) => check_resonant(*alpha, *beta)?,
            (FieldKind::Expr(e), s) => {
                for v in e.vars() {
                    let ok = match s {
                        Surface::Torus(_) => matches!(v, Var::X | Var::Y),
                        Surface::Revolution(_) => matches!(v, Var::R | Var::Phi | Var::Z),
                    };
                    if !ok {
                        return Err(Error::Config(format!(
                            "field expression uses '{}' which is not a coordinate of a {} surface",
                            v.name(),
                            s.kind_name()
                        )));
                    }
                }
            }
            _ => {}
        }
        let mut f = FieldSpec { kind, zero_set: ZeroSet::Empty };
        f.zero_set = f.scan_zero_set(surface);
        Ok(f)
    }

    pub fn constant(b: f64) -> FieldSpec {
        FieldSpec { kind: FieldKind::Constant(b), zero_set: if b == 0.0 { ZeroSet::Nonempty { near: [0.0; 2] } } else { ZeroSet::Empty } }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self.kind {
            FieldKind::Constant(c) => Some(c),
            FieldKind::AffineHeight { c0, c1 } if c1 == 0.0 => Some(c0),
            FieldKind::RadialCos { c0, c1 } if c1 == 0.0 => Some(c0),
            FieldKind::TorusTrig { c0, cx, cy } if cx == 0.0 && cy == 0.0 => Some(c0),
            FieldKind::ResonantHeight { alpha, beta } if alpha == 0.0 => Some((2.0 * beta).powf(-0.5)),
            _ => None,
        }
    }

    /// True when `b` depends on the point only through `r` (revolution surfaces).
    pub fn axisymmetric(&self) -> bool {
        match &self.kind {
            FieldKind::TorusTrig { .. } => false,
            FieldKind::Expr(e) => !e.uses(Var::Phi) && !e.uses(Var::X) && !e.uses(Var::Y),
            _ => true,
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            FieldKind::Constant(c) => format!("b = {c}"),
            FieldKind::AffineHeight { c0, c1 } => format!("b = {c0} + {c1} z"),
            FieldKind::RadialCos { c0, c1 } => format!("b = {c0} + {c1} cos r"),
            FieldKind::TorusTrig { c0, cx, cy } => format!("b = {c0} + {cx} cos x + {cy} cos y"),
            FieldKind::ResonantHeight { alpha, beta } => format!("b = (2({alpha} z + {beta}))^(-1/2)"),
            FieldKind::Expr(e) => format!("b = {}", e.source()),
        }
    }

    /// Evaluate on field variables `[r, phi, z, x, y]`.
    #[inline]
    pub fn eval<T: Real>(&self, v: &[T; N_VARS]) -> T {
        match &self.kind {
            FieldKind::Constant(c) => T::cst(*c),
            FieldKind::AffineHeight { c0, c1 } => v[Var::Z as usize].mul_f(*c1).add_f(*c0),
            FieldKind::RadialCos { c0, c1 } => v[Var::R as usize].cos().mul_f(*c1).add_f(*c0),
            FieldKind::TorusTrig { c0, cx, cy } => {
                v[Var::X as usize].cos().mul_f(*cx) + v[Var::Y as usize].cos().mul_f(*cy).add_f(*c0)
            }
            FieldKind::ResonantHeight { alpha, beta } => v[Var::Z as usize].mul_f(2.0 * alpha).add_f(2.0 * beta).powf(-0.5),
            FieldKind::Expr(e) => e.eval(v),
        }
    }

    /// Field value at a chart point.
    #[inline]
    pub fn value(&self, surface: &Surface, chart: ChartId, q: [f64; 2]) -> f64 {
        if let Some(c) = self.constant_value() {
            return c;
        }
        self.eval(&surface.natural(chart, q))
    }

    /// Univariate jet of an axisymmetric field in `r`.
    pub fn radial_jet(&self, surface: &Surface, r: f64) -> Jet3 {
        let s = surface.revolution().expect("radial jet needs a surface of revolution");
        let z = s.height_jet(r);
        let zero = Jet3::constant(0.0);
        self.eval(&[Jet3::var(r), zero, z, zero, zero])
    }

    /// Value, gradient and Hessian in the chart coordinates.
    pub fn jet(&self, surface: &Surface, chart: ChartId, q: [f64; 2]) -> Jet2 {
        if let Some(c) = self.constant_value() {
            return Jet2::constant(c);
        }
        if chart != ChartId::Main && self.axisymmetric() {
            let w = q[0] * q[0] + q[1] * q[1];
            if w < 1e-10 {
                // Even expansion b0 + b2 w / 2 at the pole.
                let s = surface.revolution().expect("caps only on revolution surfaces");
                let r0 = if chart == ChartId::North { s.length } else { 0.0 };
                let j = self.radial_jet(surface, r0);
                let b2 = j.d[2];
                return Jet2 { v: j.d[0] + 0.5 * b2 * w, g: [b2 * q[0], b2 * q[1]], h: [b2, 0.0, b2] };
            }
        }
        self.eval(&surface.natural_jet(chart, q))
    }

    /// Largest relative mismatch between the analytic gradient and central differences.
    pub fn gradient_check(&self, surface: &Surface, points: &[(ChartId, [f64; 2])]) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for &(c, q) in points {
            let j = self.jet(surface, c, q);
            let scale = j.g[0].abs().max(j.g[1].abs()).max(1e-8 * j.v.abs().max(1.0));
            for i in 0..2 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let fd = (self.value(surface, c, qp) - self.value(surface, c, qm)) / (2.0 * h);
                worst = worst.max((fd - j.g[i]).abs() / scale);
            }
        }
        worst
    }

    fn scan_zero_set(&self, surface: &Surface) -> ZeroSet {
        if let Some(c) = self.constant_value() {
            return if c == 0.0 { ZeroSet::Nonempty { near: [0.0; 2] } } else { ZeroSet::Empty };
        }
        let n = 96;
        let (x0, x1, y1) = match surface {
            Surface::Revolution(s) => (s.eps, s.length - s.eps, 2.0 * std::f64::consts::PI),
            Surface::Torus(t) => (0.0, t.lx, t.ly),
        };
        let mut sign = 0.0;
        for i in 0..=n {
            for j in 0..n {
                let q = [x0 + (x1 - x0) * i as f64 / n as f64, y1 * j as f64 / n as f64];
                let b = self.value(surface, ChartId::Main, q);
                if b == 0.0 || (sign != 0.0 && b.signum() != sign) || !b.is_finite() {
                    return ZeroSet::Nonempty { near: q };
                }
                sign = b.signum();
            }
        }
        ZeroSet::Empty
    }
}

/// Positivity check for the resonant height family.
pub fn check_resonant(alpha: f64, beta: f64) -> Result<()> {
    if !(beta > alpha.abs()) {
        return Err(Error::Precondition(format!(
            "resonant field needs beta > |alpha| so that alpha z + beta > 0 on [-1, 1] (alpha = {alpha}, beta = {beta})"
        )));
    }
    Ok(())
}
