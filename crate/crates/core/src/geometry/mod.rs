//! Surfaces, metrics, magnetic fields and quadrature.

pub mod field;
pub mod quadrature;
pub mod surface;

use std::f64::consts::PI;

use serde::Serialize;

pub use field::{FieldKind, FieldSpec, ZeroSet};
pub use surface::{lift, ChartId, ChartPoint, Metric, MetricJet, Profile, Revolution, Surface, Torus};

use crate::error::Result;
use quadrature::Rule;

/// Integration region for [`integrate_density`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Whole,
    /// Rectangle `[q1.0, q1.1] x [q2.0, q2.1]` of the main chart.
    Rect { q1: (f64, f64), q2: (f64, f64) },
}

/// Quadrature result with a Richardson-style error estimate.
#[derive(Clone, Debug, Serialize)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
    pub warnings: Vec<String>,
}

/// Quadrature controls.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureOpts {
    pub order: usize,
    pub panels: usize,
    /// Integrate main-chart rectangles into the pole caps instead of warning.
    pub cap_correction: bool,
}

impl Default for QuadratureOpts {
    fn default() -> Self {
        QuadratureOpts { order: 12, panels: 8, cap_correction: false }
    }
}

/// `int f mu` over a region; `f` receives main-chart coordinates.
///
/// Main-chart polar coordinates are integrable up to the poles because the
/// density `a(r) dr dphi` is smooth there, so the whole surface needs no
/// cap charts.
pub fn integrate_density(
    surface: &Surface,
    f: &dyn Fn([f64; 2]) -> f64,
    region: Region,
    opts: QuadratureOpts,
) -> Result<Integral> {
    let mut warnings = Vec::new();
    let (x, y, whole) = match (surface, region) {
        (Surface::Revolution(s), Region::Whole) => ((0.0, s.length), (0.0, 2.0 * PI), true),
        (Surface::Torus(t), Region::Whole) => ((0.0, t.lx), (0.0, t.ly), true),
        (_, Region::Rect { q1, q2 }) => (q1, q2, false),
    };
    if let (Surface::Revolution(s), false) = (surface, whole) {
        let touches = x.0.min(x.1) < s.eps || x.0.max(x.1) > s.length - s.eps;
        if touches && !opts.cap_correction {
            warnings.push(format!(
                "region overlaps excluded pole caps (r < {:.3e} or r > R - {:.3e}); enable cap correction",
                s.eps, s.eps
            ));
        }
    }
    let rule = Rule::new(opts.order);
    let dens = |q1: f64, q2: f64| -> f64 {
        let q = [q1, q2];
        let w = match surface {
            Surface::Revolution(s) => s.profile.eval(q1),
            Surface::Torus(t) => t.lambda_f64(q1, q2),
        };
        f(q) * w
    };
    let (px, py) = match surface {
        Surface::Revolution(_) => (opts.panels, opts.panels),
        Surface::Torus(_) => (opts.panels, opts.panels),
    };
    let coarse = rule.integrate2(x, y, (px, py), dens);
    let fine = rule.integrate2(x, y, (2 * px, 2 * py), dens);
    Ok(Integral { value: fine, error_estimate: (fine - coarse).abs(), warnings })
}

/// Area-weighted Gaussian curvature samples on a tensor quadrature grid.
pub fn curvature_samples(surface: &Surface, opts: QuadratureOpts) -> Result<Vec<(f64, f64)>> {
    let rule = Rule::new(opts.order);
    let (x, y) = match surface {
        Surface::Revolution(s) => ((0.0, s.length), (0.0, 2.0 * PI)),
        Surface::Torus(t) => ((0.0, t.lx), (0.0, t.ly)),
    };
    let n = opts.panels;
    let hx = (x.1 - x.0) / n as f64;
    let hy = (y.1 - y.0) / n as f64;
    let mut out = Vec::new();
    for i in 0..n {
        for (xi, wi) in rule.nodes() {
            let q1 = x.0 + hx * (i as f64 + 0.5 * (xi + 1.0));
            let (k, dens) = point_curvature(surface, q1, 0.0)?;
            for j in 0..n {
                for (yj, wj) in rule.nodes() {
                    let q2 = y.0 + hy * (j as f64 + 0.5 * (yj + 1.0));
                    let (k, dens) = match surface {
                        Surface::Revolution(_) => (k, dens),
                        Surface::Torus(_) => point_curvature(surface, q1, q2)?,
                    };
                    out.push((k, 0.25 * hx * hy * wi * wj * dens));
                }
            }
        }
    }
    Ok(out)
}

/// Curvature and area density at a main-chart point (poles allowed on revolution surfaces).
pub fn point_curvature(surface: &Surface, q1: f64, q2: f64) -> Result<(f64, f64)> {
    match surface {
        Surface::Revolution(s) => {
            let a = s.profile.eval(crate::jet::Jet3::var(q1));
            Ok((-a.d[2] / a.d[0], a.d[0]))
        }
        Surface::Torus(t) => Ok((surface.gauss_curvature(ChartId::Main, [q1, q2])?, t.lambda_f64(q1, q2))),
    }
}
