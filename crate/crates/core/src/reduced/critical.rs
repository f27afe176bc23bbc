//! Critical-point oracle: grid screening of `|dH|` followed by Newton polish.

use serde::Serialize;

use super::{main_box, ReducedSystem};
use crate::error::Result;
use crate::geometry::{ChartId, Surface};
use crate::jet::Jet2;

/// Hessian determinants below this (in absolute value) are degenerate.
pub const DEGENERATE_DET: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Saddle,
    /// Isolated point with a degenerate Hessian, or part of a critical curve.
    Degenerate,
    /// Whole critical circle `r = const` of an axisymmetric system.
    Circle,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub chart: ChartId,
    /// Coordinates in `chart`.
    pub q: [f64; 2],
    /// Main-chart coordinates (`r = 0` or `R` for the poles).
    pub main: [f64; 2],
    pub value: f64,
    /// Hessian `(xx, xy, yy)` in the chart coordinates.
    pub hessian: [f64; 3],
    pub hessian_det: f64,
    pub kind: CriticalKind,
    pub degenerate: bool,
    /// Number of merged grid hits (critical curves produce many).
    pub count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalSet {
    pub points: Vec<CriticalPoint>,
    /// `H` is constant; every point is critical.
    pub constant: bool,
}

impl CriticalSet {
    /// Sorted distinct critical values.
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.points.iter().map(|p| p.value).collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
        v
    }

    /// Nearest critical values strictly below and above `c`.
    pub fn bracket(&self, c: f64) -> (Option<f64>, Option<f64>) {
        let tiny = 1e-12 * c.abs().max(1e-300);
        let vals = self.values();
        let lo = vals.iter().copied().filter(|v| *v < c - tiny).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        let hi = vals.iter().copied().filter(|v| *v > c + tiny).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
        (lo, hi)
    }

    /// Points at the given value.
    pub fn at_value(&self, c: f64) -> impl Iterator<Item = &CriticalPoint> {
        let tiny = 1e-10 * c.abs().max(1e-300);
        self.points.iter().filter(move |p| (p.value - c).abs() <= tiny)
    }

    /// Number of isolated critical points, and whether all of them are non-degenerate.
    pub fn isolated_count(&self) -> (usize, bool) {
        let iso: Vec<&CriticalPoint> = self.points.iter().filter(|p| p.kind != CriticalKind::Circle && p.count == 1).collect();
        let curves = self.points.iter().any(|p| p.kind == CriticalKind::Circle || p.count > 1);
        (iso.len(), !curves && iso.iter().all(|p| !p.degenerate))
    }
}

fn classify(h: [f64; 3]) -> (f64, CriticalKind, bool) {
    let det = h[0] * h[2] - h[1] * h[1];
    let degenerate = det.abs() < DEGENERATE_DET;
    let kind = if degenerate {
        CriticalKind::Degenerate
    } else if det < 0.0 {
        CriticalKind::Saddle
    } else if h[0] + h[2] > 0.0 {
        CriticalKind::Minimum
    } else {
        CriticalKind::Maximum
    };
    (det, kind, degenerate)
}

/// Locate all critical points of `H`.
pub fn critical_points(rs: &ReducedSystem) -> Result<CriticalSet> {
    if rs.is_constant() {
        return Ok(CriticalSet { points: Vec::new(), constant: true });
    }
    let points = if rs.axisymmetric() { radial_scan(rs)? } else { grid_scan(rs)? };
    Ok(CriticalSet { points, constant: false })
}

fn pole(rs: &ReducedSystem, north: bool) -> Result<CriticalPoint> {
    let s = rs.surface.revolution().expect("revolution");
    let r = if north { s.length } else { 0.0 };
    let j = rs.radial(r)?;
    let h = [j.d[2], 0.0, j.d[2]];
    let (det, kind, degenerate) = classify(h);
    Ok(CriticalPoint {
        chart: if north { ChartId::North } else { ChartId::South },
        q: [0.0, 0.0],
        main: [r, 0.0],
        value: j.d[0],
        hessian: h,
        hessian_det: det,
        kind,
        degenerate,
        count: 1,
    })
}

fn radial_scan(rs: &ReducedSystem) -> Result<Vec<CriticalPoint>> {
    let s = rs.surface.revolution().expect("revolution");
    let mut out = vec![pole(rs, false)?, pole(rs, true)?];
    let n = 4000;
    let (lo, hi) = (s.eps, s.length - s.eps);
    let rr: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let d1: Vec<f64> = rr.iter().map(|&r| rs.radial(r).map(|j| j.d[1])).collect::<Result<_>>()?;
    let big = d1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut roots = Vec::new();
    for i in 0..n {
        if d1[i] == 0.0 || d1[i].signum() != d1[i + 1].signum() {
            roots.push(bisect(|r| rs.radial(r).map(|j| j.d[1]), rr[i], rr[i + 1])?);
        }
    }
    // Double roots of H' (no sign change) show up as small local minima of |H'|.
    for i in 1..n {
        let (a, b, c) = (d1[i - 1].abs(), d1[i].abs(), d1[i + 1].abs());
        if b <= a && b <= c && b < 1e-3 * big && d1[i - 1].signum() == d1[i + 1].signum() {
            let f2 = |r: f64| rs.radial(r).map(|j| j.d[2]);
            if f2(rr[i - 1])?.signum() != f2(rr[i + 1])?.signum() {
                let r = bisect(f2, rr[i - 1], rr[i + 1])?;
                if rs.radial(r)?.d[1].abs() < 1e-10 * big.max(1e-300) {
                    roots.push(r);
                }
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    for r in roots {
        let j = rs.radial(r)?;
        out.push(CriticalPoint {
            chart: ChartId::Main,
            q: [r, 0.0],
            main: [r, 0.0],
            value: j.d[0],
            hessian: [j.d[2], 0.0, 0.0],
            hessian_det: 0.0,
            kind: CriticalKind::Circle,
            degenerate: true,
            count: 1,
        });
    }
    Ok(out)
}

fn bisect<F: Fn(f64) -> Result<f64>>(f: F, mut a: f64, mut b: f64) -> Result<f64> {
    let mut fa = f(a)?;
    if fa == 0.0 {
        return Ok(a);
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

fn newton(rs: &ReducedSystem, chart: ChartId, q: [f64; 2], gscale: f64) -> Option<([f64; 2], Jet2)> {
    let mut q = q;
    let mut mu = 0.0;
    for _ in 0..80 {
        let j = rs.jet_in(chart, q).ok()?;
        let gn = j.g[0].hypot(j.g[1]);
        if gn <= 1e-13 * gscale {
            return Some((q, j));
        }
        // Levenberg-damped Newton copes with degenerate Hessians on critical curves.
        let h = j.h;
        let n = h[0].abs().max(h[2].abs()).max(h[1].abs()).max(1e-300);
        let (a, b, d) = (h[0] + mu * n, h[1], h[2] + mu * n);
        let det = a * d - b * b;
        let step = if det.abs() > 1e-14 * n * n {
            [-(d * j.g[0] - b * j.g[1]) / det, -(-b * j.g[0] + a * j.g[1]) / det]
        } else {
            mu = mu.max(1e-6) * 10.0;
            continue;
        };
        let trial = [q[0] + step[0], q[1] + step[1]];
        match rs.jet_in(chart, trial) {
            Ok(jt) if jt.g[0].hypot(jt.g[1]) < gn => {
                q = trial;
                mu *= 0.1;
            }
            _ => {
                mu = mu.max(1e-6) * 10.0;
                if mu > 1e8 {
                    return None;
                }
            }
        }
    }
    let j = rs.jet_in(chart, q).ok()?;
    (j.g[0].hypot(j.g[1]) <= 1e-9 * gscale).then_some((q, j))
}

/// Representative in `[0, period)`, snapping round-off next to the seam to 0.
fn canon(x: f64, period: f64) -> f64 {
    let w = x.rem_euclid(period);
    if period - w < 1e-12 * period || w < 1e-12 * period {
        0.0
    } else {
        w
    }
}

fn grid_scan(rs: &ReducedSystem) -> Result<Vec<CriticalPoint>> {
    let ((x0, x1), (y0, y1)) = main_box(rs.surface);
    let n = 48usize;
    let periodic_x = matches!(rs.surface, Surface::Torus(_));
    let nx = if periodic_x { n } else { n + 1 };
    let px = |i: usize| if periodic_x { x0 + (x1 - x0) * i as f64 / n as f64 } else { x0 + (x1 - x0) * i as f64 / n as f64 };
    let py = |j: usize| y0 + (y1 - y0) * j as f64 / n as f64;
    let mut g2 = vec![f64::NAN; nx * n];
    for i in 0..nx {
        for j in 0..n {
            if let Ok(jt) = rs.jet([px(i), py(j)]) {
                g2[i * n + j] = jt.g[0] * jt.g[0] + jt.g[1] * jt.g[1];
            }
        }
    }
    let gscale = g2.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.sqrt())).max(1e-300);
    let mut found: Vec<CriticalPoint> = Vec::new();
    let add = |chart: ChartId, q: [f64; 2], jt: Jet2, found: &mut Vec<CriticalPoint>| {
        let (main, q) = match (rs.surface, chart) {
            (Surface::Torus(t), _) => {
                let w = [canon(q[0], t.lx), canon(q[1], t.ly)];
                (w, w)
            }
            (Surface::Revolution(_), ChartId::Main) => {
                let w = [q[0], canon(q[1], 2.0 * std::f64::consts::PI)];
                (w, w)
            }
            (Surface::Revolution(_), c) => {
                let nat = rs.surface.natural(c, q);
                ([nat[0], nat[1]], q)
            }
        };
        let (det, kind, degenerate) = classify(jt.h);
        for p in found.iter_mut() {
            let d = if p.chart == chart { rs.wrap([p.main[0] - main[0], p.main[1] - main[1]]) } else { [f64::INFINITY; 2] };
            if d[0].hypot(d[1]) < 1e-6 {
                return;
            }
            // Degenerate points at one value lying on a common critical curve are merged.
            if degenerate && p.degenerate && p.chart == chart && (p.value - jt.v).abs() <= 1e-10 * jt.v.abs().max(1e-300) {
                p.count += 1;
                return;
            }
        }
        found.push(CriticalPoint { chart, q, main, value: jt.v, hessian: jt.h, hessian_det: det, kind, degenerate, count: 1 });
    };
    let at = |i: isize, j: isize| -> f64 {
        let ii = if periodic_x { i.rem_euclid(nx as isize) } else { i };
        if ii < 0 || ii >= nx as isize {
            return f64::NAN;
        }
        g2[ii as usize * n + j.rem_euclid(n as isize) as usize]
    };
    for i in 0..nx as isize {
        for j in 0..n as isize {
            let v = at(i, j);
            if !v.is_finite() {
                continue;
            }
            let mut is_min = true;
            for di in -1..=1 {
                for dj in -1..=1 {
                    if (di, dj) != (0, 0) {
                        let w = at(i + di, j + dj);
                        if w.is_finite() && w < v {
                            is_min = false;
                        }
                    }
                }
            }
            if is_min {
                if let Some((q, jt)) = newton(rs, ChartId::Main, [px(i as usize), py(j as usize)], gscale) {
                    add(ChartId::Main, q, jt, &mut found);
                }
            }
        }
    }
    if let Surface::Revolution(s) = rs.surface {
        for chart in [ChartId::South, ChartId::North] {
            if let Some((q, jt)) = newton(rs, chart, [1e-3 * s.eps, 0.7e-3 * s.eps], gscale) {
                add(chart, q, jt, &mut found);
            }
        }
    }
    Ok(found)
}

/// Linear normalization at a non-degenerate saddle: `G ~ c + lambda x y` with
/// `q = z1 + x n_x + y n_y`, `det[n_x, n_y] > 0` and `lambda > 0`.
///
/// `G` is the saddle function of the trapping statements (`-1/b` in field
/// mode, `-K` otherwise), which orders levels opposite to `H` where `b > 0`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SaddleFrame {
    pub at: [f64; 2],
    pub value: f64,
    pub nx: [f64; 2],
    pub ny: [f64; 2],
    pub lambda: f64,
    /// `+1` when `G` increases with `H`, `-1` otherwise.
    pub orientation: f64,
}

impl SaddleFrame {
    /// Local coordinates `(x, y)` of a chart displacement from the saddle.
    pub fn coords(&self, d: [f64; 2]) -> [f64; 2] {
        let det = self.nx[0] * self.ny[1] - self.nx[1] * self.ny[0];
        [(d[0] * self.ny[1] - d[1] * self.ny[0]) / det, (self.nx[0] * d[1] - self.nx[1] * d[0]) / det]
    }

    pub fn point(&self, x: f64, y: f64) -> [f64; 2] {
        [self.at[0] + x * self.nx[0] + y * self.ny[0], self.at[1] + x * self.nx[1] + y * self.ny[1]]
    }
}

/// Build the [`SaddleFrame`] of a critical point; fails unless it is a non-degenerate saddle.
pub fn saddle_frame(rs: &ReducedSystem, p: &CriticalPoint) -> Result<SaddleFrame> {
    if p.kind != CriticalKind::Saddle || p.degenerate || p.chart != ChartId::Main {
        return Err(crate::error::Error::Precondition(format!(
            "critical point at ({:.6}, {:.6}) is not a non-degenerate main-chart saddle ({:?}, det {:.3e})",
            p.main[0], p.main[1], p.kind, p.hessian_det
        )));
    }
    let orientation = match (rs.mode, rs.field) {
        (super::Mode::Field, Some(f)) => -f.value(rs.surface, ChartId::Main, p.q).signum(),
        _ => -1.0,
    };
    let [a, b, d] = p.hessian.map(|h| h * orientation);
    // Eigen-decomposition of the symmetric 2x2 Hessian.
    let tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (tr + disc, tr - disc);
    let e1 = if b.abs() > 1e-300 { norm([l1 - d, b]) } else if a >= d { [1.0, 0.0] } else { [0.0, 1.0] };
    let e2 = [-e1[1], e1[0]];
    let (s1, s2) = (l1.sqrt(), (-l2).sqrt());
    let np = [e1[0] / s1 + e2[0] / s2, e1[1] / s1 + e2[1] / s2];
    let nm = [e1[0] / s1 - e2[0] / s2, e1[1] / s1 - e2[1] / s2];
    let (np_n, nm_n) = (np[0].hypot(np[1]), nm[0].hypot(nm[1]));
    let (mut nx, mut ny) = ([np[0] / np_n, np[1] / np_n], [nm[0] / nm_n, nm[1] / nm_n]);
    if nx[0] * ny[1] - nx[1] * ny[0] < 0.0 {
        std::mem::swap(&mut nx, &mut ny);
    }
    // Bilinear form of the null vectors is 2 before normalization.
    let lambda = 2.0 / (np_n * nm_n);
    Ok(SaddleFrame { at: p.main, value: p.value, nx, ny, lambda, orientation })
}

fn norm(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FieldKind, FieldSpec};
    use crate::reduced::make_reduced;
    use std::f64::consts::PI;

    #[test]
    fn sphere_affine_has_two_poles() {
        let s = Surface::unit_sphere();
        let f = FieldSpec::new(FieldKind::AffineHeight { c0: 2.0, c1: 1.0 }, &s).unwrap();
        let rs = make_reduced(&s, &f, None).unwrap();
        let cs = critical_points(&rs).unwrap();
        assert_eq!(cs.points.len(), 2);
        let v = cs.values();
        assert!((v[0] - 1.0 / 18.0).abs() < 1e-14 && (v[1] - 0.5).abs() < 1e-14);
        assert_eq!(cs.isolated_count(), (2, true));
        assert_eq!(cs.bracket(0.125), (Some(v[0]), Some(v[1])));
    }

    #[test]
    fn cubic_height_field_has_degenerate_circle() {
        let s = Surface::unit_sphere();
        let f = FieldSpec::new(FieldKind::Expr(crate::expr::Expr::parse("2 + z^3").unwrap()), &s).unwrap();
        let rs = make_reduced(&s, &f, None).unwrap();
        let cs = critical_points(&rs).unwrap();
        let circ: Vec<_> = cs.points.iter().filter(|p| p.kind == CriticalKind::Circle).collect();
        assert_eq!(circ.len(), 1);
        assert!((circ[0].main[0] - PI / 2.0).abs() < 1e-6);
        assert!((circ[0].value - 0.125).abs() < 1e-12);
    }

    #[test]
    fn torus_trig_saddles() {
        let t = Surface::flat_torus();
        let f = FieldSpec::new(FieldKind::TorusTrig { c0: 3.0, cx: 1.0, cy: 1.0 }, &t).unwrap();
        let rs = make_reduced(&t, &f, None).unwrap();
        let cs = critical_points(&rs).unwrap();
        assert_eq!(cs.points.len(), 4, "{:?}", cs.points);
        let saddles: Vec<_> = cs.points.iter().filter(|p| p.kind == CriticalKind::Saddle).collect();
        assert_eq!(saddles.len(), 2);
        assert!(saddles.iter().any(|p| (p.main[0] - PI).abs() < 1e-9 && p.main[1].abs() < 1e-9));
        assert!((saddles[0].value - 1.0 / 18.0).abs() < 1e-14);
        assert!(cs.points.iter().all(|p| !p.degenerate));
        let sp = saddles.iter().find(|p| (p.main[0] - PI).abs() < 1e-9).unwrap();
        let fr = saddle_frame(&rs, sp).unwrap();
        assert!(fr.nx[0] * fr.ny[1] - fr.nx[1] * fr.ny[0] > 0.0);
        // G = -1/b along the frame: G(z1 + x nx + y ny) ~ G0 + lambda x y.
        let g = |q: [f64; 2]| -1.0 / f.value(&t, ChartId::Main, q);
        let h = 1e-4;
        let mixed = (g(fr.point(h, h)) - g(fr.point(h, -h)) - g(fr.point(-h, h)) + g(fr.point(-h, -h))) / (4.0 * h * h);
        let gl = rs.h(fr.at).unwrap();
        assert!(mixed > 0.0 && gl > 0.0);
        assert!((g(fr.point(h, 0.0)) - g(fr.at)).abs() < 1e-10);
        assert!((fr.nx[0] - fr.nx[1]).abs() < 1e-9 || (fr.nx[0] + fr.nx[1]).abs() < 1e-9);
        let c = fr.coords([fr.nx[0] * 0.3 + fr.ny[0] * 0.2, fr.nx[1] * 0.3 + fr.ny[1] * 0.2]);
        assert!((c[0] - 0.3).abs() < 1e-12 && (c[1] - 0.2).abs() < 1e-12);
    }
}
