//! Rotationally symmetric systems: leading-order rotation numbers, rational
//! speeds, the boundary obstruction for curvature circle actions and the
//! resonant-field constructor.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::field::check_resonant;
use crate::geometry::{FieldKind, FieldSpec, Profile, Revolution, Surface};
use crate::magflow::fmt;
use crate::ode::{self, Tolerance};
use crate::section::{rotation_number, Region, SectionMap, SectionOpts};

/// Sign relating the leading-order formula to rotation numbers measured by
/// [`crate::section::rotation_number`]: `phi` advance per return, positive
/// along the main-chart angle. Calibrated against the full flow in the tests.
pub const ROTATION_SIGN: f64 = 1.0;

/// Metric `dr^2 + a(r)^2 dphi^2` with an axisymmetric field `b(r)`.
#[derive(Clone, Copy)]
pub struct SymmetricSystem<'a> {
    pub surface: &'a Surface,
    pub field: &'a FieldSpec,
}

impl<'a> SymmetricSystem<'a> {
    pub fn new(surface: &'a Surface, field: &'a FieldSpec) -> Result<SymmetricSystem<'a>> {
        if surface.revolution().is_none() {
            return Err(Error::Precondition("symmetric systems live on surfaces of revolution".into()));
        }
        if !field.axisymmetric() {
            return Err(Error::Precondition(format!("field {} is not axisymmetric", field.describe())));
        }
        Ok(SymmetricSystem { surface, field })
    }

    pub fn rev(&self) -> &'a Revolution {
        self.surface.revolution().expect("checked in new")
    }

    /// Primitive of `a` normalized to `A(0) = -1`, `A(R) = 1`; this is the height `z`.
    pub fn primitive_normalized(&self, r: f64) -> f64 {
        self.rev().height(r)
    }

    /// `(a, b, b')` at `r`.
    pub fn data(&self, r: f64) -> (f64, f64, f64) {
        let a = self.rev().profile.eval(r);
        let b = self.field.radial_jet(self.surface, r);
        (a, b.d[0], b.d[1])
    }
}

/// Leading-order rotation per return, `-s^2 pi b' / (a b^3)`, in the sign
/// convention of [`ROTATION_SIGN`].
pub fn symmetric_rotation_number(sys: &SymmetricSystem, r: f64, s: f64) -> Result<f64> {
    let len = sys.rev().length;
    if !(r > 0.0 && r < len) {
        return Err(Error::Precondition(format!("r = {r} outside (0, {len})")));
    }
    let (a, b, db) = sys.data(r);
    if !(b.abs() > 1e-12) {
        return Err(Error::Singular(format!("b vanishes at r = {r}")));
    }
    Ok(ROTATION_SIGN * (-s * s * PI * db / (a * b * b * b)))
}

/// Section band around the circle `r` wide enough for gyrations of speed `s`.
fn band_around(sys: &SymmetricSystem, r: f64, s: f64) -> Region {
    let rev = sys.rev();
    let (_, b, _) = sys.data(r);
    let w = (4.0 * s / b.abs()).max(0.3);
    Region::band((r - w).max(3.5 * rev.eps), (r + w).min(rev.length - 3.5 * rev.eps))
}

/// Full-flow rotation number at the section point `(r, 0)`.
pub fn measured_rotation(sys: &SymmetricSystem, r: f64, s: f64, iterates: usize, tol: f64) -> Result<f64> {
    let opts = SectionOpts { tol, s_max: f64::INFINITY, ..SectionOpts::default() };
    let map = SectionMap::new(sys.surface, sys.field, s, band_around(sys, r, s), opts)?;
    let est = rotation_number(&map, [r, 0.0], iterates)?;
    if est.escaped {
        return Err(Error::Precondition(format!("orbit at r = {r} left the section band at s = {s}")));
    }
    Ok(est.value)
}

/// Sign of the leading-order formula relative to the full flow at `(r, s)`.
pub fn calibrate_rotation_sign(sys: &SymmetricSystem, r: f64, s: f64, tol: f64) -> Result<f64> {
    let lead = symmetric_rotation_number(sys, r, s)? / ROTATION_SIGN;
    if lead == 0.0 {
        return Err(Error::Precondition(format!("b'(r) = 0 at r = {r}; no sign to calibrate")));
    }
    let full = measured_rotation(sys, r, s, 400, tol)?;
    Ok((full / lead).signum())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RationalOpts {
    pub max_q: u64,
    /// Bisection tolerance on `s`.
    pub polish_tol: f64,
    pub iterates: usize,
    pub flow_tol: f64,
    /// Also check closure of `map^q` at each polished speed.
    pub closure_check: bool,
}

impl Default for RationalOpts {
    fn default() -> Self {
        RationalOpts { max_q: 100, polish_tol: 1e-10, iterates: 400, flow_tol: 1e-11, closure_check: true }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RationalSpeed {
    /// Signed so that `rho = 2 pi p / q` in the measured convention.
    pub p: i64,
    pub q: u64,
    pub s_leading: f64,
    pub s: f64,
    pub rho: f64,
    /// `|map^q(x) - x - (0, 2 pi p)|` at `x = (r, 0)`.
    pub closure: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RationalSearch {
    pub r: f64,
    pub s_max: f64,
    pub speeds: Vec<RationalSpeed>,
    pub notes: Vec<String>,
}

/// Largest reduced fractions in `(0, x]` with denominator at most `max_q`, decreasing.
pub fn fractions_below(x: f64, count: usize, max_q: u64) -> Vec<(u64, u64)> {
    let mut all: Vec<(u64, u64)> = Vec::new();
    if !(x > 0.0) || count == 0 {
        return all;
    }
    for q in 1..=max_q {
        let pmax = (x * q as f64).floor() as u64;
        // Only the top `count` numerators of each denominator can make the cut.
        for p in pmax.saturating_sub(count as u64 - 1).max(1)..=pmax {
            if gcd(p, q) == 1 {
                all.push((p, q));
            }
        }
    }
    all.sort_by(|a, b| (b.0 as f64 / b.1 as f64).total_cmp(&(a.0 as f64 / a.1 as f64)));
    all.truncate(count);
    all
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Speeds `s_1 > s_2 > ...` below `s_max` with `rho_s(r) / 2 pi` rational.
pub fn rational_speed_search(sys: &SymmetricSystem, r: f64, s_max: f64, count: usize, opts: RationalOpts) -> Result<RationalSearch> {
    let (a, b, db) = sys.data(r);
    if db == 0.0 {
        return Err(Error::Precondition(format!("b'(r) = 0 at r = {r}: the leading rotation vanishes")));
    }
    // |rho| = k s^2 to leading order.
    let k = (PI * db / (a * b * b * b)).abs();
    let sign = symmetric_rotation_number(sys, r, 1.0)?.signum();
    // Candidates are capped by the measured rotation: the leading term overshoots it,
    // which would put the top fractions just above s_max.
    let x_max = measured_rotation(sys, r, s_max, opts.iterates, opts.flow_tol)?.abs() / (2.0 * PI);
    let mut out = RationalSearch { r, s_max, speeds: Vec::new(), notes: Vec::new() };
    let fr = fractions_below(x_max, count, opts.max_q);
    if fr.len() < count {
        out.notes.push(format!("only {} fractions with q <= {} lie below {:.6e}", fr.len(), opts.max_q, x_max));
    }
    for (p, q) in fr {
        let target = 2.0 * PI * p as f64 / q as f64;
        let s0 = (target / k).sqrt();
        match polish(sys, r, s0, target, sign, s_max, &opts) {
            Ok((s, rho)) => {
                let pp = sign as i64 * p as i64;
                let closure = if opts.closure_check { Some(closure_residual(sys, r, s, pp, q, opts.flow_tol)?) } else { None };
                out.speeds.push(RationalSpeed { p: pp, q, s_leading: s0, s, rho, closure });
            }
            Err(e) => out.notes.push(format!("{p}/{q}: skipped ({e})")),
        }
    }
    out.speeds.sort_by(|x, y| y.s.total_cmp(&x.s));
    Ok(out)
}

/// Bisection of `|rho_full(s)| = target` in a bracket grown around `s0`.
fn polish(sys: &SymmetricSystem, r: f64, s0: f64, target: f64, sign: f64, s_max: f64, opts: &RationalOpts) -> Result<(f64, f64)> {
    let g = |s: f64| -> Result<(f64, f64)> {
        let rho = measured_rotation(sys, r, s, opts.iterates, opts.flow_tol)?;
        Ok((sign * rho - target, rho))
    };
    let mut lo = s0 * 0.95;
    let mut hi = (s0 * 1.05).min(s_max);
    let (mut glo, _) = g(lo)?;
    let mut ghi = g(hi)?.0;
    let mut grow = 0;
    while glo.signum() == ghi.signum() {
        grow += 1;
        if grow > 8 {
            return Err(Error::Budget(format!("no bracket for s near {s0:.6e}")));
        }
        if glo > 0.0 {
            lo *= 0.8;
            glo = g(lo)?.0;
        } else {
            if hi >= s_max {
                return Err(Error::Precondition(format!("solution above s_max = {s_max}")));
            }
            hi = (hi * 1.25).min(s_max);
            ghi = g(hi)?.0;
        }
    }
    while hi - lo > opts.polish_tol {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?.0;
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
            ghi = gm;
        }
    }
    // Secant step inside the final bracket.
    let s = if ghi != glo { (lo - glo * (hi - lo) / (ghi - glo)).clamp(lo, hi) } else { 0.5 * (lo + hi) };
    Ok((s, g(s)?.1))
}

/// `|map^q(x) - x - (0, 2 pi p)|` from `x = (r, 0)`.
pub fn closure_residual(sys: &SymmetricSystem, r: f64, s: f64, p: i64, q: u64, tol: f64) -> Result<f64> {
    let opts = SectionOpts { tol, s_max: f64::INFINITY, ..SectionOpts::default() };
    let map = SectionMap::new(sys.surface, sys.field, s, band_around(sys, r, s), opts)?;
    let y = map.iterate_to([r, 0.0], q as usize, 1.0)?;
    Ok((y.q[0] - r).hypot(y.q[1] - 2.0 * PI * p as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionStatus {
    Compatible,
    Incompatible,
    IncompatibleBlowUp,
}

#[derive(Clone, Debug, Serialize)]
pub struct ActionRow {
    pub c1: f64,
    /// `|Q(R) - Q(0)|` of `Q = (A')^2 + c1 A^3 / 3 + A^2 - c1 A` on the boundary data.
    pub conserved_mismatch: f64,
    /// `|A(R) - 1| + |A'(R)|` of the integrated solution; infinite on blow-up.
    pub ode_mismatch: f64,
    /// Drift of `Q` along the integrated solution.
    pub conservation_drift: f64,
    pub residual: f64,
    pub status: ActionStatus,
}

#[derive(Clone, Debug, Serialize)]
pub struct ActionOdeReport {
    pub length: f64,
    pub rows: Vec<ActionRow>,
}

/// Conserved quantity of `2A'' + c1 A^2 + 2A - c1 = 0`.
pub fn action_invariant(c1: f64, a: f64, da: f64) -> f64 {
    da * da + c1 * a * a * a / 3.0 + a * a - c1 * a
}

/// Boundary test for `K = c1 A + 1` on `[0, length]` with `A(0) = -1`, `A(R) = 1`, `A'(0) = A'(R) = 0`.
pub fn revolution_action_ode_test(length: f64, c1_grid: &[f64], tol: f64) -> Result<ActionOdeReport> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::Precondition(format!("R must be positive, got {length}")));
    }
    if let Some(c) = c1_grid.iter().find(|c| !c.is_finite()) {
        return Err(Error::Precondition(format!("c1 grid value {c} is not finite")));
    }
    let mut rows = Vec::with_capacity(c1_grid.len());
    for &c1 in c1_grid {
        let q0 = action_invariant(c1, -1.0, 0.0);
        let conserved = (action_invariant(c1, 1.0, 0.0) - q0).abs();
        let f = move |y: &[f64; 2]| Ok([y[1], 0.5 * (c1 - c1 * y[0] * y[0] - 2.0 * y[0])]);
        let mut drift: f64 = 0.0;
        let mut blew = false;
        let res = ode::integrate(f, [-1.0, 0.0], length, Tolerance::uniform(tol), 2_000_000, |_, y| {
            if y[0].abs() > 1e6 || !y[0].is_finite() {
                blew = true;
                return false;
            }
            drift = drift.max((action_invariant(c1, y[0], y[1]) - q0).abs());
            true
        });
        let ode_mismatch = match res {
            Ok((_, y)) if !blew => (y[0] - 1.0).abs() + y[1].abs(),
            Ok(_) => f64::INFINITY,
            Err(Error::StepUnderflow { .. }) | Err(Error::Budget(_)) => {
                blew = true;
                f64::INFINITY
            }
            Err(e) => return Err(e),
        };
        let residual = conserved.max(ode_mismatch);
        let status = if blew {
            ActionStatus::IncompatibleBlowUp
        } else if residual <= 1e3 * tol.max(1e-14) {
            ActionStatus::Compatible
        } else {
            ActionStatus::Incompatible
        };
        rows.push(ActionRow { c1, conserved_mismatch: conserved, ode_mismatch, conservation_drift: drift, residual, status });
    }
    Ok(ActionOdeReport { length, rows })
}

/// Rescale a profile to area `4 pi`: `a(r) -> k a(r / k)` with `k^2` the area ratio.
pub fn normalized_length(rev: &Revolution) -> f64 {
    let area = 2.0 * PI * rev.p_total();
    rev.length * (4.0 * PI / area).sqrt()
}

/// CSV `c1,residual`.
pub fn write_action_csv<W: Write>(rep: &ActionOdeReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(["c1", "residual"]).map_err(io)?;
    for r in &rep.rows {
        wr.write_record([fmt(r.c1), fmt(r.residual)]).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CircleActionReport {
    pub k_min: f64,
    pub k_max: f64,
    pub area: f64,
    /// `|(max K + min K) / 2 - 4 pi / area|`.
    pub mean_residual: f64,
    pub mean_pass: bool,
    /// Largest deviation of the curvature distribution from the uniform law.
    pub distribution_deviation: f64,
    pub constant_curvature: bool,
    pub verdict: String,
}

/// Necessary conditions for `K` to generate a circle action, from weighted samples `(K, w)`.
pub fn circle_action_conditions(samples: &[(f64, f64)], area: f64, tol: f64) -> Result<CircleActionReport> {
    if !(area > 0.0) || samples.is_empty() {
        return Err(Error::Precondition("curvature samples need positive total area".into()));
    }
    let k_min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let k_max = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let mean_residual = (0.5 * (k_max + k_min) - 4.0 * PI / area).abs();
    let mean_pass = mean_residual <= tol;
    let spread = k_max - k_min;
    let constant_curvature = spread <= 1e-12 * k_max.abs().max(1.0);
    let mut distribution_deviation = 0.0;
    if !constant_curvature {
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        let mut i = 0;
        // Evaluate at each distinct K value once all samples up to it are counted.
        while i < sorted.len() {
            let k = sorted[i].0;
            while i < sorted.len() && sorted[i].0 == k {
                cum += sorted[i].1;
                i += 1;
            }
            let dev = (k - (k_min + spread / area * cum)).abs();
            distribution_deviation = f64::max(distribution_deviation, dev);
        }
    }
    let verdict = if constant_curvature {
        "constant curvature: conditions trivially consistent, action constant".to_string()
    } else if !mean_pass {
        "cannot induce a circle action".to_string()
    } else if distribution_deviation > tol {
        "mean condition holds but the curvature distribution is not uniform".to_string()
    } else {
        "necessary conditions hold".to_string()
    };
    Ok(CircleActionReport { k_min, k_max, area, mean_residual, mean_pass, distribution_deviation, constant_curvature, verdict })
}

/// `b = (2 (alpha z + beta))^(-1/2)`, so that `b^-2 / 2 = alpha z + beta`.
pub fn build_resonant_field(surface: &Surface, alpha: f64, beta: f64) -> Result<FieldSpec> {
    if !surface.is_sphere() || surface.revolution().is_none() {
        return Err(Error::Precondition("the resonant construction needs a sphere of revolution".into()));
    }
    if alpha == 0.0 {
        return Err(Error::Config("alpha = 0 gives a constant field; use a constant field block instead".into()));
    }
    check_resonant(alpha, beta)?;
    FieldSpec::new(FieldKind::ResonantHeight { alpha, beta }, surface)
}

/// Sphere of revolution with the oblate profile `sin r (1 + eps sin^2 r)`.
pub fn oblate_sphere(eps: f64) -> Result<Surface> {
    Ok(Surface::Revolution(Revolution::new(Profile::Bumpy { eps })?))
}
