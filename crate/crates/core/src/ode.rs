//! Dormand–Prince 5(4) stepping for autonomous systems.
//!
//! The stepper is deliberately loop-free; the flows in `magflow` and
//! `reduced` own their loops because they interleave chart switches,
//! projections and event location between accepted steps.

use crate::error::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Error weights: fifth-order minus embedded fourth-order solution.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Mixed absolute/relative local error tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Tolerance {
    pub fn uniform(tol: f64) -> Tolerance {
        Tolerance { atol: tol, rtol: tol }
    }
}

/// Result of one trial step.
#[derive(Clone, Copy, Debug)]
pub struct Step<const N: usize> {
    pub y: [f64; N],
    /// Derivative at the new point (the seventh stage).
    pub f1: [f64; N],
    /// Scaled error norm; the step is acceptable when `err <= 1`.
    pub err: f64,
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        let hc = h * c;
        for i in 0..N {
            out[i] += hc * k[i];
        }
    }
    out
}

/// One Dormand–Prince step from `y0` with derivative `f0`.
///
/// A right-hand-side failure (domain error) is returned unchanged so the
/// caller can shrink the step.
#[inline]
pub fn dp45_step<const N: usize, F>(f: &mut F, y0: &[f64; N], f0: &[f64; N], h: f64, tol: Tolerance) -> Result<Step<N>>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
{
    let k1 = f0;
    let k2 = f(&axpy(y0, h, &[(A21, k1)]))?;
    let k3 = f(&axpy(y0, h, &[(A31, k1), (A32, &k2)]))?;
    let k4 = f(&axpy(y0, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?;
    let k5 = f(&axpy(y0, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
    let k6 = f(&axpy(y0, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
    let y1 = axpy(y0, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(&y1)?;
    let mut acc = 0.0;
    for i in 0..N {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = tol.atol + tol.rtol * y0[i].abs().max(y1[i].abs());
        acc += (e / sc) * (e / sc);
    }
    Ok(Step { y: y1, f1: k7, err: (acc / N as f64).sqrt() })
}

/// Step-size controller with the usual safety factor and growth limits.
#[derive(Clone, Copy, Debug)]
pub struct Controller {
    pub h_min: f64,
    pub h_max: f64,
}

impl Controller {
    /// Proposed next step after a trial with scaled error `err`.
    #[inline]
    pub fn next(&self, h: f64, err: f64) -> f64 {
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        let hn = h * fac;
        hn.signum() * hn.abs().min(self.h_max)
    }

    pub fn check(&self, h: f64, t: f64) -> Result<()> {
        if h.abs() < self.h_min || !h.is_finite() {
            return Err(Error::StepUnderflow { t, detail: format!("|h| = {:.3e} below minimum {:.3e}", h.abs(), self.h_min) });
        }
        Ok(())
    }
}

/// Cubic Hermite interpolation inside an accepted step, `theta` in [0, 1].
#[inline]
pub fn hermite<const N: usize>(y0: &[f64; N], f0: &[f64; N], y1: &[f64; N], f1: &[f64; N], h: f64, theta: f64) -> [f64; N] {
    let t = theta;
    let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
    let h10 = t * (1.0 - t) * (1.0 - t);
    let h01 = t * t * (3.0 - 2.0 * t);
    let h11 = t * t * (t - 1.0);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = h00 * y0[i] + h * h10 * f0[i] + h01 * y1[i] + h * h11 * f1[i];
    }
    out
}

/// Locate a sign change of `g` inside an accepted step `y0 -> y1` of size `h`.
///
/// A bracketed secant on the Hermite interpolant seeds a secant iteration on
/// re-taken partial steps from `y0`, so the returned state is an actual
/// integrator output. Returns the step fraction and the state there.
pub fn refine_event<const N: usize, F, G>(
    f: &mut F,
    y0: &[f64; N],
    f0: &[f64; N],
    y1: &[f64; N],
    f1: &[f64; N],
    h: f64,
    tol: Tolerance,
    g: G,
) -> Result<(f64, [f64; N])>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
    G: Fn(&[f64; N]) -> f64,
{
    let g0 = g(y0);
    let g1 = g(y1);
    let interp = |th: f64| hermite(y0, f0, y1, f1, h, th);
    let (mut a, mut b, mut ga, mut gb) = (0.0, 1.0, g0, g1);
    let mut th = ga / (ga - gb);
    if !th.is_finite() {
        th = 0.5;
    }
    for _ in 0..60 {
        let gt = g(&interp(th));
        if gt.abs() < 1e-15 {
            break;
        }
        if (gt < 0.0) == (ga < 0.0) {
            a = th;
            ga = gt;
        } else {
            b = th;
            gb = gt;
        }
        let sec = a - ga * (b - a) / (gb - ga);
        th = if sec > a && sec < b && (b - a) > 1e-3 { sec } else { 0.5 * (a + b) };
        if b - a < 1e-15 {
            break;
        }
    }
    let mut step_to = |th: f64| -> Result<[f64; N]> {
        if th == 0.0 {
            return Ok(*y0);
        }
        Ok(dp45_step(f, y0, f0, th * h, tol)?.y)
    };
    let mut th_prev = if th > 0.5 { 0.0 } else { 1.0 };
    let mut g_prev = if th > 0.5 { g0 } else { g1 };
    let mut y = step_to(th)?;
    let mut gt = g(&y);
    for _ in 0..12 {
        if gt.abs() < 1e-14 || th == th_prev {
            break;
        }
        let next = th - gt * (th - th_prev) / (gt - g_prev);
        if !next.is_finite() {
            break;
        }
        th_prev = th;
        g_prev = gt;
        th = next.clamp(0.0, 1.0);
        y = step_to(th)?;
        gt = g(&y);
    }
    Ok((th, y))
}

/// Integrate an autonomous system over `[0, t_end]` (either sign), calling
/// `observe` after every accepted step; `observe` returns `false` to stop.
///
/// Returns the final time and state.
pub fn integrate<const N: usize, F, O>(
    mut f: F,
    y0: [f64; N],
    t_end: f64,
    tol: Tolerance,
    max_steps: usize,
    mut observe: O,
) -> Result<(f64, [f64; N])>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
    O: FnMut(f64, &[f64; N]) -> bool,
{
    let dir = t_end.signum();
    let ctl = Controller { h_min: 1e-14 * t_end.abs().max(1.0), h_max: t_end.abs() };
    let mut t = 0.0;
    let mut y = y0;
    let mut fy = f(&y)?;
    let mut h = dir * (1e-3 * t_end.abs()).min(1e-2).max(ctl.h_min * 10.0);
    let mut steps = 0;
    while (t_end - t) * dir > 0.0 {
        if steps >= max_steps {
            return Err(Error::Budget(format!("{max_steps} steps reached at t = {t:.6e}")));
        }
        if (t + h - t_end) * dir > 0.0 {
            h = t_end - t;
        }
        let trial = dp45_step(&mut f, &y, &fy, h, tol);
        match trial {
            Ok(st) if st.err <= 1.0 => {
                t += h;
                y = st.y;
                fy = st.f1;
                steps += 1;
                if !observe(t, &y) {
                    return Ok((t, y));
                }
                h = ctl.next(h, st.err);
            }
            Ok(st) => {
                h = ctl.next(h, st.err).abs().min(0.9 * h.abs()) * dir;
            }
            Err(e) if e.is_domain() => h *= 0.5,
            Err(e) => return Err(e),
        }
        ctl.check(h, t)?;
    }
    Ok((t, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let f = |y: &[f64; 2]| Ok([y[1], -y[0]]);
        let (t, y) = integrate(f, [1.0, 0.0], 2.0 * std::f64::consts::PI, Tolerance::uniform(1e-12), 100_000, |_, _| true).unwrap();
        assert!((t - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((y[0] - 1.0).abs() < 1e-10 && y[1].abs() < 1e-10);
    }

    #[test]
    fn backward_integration_retraces() {
        let f = |y: &[f64; 2]| Ok([y[1], -y[0].sin()]);
        let (_, y1) = integrate(f, [0.5, 0.3], 7.0, Tolerance::uniform(1e-12), 100_000, |_, _| true).unwrap();
        let (_, y0) = integrate(f, y1, -7.0, Tolerance::uniform(1e-12), 100_000, |_, _| true).unwrap();
        assert!((y0[0] - 0.5).abs() < 1e-9 && (y0[1] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn fifth_order_convergence() {
        let f = |y: &[f64; 1]| Ok([y[0]]);
        let mut errs = Vec::new();
        for h in [0.1, 0.05] {
            let mut ff = f;
            let st = dp45_step(&mut ff, &[1.0], &[1.0], h, Tolerance::uniform(1.0)).unwrap();
            errs.push((st.y[0] - f64::exp(h)).abs());
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 50.0 && ratio < 80.0, "{ratio}");
    }

    #[test]
    fn domain_errors_shrink_the_step() {
        // sqrt(1 - t) style singularity: the RHS is undefined for y > 1.
        let f = |y: &[f64; 1]| if y[0] > 1.0 { Err(Error::Domain(y[0], 0.0, "test")) } else { Ok([1.0]) };
        let r = integrate(f, [0.0], 2.0, Tolerance::uniform(1e-10), 1000, |_, _| true);
        assert!(r.is_err());
    }

    #[test]
    fn hermite_is_exact_for_cubics() {
        let p = |t: f64| t * t * t - 2.0 * t;
        let dp = |t: f64| 3.0 * t * t - 2.0;
        let y = hermite(&[p(1.0)], &[dp(1.0)], &[p(1.5)], &[dp(1.5)], 0.5, 0.3);
        assert!((y[0] - p(1.15)).abs() < 1e-14);
    }
}
