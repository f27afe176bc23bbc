//! Finite-horizon trapping and saddle-escape ensembles of the full flow.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{Region, SectionOpts};
use crate::error::{Error, Result};
use crate::geometry::{ChartId, ChartPoint, FieldSpec, Surface};
use crate::magflow::{Flow, Integrator, PhaseState};
use crate::reduced::critical::{critical_points, saddle_frame, SaddleFrame};
use crate::reduced::cylinder::{classify_resonance, OrbitCylinder, Verdict};
use crate::reduced::{LevelCircle, ReducedSystem};

/// Coordinate measured by a [`Band`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandCoord {
    /// Normalized height `z` of a surface of revolution.
    Height,
    Q1,
    Q2,
}

/// `lo <= coord <= hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub coord: BandCoord,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    fn value(&self, surface: &Surface, q: [f64; 2]) -> f64 {
        match (self.coord, surface) {
            (BandCoord::Height, Surface::Revolution(s)) => s.height(q[0]),
            (BandCoord::Q2, _) => q[1],
            _ => q[0],
        }
    }

    fn contains(&self, surface: &Surface, q: [f64; 2]) -> bool {
        let w = self.value(surface, q);
        w >= self.lo && w <= self.hi
    }

    fn check(&self, surface: &Surface) -> Result<()> {
        if !(self.lo < self.hi) {
            return Err(Error::Precondition(format!("band [{}, {}] is empty", self.lo, self.hi)));
        }
        if self.coord == BandCoord::Height && !matches!(surface, Surface::Revolution(_)) {
            return Err(Error::Precondition("height bands need a surface of revolution".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrapSpec {
    /// Start region `U'`.
    pub inner: Band,
    /// Trapping region `U`.
    pub outer: Band,
    /// Section returns per time direction.
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    /// Verdict tolerance for the non-resonance precondition.
    pub resonance_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrapSample {
    pub index: usize,
    /// Base point and velocity angle of the start.
    pub start: [f64; 3],
    /// Largest `|w - w_L|` of the band coordinate over both directions.
    pub max_excursion: f64,
    pub escaped: bool,
    /// `+1` forward, `-1` backward.
    pub escape_direction: Option<i8>,
    pub returns: [usize; 2],
    pub time: [f64; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct TrapReport {
    pub s: f64,
    pub inner: Band,
    pub outer: Band,
    pub horizon_returns: usize,
    /// Smallest physical time covered by a non-escaping sample in each direction.
    pub horizon_time: f64,
    pub samples: usize,
    pub seed: u64,
    pub level: f64,
    pub escapes: usize,
    pub max_excursion: f64,
    pub per_sample: Vec<TrapSample>,
    pub notes: Vec<String>,
}

/// Uniform position in a band and uniform velocity angle.
fn draw_start(rng: &mut ChaCha8Rng, surface: &Surface, band: &Band) -> Result<[f64; 3]> {
    let w = rng.gen_range(band.lo..=band.hi);
    let (q1, q2) = match (surface, band.coord) {
        (Surface::Revolution(s), BandCoord::Height) => (s.r_of_height(w)?, rng.gen_range(0.0..2.0 * PI)),
        (Surface::Revolution(_), _) => (w, rng.gen_range(0.0..2.0 * PI)),
        (Surface::Torus(t), BandCoord::Q2) => (rng.gen_range(0.0..t.lx), w),
        (Surface::Torus(t), _) => (w, rng.gen_range(0.0..t.ly)),
    };
    Ok([q1, q2, rng.gen_range(0.0..2.0 * PI)])
}

/// Main-chart region in which the band coordinate stays inside `band`.
fn band_region(surface: &Surface, band: &Band) -> Result<Region> {
    Ok(match (surface, band.coord) {
        (Surface::Revolution(s), BandCoord::Height) => Region::band(s.r_of_height(band.lo)?, s.r_of_height(band.hi)?),
        (_, BandCoord::Q2) => Region { q1: None, q2: Some((band.lo, band.hi)) },
        _ => Region::band(band.lo, band.hi),
    })
}

/// Run full-flow orbits from `U'` both ways in time and count exits from `U`.
pub fn trapping_experiment(rs: &ReducedSystem, field: &FieldSpec, l: &LevelCircle, s: f64, spec: &TrapSpec) -> Result<TrapReport> {
    let surface = rs.surface;
    spec.inner.check(surface)?;
    spec.outer.check(surface)?;
    if spec.inner.coord != spec.outer.coord || spec.inner.lo < spec.outer.lo || spec.inner.hi > spec.outer.hi {
        return Err(Error::Precondition("U' must be a sub-band of U in the same coordinate".into()));
    }
    let mut notes = Vec::new();
    let crit = critical_points(rs)?;
    let cyl = OrbitCylinder::around(&crit, l.clone());
    let v = classify_resonance(rs, &cyl, l.c, spec.resonance_tol)?;
    if v.verdict != Verdict::NonResonant {
        return Err(Error::Precondition(format!("guiding circle at c = {} is {}", l.c, v.verdict.name())));
    }
    let mut w_l = l.points.iter().map(|q| spec.outer.value(surface, *q)).sum::<f64>() / l.points.len().max(1) as f64;
    if !w_l.is_finite() {
        w_l = 0.5 * (spec.inner.lo + spec.inner.hi);
    }
    let mut rep = TrapReport {
        s,
        inner: spec.inner,
        outer: spec.outer,
        horizon_returns: spec.horizon,
        horizon_time: 0.0,
        samples: spec.samples,
        seed: spec.seed,
        level: l.c,
        escapes: 0,
        max_excursion: 0.0,
        per_sample: Vec::new(),
        notes: Vec::new(),
    };
    if spec.samples == 0 {
        rep.notes.push("no samples requested".into());
        return Ok(rep);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let starts = (0..spec.samples).map(|_| draw_start(&mut rng, surface, &spec.inner)).collect::<Result<Vec<_>>>()?;
    let region = band_region(surface, &spec.outer)?;
    let opts = SectionOpts { tol: spec.tol, s_max: f64::INFINITY, ..SectionOpts::default() };
    let flow = Flow::new(surface, field, s, spec.tol)?;
    let sweep = flow.b(ChartId::Main, [starts[0][0], starts[0][1]]).signum();
    let samples: Vec<Result<TrapSample>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, st)| trap_one(&flow, surface, region, &spec.outer, w_l, sweep, opts, i, *st, spec.horizon))
        .collect();
    let mut t_min = f64::INFINITY;
    for smp in samples {
        let smp = smp?;
        if smp.escaped {
            rep.escapes += 1;
        } else {
            t_min = t_min.min(smp.time[0].abs().min(smp.time[1].abs()));
        }
        rep.max_excursion = rep.max_excursion.max(smp.max_excursion);
        rep.per_sample.push(smp);
    }
    rep.horizon_time = if t_min.is_finite() { t_min } else { 0.0 };
    notes.push(format!("guiding circle verdict {} (normalized dT/dc = {:.4e})", v.verdict.name(), v.normalized_slope));
    rep.notes = notes;
    Ok(rep)
}

#[allow(clippy::too_many_arguments)]
fn trap_one(
    flow: &Flow,
    surface: &Surface,
    region: Region,
    outer: &Band,
    w_l: f64,
    sweep: f64,
    opts: SectionOpts,
    index: usize,
    start: [f64; 3],
    horizon: usize,
) -> Result<TrapSample> {
    let mut out = TrapSample {
        index,
        start,
        max_excursion: 0.0,
        escaped: false,
        escape_direction: None,
        returns: [0, 0],
        time: [0.0, 0.0],
    };
    let st0 = flow.state_at(ChartPoint::main(start[0], start[1]), start[2])?;
    for (k, dir) in [1.0, -1.0].into_iter().enumerate() {
        let r = count_returns(flow, st0, dir, sweep, horizon, opts.max_steps, |st| {
            let inside = st.chart == ChartId::Main && region.contains(st.q) && outer.contains(surface, st.q);
            if st.chart == ChartId::Main {
                out.max_excursion = out.max_excursion.max((outer.value(surface, st.q) - w_l).abs());
            }
            inside
        })?;
        out.returns[k] = r.0;
        out.time[k] = r.1;
        if r.2 {
            out.escaped = true;
            out.escape_direction = Some(dir as i8);
            break;
        }
    }
    Ok(out)
}

/// Integrate until `horizon` unrefined section crossings or until `keep` fails.
/// Returns `(crossings, time, stopped_by_keep)`.
fn count_returns<K: FnMut(&PhaseState) -> bool>(
    flow: &Flow,
    st0: PhaseState,
    dir: f64,
    sweep: f64,
    horizon: usize,
    max_steps: usize,
    mut keep: K,
) -> Result<(usize, f64, bool)> {
    let mut it = Integrator::new(flow, st0, dir)?;
    let sigma = dir * sweep;
    let mut g_prev = 0.0;
    let mut count = 0;
    let mut since = 0;
    while count < horizon {
        let info = it.advance(None)?;
        let st = it.state;
        if !keep(&st) {
            return Ok((count, st.t, true));
        }
        since += 1;
        if since > max_steps {
            return Err(Error::Budget(format!("no section crossing within {max_steps} steps")));
        }
        if info.chart == ChartId::Main {
            let m = flow.surface.metric(ChartId::Main, [info.y1[0], info.y1[1]])?;
            let e1 = [1.0 / m.e.sqrt(), 0.0];
            let e2 = m.perp(e1);
            let v = [info.y1[2], info.y1[3]];
            let (g, c) = (m.dot(v, e2), m.dot(v, e1));
            if sigma * g_prev < 0.0 && sigma * g >= 0.0 && c > 0.0 {
                count += 1;
                since = 0;
            }
            g_prev = g;
        }
    }
    Ok((count, it.state.t, false))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SaddleSpec {
    pub at: [f64; 2],
    pub delta: f64,
    pub eps: f64,
    /// Half-width of the start box `U_delta'`.
    pub delta_start: f64,
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

/// Exit statistics of one time direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ExitCounts {
    /// Through `A+ = {|x| = delta, |y| <= eps}`.
    pub a_plus: usize,
    /// Through `A- = {|y| = delta, |x| <= eps}`.
    pub a_minus: usize,
    pub elsewhere: usize,
    /// Still inside at the horizon.
    pub stayed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SaddleSample {
    pub index: usize,
    pub start: [f64; 3],
    /// Local coordinates at exit, forward then backward.
    pub exit: [Option<[f64; 2]>; 2],
    pub returns: [usize; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct SaddleReport {
    pub s: f64,
    pub frame: SaddleFrame,
    pub delta: f64,
    pub eps: f64,
    pub delta_start: f64,
    pub horizon_returns: usize,
    pub forward: ExitCounts,
    /// Time-reversed ensemble; `a_minus` counts entries of the forward flow.
    pub backward: ExitCounts,
    /// Forward exits not through `A+` plus backward exits not through `A-`.
    pub violations: usize,
    pub per_sample: Vec<SaddleSample>,
    pub notes: Vec<String>,
}

enum Side {
    Plus,
    Minus,
    Elsewhere,
}

fn classify_exit(xy: [f64; 2], delta: f64, eps: f64) -> Side {
    let (ax, ay) = (xy[0].abs(), xy[1].abs());
    if ax >= delta && ay <= eps {
        Side::Plus
    } else if ay >= delta && ax <= eps {
        Side::Minus
    } else {
        Side::Elsewhere
    }
}

/// Orbits started near a saddle of `-1/b`: record where they leave the box `U_delta`.
pub fn saddle_escape_experiment(rs: &ReducedSystem, field: &FieldSpec, s: f64, spec: &SaddleSpec) -> Result<SaddleReport> {
    let surface = rs.surface;
    if !(spec.eps < spec.delta) {
        return Err(Error::Precondition(format!("need eps < delta, got eps = {} and delta = {}", spec.eps, spec.delta)));
    }
    if !(spec.delta_start > 0.0 && spec.delta_start < spec.delta) {
        return Err(Error::Precondition("start box must satisfy 0 < delta' < delta".into()));
    }
    let crit = critical_points(rs)?;
    let l = rs.length_scale();
    let near = crit
        .points
        .iter()
        .filter(|p| p.chart == ChartId::Main)
        .min_by(|a, b| dist(rs, a.main, spec.at).total_cmp(&dist(rs, b.main, spec.at)))
        .filter(|p| dist(rs, p.main, spec.at) < 1e-6 * l)
        .ok_or_else(|| Error::Precondition(format!("no critical point found at ({:.6}, {:.6})", spec.at[0], spec.at[1])))?;
    let frame = saddle_frame(rs, near)?;
    let flow = Flow::new(surface, field, s, spec.tol)?;
    let sweep = flow.b(ChartId::Main, frame.at).signum();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let starts: Vec<[f64; 3]> = (0..spec.samples)
        .map(|_| {
            let x = rng.gen_range(-spec.delta_start..=spec.delta_start);
            let y = rng.gen_range(-spec.delta_start..=spec.delta_start);
            let q = frame.point(x, y);
            [q[0], q[1], rng.gen_range(0.0..2.0 * PI)]
        })
        .collect();
    let max_steps = SectionOpts::default().max_steps;
    let results: Vec<Result<SaddleSample>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, st)| {
            let st0 = flow.state_at(ChartPoint::main(st[0], st[1]), st[2])?;
            let mut smp = SaddleSample { index: i, start: *st, exit: [None, None], returns: [0, 0] };
            for (k, dir) in [1.0, -1.0].into_iter().enumerate() {
                let mut last = [0.0; 2];
                let r = count_returns(&flow, st0, dir, sweep, spec.horizon, max_steps, |p| {
                    let xy = frame.coords(rs.wrap([p.q[0] - frame.at[0], p.q[1] - frame.at[1]]));
                    last = xy;
                    xy[0].abs() < spec.delta && xy[1].abs() < spec.delta
                })?;
                smp.returns[k] = r.0;
                if r.2 {
                    smp.exit[k] = Some(last);
                }
            }
            Ok(smp)
        })
        .collect();
    let mut rep = SaddleReport {
        s,
        frame,
        delta: spec.delta,
        eps: spec.eps,
        delta_start: spec.delta_start,
        horizon_returns: spec.horizon,
        forward: ExitCounts::default(),
        backward: ExitCounts::default(),
        violations: 0,
        per_sample: Vec::new(),
        notes: vec!["box coordinates come from a linear normalization of the Hessian of -1/b at the saddle".into()],
    };
    for smp in results {
        let smp = smp?;
        for (k, counts) in [&mut rep.forward, &mut rep.backward].into_iter().enumerate() {
            match smp.exit[k] {
                None => counts.stayed += 1,
                Some(xy) => match classify_exit(xy, spec.delta, spec.eps) {
                    Side::Plus => counts.a_plus += 1,
                    Side::Minus => counts.a_minus += 1,
                    Side::Elsewhere => counts.elsewhere += 1,
                },
            }
        }
        rep.per_sample.push(smp);
    }
    rep.violations = rep.forward.a_minus + rep.forward.elsewhere + rep.backward.a_plus + rep.backward.elsewhere;
    if rep.forward.stayed + rep.backward.stayed > 0 {
        rep.notes.push(format!("{} runs stayed in the box up to the horizon", rep.forward.stayed + rep.backward.stayed));
    }
    Ok(rep)
}

fn dist(rs: &ReducedSystem, a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = rs.wrap([a[0] - b[0], a[1] - b[1]]);
    d[0].hypot(d[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FieldKind;
    use crate::reduced::{make_reduced, trace_level_circle};

    fn sphere() -> (Surface, FieldSpec) {
        let s = Surface::unit_sphere();
        let f = FieldSpec::new(FieldKind::AffineHeight { c0: 2.0, c1: 1.0 }, &s).unwrap();
        (s, f)
    }

    fn spec(samples: usize, horizon: usize) -> TrapSpec {
        TrapSpec {
            inner: Band { coord: BandCoord::Height, lo: -0.05, hi: 0.05 },
            outer: Band { coord: BandCoord::Height, lo: -0.15, hi: 0.15 },
            horizon,
            samples,
            seed: 7,
            tol: 1e-8,
            resonance_tol: 1e-6,
        }
    }

    #[test]
    fn empty_ensemble_and_reproducibility() {
        let (s, f) = sphere();
        let rs = make_reduced(&s, &f, None).unwrap();
        let l = trace_level_circle(&rs, 0.125, [PI / 2.0, 0.0]).unwrap();
        let r0 = trapping_experiment(&rs, &f, &l, 0.05, &spec(0, 10)).unwrap();
        assert!(r0.per_sample.is_empty() && r0.escapes == 0);
        let a = trapping_experiment(&rs, &f, &l, 0.05, &spec(3, 200)).unwrap();
        let b = trapping_experiment(&rs, &f, &l, 0.05, &spec(3, 200)).unwrap();
        assert_eq!(a.per_sample, b.per_sample);
        assert_eq!(a.escapes, 0);
        assert!(a.per_sample.iter().all(|p| p.returns == [200, 200]));
    }

    #[test]
    fn fast_particles_may_escape() {
        let (s, f) = sphere();
        let rs = make_reduced(&s, &f, None).unwrap();
        let l = trace_level_circle(&rs, 0.125, [PI / 2.0, 0.0]).unwrap();
        let r = trapping_experiment(&rs, &f, &l, 1.0, &spec(8, 50)).unwrap();
        assert!(r.escapes > 0);
    }

    #[test]
    fn saddle_needs_eps_below_delta() {
        let t = Surface::flat_torus();
        let f = FieldSpec::new(FieldKind::TorusTrig { c0: 3.0, cx: 1.0, cy: 1.0 }, &t).unwrap();
        let rs = make_reduced(&t, &f, None).unwrap();
        let sp = SaddleSpec { at: [PI, 0.0], delta: 0.1, eps: 0.2, delta_start: 0.05, horizon: 10, samples: 1, seed: 1, tol: 1e-8 };
        assert!(matches!(saddle_escape_experiment(&rs, &f, 0.02, &sp), Err(Error::Precondition(_))));
        let sp = SaddleSpec { at: [1.0, 1.0], eps: 0.05, ..sp };
        assert!(saddle_escape_experiment(&rs, &f, 0.02, &sp).is_err());
    }
}
