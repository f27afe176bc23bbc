//! Acceptance criteria 1 to 12, one test each.
//!
//! Every test prints a single `criterion N PASS|FAIL: ...` line before
//! asserting. Tests hold a shared lock so that the runtime bounds are
//! measured on an otherwise idle process. Criteria 7, 8 and 12 share one
//! run of `configs/sphere_pipeline.toml`; criterion 12 repeats it.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use gyrolab::cli::{run_scenario, RunManifest};
use gyrolab::expr::Expr;
use gyrolab::geometry::{curvature_samples, ChartPoint, FieldKind, FieldSpec, QuadratureOpts, Surface, Torus};
use gyrolab::magflow::{curvature_residual, integrate, Flow};
use gyrolab::reduced::critical::critical_points;
use gyrolab::reduced::cylinder::{classify_resonance, maximal_cylinder, period_area_profile, Verdict};
use gyrolab::reduced::{make_reduced, trace_level_circle, ReducedSystem};
use gyrolab::section::{saddle_escape_experiment, SaddleSpec};
use gyrolab::special::{
    build_resonant_field, circle_action_conditions, measured_rotation, oblate_sphere, revolution_action_ode_test, SymmetricSystem,
};
use serde_json::Value;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n:>2} {}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn sphere_affine() -> (Surface, FieldSpec) {
    let s = Surface::unit_sphere();
    let f = FieldSpec::new(FieldKind::AffineHeight { c0: 2.0, c1: 1.0 }, &s).unwrap();
    (s, f)
}

fn torus_trig() -> (Surface, FieldSpec) {
    let s = Surface::flat_torus();
    let f = FieldSpec::new(FieldKind::TorusTrig { c0: 3.0, cx: 1.0, cy: 1.0 }, &s).unwrap();
    (s, f)
}

fn conformal_torus() -> Surface {
    Surface::Torus(Torus::new(2.0 * PI, 2.0 * PI, Some(Expr::parse("1 + 0.2*cos(x)").unwrap())).unwrap())
}

#[test]
fn criterion_01_closed_form_orbits() {
    let _g = serial();
    // Flat torus: a circle of radius s/b, back at the start after 2 pi / b.
    let t0 = Instant::now();
    let flat = Surface::flat_torus();
    let one = FieldSpec::constant(1.0);
    let flow = Flow::new(&flat, &one, 0.1, 1e-10).unwrap();
    let st = flow.state_at(ChartPoint::main(1.0, 1.0), 0.0).unwrap();
    let tr = integrate(&flow, st, 2.0 * PI, 1).unwrap();
    let end = tr.samples.last().unwrap();
    let flat_err = (end.q[0] - 1.0).hypot(end.q[1] - 1.0);
    let radius_err = tr
        .samples
        .iter()
        // Turning left from heading +x puts the centre at (1, 1.1).
        .map(|x| ((x.q[0] - 1.0).hypot(x.q[1] - 1.1) - 0.1).abs())
        .fold(0.0, f64::max);
    let flat_time = t0.elapsed().as_secs_f64();

    // Unit sphere: curvature b/s = 10 gives a small circle of period 2 pi / (s sqrt(1 + 100)).
    let t1 = Instant::now();
    let sphere = Surface::unit_sphere();
    let flow = Flow::new(&sphere, &one, 0.1, 1e-10).unwrap();
    let period = 2.0 * PI / 1.01f64.sqrt();
    let p0 = ChartPoint::main(PI / 2.0, 0.0);
    let tr = integrate(&flow, flow.state_at(p0, PI / 2.0).unwrap(), period, 1).unwrap();
    let end = tr.samples.last().unwrap();
    // Distance from the start over speed is the period error in time.
    let period_err = sphere.distance(p0, end.chart_point()) / 0.1;
    let pts: Vec<[f64; 3]> = tr.samples.iter().map(|x| sphere.ambient(x.chart, x.q)).collect();
    let (a, b, c) = (pts[0], pts[pts.len() / 3], pts[2 * pts.len() / 3]);
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let planar = pts
        .iter()
        .map(|p| ((p[0] - a[0]) * n[0] + (p[1] - a[1]) * n[1] + (p[2] - a[2]) * n[2]).abs() / nn)
        .fold(0.0, f64::max);
    let sphere_time = t1.elapsed().as_secs_f64();
    let pass = flat_err < 1e-8 && radius_err < 1e-8 && period_err < 1e-8 && planar < 1e-8 && flat_time < 1.0 && sphere_time < 1.0;
    report(
        1,
        pass,
        format!(
            "torus return error {flat_err:.2e}, radius error {radius_err:.2e} ({flat_time:.3} s); sphere period error {period_err:.2e}, off-plane {planar:.2e} ({sphere_time:.3} s)"
        ),
    );
}

#[test]
fn criterion_02_prescribed_curvature() {
    let _g = serial();
    let sphere = Surface::unit_sphere();
    let flat = Surface::flat_torus();
    let conf = conformal_torus();
    let oblate = oblate_sphere(0.3).unwrap();
    let systems: Vec<(&str, &Surface, FieldSpec)> = vec![
        ("flat torus, b = 1", &flat, FieldSpec::constant(1.0)),
        ("sphere, b = 1", &sphere, FieldSpec::constant(1.0)),
        ("sphere, b = 2 + z", &sphere, sphere_affine().1),
        ("sphere, b = 2 + cos r", &sphere, FieldSpec::new(FieldKind::RadialCos { c0: 2.0, c1: 1.0 }, &sphere).unwrap()),
        ("sphere, resonant", &sphere, build_resonant_field(&sphere, 0.25, 0.75).unwrap()),
        ("torus, b = 3 + cos x + cos y", &flat, torus_trig().1),
        ("conformal torus, b = 2 + 0.3 sin y", &conf, FieldSpec::new(FieldKind::Expr(Expr::parse("2 + 0.3*sin(y)").unwrap()), &conf).unwrap()),
        ("oblate sphere, b = 1", &oblate, FieldSpec::constant(1.0)),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, s, f) in &systems {
        let flow = Flow::new(s, f, 0.1, 1e-10).unwrap();
        let st = flow.state_at(ChartPoint::main(1.0, 0.5), 0.3).unwrap();
        let tr = integrate(&flow, st, 1000.0, 7).unwrap();
        let r = curvature_residual(&flow, &tr).unwrap().max;
        worst = worst.max(r);
        parts.push(format!("{name} {r:.1e}"));
    }
    report(2, worst < 1e-5, format!("max |kappa - b/s| = {worst:.2e} over t in [0, 1000] ({})", parts.join("; ")));
}

fn cylinder_mismatch(rs: &ReducedSystem, seed: [f64; 2], grid: usize) -> (f64, usize) {
    let crit = critical_points(rs).unwrap();
    let c = rs.h(seed).unwrap();
    let l0 = trace_level_circle(rs, c, seed).unwrap();
    let cyl = maximal_cylinder(rs, &crit, &l0, 64).unwrap();
    let cs: Vec<f64> = (1..=grid).map(|i| cyl.c_minus + (cyl.c_plus - cyl.c_minus) * i as f64 / (grid + 1) as f64).collect();
    let prof = period_area_profile(rs, &cyl, &cs).unwrap();
    (prof.max_mismatch, prof.rows.len())
}

#[test]
fn criterion_03_period_area_identity() {
    let _g = serial();
    let t0 = Instant::now();
    let (s, f) = sphere_affine();
    let rs = make_reduced(&s, &f, None).unwrap();
    let (ms, ns) = cylinder_mismatch(&rs, [PI / 2.0, 0.0], 20);
    let (t, g) = torus_trig();
    let rt = make_reduced(&t, &g, None).unwrap();
    let (mt, nt) = cylinder_mismatch(&rt, [1.0, 1.0], 20);
    let el = t0.elapsed().as_secs_f64();
    let pass = ms < 1e-5 && mt < 1e-5 && ns >= 10 && nt >= 10 && el < 10.0;
    report(3, pass, format!("max |dA/dc - T|/T: sphere {ms:.2e} ({ns} levels), torus {mt:.2e} ({nt} levels); {el:.2} s"));
}

#[test]
fn criterion_04_derived_period_values() {
    let _g = serial();
    let (s, f) = sphere_affine();
    let rs = make_reduced(&s, &f, None).unwrap();
    let c = 0.125;
    let l = trace_level_circle(&rs, c, [PI / 2.0, 0.0]).unwrap();
    let crit = critical_points(&rs).unwrap();
    let cyl = maximal_cylinder(&rs, &crit, &l, 64).unwrap();
    let v = classify_resonance(&rs, &cyl, c, 1e-6).unwrap();
    // Closed form on this sphere: T(c) = 2 pi (2c)^(-3/2), so T' = -6 pi (2c)^(-5/2).
    let t_exact = 2.0 * PI * (2.0 * c).powf(-1.5);
    let dt_exact = -6.0 * PI * (2.0 * c).powf(-2.5);
    let e1 = (l.period - t_exact).abs() / t_exact;
    let e2 = (v.dtdc - dt_exact).abs() / dt_exact.abs();
    report(
        4,
        e1 < 1e-6 && e2 < 1e-4,
        format!("T(1/8) = {:.12} vs 16 pi (rel {e1:.2e}); dT/dc = {:.8} vs -192 pi (rel {e2:.2e})", l.period, v.dtdc),
    );
}

#[test]
fn criterion_05_resonant_construction() {
    let _g = serial();
    let s = Surface::unit_sphere();
    // b = sqrt(2 / (z + 3)) is alpha = 1/4, beta = 3/4.
    let f = build_resonant_field(&s, 0.25, 0.75).unwrap();
    let direct = FieldSpec::new(FieldKind::Expr(Expr::parse("sqrt(2 / (z + 3))").unwrap()), &s).unwrap();
    let same = [0.3, 1.0, 2.0, 2.8].iter().all(|r| {
        let q = [*r, 0.4];
        (f.value(&s, gyrolab::geometry::ChartId::Main, q) - direct.value(&s, gyrolab::geometry::ChartId::Main, q)).abs() < 1e-14
    });
    let rs = make_reduced(&s, &f, None).unwrap();
    let crit = critical_points(&rs).unwrap();
    let l = trace_level_circle(&rs, rs.h([PI / 2.0, 0.0]).unwrap(), [PI / 2.0, 0.0]).unwrap();
    let cyl = maximal_cylinder(&rs, &crit, &l, 64).unwrap();
    let mut worst: f64 = 0.0;
    let n = 24;
    for i in 1..=n {
        let c = cyl.c_minus + (cyl.c_plus - cyl.c_minus) * i as f64 / (n + 1) as f64;
        let t = cyl.circle_at(&rs, c).unwrap().period;
        worst = worst.max((t - 8.0 * PI).abs());
    }
    let v = classify_resonance(&rs, &cyl, l.c, 1e-6).unwrap();
    let pass = same && worst < 1e-8 && v.verdict == Verdict::ResonantWithinTolerance;
    report(5, pass, format!("max_c |T(c) - 8 pi| = {worst:.2e} over {n} levels; verdict {}", v.verdict.name()));
}

#[test]
fn criterion_06_rotation_number_formula() {
    let _g = serial();
    let t0 = Instant::now();
    let s = Surface::unit_sphere();
    let f = FieldSpec::new(FieldKind::RadialCos { c0: 2.0, c1: 1.0 }, &s).unwrap();
    let sys = SymmetricSystem::new(&s, &f).unwrap();
    let err = |sp: f64| {
        let m = measured_rotation(&sys, PI / 2.0, sp, 400, 1e-11).unwrap();
        (m.abs() - sp * sp * PI / 8.0).abs()
    };
    let (e1, e2) = (err(0.1), err(0.05));
    let ratio = e1 / e2;
    let el = t0.elapsed().as_secs_f64();
    report(
        6,
        (4.0..=16.0).contains(&ratio) && el < 30.0,
        format!("err(0.1) = {e1:.4e}, err(0.05) = {e2:.4e}, ratio {ratio:.6}; {el:.2} s"),
    );
}

struct Pipeline {
    root: PathBuf,
    manifest: RunManifest,
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sphere_pipeline.toml")
}

fn run_into(dir: &Path) -> RunManifest {
    let _ = std::fs::remove_dir_all(dir);
    run_scenario(&config_path(), dir).unwrap()
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-a");
        let manifest = run_into(&out);
        Pipeline { root: out.join(&manifest.scenario), manifest }
    })
}

fn stage_seconds(m: &RunManifest, stage: &str) -> f64 {
    m.wall_clock.iter().find(|t| t.stage == stage).map_or(f64::NAN, |t| t.seconds)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn criterion_07_periodic_orbits() {
    let _g = serial();
    let p = pipeline();
    let rep = read_json(&p.root.join("orbits/orbits.json"));
    let mut good = std::collections::BTreeSet::new();
    let mut worst = [0.0f64; 2];
    for o in rep["orbits"].as_array().unwrap() {
        let (pp, q) = (o["p"].as_i64().unwrap(), o["q"].as_u64().unwrap());
        let (res, clo) = (o["residual"].as_f64().unwrap(), o["closure"].as_f64().unwrap());
        worst = [worst[0].max(res), worst[1].max(clo)];
        // After q returns the orbit has gone p times around the guiding circle.
        if res < 1e-9 && clo < 1e-6 && o["winding"].as_i64() == Some(pp) {
            good.insert((pp, q));
        }
    }
    let secs = stage_seconds(&p.manifest, "orbits");
    report(
        7,
        good.len() >= 5 && secs < 300.0,
        format!("{} distinct (p, q): {:?}; max residual {:.2e}, max closure {:.2e}; {secs:.1} s", good.len(), good, worst[0], worst[1]),
    );
}

#[test]
fn criterion_08_trapping() {
    let _g = serial();
    let p = pipeline();
    let rep = read_json(&p.root.join("trap/trap.json"));
    let escapes = rep["escapes"].as_u64().unwrap();
    let samples = rep["samples"].as_u64().unwrap();
    let horizon = rep["horizon_returns"].as_u64().unwrap();
    let inner = (rep["inner"]["lo"].as_f64().unwrap(), rep["inner"]["hi"].as_f64().unwrap());
    let outer = (rep["outer"]["lo"].as_f64().unwrap(), rep["outer"]["hi"].as_f64().unwrap());
    let secs = stage_seconds(&p.manifest, "trap");
    let pass = escapes == 0 && samples == 200 && horizon == 100_000 && inner == (-0.05, 0.05) && outer == (-0.15, 0.15) && secs < 600.0;
    report(
        8,
        pass,
        format!(
            "{escapes} escapes of {samples} samples over {horizon} returns each way; max |z| excursion {:.4}; {secs:.1} s",
            rep["max_excursion"].as_f64().unwrap()
        ),
    );
}

#[test]
fn criterion_09_saddle_escape() {
    let _g = serial();
    let (s, f) = torus_trig();
    let rs = make_reduced(&s, &f, None).unwrap();
    let spec = SaddleSpec { at: [PI, 0.0], delta: 0.4, eps: 0.15, delta_start: 0.1, horizon: 300_000, samples: 100, seed: 11, tol: 1e-8 };
    let t0 = Instant::now();
    let rep = saddle_escape_experiment(&rs, &f, 0.02, &spec).unwrap();
    let el = t0.elapsed().as_secs_f64();
    let pass = rep.violations == 0 && rep.forward.a_plus == 100 && rep.backward.a_minus == 100;
    report(9, pass, format!("forward {:?}, backward {:?}, violations {}; {el:.1} s", rep.forward, rep.backward, rep.violations));
}

#[test]
fn criterion_10_boundary_value_test() {
    let _g = serial();
    let zero = revolution_action_ode_test(PI, &[0.0], 1e-13).unwrap();
    let r0 = zero.rows[0].residual;
    let mags: Vec<f64> = (0..20).map(|i| 0.1 * 100f64.powf(i as f64 / 19.0)).collect();
    let grid: Vec<f64> = mags.iter().flat_map(|m| [*m, -*m]).collect();
    let rep = revolution_action_ode_test(PI, &grid, 1e-13).unwrap();
    let dev = rep.rows.iter().map(|r| (r.conserved_mismatch - 4.0 / 3.0 * r.c1.abs()).abs()).fold(0.0, f64::max);
    let floor = rep.rows.iter().map(|r| r.residual).fold(f64::INFINITY, f64::min);
    let pass = r0 < 1e-10 && rep.rows.len() == 40 && dev < 1e-6 && floor >= 0.1;
    report(10, pass, format!("c1 = 0 residual {r0:.2e}; 40 values: max |mismatch - 4|c1|/3| = {dev:.2e}, min residual {floor:.4}"));
}

#[test]
fn criterion_11_circle_action_conditions() {
    let _g = serial();
    let q = QuadratureOpts::default();
    let round = Surface::unit_sphere();
    let rs = curvature_samples(&round, q).unwrap();
    let area: f64 = rs.iter().map(|x| x.1).sum();
    let r = circle_action_conditions(&rs, area, 1e-9).unwrap();
    let gb_sphere: f64 = rs.iter().map(|x| x.0 * x.1).sum();
    let ob = oblate_sphere(0.3).unwrap();
    let os = curvature_samples(&ob, q).unwrap();
    let oarea: f64 = os.iter().map(|x| x.1).sum();
    let o = circle_action_conditions(&os, oarea, 1e-9).unwrap();
    let gb_torus: f64 = curvature_samples(&conformal_torus(), q).unwrap().iter().map(|x| x.0 * x.1).sum();
    let gb_flat: f64 = curvature_samples(&Surface::flat_torus(), q).unwrap().iter().map(|x| x.0 * x.1).sum();
    let pass = r.mean_pass
        && r.constant_curvature
        && r.mean_residual < 1e-12
        && !o.mean_pass
        && o.mean_residual > 1e-2
        && (gb_sphere - 4.0 * PI).abs() < 1e-6
        && gb_torus.abs() < 1e-9
        && gb_flat.abs() < 1e-9;
    report(
        11,
        pass,
        format!(
            "round residual {:.1e}; oblate residual {:.3}; Gauss-Bonnet sphere {:.2e} off 4 pi, conformal torus {gb_torus:.2e}, flat torus {gb_flat:.1e}",
            r.mean_residual,
            o.mean_residual,
            (gb_sphere - 4.0 * PI).abs()
        ),
    );
}

#[test]
fn criterion_12_determinism() {
    let _g = serial();
    let a = pipeline();
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-b");
    let m = run_into(&out);
    let root = out.join(&m.scenario);
    let mut diffs = Vec::new();
    for f in &a.manifest.files {
        let x = std::fs::read(a.root.join(&f.path)).unwrap();
        let y = std::fs::read(root.join(&f.path)).unwrap_or_default();
        if x != y {
            diffs.push(f.path.clone());
        }
    }
    let same_list = a.manifest.files == m.files;
    let covered = ["orbits/orbits.json", "trap/trap.json"].iter().all(|p| m.files.iter().any(|f| f.path == *p));
    report(
        12,
        diffs.is_empty() && same_list && covered,
        format!("{} payload files compared, {} differ {:?}; seed {}", m.files.len(), diffs.len(), diffs, m.seed),
    );
}
