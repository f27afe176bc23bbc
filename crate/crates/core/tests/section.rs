use std::f64::consts::PI;

use gyrolab::expr::Expr;
use gyrolab::geometry::{FieldKind, FieldSpec, Surface, Torus};
use gyrolab::reduced::cylinder::{classify_resonance, OrbitCylinder};
use gyrolab::reduced::critical::critical_points;
use gyrolab::reduced::{make_reduced, trace_level_circle};
use gyrolab::section::{rotation_number, Region, SectionMap, SectionOpts};
use gyrolab::special::{build_resonant_field, measured_rotation, symmetric_rotation_number, SymmetricSystem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

fn conformal_torus() -> (Surface, FieldSpec) {
    let lam = Expr::parse("1 + 0.2*cos(x)").unwrap();
    let s = Surface::Torus(Torus::new(2.0 * PI, 2.0 * PI, Some(lam)).unwrap());
    let f = FieldSpec::new(FieldKind::Expr(Expr::parse("2 + 0.3*sin(y)").unwrap()), &s).unwrap();
    (s, f)
}

fn max_det_error(map: &SectionMap, lo: [f64; 2], hi: [f64; 2], n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let x = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        let d = map.weighted_det(x, 1e-6).unwrap();
        worst = worst.max((d - 1.0).abs());
    }
    worst
}

#[test]
fn weighted_determinant_sphere() {
    let (s, f) = sphere_affine();
    let map = SectionMap::new(&s, &f, 0.05, Region::band(0.3, 2.8), SectionOpts::default()).unwrap();
    let e = max_det_error(&map, [1.0, 0.0], [2.1, 2.0 * PI], 100, 1);
    assert!(e < 1e-6, "{e}");
}

#[test]
fn weighted_determinant_trig_torus() {
    let (s, f) = torus_trig();
    let map = SectionMap::new(&s, &f, 0.05, Region::whole(), SectionOpts::default()).unwrap();
    let e = max_det_error(&map, [0.0, 0.0], [2.0 * PI, 2.0 * PI], 100, 2);
    assert!(e < 1e-6, "{e}");
}

#[test]
fn weighted_determinant_conformal_torus() {
    let (s, f) = conformal_torus();
    let map = SectionMap::new(&s, &f, 0.05, Region::whole(), SectionOpts::default()).unwrap();
    let e = max_det_error(&map, [0.0, 0.0], [2.0 * PI, 2.0 * PI], 100, 3);
    assert!(e < 1e-6, "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn backward_undoes_forward_on_sphere(r in 1.0f64..2.1, phi in 0.0f64..(2.0 * PI)) {
        let (s, f) = sphere_affine();
        let map = SectionMap::new(&s, &f, 0.05, Region::band(0.3, 2.8), SectionOpts::default()).unwrap();
        let y = map.apply([r, phi]).unwrap();
        let x = map.inverse(y.q).unwrap();
        prop_assert!((x.q[0] - r).hypot(x.q[1] - phi) < 1e-7);
    }

    #[test]
    fn backward_undoes_forward_on_torus(a in 0.0f64..(2.0 * PI), b in 0.0f64..(2.0 * PI)) {
        let (s, f) = torus_trig();
        let map = SectionMap::new(&s, &f, 0.05, Region::whole(), SectionOpts::default()).unwrap();
        let y = map.apply([a, b]).unwrap();
        let x = map.inverse(y.q).unwrap();
        let d = s.torus().unwrap().wrap_delta([x.q[0] - a, x.q[1] - b]);
        prop_assert!(d[0].hypot(d[1]) < 1e-7);
    }
}

#[test]
fn rotation_monotonicity_follows_period_slope() {
    let (s, f) = sphere_affine();
    let sp = 0.05;
    let map = SectionMap::new(&s, &f, sp, Region::band(0.3, 2.8), SectionOpts { tol: 1e-11, ..Default::default() }).unwrap();
    let (r0, r1) = (PI / 2.0 - 0.1, PI / 2.0 + 0.1);
    let rho0 = rotation_number(&map, [r0, 0.0], 400).unwrap().value;
    let rho1 = rotation_number(&map, [r1, 0.0], 400).unwrap().value;
    // Prediction: |rho| is proportional to 1/T(c) along the cylinder.
    let rs = make_reduced(&s, &f, None).unwrap();
    let crit = critical_points(&rs).unwrap();
    let c = rs.h([PI / 2.0, 0.0]).unwrap();
    let l = trace_level_circle(&rs, c, [PI / 2.0, 0.0]).unwrap();
    let v = classify_resonance(&rs, &OrbitCylinder::around(&crit, l), c, 1e-6).unwrap();
    let dcdr = rs.h([PI / 2.0 + 1e-4, 0.0]).unwrap() - rs.h([PI / 2.0 - 1e-4, 0.0]).unwrap();
    let predicted = -rho0.signum() * v.dtdc.signum() * dcdr.signum();
    assert_eq!((rho1 - rho0).signum(), predicted, "rho {rho0} -> {rho1}, dT/dc {}", v.dtdc);
}

fn spread(sys: &SymmetricSystem, s: f64) -> f64 {
    let v: Vec<f64> = [1.2, PI / 2.0, 1.9].iter().map(|r| measured_rotation(sys, *r, s, 400, 1e-11).unwrap()).collect();
    v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
}

#[test]
fn resonant_field_flattens_the_twist() {
    let s = Surface::unit_sphere();
    let f = build_resonant_field(&s, 0.25, 0.75).unwrap();
    let sys = SymmetricSystem::new(&s, &f).unwrap();
    let (a, b) = (spread(&sys, 0.05), spread(&sys, 0.025));
    // No s^2 twist survives: the spread shrinks at least like s^3.
    assert!(a / b >= 8.0, "{a} {b}");
    let twist = FieldSpec::new(FieldKind::RadialCos { c0: 2.0, c1: 1.0 }, &s).unwrap();
    let tsys = SymmetricSystem::new(&s, &twist).unwrap();
    assert!(spread(&tsys, 0.05) > 50.0 * a);
}

#[test]
fn critical_radius_has_no_leading_rotation() {
    let s = Surface::unit_sphere();
    let f = FieldSpec::new(FieldKind::Expr(Expr::parse("2 + cos(2*r)").unwrap()), &s).unwrap();
    let sys = SymmetricSystem::new(&s, &f).unwrap();
    let lead = symmetric_rotation_number(&sys, PI / 2.0, 0.1).unwrap();
    assert!(lead.abs() < 1e-15, "{lead}");
    let m1 = measured_rotation(&sys, PI / 2.0, 0.1, 400, 1e-11).unwrap();
    let m2 = measured_rotation(&sys, PI / 2.0, 0.05, 400, 1e-11).unwrap();
    // Off the critical radius the leading term at s = 0.1 is about this size.
    let nearby = symmetric_rotation_number(&sys, 1.2, 0.1).unwrap().abs();
    assert!(m1.abs() < 0.1 * nearby, "{m1} vs {nearby}");
    assert!(m2.abs() < m1.abs() / 4.0, "{m1} {m2}");
}
