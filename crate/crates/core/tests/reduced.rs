use std::f64::consts::PI;

use gyrolab::geometry::{FieldKind, FieldSpec, Surface};
use gyrolab::reduced::cylinder::maximal_cylinder;
use gyrolab::reduced::{
    classify_resonance, critical_points, make_reduced, period_area_profile, trace_level_circle, Endpoint, OrbitCylinder, Verdict,
};
use proptest::prelude::*;

fn affine_sphere() -> (Surface, FieldSpec) {
    let s = Surface::unit_sphere();
    let f = FieldSpec::new(FieldKind::AffineHeight { c0: 2.0, c1: 1.0 }, &s).unwrap();
    (s, f)
}

/// Closed-form period for `b = 2 + z` on the unit sphere.
fn t_affine(c: f64) -> f64 {
    2.0 * PI * (2.0 * c).powf(-1.5)
}

#[test]
fn affine_sphere_period_and_slope() {
    let (s, f) = affine_sphere();
    let rs = make_reduced(&s, &f, None).unwrap();
    let crit = critical_points(&rs).unwrap();
    let l = trace_level_circle(&rs, 0.125, [PI / 2.0, 0.0]).unwrap();
    assert!((l.period - 16.0 * PI).abs() < 1e-6 * 16.0 * PI, "{}", l.period);
    let cyl = OrbitCylinder::around(&crit, l);
    let v = classify_resonance(&rs, &cyl, 0.125, 1e-6).unwrap();
    assert_eq!(v.verdict, Verdict::NonResonant);
    // d/dc of 2 pi (2c)^(-3/2) at c = 1/8.
    let h = 1e-5;
    let fd = (t_affine(0.125 + h) - t_affine(0.125 - h)) / (2.0 * h);
    assert!((fd + 192.0 * PI).abs() < 1e-3);
    assert!((v.dtdc + 192.0 * PI).abs() < 1e-4 * 192.0 * PI, "{}", v.dtdc);
}

#[test]
fn affine_sphere_profile_matches_closed_form() {
    let (s, f) = affine_sphere();
    let rs = make_reduced(&s, &f, None).unwrap();
    let crit = critical_points(&rs).unwrap();
    let l0 = trace_level_circle(&rs, 0.125, [PI / 2.0, 0.0]).unwrap();
    let cyl = maximal_cylinder(&rs, &crit, &l0, 64).unwrap();
    assert!((cyl.c_minus - 1.0 / 18.0).abs() < 1e-12);
    assert!((cyl.c_plus - 0.5).abs() < 1e-12);
    let grid: Vec<f64> = (1..20).map(|i| 1.0 / 18.0 + (0.5 - 1.0 / 18.0) * i as f64 / 20.0).collect();
    let prof = period_area_profile(&rs, &cyl, &grid).unwrap();
    assert!(prof.max_mismatch < 1e-5, "{}", prof.max_mismatch);
    assert!(prof.area_monotone);
    for r in &prof.rows {
        assert!((r.period - t_affine(r.c)).abs() < 1e-8 * r.period);
        let da = 2.0 * PI * ((0.25f64).powf(-0.5) - (2.0 * r.c).powf(-0.5));
        assert!((r.area.abs() - da.abs()).abs() < 1e-7, "{} {}", r.area, da);
    }
}

#[test]
fn torus_cylinder_stops_at_saddle_level() {
    let t = Surface::flat_torus();
    let f = FieldSpec::new(FieldKind::TorusTrig { c0: 3.0, cx: 1.0, cy: 1.0 }, &t).unwrap();
    let rs = make_reduced(&t, &f, None).unwrap();
    let crit = critical_points(&rs).unwrap();
    let l0 = trace_level_circle(&rs, 0.021, [0.2, 0.0]).unwrap();
    let cyl = maximal_cylinder(&rs, &crit, &l0, 64).unwrap();
    assert!((cyl.c_plus - 1.0 / 18.0).abs() < 1e-12, "{:?}", cyl.upper);
    assert!(matches!(cyl.upper, Endpoint::Critical { .. }));
    assert!((cyl.c_minus - 0.02).abs() < 1e-12, "{:?}", cyl.lower);
    let grid: Vec<f64> = (1..10).map(|i| 0.02 + (1.0 / 18.0 - 0.02) * i as f64 / 10.0).collect();
    let prof = period_area_profile(&rs, &cyl, &grid).unwrap();
    assert!(prof.max_mismatch < 1e-5, "{}", prof.max_mismatch);
    assert!(prof.rows.iter().all(|r| r.period > 0.0));
}

#[test]
fn resonant_height_field_has_constant_period() {
    let s = Surface::unit_sphere();
    let f = FieldSpec::new(FieldKind::ResonantHeight { alpha: 0.25, beta: 0.75 }, &s).unwrap();
    let rs = make_reduced(&s, &f, None).unwrap();
    let crit = critical_points(&rs).unwrap();
    let l0 = trace_level_circle(&rs, 0.75, [PI / 2.0, 0.0]).unwrap();
    let cyl = maximal_cylinder(&rs, &crit, &l0, 64).unwrap();
    let grid: Vec<f64> = (1..40).map(|i| 0.5 + 0.5 * i as f64 / 40.0).collect();
    let prof = period_area_profile(&rs, &cyl, &grid).unwrap();
    let worst = prof.rows.iter().map(|r| (r.period - 8.0 * PI).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst}");
    let v = classify_resonance(&rs, &cyl, 0.75, 1e-6).unwrap();
    assert_eq!(v.verdict, Verdict::ResonantWithinTolerance);
}

#[test]
fn scaling_halves_periods_and_keeps_verdicts() {
    let (s, f) = affine_sphere();
    let rs = make_reduced(&s, &f, None).unwrap();
    let rs2 = rs.scaled(2.0);
    let (crit, crit2) = (critical_points(&rs).unwrap(), critical_points(&rs2).unwrap());
    for c in [0.08, 0.125, 0.3] {
        let l = trace_level_circle(&rs, c, [PI / 2.0, 0.0]).unwrap();
        let l2 = trace_level_circle(&rs2, 2.0 * c, l.seed).unwrap();
        assert!((l2.period - 0.5 * l.period).abs() < 1e-9 * l.period);
        let v = classify_resonance(&rs, &OrbitCylinder::around(&crit, l), c, 1e-6).unwrap();
        let v2 = classify_resonance(&rs2, &OrbitCylinder::around(&crit2, l2), 2.0 * c, 1e-6).unwrap();
        assert_eq!(v.verdict, v2.verdict);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn period_positive_and_area_identity(c in 0.06f64..0.49) {
        let (s, f) = affine_sphere();
        let rs = make_reduced(&s, &f, None).unwrap();
        let l = trace_level_circle(&rs, c, [PI / 2.0, 0.0]).unwrap();
        prop_assert!(l.period > 0.0);
        prop_assert!((l.period - t_affine(c)).abs() < 1e-8 * l.period);
        let h = 1e-4 * c;
        let lp = trace_level_circle(&rs, c + h, l.seed).unwrap();
        let lm = trace_level_circle(&rs, c - h, l.seed).unwrap();
        let dadc = (lp.area - lm.area) / (2.0 * h);
        prop_assert!((dadc - l.period).abs() < 1e-5 * l.period, "{} {}", dadc, l.period);
    }

    #[test]
    fn torus_periods_scale(c in 0.025f64..0.05, k in 0.5f64..4.0) {
        let t = Surface::flat_torus();
        let f = FieldSpec::new(FieldKind::TorusTrig { c0: 3.0, cx: 1.0, cy: 1.0 }, &t).unwrap();
        let rs = make_reduced(&t, &f, None).unwrap();
        let rk = rs.scaled(k);
        let l = trace_level_circle(&rs, c, [0.5, 0.1]).unwrap();
        let lk = trace_level_circle(&rk, k * c, l.seed).unwrap();
        prop_assert!((lk.period * k - l.period).abs() < 1e-8 * l.period);
    }
}
