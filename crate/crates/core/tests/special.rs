use std::f64::consts::PI;

use gyrolab::geometry::{curvature_samples, FieldKind, FieldSpec, QuadratureOpts, Surface};
use gyrolab::special::*;
use gyrolab::Error;
use proptest::prelude::*;

fn radial_cos() -> (Surface, FieldSpec) {
    let s = Surface::unit_sphere();
    let f = FieldSpec::new(FieldKind::RadialCos { c0: 2.0, c1: 1.0 }, &s).unwrap();
    (s, f)
}

#[test]
fn rational_speeds_close_up() {
    let (s, f) = radial_cos();
    let sys = SymmetricSystem::new(&s, &f).unwrap();
    let s_max = 0.05;
    let opts = RationalOpts { max_q: 10_000, ..Default::default() };
    let rep = rational_speed_search(&sys, PI / 2.0, s_max, 3, opts).unwrap();
    assert_eq!(rep.speeds.len(), 3, "{:?}", rep.notes);
    for w in rep.speeds.windows(2) {
        assert!(w[0].s > w[1].s);
    }
    for sp in &rep.speeds {
        assert!(sp.s < s_max);
        // The polished rotation matches the fraction...
        assert!((sp.rho.abs() - 2.0 * PI * sp.p.unsigned_abs() as f64 / sp.q as f64).abs() < 1e-9, "{sp:?}");
        // ...and the map really closes after q returns.
        assert!(sp.closure.unwrap() < 1e-8, "{sp:?}");
        // Leading order s^2 pi / 8 puts the solution near sqrt(16 p / q).
        assert!((sp.s_leading - (16.0 / sp.q as f64).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn no_rationals_below_tiny_cap() {
    let (s, f) = radial_cos();
    let sys = SymmetricSystem::new(&s, &f).unwrap();
    let rep = rational_speed_search(&sys, PI / 2.0, 0.05, 2, RationalOpts { max_q: 10, ..Default::default() }).unwrap();
    assert!(rep.speeds.is_empty());
    assert!(!rep.notes.is_empty());
}

prop_compose! {
    fn grid_value()(m in 0.1f64..10.0, neg in any::<bool>()) -> f64 {
        if neg { -m } else { m }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn boundary_mismatch_is_four_thirds_c1(c1 in grid_value()) {
        let rep = revolution_action_ode_test(PI, &[c1], 1e-10).unwrap();
        let row = &rep.rows[0];
        prop_assert!((row.conserved_mismatch - 4.0 / 3.0 * c1.abs()).abs() < 1e-6);
        prop_assert!(row.status != ActionStatus::Compatible);
    }

    #[test]
    fn action_invariant_is_conserved_on_exact_solutions(c1 in -3.0f64..3.0, a in -0.5f64..0.5, da in -0.5f64..0.5) {
        // Q' = 2 A'(A'' + c1 A^2 / 2 + A - c1 / 2) vanishes along A'' = c1/2 - A - c1 A^2/2.
        let h = 1e-6;
        let dda = c1 / 2.0 - a - c1 * a * a / 2.0;
        let q1 = action_invariant(c1, a + h * da + 0.5 * h * h * dda, da + h * dda);
        let q0 = action_invariant(c1, a, da);
        prop_assert!(((q1 - q0) / h).abs() < 1e-4 * (1.0 + q0.abs()));
    }
}

#[test]
fn action_test_at_zero() {
    let rep = revolution_action_ode_test(PI, &[0.0], 1e-13).unwrap();
    assert!(rep.rows[0].residual < 1e-10);
    assert_eq!(rep.rows[0].status, ActionStatus::Compatible);
    let mut csv = Vec::new();
    write_action_csv(&rep, &mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("c1,residual\n"));
}

#[test]
fn circle_action_on_round_and_oblate() {
    let round = Surface::unit_sphere();
    let samples = curvature_samples(&round, QuadratureOpts::default()).unwrap();
    let area: f64 = samples.iter().map(|x| x.1).sum();
    let r = circle_action_conditions(&samples, area, 1e-9).unwrap();
    assert!(r.constant_curvature && r.mean_pass);
    let ob = oblate_sphere(0.3).unwrap();
    let samples = curvature_samples(&ob, QuadratureOpts::default()).unwrap();
    let area: f64 = samples.iter().map(|x| x.1).sum();
    let r = circle_action_conditions(&samples, area, 1e-9).unwrap();
    assert!(r.mean_residual > 1e-2, "{r:?}");
    assert!(!r.mean_pass);
}

#[test]
fn resonant_field_errors() {
    let s = Surface::unit_sphere();
    assert!(matches!(build_resonant_field(&s, 0.0, 1.0), Err(Error::Config(_))));
    assert!(matches!(build_resonant_field(&s, 1.0, 1.0), Err(Error::Precondition(_))));
    assert!(matches!(build_resonant_field(&Surface::flat_torus(), 0.5, 1.0), Err(Error::Precondition(_))));
    assert!(build_resonant_field(&s, -0.5, 1.0).is_ok());
}

#[test]
fn rotation_formula_needs_interior_radius() {
    let (s, f) = radial_cos();
    let sys = SymmetricSystem::new(&s, &f).unwrap();
    assert!(matches!(symmetric_rotation_number(&sys, 0.0, 0.1), Err(Error::Precondition(_))));
    assert!(matches!(symmetric_rotation_number(&sys, PI, 0.1), Err(Error::Precondition(_))));
    let rho = symmetric_rotation_number(&sys, PI / 2.0, 0.1).unwrap();
    assert!((rho.abs() - 0.01 * PI / 8.0).abs() < 1e-15);
}
