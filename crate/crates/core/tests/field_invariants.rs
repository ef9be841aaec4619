//! Property tests of the domain map.

use proptest::prelude::*;
use shape_qmc::field::{polar_angle, singular_values, ParameterVector, PerturbationField, Point2, Source};

fn point_in_disk() -> impl Strategy<Value = Point2> {
    (0.05f64..0.98, -std::f64::consts::PI..std::f64::consts::PI).prop_map(|(r, t)| Point2::new(r * t.cos(), r * t.sin()))
}

fn parameters(s: usize) -> impl Strategy<Value = ParameterVector> {
    prop::collection::vec(-0.5f64..=0.5, s).prop_map(|v| ParameterVector::new(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobian_matches_central_differences(x in point_in_disk(), y in parameters(12)) {
        let field = PerturbationField::default_radial(12);
        let j = field.jacobian(&x, &y).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let mut e = Point2::zeros();
            e[c] = h;
            let fd = (field.evaluate_map(&(x + e), &y).unwrap() - field.evaluate_map(&(x - e), &y).unwrap()) / (2.0 * h);
            prop_assert!((fd - j.column(c)).norm() <= 1e-5 * j.norm());
        }
    }

    #[test]
    fn diffusion_is_symmetric_positive_with_unit_determinant(x in point_in_disk(), y in parameters(12)) {
        let field = PerturbationField::default_radial(12);
        let a = field.diffusion_matrix(&x, &y).unwrap();
        prop_assert_eq!(a[(0, 1)], a[(1, 0)]);
        prop_assert!(a[(0, 0)] > 0.0);
        prop_assert!((a.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn map_is_radial_scaling(x in point_in_disk(), y in parameters(12)) {
        let field = PerturbationField::default_radial(12);
        let v = field.evaluate_map(&x, &y).unwrap();
        let a = field.radial_profile(&x, &y).unwrap();
        prop_assert!((v - x * a).norm() <= 1e-15);
        prop_assert!(a > 0.0);
        prop_assert!((polar_angle(&v) - polar_angle(&x)).abs() < 1e-12);
    }

    #[test]
    fn truncation_pads_with_zeros(x in point_in_disk(), y in parameters(5)) {
        let field = PerturbationField::default_radial(16);
        let truncated = field.truncate(5).unwrap();
        prop_assert_eq!(
            truncated.evaluate_map(&x, &y).unwrap(),
            field.evaluate_map(&x, &y.extend(16)).unwrap()
        );
    }

    #[test]
    fn pullback_source_scales_by_determinant(x in point_in_disk(), y in parameters(8)) {
        let field = PerturbationField::default_radial(8);
        let v = field.evaluate_map(&x, &y).unwrap();
        let det = field.jacobian(&x, &y).unwrap().determinant();
        let got = field.pullback_source(&Source::Trigonometric, &x, &y).unwrap();
        prop_assert!((got - Source::Trigonometric.eval(&v) * det).abs() <= 1e-12 * (1.0 + got.abs()));
    }

    #[test]
    fn singular_values_bracket_jacobian_action(x in point_in_disk(), y in parameters(8), t in 0.0f64..6.3) {
        let field = PerturbationField::default_radial(8);
        let j = field.jacobian(&x, &y).unwrap();
        let (lo, hi) = singular_values(&j);
        let u = Point2::new(t.cos(), t.sin());
        let norm = (j * u).norm();
        prop_assert!(lo <= norm * (1.0 + 1e-12) && norm <= hi * (1.0 + 1e-12));
    }
}

#[test]
fn lower_corner_is_the_identity_map() {
    let field = PerturbationField::default_radial(30);
    let y = ParameterVector::lower_corner(30);
    for x in [Point2::new(0.3, -0.4), Point2::new(-0.9, 0.1)] {
        assert_eq!(field.evaluate_map(&x, &y).unwrap(), x);
    }
}

#[test]
fn origin_is_fixed() {
    let field = PerturbationField::default_radial(10);
    let y = ParameterVector::new(vec![0.3; 10]).unwrap();
    assert_eq!(field.evaluate_map(&Point2::zeros(), &y).unwrap(), Point2::zeros());
}

#[test]
fn singular_value_bounds_contain_sampled_values() {
    let field = PerturbationField::default_radial(20);
    let (lo, hi) = field.singular_value_bounds(10_000, 7).unwrap();
    assert!(0.0 < lo && lo < 1.0 && 1.0 < hi);
    let mut y = vec![0.0; 20];
    shape_qmc::bayes::uniform_parameter(99, 0, 0, &mut y);
    let y = ParameterVector::new(y).unwrap();
    for x in shape_qmc::mesh::build_disk_mesh(3).nodes().iter().filter(|x| x.norm() > 0.0) {
        let (a, b) = singular_values(&field.jacobian(x, &y).unwrap());
        assert!(a >= lo * 0.9 && b <= hi * 1.1, "{a} {b} outside [{lo}, {hi}]");
    }
}
