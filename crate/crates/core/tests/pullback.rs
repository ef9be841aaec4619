//! The pullback formulation on the reference disk agrees with a direct
//! solve on the deformed domain.

use std::sync::Arc;

use shape_qmc::fem::Discretization;
use shape_qmc::field::{CustomMap, FieldError, Mat2, ParameterVector, PerturbationField, Point2, Source};
use shape_qmc::mesh::{build_disk_mesh, Mesh};

/// `V(x, y) = (I + y_1 B) x` with a fixed symmetric `B`.
struct Shear;

impl Shear {
    fn matrix(y: &[f64]) -> Mat2 {
        Mat2::identity() + Mat2::new(0.6, 0.3, 0.3, -0.4) * y[0]
    }
}

impl CustomMap for Shear {
    fn dimension(&self) -> usize {
        1
    }

    fn map(&self, x: &Point2, y: &[f64]) -> Point2 {
        Self::matrix(y) * x
    }

    fn jacobian(&self, _x: &Point2, y: &[f64]) -> Result<Mat2, FieldError> {
        Ok(Self::matrix(y))
    }
}

fn mapped_mesh(mesh: &Mesh, map: impl Fn(&Point2) -> Point2) -> Mesh {
    Mesh::from_parts(
        mesh.nodes().iter().map(map).collect(),
        mesh.triangles().to_vec(),
        mesh.boundary_flags().to_vec(),
    )
    .unwrap()
}

#[test]
fn affine_map_matches_solve_on_mapped_mesh() {
    let mesh = build_disk_mesh(4);
    let field = PerturbationField::custom(Arc::new(Shear));
    let y = ParameterVector::new(vec![0.45]).unwrap();
    let space = Discretization::new(&mesh);
    let pulled = space.problem(&field, Source::Trigonometric).solve(&y).unwrap();

    let deformed = mapped_mesh(&mesh, |x| Shear::matrix(y.as_slice()) * x);
    let identity = PerturbationField::identity(1);
    let direct_space = Discretization::new(&deformed);
    let direct = direct_space
        .problem(&identity, Source::Trigonometric)
        .solve(&ParameterVector::zeros(1))
        .unwrap();
    let diff = pulled
        .coefficients()
        .iter()
        .zip(direct.coefficients())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-8, "nodal difference {diff}");
}

#[test]
fn radial_map_matches_solve_on_mapped_mesh_to_discretization_order() {
    let field = PerturbationField::default_radial(10);
    let mut y = vec![0.0; 10];
    shape_qmc::bayes::uniform_parameter(5, 0, 0, &mut y);
    let y = ParameterVector::new(y).unwrap();
    let mut previous = f64::INFINITY;
    for level in [3, 4, 5] {
        let mesh = build_disk_mesh(level);
        let pulled = Discretization::new(&mesh).problem(&field, Source::Trigonometric).solve(&y).unwrap();
        let deformed = mapped_mesh(&mesh, |x| field.evaluate_map(x, &y).unwrap());
        let direct = Discretization::new(&deformed)
            .problem(&PerturbationField::identity(1), Source::Trigonometric)
            .solve(&ParameterVector::zeros(1))
            .unwrap();
        let diff = pulled
            .coefficients()
            .iter()
            .zip(direct.coefficients())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < previous / 2.5, "level {level}: {diff} vs {previous}");
        previous = diff;
    }
}
