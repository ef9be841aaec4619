//! P1 finite elements for the pulled-back Poisson problem
//! `-div(A(x, y) grad u) = f_ref(x, y)` on the reference disk with homogeneous
//! Dirichlet conditions.
//!
//! Element integrals use the 3-point Gauss rule with barycentric points
//! `(2/3, 1/6, 1/6)` and permutations. The sparsity pattern is fixed per mesh,
//! so repeated solves for different parameters only refill values.

use nalgebra::Vector2;
use thiserror::Error;

use crate::field::{FieldError, ModeCoefficients, ParameterVector, PerturbationField, Point2, PreparedField, Source};
use crate::mesh::{build_disk_mesh, Location, Mesh};
use crate::summation::NeumaierSum;

/// Relative residual the linear solver must reach.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
const CG_TOLERANCE: f64 = 1e-12;

const QUAD_BARY: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

const NO_DOF: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("linear solver stopped at relative residual {residual:e} after {iterations} iterations")]
    SolverFailure { residual: f64, iterations: usize },
    #[error("point ({x}, {y}) lies outside the mesh")]
    Outside { x: f64, y: f64 },
    #[error("system of size {matrix} does not match {expected} unknowns")]
    DimensionMismatch { matrix: usize, expected: usize },
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|K_ij - K_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }
}

/// Sparsity pattern plus, for every triangle, the value slot of each of its
/// nine local entries (or `NO_DOF` when a vertex is not an unknown).
#[derive(Debug, Clone)]
struct Pattern {
    dofs: Vec<usize>,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    slots: Vec<[usize; 9]>,
}

impl Pattern {
    fn new(mesh: &Mesh, dofs: Vec<usize>, n: usize) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in mesh.triangles() {
            for &a in t {
                let da = dofs[a];
                if da == NO_DOF {
                    continue;
                }
                for &b in t {
                    if dofs[b] != NO_DOF {
                        rows[da].push(dofs[b]);
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let slots = mesh
            .triangles()
            .iter()
            .map(|t| {
                let mut s = [NO_DOF; 9];
                for (a, &na) in t.iter().enumerate() {
                    for (b, &nb) in t.iter().enumerate() {
                        let (da, db) = (dofs[na], dofs[nb]);
                        if da != NO_DOF && db != NO_DOF {
                            let range = row_ptr[da]..row_ptr[da + 1];
                            let k = col_idx[range.clone()].binary_search(&db).expect("entry in pattern");
                            s[3 * a + b] = range.start + k;
                        }
                    }
                }
                s
            })
            .collect();
        Self { dofs, n, row_ptr, col_idx, slots }
    }

    fn matrix(&self, values: Vec<f64>) -> CsrMatrix {
        CsrMatrix {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        }
    }
}

/// Mesh geometry, quadrature points and sparsity patterns, computed once.
#[derive(Debug, Clone)]
pub struct Discretization<'m> {
    mesh: &'m Mesh,
    areas: Vec<f64>,
    grads: Vec<[Vector2<f64>; 3]>,
    quad_points: Vec<Point2>,
    interior: Pattern,
    full: Pattern,
}

impl<'m> Discretization<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let nt = mesh.num_triangles();
        let mut areas = Vec::with_capacity(nt);
        let mut grads = Vec::with_capacity(nt);
        let mut quad_points = Vec::with_capacity(3 * nt);
        for t in 0..nt {
            let [a, b, c] = mesh.vertices(t);
            let area = mesh.triangle_area(t);
            let perp = |p: Point2, q: Point2| Vector2::new(p[1] - q[1], q[0] - p[0]) / (2.0 * area);
            grads.push([perp(b, c), perp(c, a), perp(a, b)]);
            areas.push(area);
            for w in &QUAD_BARY {
                quad_points.push(a * w[0] + b * w[1] + c * w[2]);
            }
        }
        let mut dofs = vec![NO_DOF; mesh.num_nodes()];
        let mut count = 0;
        for (i, d) in dofs.iter_mut().enumerate() {
            if !mesh.is_boundary(i) {
                *d = count;
                count += 1;
            }
        }
        let interior = Pattern::new(mesh, dofs, count);
        let full = Pattern::new(mesh, (0..mesh.num_nodes()).collect(), mesh.num_nodes());
        Self { mesh, areas, grads, quad_points, interior, full }
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn quadrature_points(&self) -> &[Point2] {
        &self.quad_points
    }

    pub fn num_unknowns(&self) -> usize {
        self.interior.n
    }

    /// Binds a field and a source term to this discretization.
    pub fn problem(&self, field: &PerturbationField, source: Source) -> FemProblem<'_, 'm> {
        FemProblem {
            space: self,
            prepared: field.prepare(&self.quad_points),
            source,
        }
    }

    fn assemble_into(
        &self,
        pattern: &Pattern,
        coefficient: impl Fn(usize) -> Result<(nalgebra::Matrix2<f64>, f64), FieldError>,
    ) -> Result<(CsrMatrix, Vec<f64>), FemError> {
        let mut values = vec![0.0; pattern.col_idx.len()];
        let mut load = vec![0.0; pattern.n];
        for (t, nodes) in self.mesh.triangles().iter().enumerate() {
            let mut a_sum = nalgebra::Matrix2::zeros();
            let mut f_q = [0.0; 3];
            for (q, fq) in f_q.iter_mut().enumerate() {
                let (a, f) = coefficient(3 * t + q)?;
                a_sum += a;
                *fq = f;
            }
            let area = self.areas[t];
            let a_avg = a_sum * (area / 3.0);
            let g = &self.grads[t];
            let slots = &pattern.slots[t];
            for i in 0..3 {
                let ag = a_avg * g[i];
                for j in 0..3 {
                    let slot = slots[3 * i + j];
                    if slot != NO_DOF {
                        values[slot] += ag.dot(&g[j]);
                    }
                }
                let dof = pattern.dofs[nodes[i]];
                if dof != NO_DOF {
                    let mut fi = 0.0;
                    for (q, w) in QUAD_BARY.iter().enumerate() {
                        fi += f_q[q] * w[i];
                    }
                    load[dof] += fi * area / 3.0;
                }
            }
        }
        Ok((pattern.matrix(values), load))
    }
}

/// A discretization with a prepared field and a source term.
#[derive(Debug, Clone)]
pub struct FemProblem<'d, 'm> {
    space: &'d Discretization<'m>,
    prepared: PreparedField,
    source: Source,
}

impl<'m> FemProblem<'_, 'm> {
    pub fn space(&self) -> &Discretization<'m> {
        self.space
    }

    pub fn field(&self) -> &PerturbationField {
        self.prepared.field()
    }

    fn coefficient(&self, c: &ModeCoefficients, q: usize) -> Result<(nalgebra::Matrix2<f64>, f64), FieldError> {
        let (a, v, det) = self.prepared.pullback(q, c)?;
        let f = match self.source {
            Source::Constant(0.0) => 0.0,
            _ => self.source.eval(&v) * det,
        };
        Ok((a, f))
    }

    /// Stiffness matrix and load vector on the interior nodes.
    pub fn assemble(&self, c: &ModeCoefficients) -> Result<(CsrMatrix, Vec<f64>), FemError> {
        self.space.assemble_into(&self.space.interior, |q| self.coefficient(c, q))
    }

    /// Stiffness matrix and load vector on all nodes, without boundary conditions.
    pub fn assemble_full(&self, c: &ModeCoefficients) -> Result<(CsrMatrix, Vec<f64>), FemError> {
        self.space.assemble_into(&self.space.full, |q| self.coefficient(c, q))
    }

    /// Nodal values of the discrete solution, zero on the boundary.
    pub fn solve_nodal(&self, c: &ModeCoefficients) -> Result<Vec<f64>, FemError> {
        let (k, f) = self.assemble(c)?;
        let u = conjugate_gradient(&k, &f)?;
        Ok(scatter(&self.space.interior.dofs, &u))
    }

    pub fn solve(&self, y: &ParameterVector) -> Result<FemSolution<'m>, FemError> {
        let c = self.field().coefficients(y.as_slice())?;
        Ok(FemSolution {
            mesh: self.space.mesh,
            coefficients: self.solve_nodal(&c)?,
            y: y.clone(),
        })
    }
}

fn scatter(dofs: &[usize], u: &[f64]) -> Vec<f64> {
    dofs.iter().map(|&d| if d == NO_DOF { 0.0 } else { u[d] }).collect()
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess. The
/// true residual is verified against [`RESIDUAL_TOLERANCE`].
pub fn conjugate_gradient(k: &CsrMatrix, f: &[f64]) -> Result<Vec<f64>, FemError> {
    let n = k.dim();
    if f.len() != n {
        return Err(FemError::DimensionMismatch { matrix: n, expected: f.len() });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let f_norm = norm(f);
    let mut u = vec![0.0; n];
    if f_norm == 0.0 {
        return Ok(u);
    }
    let inv_diag: Vec<f64> = k.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = f.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut kp = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 10 * n + 100;
    let mut iterations = 0;
    while iterations < max_iter && norm(&r) > CG_TOLERANCE * f_norm {
        k.matvec(&p, &mut kp);
        let pkp: f64 = p.iter().zip(&kp).map(|(a, b)| a * b).sum();
        if !(pkp > 0.0) {
            break;
        }
        let alpha = rz / pkp;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }
    k.matvec(&u, &mut kp);
    let residual = kp.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / f_norm;
    if !(residual <= RESIDUAL_TOLERANCE) {
        return Err(FemError::SolverFailure { residual, iterations });
    }
    Ok(u)
}

/// Interior stiffness matrix and load vector for `field` at `y`.
pub fn assemble(
    mesh: &Mesh,
    field: &PerturbationField,
    y: &ParameterVector,
    f: &Source,
) -> Result<(CsrMatrix, Vec<f64>), FemError> {
    let space = Discretization::new(mesh);
    let problem = space.problem(field, f.clone());
    problem.assemble(&field.coefficients(y.as_slice())?)
}

/// Solves an interior system and extends the result by zero to the boundary.
pub fn solve_dirichlet<'m>(
    stiffness: &CsrMatrix,
    load: &[f64],
    mesh: &'m Mesh,
    y: &ParameterVector,
) -> Result<FemSolution<'m>, FemError> {
    let mut dofs = vec![NO_DOF; mesh.num_nodes()];
    let mut count = 0;
    for (i, d) in dofs.iter_mut().enumerate() {
        if !mesh.is_boundary(i) {
            *d = count;
            count += 1;
        }
    }
    if stiffness.dim() != count {
        return Err(FemError::DimensionMismatch { matrix: stiffness.dim(), expected: count });
    }
    let u = conjugate_gradient(stiffness, load)?;
    Ok(FemSolution { mesh, coefficients: scatter(&dofs, &u), y: y.clone() })
}

/// Discrete solution `u_h` on a mesh.
#[derive(Debug, Clone)]
pub struct FemSolution<'m> {
    mesh: &'m Mesh,
    coefficients: Vec<f64>,
    y: ParameterVector,
}

impl<'m> FemSolution<'m> {
    pub fn from_nodal(mesh: &'m Mesh, coefficients: Vec<f64>, y: ParameterVector) -> Self {
        assert_eq!(coefficients.len(), mesh.num_nodes());
        Self { mesh, coefficients, y }
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn y(&self) -> &ParameterVector {
        &self.y
    }

    /// P1 interpolation at the given points.
    pub fn evaluate(&self, points: &[Point2]) -> Result<Vec<f64>, FemError> {
        let mut locator = self.mesh.locator();
        points
            .iter()
            .map(|x| {
                let loc = locator.locate(x).ok_or(FemError::Outside { x: x[0], y: x[1] })?;
                Ok(interpolate(self.mesh, &self.coefficients, &loc))
            })
            .collect()
    }

    /// `||u_h - exact||_{L2}` by the 3-point rule on every triangle.
    pub fn l2_error(&self, exact: impl Fn(&Point2) -> f64) -> f64 {
        let mut acc = NeumaierSum::new();
        for (t, nodes) in self.mesh.triangles().iter().enumerate() {
            let v = self.mesh.vertices(t);
            let mut local = 0.0;
            for w in &QUAD_BARY {
                let x = v[0] * w[0] + v[1] * w[1] + v[2] * w[2];
                let uh: f64 = (0..3).map(|k| w[k] * self.coefficients[nodes[k]]).sum();
                let e = uh - exact(&x);
                local += e * e;
            }
            acc.add(local * self.mesh.triangle_area(t) / 3.0);
        }
        acc.value().max(0.0).sqrt()
    }
}

/// `||g||^2_{L2}` of the P1 interpolant of nodal values; the 3-point rule is
/// exact for the quadratic integrand.
pub fn p1_norm_squared(mesh: &Mesh, values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for (t, nodes) in mesh.triangles().iter().enumerate() {
        let mut local = 0.0;
        for w in &QUAD_BARY {
            let v: f64 = (0..3).map(|k| w[k] * values[nodes[k]]).sum();
            local += v * v;
        }
        acc.add(local * mesh.triangle_area(t) / 3.0);
    }
    acc.value()
}

/// Interpolates nodal values at a located point.
#[inline]
pub fn interpolate(mesh: &Mesh, values: &[f64], loc: &Location) -> f64 {
    let t = mesh.triangles()[loc.triangle];
    (0..3).map(|k| loc.barycentric[k] * values[t[k]]).sum()
}

/// Locates every point, failing on the first one outside the mesh.
pub fn locate_all(mesh: &Mesh, points: &[Point2]) -> Result<Vec<Location>, FemError> {
    let mut locator = mesh.locator();
    points
        .iter()
        .map(|x| locator.locate(x).ok_or(FemError::Outside { x: x[0], y: x[1] }))
        .collect()
}

/// Solves at `y` on the level-`mesh_level` disk mesh and returns `u_h` at the
/// reference points.
pub fn observation(
    field: &PerturbationField,
    y: &ParameterVector,
    mesh_level: usize,
    f: &Source,
    ref_points: &[Point2],
) -> Result<Vec<f64>, FemError> {
    let mesh = build_disk_mesh(mesh_level);
    let locations = locate_all(&mesh, ref_points)?;
    let space = Discretization::new(&mesh);
    let problem = space.problem(field, f.clone());
    let u = problem.solve_nodal(&field.coefficients(y.as_slice())?)?;
    Ok(locations.iter().map(|loc| interpolate(&mesh, &u, loc)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn disk_solution(x: &Point2) -> f64 {
        (1.0 - x.norm_squared()) / 4.0
    }

    /// Classical P1 Laplacian via cotangent weights.
    fn cotangent_stiffness(mesh: &Mesh) -> HashMap<(usize, usize), f64> {
        let mut k = HashMap::new();
        for &[a, b, c] in mesh.triangles() {
            let p = [mesh.nodes()[a], mesh.nodes()[b], mesh.nodes()[c]];
            let idx = [a, b, c];
            for o in 0..3 {
                let (i, j) = ((o + 1) % 3, (o + 2) % 3);
                let e1 = p[i] - p[o];
                let e2 = p[j] - p[o];
                let cot = e1.dot(&e2) / (e1[0] * e2[1] - e1[1] * e2[0]).abs();
                let w = 0.5 * cot;
                *k.entry((idx[i], idx[j])).or_insert(0.0) -= w;
                *k.entry((idx[j], idx[i])).or_insert(0.0) -= w;
                *k.entry((idx[i], idx[i])).or_insert(0.0) += w;
                *k.entry((idx[j], idx[j])).or_insert(0.0) += w;
            }
        }
        k
    }

    #[test]
    fn identity_stiffness_matches_cotangent_formula() {
        let mesh = build_disk_mesh(2);
        let field = PerturbationField::identity(1);
        let space = Discretization::new(&mesh);
        let problem = space.problem(&field, Source::Constant(0.0));
        let c = field.coefficients(&[0.0]).unwrap();
        let (k, f) = problem.assemble_full(&c).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
        let oracle = cotangent_stiffness(&mesh);
        for i in 0..k.dim() {
            for (j, v) in k.row(i) {
                assert!((v - oracle.get(&(i, j)).copied().unwrap_or(0.0)).abs() <= 1e-12);
            }
        }
        for (&(i, j), &v) in &oracle {
            assert!((k.get(i, j) - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_stiffness_has_constants_in_kernel() {
        let mesh = build_disk_mesh(3);
        let field = PerturbationField::default_radial(6);
        let space = Discretization::new(&mesh);
        let problem = space.problem(&field, Source::Trigonometric);
        let c = field.coefficients(&[0.3, -0.1, 0.45, 0.0, -0.5, 0.2]).unwrap();
        let (k, _) = problem.assemble_full(&c).unwrap();
        assert!(k.row_sums().iter().all(|s| s.abs() <= 1e-10));
        assert!(k.asymmetry() <= 1e-12);
        let (ki, _) = problem.assemble(&c).unwrap();
        assert!(ki.asymmetry() <= 1e-12);
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let mesh = build_disk_mesh(2);
        let field = PerturbationField::default_radial(3);
        let y = ParameterVector::new(vec![0.1, 0.2, 0.3]).unwrap();
        let (k, f) = assemble(&mesh, &field, &y, &Source::Constant(0.0)).unwrap();
        let sol = solve_dirichlet(&k, &f, &mesh, &y).unwrap();
        assert!(sol.coefficients().iter().all(|&v| v == 0.0));
        assert_eq!(sol.l2_error(|_| 0.0), 0.0);
    }

    #[test]
    fn disk_solution_at_centre_and_half_radius() {
        let mesh = build_disk_mesh(4);
        assert!(mesh.h() <= 1.0 / 16.0 * 1.5);
        let field = PerturbationField::identity(1);
        let y = ParameterVector::zeros(1);
        let (k, f) = assemble(&mesh, &field, &y, &Source::Constant(1.0)).unwrap();
        let sol = solve_dirichlet(&k, &f, &mesh, &y).unwrap();
        let values = sol.evaluate(&[Point2::zeros(), Point2::new(0.5, 0.0), Point2::new(1.0, 0.0)]).unwrap();
        assert!((values[0] - 0.25).abs() <= 5e-3, "{}", values[0]);
        assert!((values[1] - 0.1875).abs() <= 5e-3, "{}", values[1]);
        assert_eq!(values[2], 0.0);
        assert_eq!(sol.evaluate(&[mesh.nodes()[0]]).unwrap()[0], sol.coefficients()[0]);
        for b in mesh.boundary_nodes() {
            assert_eq!(sol.coefficients()[b], 0.0);
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        for level in 1..=4 {
            let mesh = build_disk_mesh(level);
            let field = PerturbationField::identity(1);
            let y = ParameterVector::zeros(1);
            let (k, f) = assemble(&mesh, &field, &y, &Source::Constant(1.0)).unwrap();
            let sol = solve_dirichlet(&k, &f, &mesh, &y).unwrap();
            assert!(sol.coefficients().iter().all(|&v| v >= -1e-10));
        }
    }

    #[test]
    fn l2_error_special_cases() {
        let mesh = build_disk_mesh(3);
        let y = ParameterVector::zeros(1);
        let u: Vec<f64> = mesh.nodes().iter().map(|x| x[0] - 0.3 * x[1]).collect();
        let sol = FemSolution::from_nodal(&mesh, u, y.clone());
        assert!(sol.l2_error(|x| x[0] - 0.3 * x[1]) <= 1e-12);
        let zero = FemSolution::from_nodal(&mesh, vec![0.0; mesh.num_nodes()], y);
        let c: f64 = 0.7;
        let expected = c * mesh.area().sqrt();
        assert!((zero.l2_error(|_| c) - expected).abs() <= 1e-12);
        assert!((zero.l2_error(|_| c) - c * std::f64::consts::PI.sqrt()).abs() <= 0.01);
    }

    #[test]
    fn l2_rate_on_the_disk() {
        let mut errors = Vec::new();
        for level in 2..=4 {
            let mesh = build_disk_mesh(level);
            let field = PerturbationField::identity(1);
            let y = ParameterVector::zeros(1);
            let (k, f) = assemble(&mesh, &field, &y, &Source::Constant(1.0)).unwrap();
            errors.push(solve_dirichlet(&k, &f, &mesh, &y).unwrap().l2_error(disk_solution));
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.3..=4.7).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn observation_at_lower_corner() {
        let field = PerturbationField::default_radial(5);
        let y = ParameterVector::lower_corner(5);
        let obs = observation(&field, &y, 4, &Source::Constant(1.0), &[Point2::zeros()]).unwrap();
        assert!((obs[0] - 0.25).abs() <= 5e-3);
        assert!(observation(&field, &y, 1, &Source::Constant(1.0), &[]).unwrap().is_empty());
        let err = observation(&field, &y, 1, &Source::Constant(1.0), &[Point2::new(2.0, 0.0)]);
        assert_eq!(err, Err(FemError::Outside { x: 2.0, y: 0.0 }));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mesh = build_disk_mesh(1);
        let other = build_disk_mesh(2);
        let field = PerturbationField::identity(1);
        let y = ParameterVector::zeros(1);
        let (k, f) = assemble(&other, &field, &y, &Source::Constant(1.0)).unwrap();
        assert!(matches!(
            solve_dirichlet(&k, &f, &mesh, &y),
            Err(FemError::DimensionMismatch { .. })
        ));
    }
}
