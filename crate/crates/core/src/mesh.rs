//! Triangulations of the closed unit disk.
//!
//! The coarsest mesh is a hexagonal fan around the origin. Each refinement
//! splits every triangle into four through its edge midpoints; midpoints of
//! boundary edges are pushed out onto the unit circle.

use std::collections::HashMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::field::Point2;

/// Slack on barycentric coordinates when deciding whether a point is inside.
pub const BARYCENTRIC_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("triangle {index} has nonpositive signed area {area}")]
    Inverted { index: usize, area: f64 },
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonConforming(usize, usize),
    #[error("triangle {index} references node {node} but the mesh has {count} nodes")]
    BadIndex { index: usize, node: usize, count: usize },
}

/// A containing triangle and the barycentric coordinates of a point in it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    on_boundary: Vec<bool>,
    h: f64,
}

/// Sorted edge key.
#[inline]
fn edge(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[inline]
fn signed_area(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// The level-`level` disk mesh.
pub fn build_disk_mesh(level: usize) -> Mesh {
    let mut nodes = vec![Point2::zeros()];
    for k in 0..6 {
        let t = std::f64::consts::PI * k as f64 / 3.0;
        nodes.push(Point2::new(t.cos(), t.sin()));
    }
    let triangles = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
    let mut on_boundary = vec![true; 7];
    on_boundary[0] = false;
    let mut mesh = Mesh::assemble(nodes, triangles, on_boundary);
    for _ in 0..level {
        mesh = mesh.refine();
    }
    mesh
}

impl Mesh {
    fn assemble(nodes: Vec<Point2>, triangles: Vec<[usize; 3]>, on_boundary: Vec<bool>) -> Self {
        let mut mesh = Self { nodes, triangles, on_boundary, h: 0.0 };
        mesh.h = mesh.compute_h();
        mesh
    }

    /// A mesh from explicit parts, e.g. a transported copy of a reference mesh.
    /// Orientation, index range and conformity are validated.
    pub fn from_parts(
        nodes: Vec<Point2>,
        triangles: Vec<[usize; 3]>,
        on_boundary: Vec<bool>,
    ) -> Result<Self, MeshError> {
        assert_eq!(nodes.len(), on_boundary.len(), "one boundary flag per node");
        let mesh = Self::assemble(nodes, triangles, on_boundary);
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        for (index, t) in self.triangles.iter().enumerate() {
            for &node in t {
                if node >= self.nodes.len() {
                    return Err(MeshError::BadIndex { index, node, count: self.nodes.len() });
                }
            }
            let area = self.triangle_area(index);
            if !(area > 0.0) {
                return Err(MeshError::Inverted { index, area });
            }
        }
        for ((a, b), count) in self.edge_counts() {
            if count > 2 {
                return Err(MeshError::NonConforming(a, b));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.on_boundary[node]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.on_boundary
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.on_boundary[i]).collect()
    }

    /// Longest edge over all triangles.
    pub fn h(&self) -> f64 {
        self.h
    }

    fn compute_h(&self) -> f64 {
        let mut h = 0.0f64;
        for t in &self.triangles {
            for k in 0..3 {
                h = h.max((self.nodes[t[k]] - self.nodes[t[(k + 1) % 3]]).norm());
            }
        }
        h
    }

    pub fn vertices(&self, t: usize) -> [Point2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        signed_area(&a, &b, &c)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Number of triangles adjacent to each edge.
    pub fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::with_capacity(self.triangles.len() * 2);
        for t in &self.triangles {
            for k in 0..3 {
                *counts.entry(edge(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn num_edges(&self) -> usize {
        self.edge_counts().len()
    }

    /// Uniform midpoint refinement with boundary projection.
    pub fn refine(&self) -> Mesh {
        let counts = self.edge_counts();
        let mut nodes = self.nodes.clone();
        let mut on_boundary = self.on_boundary.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(counts.len());
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut mid = |a: usize, b: usize, nodes: &mut Vec<Point2>, flags: &mut Vec<bool>| -> usize {
            let key = edge(a, b);
            *midpoint.entry(key).or_insert_with(|| {
                let mut m = (nodes[a] + nodes[b]) * 0.5;
                let boundary = counts[&key] == 1;
                if boundary {
                    m /= m.norm();
                }
                nodes.push(m);
                flags.push(boundary);
                nodes.len() - 1
            })
        };
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut nodes, &mut on_boundary);
            let bc = mid(b, c, &mut nodes, &mut on_boundary);
            let ca = mid(c, a, &mut nodes, &mut on_boundary);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Mesh::assemble(nodes, triangles, on_boundary)
    }

    /// Barycentric coordinates of `x` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, x: &Point2) -> [f64; 3] {
        let [a, b, c] = self.vertices(t);
        let area = signed_area(&a, &b, &c);
        let l1 = signed_area(x, &b, &c) / area;
        let l2 = signed_area(&a, x, &c) / area;
        [l1, l2, 1.0 - l1 - l2]
    }

    #[inline]
    fn try_triangle(&self, t: usize, x: &Point2) -> Option<Location> {
        let lambda = self.barycentric(t, x);
        let inside = lambda
            .iter()
            .all(|&l| (-BARYCENTRIC_TOLERANCE..=1.0 + BARYCENTRIC_TOLERANCE).contains(&l));
        inside.then_some(Location { triangle: t, barycentric: lambda })
    }

    /// A triangle containing `x`, or `None` if `x` lies outside the mesh.
    pub fn locate_point(&self, x: &Point2) -> Option<Location> {
        (0..self.triangles.len()).find_map(|t| self.try_triangle(t, x))
    }

    /// A point locator that first tries the previous hit.
    pub fn locator(&self) -> Locator<'_> {
        Locator { mesh: self, last: 0 }
    }

    /// Writes the plain-text node/element format, optionally with one nodal
    /// value column.
    pub fn write_to<W: Write>(&self, out: &mut W, values: Option<&[f64]>) -> io::Result<()> {
        match values {
            Some(v) => self.write_with_columns(out, &[v]),
            None => self.write_with_columns(out, &[]),
        }
    }

    /// Node/element format with any number of extra nodal columns.
    pub fn write_with_columns<W: Write>(&self, out: &mut W, columns: &[&[f64]]) -> io::Result<()> {
        for c in columns {
            assert_eq!(c.len(), self.nodes.len(), "one value per node");
        }
        writeln!(out, "nodes {} triangles {}", self.nodes.len(), self.triangles.len())?;
        for (i, x) in self.nodes.iter().enumerate() {
            write!(out, "{} {} {}", x[0], x[1], u8::from(self.on_boundary[i]))?;
            for c in columns {
                write!(out, " {}", c[i])?;
            }
            writeln!(out)?;
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Per-caller point location cache.
#[derive(Debug)]
pub struct Locator<'a> {
    mesh: &'a Mesh,
    last: usize,
}

impl Locator<'_> {
    pub fn locate(&mut self, x: &Point2) -> Option<Location> {
        if self.last < self.mesh.triangles.len() {
            if let Some(hit) = self.mesh.try_triangle(self.last, x) {
                return Some(hit);
            }
        }
        let hit = self.mesh.locate_point(x)?;
        self.last = hit.triangle;
        Some(hit)
    }
}

/// Point location through a uniform grid of triangle buckets.
#[derive(Debug, Clone)]
pub struct GridLocator<'a> {
    mesh: &'a Mesh,
    origin: Point2,
    cell: f64,
    cells: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> GridLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let cells = ((mesh.num_triangles() as f64).sqrt().ceil() as usize).max(1);
        let (mut lo, mut hi) = (Point2::repeat(f64::INFINITY), Point2::repeat(f64::NEG_INFINITY));
        for x in &mesh.nodes {
            lo = lo.inf(x);
            hi = hi.sup(x);
        }
        let cell = ((hi - lo).max() / cells as f64).max(f64::MIN_POSITIVE) * (1.0 + 1e-12);
        let mut locator = Self { mesh, origin: lo, cell, cells, buckets: vec![Vec::new(); cells * cells] };
        for t in 0..mesh.num_triangles() {
            let v = mesh.vertices(t);
            let a = locator.cell_of(&v[0].inf(&v[1]).inf(&v[2]));
            let b = locator.cell_of(&v[0].sup(&v[1]).sup(&v[2]));
            for i in a.0..=b.0 {
                for j in a.1..=b.1 {
                    locator.buckets[i * cells + j].push(t);
                }
            }
        }
        locator
    }

    fn cell_of(&self, x: &Point2) -> (usize, usize) {
        let clamp = |v: f64| (v.max(0.0) as usize).min(self.cells - 1);
        (clamp((x[0] - self.origin[0]) / self.cell), clamp((x[1] - self.origin[1]) / self.cell))
    }

    pub fn locate(&self, x: &Point2) -> Option<Location> {
        let (i, j) = self.cell_of(x);
        self.buckets[i * self.cells + j].iter().find_map(|&t| self.mesh.try_triangle(t, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn check_invariants(mesh: &Mesh) {
        mesh.validate().unwrap();
        for (i, x) in mesh.nodes().iter().enumerate() {
            if mesh.is_boundary(i) {
                assert!((x.norm() - 1.0).abs() <= 1e-12);
            }
        }
        let counts = mesh.edge_counts();
        for (&(a, b), &c) in &counts {
            let boundary_edge = mesh.is_boundary(a) && mesh.is_boundary(b) && c == 1;
            assert!(c == 2 || boundary_edge, "edge ({a}, {b}) has {c} triangles");
        }
    }

    #[test]
    fn base_fan() {
        let mesh = build_disk_mesh(0);
        assert_eq!(mesh.num_nodes(), 7);
        assert_eq!(mesh.num_triangles(), 6);
        assert_eq!(mesh.boundary_nodes().len(), 6);
        assert!((mesh.h() - 1.0).abs() < 1e-15);
        check_invariants(&mesh);
    }

    #[test]
    fn refinement_bookkeeping() {
        let mut mesh = build_disk_mesh(0);
        let mut area = mesh.area();
        for level in 1..=5 {
            let edges = mesh.num_edges();
            let next = mesh.refine();
            assert_eq!(next.num_triangles(), 6 * 4usize.pow(level));
            assert_eq!(next.num_nodes(), mesh.num_nodes() + edges);
            check_invariants(&next);
            assert!(next.area() >= area && next.area() <= PI);
            area = next.area();
            mesh = next;
        }
    }

    #[test]
    fn mesh_size_ratios() {
        let hs: Vec<f64> = (0..=6).map(|l| build_disk_mesh(l).h()).collect();
        // the first refinement cuts the coarse fan's spokes unevenly
        assert!(hs[1] / hs[0] <= 0.63);
        for l in 1..6 {
            assert!(hs[l + 1] / hs[l] <= 0.55, "level {l}: {}", hs[l + 1] / hs[l]);
        }
    }

    #[test]
    fn area_converges_to_pi() {
        let area = build_disk_mesh(4).area();
        assert!((PI - area) / PI < 0.005);
    }

    #[test]
    fn locate_nodes_and_outside() {
        let mesh = build_disk_mesh(2);
        for (i, x) in mesh.nodes().iter().enumerate() {
            let loc = mesh.locate_point(x).unwrap();
            let k = mesh.triangles()[loc.triangle].iter().position(|&n| n == i).unwrap();
            assert!((loc.barycentric[k] - 1.0).abs() <= 1e-12);
        }
        assert!(mesh.locate_point(&Point2::new(2.0, 0.0)).is_none());
        assert!(GridLocator::new(&mesh).locate(&Point2::new(2.0, 0.0)).is_none());
    }

    #[test]
    fn export_format() {
        let mesh = build_disk_mesh(0);
        let mut buf = Vec::new();
        mesh.write_to(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("nodes 7 triangles 6"));
        assert_eq!(lines.next(), Some("0 0 0"));
        assert_eq!(text.lines().count(), 1 + 7 + 6);
        assert_eq!(text.lines().last(), Some("0 6 1"));
    }

    #[test]
    fn inverted_triangle_rejected() {
        let nodes = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        let err = Mesh::from_parts(nodes, vec![[0, 2, 1]], vec![false; 3]).unwrap_err();
        assert!(matches!(err, MeshError::Inverted { index: 0, .. }));
    }

    proptest! {
        #[test]
        fn barycentric_identity(r in 0.0f64..0.97, t in 0.0f64..(2.0 * PI)) {
            let mesh = build_disk_mesh(3);
            let x = Point2::new(r * t.cos(), r * t.sin());
            let loc = mesh.locate_point(&x).expect("interior point");
            let v = mesh.vertices(loc.triangle);
            let rebuilt = v[0] * loc.barycentric[0] + v[1] * loc.barycentric[1] + v[2] * loc.barycentric[2];
            prop_assert!((rebuilt - x).norm() <= 1e-10);
            prop_assert!((loc.barycentric.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let mut locator = mesh.locator();
            prop_assert_eq!(locator.locate(&x).map(|l| l.triangle), Some(loc.triangle));
            let grid = GridLocator::new(&mesh).locate(&x).expect("grid finds interior point");
            let v = mesh.vertices(grid.triangle);
            let rebuilt = v[0] * grid.barycentric[0] + v[1] * grid.barycentric[1] + v[2] * grid.barycentric[2];
            prop_assert!((rebuilt - x).norm() <= 1e-10);
        }
    }
}
