//! Conforming simplicial meshes of intervals and planar polygons.
//!
//! Elements are stored as flat vertex-index tuples of length `dim + 1`.
//! In 2D every triangle `(a, b, c)` is counter-clockwise and `c` is its
//! newest vertex, so `(a, b)` is the edge bisected on refinement.

mod locate;
mod refine;

pub use locate::PointLocator;

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A point of the physical domain. 1D meshes only use the first coordinate.
pub type Point = [f64; 2];

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryKind {
    Flat,
    /// Boundary vertices lie on this circle; refinement snaps new boundary
    /// midpoints onto it.
    Circle { center: Point, radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplicialMesh {
    dim: usize,
    vertices: Vec<Point>,
    elements: Vec<usize>,
    boundary: Vec<bool>,
    boundary_kind: BoundaryKind,
    levels: Vec<u32>,
}

impl SimplicialMesh {
    /// Builds a mesh from raw parts, checking index ranges and element
    /// measures. 2D elements are reoriented counter-clockwise if needed
    /// (keeping the last vertex in place).
    pub fn from_parts(
        dim: usize,
        vertices: Vec<Point>,
        elements: Vec<usize>,
        boundary_vertices: &[usize],
        boundary_kind: BoundaryKind,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidArgument(format!("unsupported dimension {dim}")));
        }
        let nv = dim + 1;
        if elements.len() % nv != 0 {
            return Err(Error::InvalidArgument(
                "element index list length is not a multiple of dim + 1".into(),
            ));
        }
        if let Some(&bad) = elements
            .iter()
            .chain(boundary_vertices)
            .find(|&&i| i >= vertices.len())
        {
            return Err(Error::InvalidArgument(format!("vertex index {bad} out of range")));
        }
        let mut boundary = vec![false; vertices.len()];
        for &b in boundary_vertices {
            boundary[b] = true;
        }
        let n_el = elements.len() / nv;
        let mut mesh = Self {
            dim,
            vertices,
            elements,
            boundary,
            boundary_kind,
            levels: vec![0; n_el],
        };
        for e in 0..n_el {
            let m = mesh.signed_measure(e);
            if m.abs() <= f64::EPSILON * mesh.diameter(e).powi(dim as i32) {
                return Err(Error::DegenerateElement { element: e, measure: m });
            }
            if m < 0.0 {
                let s = e * nv;
                mesh.elements.swap(s, s + 1);
            }
        }
        Ok(mesh)
    }

    /// Replaces the per-element refinement levels.
    pub fn with_levels(mut self, levels: Vec<u32>) -> Result<Self> {
        if levels.len() != self.n_elements() {
            return Err(Error::InvalidArgument(format!(
                "{} levels for {} elements",
                levels.len(),
                self.n_elements()
            )));
        }
        self.levels = levels;
        Ok(self)
    }

    /// Uniform partition of `(a, b)` into `n` elements.
    pub fn interval(n: usize, a: f64, b: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("interval mesh needs n >= 1".into()));
        }
        if !(a < b) {
            return Err(Error::InvalidArgument(format!("empty interval ({a}, {b})")));
        }
        let h = (b - a) / n as f64;
        let vertices = (0..=n)
            .map(|i| {
                let x = if i == n { b } else { a + i as f64 * h };
                [x, 0.0]
            })
            .collect();
        let elements = (0..n).flat_map(|i| [i, i + 1]).collect();
        Self::from_parts(1, vertices, elements, &[0, n], BoundaryKind::Flat)
    }

    /// Unit disk: a fan of 8 triangles around the origin, uniformly refined
    /// `levels` times with boundary midpoints snapped to the unit circle.
    pub fn disk(levels: usize) -> Self {
        let n_fan = 8;
        let mut vertices = vec![[0.0, 0.0]];
        for k in 0..n_fan {
            let t = 2.0 * PI * k as f64 / n_fan as f64;
            vertices.push([t.cos(), t.sin()]);
        }
        let mut elements = Vec::with_capacity(3 * n_fan);
        for k in 0..n_fan {
            let b0 = 1 + k;
            let b1 = 1 + (k + 1) % n_fan;
            // refinement edge is the radial edge (origin, b0)
            elements.extend([0, b0, b1]);
        }
        let boundary: Vec<usize> = (1..=n_fan).collect();
        let mut mesh = Self::from_parts(
            2,
            vertices,
            elements,
            &boundary,
            BoundaryKind::Circle { center: [0.0, 0.0], radius: 1.0 },
        )
        .expect("fan mesh is valid");
        for _ in 0..levels {
            mesh = mesh.refine_uniform();
        }
        mesh
    }

    /// `n x n` grid on the unit square, each cell split along its
    /// `(i, j)`-`(i+1, j+1)` diagonal. The diagonal is the refinement edge.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("square mesh needs n >= 1".into()));
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        let mut boundary = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                let c = |k: usize| if k == n { 1.0 } else { k as f64 * h };
                vertices.push([c(i), c(j)]);
                if i == 0 || j == 0 || i == n || j == n {
                    boundary.push(idx(i, j));
                }
            }
        }
        let mut elements = Vec::with_capacity(6 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                elements.extend([v11, v00, v10]);
                elements.extend([v00, v11, v01]);
            }
        }
        Self::from_parts(2, vertices, elements, &boundary, BoundaryKind::Flat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.levels.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Point {
        self.vertices[i]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elements[e * nv..(e + 1) * nv]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.elements.chunks_exact(self.dim + 1)
    }

    pub fn is_boundary_vertex(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&i| self.boundary[i]).collect()
    }

    /// Interior vertices in increasing index order.
    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&i| !self.boundary[i]).collect()
    }

    pub fn boundary_kind(&self) -> &BoundaryKind {
        &self.boundary_kind
    }

    /// Number of bisections separating each element from the generator mesh.
    pub fn refinement_levels(&self) -> &[u32] {
        &self.levels
    }

    fn signed_measure(&self, e: usize) -> f64 {
        let v = self.element(e);
        let p = |k: usize| self.vertices[v[k]];
        match self.dim {
            1 => p(1)[0] - p(0)[0],
            _ => {
                let (a, b, c) = (p(0), p(1), p(2));
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
            }
        }
    }

    pub fn measure(&self, e: usize) -> f64 {
        self.signed_measure(e).abs()
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.measure(e)).sum()
    }

    /// Element diameter (longest edge).
    pub fn diameter(&self, e: usize) -> f64 {
        let v = self.element(e);
        let mut h: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                h = h.max(dist(self.vertices[v[i]], self.vertices[v[j]]));
            }
        }
        h
    }

    pub fn h_min(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.diameter(e)).fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.diameter(e)).fold(0.0, f64::max)
    }

    pub fn centroid(&self, e: usize) -> Point {
        let v = self.element(e);
        let n = v.len() as f64;
        let mut c = [0.0; 2];
        for &i in v {
            c[0] += self.vertices[i][0] / n;
            c[1] += self.vertices[i][1] / n;
        }
        c
    }

    /// Affine map from the reference simplex onto element `e`.
    pub fn element_map(&self, e: usize) -> Result<ElementMap> {
        let v = self.element(e);
        let x0 = self.vertices[v[0]];
        let h = self.diameter(e);
        match self.dim {
            1 => {
                let len = self.vertices[v[1]][0] - x0[0];
                if len.abs() <= f64::EPSILON * x0[0].abs().max(1.0) {
                    return Err(Error::DegenerateElement { element: e, measure: len });
                }
                Ok(ElementMap {
                    dim: 1,
                    jacobian: [[len, 0.0], [0.0, 1.0]],
                    inverse: [[1.0 / len, 0.0], [0.0, 1.0]],
                    offset: x0,
                    det_abs: len.abs(),
                    h,
                    rho: len.abs(),
                })
            }
            _ => {
                let (x1, x2) = (self.vertices[v[1]], self.vertices[v[2]]);
                let a = [[x1[0] - x0[0], x2[0] - x0[0]], [x1[1] - x0[1], x2[1] - x0[1]]];
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                if det.abs() <= f64::EPSILON * h * h {
                    return Err(Error::DegenerateElement { element: e, measure: 0.5 * det });
                }
                let inverse = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
                let perimeter = dist(x0, x1) + dist(x1, x2) + dist(x2, x0);
                let area = 0.5 * det.abs();
                Ok(ElementMap {
                    dim: 2,
                    jacobian: a,
                    inverse,
                    offset: x0,
                    det_abs: det.abs(),
                    h,
                    rho: 2.0 * area / perimeter,
                })
            }
        }
    }

    /// Element patches around interior vertices, in increasing vertex order.
    pub fn vertex_patches(&self) -> Vec<VertexPatch> {
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); self.n_vertices()];
        for (e, v) in self.elements().enumerate() {
            for &i in v {
                incident[i].push(e);
            }
        }
        self.interior_vertices()
            .into_iter()
            .map(|i| {
                let elements = std::mem::take(&mut incident[i]);
                let h = elements.iter().map(|&e| self.diameter(e)).fold(0.0, f64::max);
                let eta = elements.iter().map(|&e| self.measure(e)).sum();
                VertexPatch { center_vertex: i, elements, h, eta }
            })
            .collect()
    }

    /// Edge topology of a 2D mesh.
    pub fn edges(&self) -> EdgeTopology {
        assert_eq!(self.dim, 2, "edge topology is only defined for 2D meshes");
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut edge_elements: Vec<Vec<usize>> = Vec::new();
        let mut element_edges = Vec::with_capacity(self.n_elements());
        for (e, v) in self.elements().enumerate() {
            let mut local = [0; 3];
            for (k, slot) in local.iter_mut().enumerate() {
                let (a, b) = (v[(k + 1) % 3], v[(k + 2) % 3]);
                let key = (a.min(b), a.max(b));
                let id = *lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_elements.push(Vec::new());
                    edges.len() - 1
                });
                edge_elements[id].push(e);
                *slot = id;
            }
            element_edges.push(local);
        }
        EdgeTopology { edges, element_edges, edge_elements, lookup }
    }

    /// Human-readable list of conformity violations; empty when the mesh is
    /// conforming. Checks every edge/vertex pair for hanging nodes, so it is
    /// quadratic in mesh size and meant for diagnostics and tests.
    pub fn conformity_defects(&self) -> Vec<String> {
        let mut defects = Vec::new();
        for e in 0..self.n_elements() {
            if self.signed_measure(e) <= 0.0 {
                defects.push(format!("element {e} has non-positive measure"));
            }
        }
        match self.dim {
            1 => {
                let mut spans: Vec<(f64, f64)> = self
                    .elements()
                    .map(|v| (self.vertices[v[0]][0], self.vertices[v[1]][0]))
                    .collect();
                spans.sort_by(|a, b| a.0.total_cmp(&b.0));
                for w in spans.windows(2) {
                    if w[0].1 != w[1].0 {
                        defects.push(format!("gap or overlap between {:?} and {:?}", w[0], w[1]));
                    }
                }
            }
            _ => {
                let topo = self.edges();
                for (id, els) in topo.edge_elements.iter().enumerate() {
                    if els.len() > 2 {
                        defects.push(format!("edge {id} shared by {} elements", els.len()));
                    }
                    let boundary_edge = els.len() == 1;
                    let [a, b] = topo.edges[id];
                    if boundary_edge && !(self.boundary[a] && self.boundary[b]) {
                        defects.push(format!("edge ({a}, {b}) has one neighbour but is not on the boundary"));
                    }
                }
                let used: BTreeSet<usize> = self.elements.iter().copied().collect();
                for [a, b] in &topo.edges {
                    let (pa, pb) = (self.vertices[*a], self.vertices[*b]);
                    let len = dist(pa, pb);
                    for &v in &used {
                        if v == *a || v == *b {
                            continue;
                        }
                        let pv = self.vertices[v];
                        let cross = (pb[0] - pa[0]) * (pv[1] - pa[1]) - (pb[1] - pa[1]) * (pv[0] - pa[0]);
                        let t = ((pv[0] - pa[0]) * (pb[0] - pa[0]) + (pv[1] - pa[1]) * (pb[1] - pa[1])) / (len * len);
                        if cross.abs() <= 1e-12 * len * len && t > 1e-12 && t < 1.0 - 1e-12 {
                            defects.push(format!("hanging vertex {v} on edge ({a}, {b})"));
                        }
                    }
                }
            }
        }
        defects
    }

    pub fn is_conforming(&self) -> bool {
        self.conformity_defects().is_empty()
    }

    /// Smallest ratio `rho_T / h_T` over all elements.
    pub fn min_shape_ratio(&self) -> f64 {
        (0..self.n_elements())
            .filter_map(|e| self.element_map(e).ok())
            .map(|m| m.rho / m.h)
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Affine map `F(x̂) = A x̂ + y` from the reference simplex onto an element.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementMap {
    dim: usize,
    /// Columns are the edge vectors `x_k - x_0`. In 1D only `[0][0]` is used.
    pub jacobian: [[f64; 2]; 2],
    pub inverse: [[f64; 2]; 2],
    pub offset: Point,
    /// `|T| / |T̂|`.
    pub det_abs: f64,
    /// Diameter.
    pub h: f64,
    /// Inradius (`2|T| / perimeter` in 2D, the length in 1D).
    pub rho: f64,
}

impl ElementMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, xr: [f64; 2]) -> Point {
        let a = &self.jacobian;
        match self.dim {
            1 => [self.offset[0] + a[0][0] * xr[0], 0.0],
            _ => [
                self.offset[0] + a[0][0] * xr[0] + a[0][1] * xr[1],
                self.offset[1] + a[1][0] * xr[0] + a[1][1] * xr[1],
            ],
        }
    }

    pub fn apply_inverse(&self, x: Point) -> [f64; 2] {
        let d = [x[0] - self.offset[0], x[1] - self.offset[1]];
        let b = &self.inverse;
        match self.dim {
            1 => [b[0][0] * d[0], 0.0],
            _ => [b[0][0] * d[0] + b[0][1] * d[1], b[1][0] * d[0] + b[1][1] * d[1]],
        }
    }

    /// Physical gradients of the barycentric coordinates `λ_0..λ_d`.
    pub fn barycentric_gradients(&self) -> [[f64; 2]; 3] {
        let b = &self.inverse;
        match self.dim {
            1 => [[-b[0][0], 0.0], [b[0][0], 0.0], [0.0, 0.0]],
            _ => [
                [-b[0][0] - b[1][0], -b[0][1] - b[1][1]],
                [b[0][0], b[0][1]],
                [b[1][0], b[1][1]],
            ],
        }
    }
}

/// Barycentric coordinates of a reference-simplex point.
pub fn barycentric(dim: usize, xr: [f64; 2]) -> [f64; 3] {
    match dim {
        1 => [1.0 - xr[0], xr[0], 0.0],
        _ => [1.0 - xr[0] - xr[1], xr[0], xr[1]],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexPatch {
    pub center_vertex: usize,
    pub elements: Vec<usize>,
    /// Largest element diameter in the patch.
    pub h: f64,
    /// Scaling constant `|T| / |T̂|` with the reference patch taken as the
    /// patch itself scaled to unit measure, i.e. the patch measure.
    pub eta: f64,
}

#[derive(Clone, Debug)]
pub struct EdgeTopology {
    /// Edge endpoints, lower index first.
    pub edges: Vec<[usize; 2]>,
    /// Local edge `k` of an element is opposite its local vertex `k`.
    pub element_edges: Vec<[usize; 3]>,
    pub edge_elements: Vec<Vec<usize>>,
    lookup: HashMap<(usize, usize), usize>,
}

impl EdgeTopology {
    pub fn find(&self, a: usize, b: usize) -> Option<usize> {
        self.lookup.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn is_boundary(&self, edge: usize) -> bool {
        self.edge_elements[edge].len() == 1
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_mesh_is_uniform() {
        let m = SimplicialMesh::interval(4, 0.0, 1.0).unwrap();
        let xs: Vec<f64> = m.vertices().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.boundary_vertices(), vec![0, 4]);

        let single = SimplicialMesh::interval(1, 0.0, 1.0).unwrap();
        assert_eq!(single.n_elements(), 1);
        assert_eq!(single.element(0), &[0, 1]);
    }

    #[test]
    fn interval_mesh_rejects_bad_input() {
        assert!(matches!(SimplicialMesh::interval(0, 0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(SimplicialMesh::interval(3, 1.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn square_mesh_counts_and_area() {
        let m1 = SimplicialMesh::unit_square(1).unwrap();
        assert_eq!(m1.n_elements(), 2);
        let m2 = SimplicialMesh::unit_square(2).unwrap();
        assert_eq!((m2.n_elements(), m2.n_vertices()), (8, 9));
        let m4 = SimplicialMesh::unit_square(4).unwrap();
        assert!((m4.total_measure() - 1.0).abs() < 1e-14);
        assert!(m4.is_conforming());
    }

    #[test]
    fn disk_boundary_on_circle_and_area_grows_to_pi() {
        let mut prev = 0.0;
        for levels in 0..5 {
            let m = SimplicialMesh::disk(levels);
            for b in m.boundary_vertices() {
                let p = m.vertex(b);
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-12);
            }
            let area = m.total_measure();
            // polygon-area oracle: a convex polygon inscribed in the unit
            // circle with boundary vertices at angles θ_k has area
            // ½ Σ sin(θ_{k+1} - θ_k)
            let mut angles: Vec<f64> =
                m.boundary_vertices().iter().map(|&b| m.vertex(b)[1].atan2(m.vertex(b)[0])).collect();
            angles.sort_by(f64::total_cmp);
            let n = angles.len();
            let poly: f64 = (0..n)
                .map(|k| {
                    let d = if k + 1 < n { angles[k + 1] - angles[k] } else { angles[0] + 2.0 * PI - angles[k] };
                    0.5 * d.sin()
                })
                .sum();
            assert!((area - poly).abs() < 1e-12, "level {levels}: {area} vs {poly}");
            assert!(area > prev && area < PI);
            prev = area;
            assert!(m.is_conforming());
        }
        assert!(PI - prev < 0.01);
    }

    #[test]
    fn element_map_examples() {
        let m = SimplicialMesh::interval(4, 0.0, 1.0).unwrap();
        let map = m.element_map(1).unwrap();
        assert!((map.det_abs - 0.25).abs() < 1e-15);
        assert!((map.h - 0.25).abs() < 1e-15);

        let reference = SimplicialMesh::from_parts(
            2,
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![0, 1, 2],
            &[0, 1, 2],
            BoundaryKind::Flat,
        )
        .unwrap();
        let map = reference.element_map(0).unwrap();
        assert_eq!(map.jacobian, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(map.det_abs, 1.0);
        // inradius of the right isosceles triangle with unit legs is
        // (a + b - c) / 2 = (2 - √2) / 2
        let inradius = (2.0 - 2f64.sqrt()) / 2.0;
        assert!((map.rho - inradius).abs() < 1e-15);
        assert!((map.rho - 2.0 * 0.5 / (2.0 + 2f64.sqrt())).abs() < 1e-15);
        assert!(map.rho <= map.h);
    }

    #[test]
    fn element_map_round_trip() {
        let m = SimplicialMesh::disk(1);
        for e in 0..m.n_elements() {
            let map = m.element_map(e).unwrap();
            assert!((map.det_abs / 2.0 - m.measure(e)).abs() < 1e-14);
            let x = map.apply([0.2, 0.3]);
            let back = map.apply_inverse(x);
            assert!((back[0] - 0.2).abs() < 1e-13 && (back[1] - 0.3).abs() < 1e-13);
        }
    }

    #[test]
    fn degenerate_element_is_rejected() {
        let r = SimplicialMesh::from_parts(
            2,
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![0, 1, 2],
            &[],
            BoundaryKind::Flat,
        );
        assert!(matches!(r, Err(Error::DegenerateElement { .. })));
    }

    #[test]
    fn patches() {
        let m = SimplicialMesh::interval(4, 0.0, 1.0).unwrap();
        let p = m.vertex_patches();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|p| p.elements.len() == 2));
        assert!(p.iter().all(|p| (p.eta - 0.5).abs() < 1e-15));

        let sq = SimplicialMesh::unit_square(4).unwrap();
        let patches = sq.vertex_patches();
        assert_eq!(patches.len(), 9);
        for p in &patches {
            assert_eq!(p.elements.len(), 6);
            let direct: f64 = p.elements.iter().map(|&e| sq.measure(e)).sum();
            assert!((p.eta - direct).abs() < 1e-15);
            assert!((p.eta - 6.0 / 32.0).abs() < 1e-15);
            assert!(p.elements.iter().all(|&e| sq.element(e).contains(&p.center_vertex)));
        }
    }
}
