use std::collections::{HashMap, HashSet};

use super::{BoundaryKind, Point, SimplicialMesh};

type EdgeKey = (usize, usize);

fn key(a: usize, b: usize) -> EdgeKey {
    (a.min(b), a.max(b))
}

impl SimplicialMesh {
    /// Refines the marked elements. 1D elements are bisected at their
    /// midpoints; 2D elements use newest-vertex bisection, with the
    /// refinement edges of neighbours bisected until no hanging node remains.
    pub fn refine(&self, marked: &[usize]) -> SimplicialMesh {
        assert!(
            marked.iter().all(|&e| e < self.n_elements()),
            "marked element index out of range"
        );
        match self.dim {
            1 => self.refine_1d(marked),
            _ => {
                let mut edges: HashSet<EdgeKey> = HashSet::new();
                for &e in marked {
                    let v = self.element(e);
                    edges.insert(key(v[0], v[1]));
                }
                self.bisect_marked_edges(edges)
            }
        }
    }

    /// Refines every element. In 2D each triangle is split into four.
    pub fn refine_uniform(&self) -> SimplicialMesh {
        match self.dim {
            1 => self.refine_1d(&(0..self.n_elements()).collect::<Vec<_>>()),
            _ => {
                let edges = self
                    .elements()
                    .flat_map(|v| [key(v[0], v[1]), key(v[1], v[2]), key(v[2], v[0])])
                    .collect();
                self.bisect_marked_edges(edges)
            }
        }
    }

    fn refine_1d(&self, marked: &[usize]) -> SimplicialMesh {
        let mut is_marked = vec![false; self.n_elements()];
        for &e in marked {
            is_marked[e] = true;
        }
        let mut out = self.clone();
        out.elements.clear();
        out.levels.clear();
        for (e, v) in self.elements().enumerate() {
            let level = self.levels[e];
            if is_marked[e] {
                let m = out.vertices.len();
                out.vertices.push([0.5 * (self.vertices[v[0]][0] + self.vertices[v[1]][0]), 0.0]);
                out.boundary.push(false);
                out.elements.extend([v[0], m, m, v[1]]);
                out.levels.extend([level + 1, level + 1]);
            } else {
                out.elements.extend([v[0], v[1]]);
                out.levels.push(level);
            }
        }
        out
    }

    fn bisect_marked_edges(&self, mut marked: HashSet<EdgeKey>) -> SimplicialMesh {
        // closure: an element with any marked edge must bisect its
        // refinement edge first
        loop {
            let mut changed = false;
            for v in self.elements() {
                let refine_edge = key(v[0], v[1]);
                if marked.contains(&refine_edge) {
                    continue;
                }
                if marked.contains(&key(v[1], v[2])) || marked.contains(&key(v[2], v[0])) {
                    marked.insert(refine_edge);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let topo = self.edges();
        let mut out = self.clone();
        out.elements.clear();
        out.levels.clear();
        let mut midpoints: HashMap<EdgeKey, usize> = HashMap::new();
        let mut stack = Vec::new();
        for (e, v) in self.elements().enumerate() {
            stack.push(([v[0], v[1], v[2]], self.levels[e]));
            while let Some(([a, b, c], level)) = stack.pop() {
                let k = key(a, b);
                if !marked.contains(&k) {
                    out.elements.extend([a, b, c]);
                    out.levels.push(level);
                    continue;
                }
                let m = *midpoints.entry(k).or_insert_with(|| {
                    let on_boundary = topo.find(a, b).is_some_and(|id| topo.is_boundary(id));
                    let p = self.midpoint(a, b, on_boundary);
                    out.vertices.push(p);
                    out.boundary.push(on_boundary);
                    out.vertices.len() - 1
                });
                // push in reverse so (c, a, m) comes out first
                stack.push(([b, c, m], level + 1));
                stack.push(([c, a, m], level + 1));
            }
        }
        out
    }

    fn midpoint(&self, a: usize, b: usize, on_boundary: bool) -> Point {
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let mut m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        if let (true, BoundaryKind::Circle { center, radius }) = (on_boundary, &self.boundary_kind) {
            let d = [m[0] - center[0], m[1] - center[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len > 0.0 {
                m = [center[0] + radius * d[0] / len, center[1] + radius * d[1] / len];
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn refine_1d() {
        let m = SimplicialMesh::interval(2, 0.0, 1.0).unwrap();
        let r = m.refine(&[0]);
        assert!(r.vertices().iter().any(|p| p[0] == 0.25));
        assert_eq!(r.n_elements(), 3);
        let r = m.refine(&[1]);
        assert_eq!(r.n_elements(), 3);
        assert!(r.is_conforming());
        assert_eq!(r.refinement_levels(), &[0, 1, 1]);
    }

    #[test]
    fn empty_mark_returns_equal_mesh() {
        let m = SimplicialMesh::unit_square(2).unwrap();
        assert_eq!(m.refine(&[]), m);
        let m = SimplicialMesh::interval(3, 0.0, 1.0).unwrap();
        assert_eq!(m.refine(&[]), m);
    }

    #[test]
    fn single_triangle_bisection() {
        let m = SimplicialMesh::from_parts(
            2,
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![0, 1, 2],
            &[0, 1, 2],
            BoundaryKind::Flat,
        )
        .unwrap();
        let r = m.refine(&[0]);
        assert_eq!(r.n_elements(), 2);
        let newest = r.element(0)[2];
        assert_eq!(newest, r.element(1)[2]);
        assert_eq!(r.vertex(newest), [0.5, 0.0]);
        assert!(r.is_boundary_vertex(newest));
        assert!((r.total_measure() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closure_removes_hanging_nodes() {
        let m = SimplicialMesh::unit_square(2).unwrap();
        // refine a triangle whose refinement edge is interior, then one of
        // its children whose refinement edge is shared with a neighbour
        let r = m.refine(&[0]);
        let r2 = r.refine(&[0]);
        assert!(r2.n_elements() > r.n_elements() + 1, "closure must add extra bisections");
        assert!(r2.is_conforming(), "{:?}", r2.conformity_defects());
        assert!((r2.total_measure() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn uniform_refinement_quadruples() {
        let m = SimplicialMesh::unit_square(2).unwrap();
        let r = m.refine_uniform();
        assert_eq!(r.n_elements(), 4 * m.n_elements());
        assert_eq!(r.n_vertices(), 25);
        assert!(r.is_conforming());
    }

    #[test]
    fn shape_regularity_under_repeated_local_bisection() {
        let mut m = SimplicialMesh::unit_square(2).unwrap();
        let initial = m.min_shape_ratio();
        for _ in 0..10 {
            // always refine the elements touching the corner (0, 0)
            let marked: Vec<usize> = (0..m.n_elements())
                .filter(|&e| m.element(e).iter().any(|&v| m.vertex(v) == [0.0, 0.0]))
                .collect();
            m = m.refine(&marked);
        }
        assert!(m.is_conforming());
        // newest-vertex bisection of the diagonal split only produces
        // similar copies of the initial right triangles
        assert!((m.min_shape_ratio() - initial).abs() < 1e-12);
    }

    fn generator() -> impl Strategy<Value = SimplicialMesh> {
        prop_oneof![
            (1usize..4).prop_map(|n| SimplicialMesh::interval(n, 0.0, 1.0).unwrap()),
            (1usize..3).prop_map(|n| SimplicialMesh::unit_square(n).unwrap()),
            (0usize..2).prop_map(SimplicialMesh::disk),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_refinement_sequences_stay_conforming(
            mesh in generator(),
            picks in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 1..4), 1..20),
        ) {
            let mut m = mesh;
            let flat = matches!(m.boundary_kind(), BoundaryKind::Flat);
            let mut measure = m.total_measure();
            let ratio0 = m.min_shape_ratio();
            for round in &picks {
                let marked: Vec<usize> = round
                    .iter()
                    .map(|u| ((u * m.n_elements() as f64) as usize).min(m.n_elements() - 1))
                    .collect();
                m = m.refine(&marked);
                let now = m.total_measure();
                if flat {
                    prop_assert!((now - measure).abs() <= 1e-13 * measure);
                } else {
                    prop_assert!(now >= measure - 1e-14);
                }
                measure = now;
            }
            prop_assert!(m.conformity_defects().is_empty(), "{:?}", m.conformity_defects());
            if let BoundaryKind::Circle { radius, .. } = m.boundary_kind() {
                for b in m.boundary_vertices() {
                    let p = m.vertex(b);
                    prop_assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - radius).abs() <= 1e-12);
                }
            }
            if m.dim() == 2 {
                prop_assert!(m.min_shape_ratio() > 0.2 * ratio0);
            }
        }
    }
}
