//! Trial action spaces and conforming test spaces with homogeneous
//! Dirichlet conditions built in.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{barycentric, ElementMap, Point, PointLocator, SimplicialMesh};
use crate::quadrature::quadrature_rule;

/// Quadrature order used for every `q`-power integrand.
pub const NONLINEAR_QUAD_ORDER: usize = 5;

/// Largest number of local basis functions (cubic triangle).
pub const MAX_LOCAL: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TrialKind {
    /// Generator `i` is `v ↦ ∫_{T_i} v`.
    P0Actions,
    /// Generator `i` is `v ↦ ∫ φ_i v` with `φ_i` the hat of interior vertex `i`.
    P1NodalActions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TestKind {
    P1,
    /// Continuous P1 plus one unscaled bubble `∏ λ_j` per element.
    P1Bubble,
    P2,
    /// Polynomials of degree `d + 1`: P2 in 1D, P3 in 2D.
    PdPlus1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Pairing {
    P0P1Bubble,
    P0PdPlus1,
    P1P2,
}

impl Pairing {
    pub fn kinds(self) -> (TrialKind, TestKind) {
        match self {
            Pairing::P0P1Bubble => (TrialKind::P0Actions, TestKind::P1Bubble),
            Pairing::P0PdPlus1 => (TrialKind::P0Actions, TestKind::PdPlus1),
            Pairing::P1P2 => (TrialKind::P1NodalActions, TestKind::P2),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialActionSpace {
    kind: TrialKind,
    mesh: Arc<SimplicialMesh>,
    /// Generator index of each vertex (nodal actions only).
    vertex_gen: Vec<Option<usize>>,
    n: usize,
}

impl TrialActionSpace {
    pub fn new(mesh: Arc<SimplicialMesh>, kind: TrialKind) -> Result<Self> {
        let (vertex_gen, n) = match kind {
            TrialKind::P0Actions => (Vec::new(), mesh.n_elements()),
            TrialKind::P1NodalActions => {
                let mut map = vec![None; mesh.n_vertices()];
                let interior = mesh.interior_vertices();
                for (g, &v) in interior.iter().enumerate() {
                    map[v] = Some(g);
                }
                (map, interior.len())
            }
        };
        if n == 0 {
            return Err(Error::EmptyTrialSpace);
        }
        Ok(Self { kind, mesh, vertex_gen, n })
    }

    pub fn kind(&self) -> TrialKind {
        self.kind
    }

    pub fn mesh(&self) -> &Arc<SimplicialMesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Generators active on element `e` with their density weights at the
    /// barycentric point `lam`. A generator's action is `∫ w v`.
    pub fn local_generators(&self, e: usize, lam: &[f64; 3]) -> impl Iterator<Item = (usize, f64)> + '_ {
        let verts = self.mesh.element(e);
        let nodal = match self.kind {
            TrialKind::P0Actions => [None; 3],
            TrialKind::P1NodalActions => {
                let mut out = [None; 3];
                for (k, &v) in verts.iter().enumerate() {
                    out[k] = self.vertex_gen[v].map(|g| (g, lam[k]));
                }
                out
            }
        };
        let constant = (self.kind == TrialKind::P0Actions).then_some((e, 1.0));
        constant.into_iter().chain(nodal.into_iter().flatten())
    }

    /// Value on element `e` at `lam` of the density `Σ β_i w_i` that
    /// realizes the action combination with coefficients `beta`.
    pub fn density_value(&self, beta: &[f64], e: usize, lam: &[f64; 3]) -> f64 {
        self.local_generators(e, lam).map(|(g, w)| beta[g] * w).sum()
    }
}

#[derive(Clone, Debug)]
pub struct TestSpace {
    kind: TestKind,
    mesh: Arc<SimplicialMesh>,
    n_local: usize,
    /// `element * n_local + k` → global dof, `None` on the Dirichlet boundary.
    dof_map: Vec<Option<usize>>,
    n_dofs: usize,
    /// Physical position of each Lagrange node (bubble dofs have none).
    nodes: Vec<Option<Point>>,
}

impl TestSpace {
    pub fn new(mesh: Arc<SimplicialMesh>, kind: TestKind) -> Self {
        let dim = mesh.dim();
        let n_local = local_count(kind, dim);
        let mut vertex_dof = vec![None; mesh.n_vertices()];
        let mut nodes = Vec::new();
        for v in mesh.interior_vertices() {
            vertex_dof[v] = Some(nodes.len());
            nodes.push(Some(mesh.vertex(v)));
        }
        let per_edge = match (kind, dim) {
            (TestKind::P2, 2) => 1,
            (TestKind::PdPlus1, 2) => 2,
            _ => 0,
        };
        let topo = (per_edge > 0).then(|| mesh.edges());
        let mut edge_dof = Vec::new();
        if let Some(topo) = &topo {
            edge_dof = vec![None; topo.len()];
            for (id, [a, b]) in topo.edges.iter().enumerate() {
                if topo.is_boundary(id) {
                    continue;
                }
                edge_dof[id] = Some(nodes.len());
                let (pa, pb) = (mesh.vertex(*a), mesh.vertex(*b));
                if per_edge == 1 {
                    nodes.push(Some([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]));
                } else {
                    let third = |s: f64| [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                    nodes.push(Some(third(1.0 / 3.0)));
                    nodes.push(Some(third(2.0 / 3.0)));
                }
            }
        }
        let has_cell = matches!(
            (kind, dim),
            (TestKind::P1Bubble, _) | (TestKind::P2, 1) | (TestKind::PdPlus1, _)
        );
        let mut dof_map = Vec::with_capacity(mesh.n_elements() * n_local);
        for (e, v) in mesh.elements().enumerate() {
            for &vi in v {
                dof_map.push(vertex_dof[vi]);
            }
            if let Some(topo) = &topo {
                for k in 0..3 {
                    let id = topo.element_edges[e][k];
                    let base = edge_dof[id];
                    if per_edge == 1 {
                        dof_map.push(base);
                    } else {
                        // local order: node near v[k+1], then node near v[k+2]
                        let (i, j) = (v[(k + 1) % 3], v[(k + 2) % 3]);
                        let near_lower = |x: usize| if x == i.min(j) { 0 } else { 1 };
                        dof_map.push(base.map(|b| b + near_lower(i)));
                        dof_map.push(base.map(|b| b + near_lower(j)));
                    }
                }
            }
            if has_cell {
                dof_map.push(Some(nodes.len()));
                let node = match kind {
                    TestKind::P1Bubble => None,
                    _ => Some(mesh.centroid(e)),
                };
                nodes.push(node);
            }
        }
        let n_dofs = nodes.len();
        Self { kind, mesh, n_local, dof_map, n_dofs, nodes }
    }

    pub fn kind(&self) -> TestKind {
        self.kind
    }

    pub fn mesh(&self) -> &Arc<SimplicialMesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.n_dofs
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn element_dofs(&self, e: usize) -> &[Option<usize>] {
        &self.dof_map[e * self.n_local..(e + 1) * self.n_local]
    }

    /// Polynomial degree of the local space.
    pub fn degree(&self) -> usize {
        match (self.kind, self.mesh.dim()) {
            (TestKind::P1, _) => 1,
            (TestKind::P1Bubble, d) => d + 1,
            (TestKind::P2, _) => 2,
            (TestKind::PdPlus1, d) => d + 1,
        }
    }

    /// Values and physical gradients of the local basis on element `e` at
    /// reference point `xr`.
    pub fn eval_basis(&self, e: usize, xr: [f64; 2]) -> Result<LocalBasis> {
        let map = self.mesh.element_map(e)?;
        Ok(self.eval_basis_with(&map, xr))
    }

    pub fn eval_basis_with(&self, map: &ElementMap, xr: [f64; 2]) -> LocalBasis {
        let dim = self.mesh.dim();
        let lam = barycentric(dim, xr);
        let (values, dlam) = reference_basis(self.kind, dim, &lam);
        let gl = map.barycentric_gradients();
        let mut grads = [[0.0; 2]; MAX_LOCAL];
        for i in 0..self.n_local {
            for k in 0..=dim {
                grads[i][0] += dlam[i][k] * gl[k][0];
                grads[i][1] += dlam[i][k] * gl[k][1];
            }
        }
        LocalBasis { n: self.n_local, values, grads }
    }

    /// Lagrange interpolation of `f`. Bubble coefficients are set to zero, so
    /// for `P1Bubble` this is the P1 interpolant.
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|p| p.map_or(0.0, &f)).collect()
    }

    pub fn node(&self, dof: usize) -> Option<Point> {
        self.nodes[dof]
    }
}

fn local_count(kind: TestKind, dim: usize) -> usize {
    match (kind, dim) {
        (TestKind::P1, d) => d + 1,
        (TestKind::P1Bubble, d) => d + 2,
        (TestKind::P2, 1) | (TestKind::PdPlus1, 1) => 3,
        (TestKind::P2, _) => 6,
        (TestKind::PdPlus1, _) => 10,
    }
}

type Values = [f64; MAX_LOCAL];
type LamDerivs = [[f64; 3]; MAX_LOCAL];

/// Local basis values and derivatives with respect to the barycentric
/// coordinates.
fn reference_basis(kind: TestKind, dim: usize, l: &[f64; 3]) -> (Values, LamDerivs) {
    let mut v = [0.0; MAX_LOCAL];
    let mut d = [[0.0; 3]; MAX_LOCAL];
    let nv = dim + 1;
    match (kind, dim) {
        (TestKind::P1, _) | (TestKind::P1Bubble, _) => {
            for k in 0..nv {
                v[k] = l[k];
                d[k][k] = 1.0;
            }
            if kind == TestKind::P1Bubble {
                v[nv] = l[..nv].iter().product();
                for k in 0..nv {
                    d[nv][k] = (0..nv).filter(|&j| j != k).map(|j| l[j]).product();
                }
            }
        }
        (TestKind::P2, _) | (TestKind::PdPlus1, 1) => {
            for k in 0..nv {
                v[k] = l[k] * (2.0 * l[k] - 1.0);
                d[k][k] = 4.0 * l[k] - 1.0;
            }
            if dim == 1 {
                v[2] = 4.0 * l[0] * l[1];
                d[2] = [4.0 * l[1], 4.0 * l[0], 0.0];
            } else {
                for k in 0..3 {
                    let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                    v[3 + k] = 4.0 * l[i] * l[j];
                    d[3 + k][i] = 4.0 * l[j];
                    d[3 + k][j] = 4.0 * l[i];
                }
            }
        }
        (TestKind::PdPlus1, _) => {
            for k in 0..3 {
                let x = l[k];
                v[k] = 0.5 * x * (3.0 * x - 1.0) * (3.0 * x - 2.0);
                d[k][k] = 0.5 * (27.0 * x * x - 18.0 * x + 2.0);
            }
            for k in 0..3 {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                for (slot, (a, b)) in [(3 + 2 * k, (i, j)), (4 + 2 * k, (j, i))] {
                    // node at two thirds towards vertex a
                    v[slot] = 4.5 * l[a] * l[b] * (3.0 * l[a] - 1.0);
                    d[slot][a] = 4.5 * l[b] * (6.0 * l[a] - 1.0);
                    d[slot][b] = 4.5 * l[a] * (3.0 * l[a] - 1.0);
                }
            }
            v[9] = 27.0 * l[0] * l[1] * l[2];
            d[9] = [27.0 * l[1] * l[2], 27.0 * l[0] * l[2], 27.0 * l[0] * l[1]];
        }
    }
    (v, d)
}

#[derive(Clone, Debug)]
pub struct LocalBasis {
    pub n: usize,
    pub values: [f64; MAX_LOCAL],
    pub grads: [[f64; 2]; MAX_LOCAL],
}

/// Builds the compatible pair on `mesh`.
pub fn make_pair(mesh: Arc<SimplicialMesh>, pairing: Pairing) -> Result<(TrialActionSpace, TestSpace)> {
    let (tk, vk) = pairing.kinds();
    let g = TrialActionSpace::new(mesh.clone(), tk)?;
    let v = TestSpace::new(mesh, vk);
    if g.dim() > v.dim() {
        return Err(Error::IncompatiblePair { trial: g.dim(), test: v.dim() });
    }
    Ok((g, v))
}

/// Per-element quadrature data for a test space: weights scaled by the
/// element measure, physical points, basis values and gradients.
#[derive(Clone, Debug)]
pub struct QuadCache {
    pub nq: usize,
    pub n_local: usize,
    /// Barycentric coordinates of each reference point.
    pub lambdas: Vec<[f64; 3]>,
    pub ref_points: Vec<[f64; 2]>,
    /// `n_elements * nq`
    pub weights: Vec<f64>,
    pub points: Vec<Point>,
    /// `nq * n_local`, identical on every element.
    pub values: Vec<f64>,
    /// `n_elements * nq * n_local`
    pub grads: Vec<[f64; 2]>,
}

impl QuadCache {
    pub fn new(space: &TestSpace, order: usize) -> Result<Self> {
        let mesh = space.mesh();
        let dim = mesh.dim();
        let rule = quadrature_rule(dim, order)?;
        let nq = rule.len();
        let nl = space.n_local();
        let ne = mesh.n_elements();
        let lambdas: Vec<[f64; 3]> = rule.points.iter().map(|&p| barycentric(dim, p)).collect();
        let mut values = Vec::with_capacity(nq * nl);
        for lam in &lambdas {
            let (v, _) = reference_basis(space.kind(), dim, lam);
            values.extend_from_slice(&v[..nl]);
        }
        let mut weights = Vec::with_capacity(ne * nq);
        let mut points = Vec::with_capacity(ne * nq);
        let mut grads = Vec::with_capacity(ne * nq * nl);
        for e in 0..ne {
            let map = mesh.element_map(e)?;
            for (xr, w) in rule.iter() {
                weights.push(w * map.det_abs);
                points.push(map.apply(xr));
                let b = space.eval_basis_with(&map, xr);
                grads.extend_from_slice(&b.grads[..nl]);
            }
        }
        Ok(Self { nq, n_local: nl, lambdas, ref_points: rule.points, weights, points, values, grads })
    }

    pub fn value(&self, q: usize, k: usize) -> f64 {
        self.values[q * self.n_local + k]
    }

    pub fn grad(&self, e: usize, q: usize, k: usize) -> [f64; 2] {
        self.grads[(e * self.nq + q) * self.n_local + k]
    }

    pub fn weight(&self, e: usize, q: usize) -> f64 {
        self.weights[e * self.nq + q]
    }

    pub fn point(&self, e: usize, q: usize) -> Point {
        self.points[e * self.nq + q]
    }

    /// Gradient of the function with local coefficients `c` at point `q`.
    pub fn grad_of(&self, e: usize, q: usize, c: &[f64]) -> [f64; 2] {
        let base = (e * self.nq + q) * self.n_local;
        let mut g = [0.0; 2];
        for (k, ck) in c.iter().enumerate().take(self.n_local) {
            let gk = self.grads[base + k];
            g[0] += ck * gk[0];
            g[1] += ck * gk[1];
        }
        g
    }

    pub fn value_of(&self, q: usize, c: &[f64]) -> f64 {
        let base = q * self.n_local;
        c.iter().take(self.n_local).enumerate().map(|(k, ck)| ck * self.values[base + k]).sum()
    }
}

/// A function of a test space given by its coefficients.
#[derive(Clone, Debug)]
pub struct FemFunction {
    pub space: Arc<TestSpace>,
    pub coeffs: Vec<f64>,
}

impl FemFunction {
    pub fn new(space: Arc<TestSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for a space of dimension {}",
                coeffs.len(),
                space.dim()
            )));
        }
        Ok(Self { space, coeffs })
    }

    pub fn zero(space: Arc<TestSpace>) -> Self {
        let n = space.dim();
        Self { space, coeffs: vec![0.0; n] }
    }

    pub fn local_coeffs(&self, e: usize) -> [f64; MAX_LOCAL] {
        local_coeffs(&self.space, &self.coeffs, e)
    }

    pub fn eval_local(&self, e: usize, xr: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let b = self.space.eval_basis(e, xr)?;
        let c = self.local_coeffs(e);
        let mut val = 0.0;
        let mut g = [0.0; 2];
        for k in 0..b.n {
            val += c[k] * b.values[k];
            g[0] += c[k] * b.grads[k][0];
            g[1] += c[k] * b.grads[k][1];
        }
        Ok((val, g))
    }

    /// Value at a physical point; zero outside the mesh.
    pub fn eval(&self, locator: &PointLocator, x: Point) -> Result<f64> {
        match locator.locate(x) {
            Some((e, xr)) => Ok(self.eval_local(e, xr)?.0),
            None => Ok(0.0),
        }
    }
}

pub(crate) fn local_coeffs(space: &TestSpace, coeffs: &[f64], e: usize) -> [f64; MAX_LOCAL] {
    let mut c = [0.0; MAX_LOCAL];
    for (k, d) in space.element_dofs(e).iter().enumerate() {
        if let Some(d) = d {
            c[k] = coeffs[*d];
        }
    }
    c
}

/// `∫_T Σ_i |∂_i u|^q` for every element.
pub fn element_q_energy(cache: &QuadCache, space: &TestSpace, coeffs: &[f64], q: f64) -> Vec<f64> {
    let dim = space.mesh().dim();
    (0..space.mesh().n_elements())
        .map(|e| {
            let c = local_coeffs(space, coeffs, e);
            (0..cache.nq)
                .map(|qp| {
                    let g = cache.grad_of(e, qp, &c);
                    cache.weight(e, qp) * g[..dim].iter().map(|x| x.abs().powf(q)).sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// Element seminorms `(Σ_i ∫_T |∂_i u|^q)^{1/q}`.
pub fn element_wq_seminorms(u: &FemFunction, q: f64) -> Result<Vec<f64>> {
    let cache = QuadCache::new(&u.space, NONLINEAR_QUAD_ORDER)?;
    Ok(element_q_energy(&cache, &u.space, &u.coeffs, q).into_iter().map(|x| x.powf(1.0 / q)).collect())
}

/// `(Σ_T Σ_i ∫_T |∂_i u|^q)^{1/q}`.
pub fn wq_seminorm(u: &FemFunction, q: f64) -> Result<f64> {
    let cache = QuadCache::new(&u.space, NONLINEAR_QUAD_ORDER)?;
    Ok(element_q_energy(&cache, &u.space, &u.coeffs, q).iter().sum::<f64>().powf(1.0 / q))
}
