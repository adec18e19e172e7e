//! Fortin operators for the two compatible pairs, used to check
//! compatibility empirically.
//!
//! * P0 actions against P1 + bubbles: `Πv = Π₁v + Σ α_T b_T` with
//!   `α_T = (∫_T b_T)⁻¹ ∫_T (v - Π₁v)`.
//! * P1 nodal actions against P2: `Πv = Π₁v + Σ α_i ψ_i` with
//!   `α_i = η_i⁻¹ ∫ φ_i (v - Π₁v)` and P2 functions `ψ_i` satisfying
//!   `∫ φ_i ψ_j = η_i δ_ij`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::femspace::{FemFunction, TestKind, TestSpace, TrialActionSpace};
use crate::mesh::{barycentric, BoundaryKind, Point, SimplicialMesh};
use crate::quadrature::quadrature_rule;

const FORTIN_QUAD_ORDER: usize = 8;

type Field = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type GradField = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// A smooth function with its gradient.
#[derive(Clone)]
pub struct SmoothFn {
    pub value: Field,
    pub grad: GradField,
}

impl SmoothFn {
    pub fn new(
        value: impl Fn(Point) -> f64 + Send + Sync + 'static,
        grad: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), grad: Arc::new(grad) }
    }

    /// `(Σ_i ∫ |∂_i v|^q)^{1/q}` by quadrature on `mesh`.
    pub fn wq_seminorm(&self, mesh: &SimplicialMesh, q: f64) -> Result<f64> {
        let rule = quadrature_rule(mesh.dim(), FORTIN_QUAD_ORDER)?;
        let mut total = 0.0;
        for e in 0..mesh.n_elements() {
            let map = mesh.element_map(e)?;
            for (xr, w) in rule.iter() {
                let g = (self.grad)(map.apply(xr));
                total += w * map.det_abs * g[..mesh.dim()].iter().map(|x| x.abs().powf(q)).sum::<f64>();
            }
        }
        Ok(total.powf(1.0 / q))
    }
}

/// Random smooth function vanishing on the boundary of the generator
/// domain: a domain bubble times a random trigonometric polynomial.
pub fn random_smooth_function(mesh: &SimplicialMesh, rng: &mut impl Rng) -> SmoothFn {
    random_smooth_function_with(mesh, 3.0, rng)
}

/// As [`random_smooth_function`], with wave numbers drawn from
/// `[max_frequency / 6, max_frequency]`.
pub fn random_smooth_function_with(mesh: &SimplicialMesh, max_frequency: f64, rng: &mut impl Rng) -> SmoothFn {
    let k = (max_frequency / 6.0)..max_frequency;
    let terms: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(k.clone()), rng.gen_range(k.clone()), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let dim = mesh.dim();
    let circle = match mesh.boundary_kind() {
        BoundaryKind::Circle { center, radius } => Some((*center, *radius)),
        BoundaryKind::Flat => None,
    };
    // bubble and its gradient
    let bubble = move |x: Point| -> (f64, [f64; 2]) {
        match (dim, circle) {
            (1, _) => (x[0] * (1.0 - x[0]), [1.0 - 2.0 * x[0], 0.0]),
            (_, Some((c, r))) => {
                let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
                (r * r - dx * dx - dy * dy, [-2.0 * dx, -2.0 * dy])
            }
            _ => {
                let (bx, by) = (x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                (bx * by, [(1.0 - 2.0 * x[0]) * by, bx * (1.0 - 2.0 * x[1])])
            }
        }
    };
    let trig = {
        let terms = terms.clone();
        move |x: Point| -> (f64, [f64; 2]) {
            let mut v = 1.0;
            let mut g = [0.0; 2];
            for &(a, kx, ky, ph) in &terms {
                let arg = kx * x[0] + if dim == 2 { ky * x[1] } else { 0.0 } + ph;
                v += a * arg.sin();
                g[0] += a * kx * arg.cos();
                if dim == 2 {
                    g[1] += a * ky * arg.cos();
                }
            }
            (v, g)
        }
    };
    let trig2 = trig.clone();
    SmoothFn::new(
        move |x| bubble(x).0 * trig(x).0,
        move |x| {
            let ((b, gb), (t, gt)) = (bubble(x), trig2(x));
            [gb[0] * t + b * gt[0], gb[1] * t + b * gt[1]]
        },
    )
}

/// `Πv` for the P0 / (P1 + bubbles) pair, as a function of the P1Bubble space.
pub fn apply_fortin_p0(v: &SmoothFn, space: &Arc<TestSpace>) -> Result<FemFunction> {
    if space.kind() != TestKind::P1Bubble {
        return Err(Error::InvalidArgument("the P0 Fortin operator maps into P1 + bubbles".into()));
    }
    let mesh = space.mesh();
    let mut coeffs = space.interpolate(|x| (v.value)(x));
    let rule = quadrature_rule(mesh.dim(), FORTIN_QUAD_ORDER)?;
    let nv = mesh.dim() + 1;
    for e in 0..mesh.n_elements() {
        let map = mesh.element_map(e)?;
        let dofs = space.element_dofs(e);
        let (mut defect, mut bubble_mass) = (0.0, 0.0);
        for (xr, w) in rule.iter() {
            let lam = barycentric(mesh.dim(), xr);
            let interp: f64 = (0..nv).map(|k| dofs[k].map_or(0.0, |d| coeffs[d]) * lam[k]).sum();
            let wd = w * map.det_abs;
            defect += wd * ((v.value)(map.apply(xr)) - interp);
            bubble_mass += wd * lam[..nv].iter().product::<f64>();
        }
        let cell = dofs[nv].expect("bubble dofs are interior");
        coeffs[cell] = defect / bubble_mass;
    }
    FemFunction::new(space.clone(), coeffs)
}

/// Bi-orthogonal P2 companions `ψ_i` of the interior hats.
#[derive(Clone, Debug)]
pub struct BiorthogonalPsi {
    pub space: Arc<TestSpace>,
    /// Interior vertex of each `ψ_i`, in increasing order.
    pub vertices: Vec<usize>,
    /// P2 coefficients of each `ψ_i` as `(dof, value)`.
    pub coeffs: Vec<Vec<(usize, f64)>>,
    pub kappa: Vec<f64>,
    /// Patch scaling constants `η_i = |P_i|`.
    pub eta: Vec<f64>,
}

/// In 2D `ψ_i = κ (s - 1)(5s - 3)` with `s = 1 - φ_i` on the patch; in 1D
/// `ψ_i = κ φ_i (2φ_i - 1)`. Both are P2, vanish on the patch boundary and
/// are orthogonal to the exterior hats element by element; `κ` (= 6) is
/// fixed by `∫ φ_i ψ_i = η_i`.
pub fn build_biorthogonal_psi(mesh: Arc<SimplicialMesh>) -> Result<BiorthogonalPsi> {
    let space = Arc::new(TestSpace::new(mesh.clone(), TestKind::P2));
    let patches = mesh.vertex_patches();
    let dim = mesh.dim();
    let mut vertices = Vec::with_capacity(patches.len());
    let mut all = Vec::with_capacity(patches.len());
    let mut kappa = Vec::with_capacity(patches.len());
    let mut eta = Vec::with_capacity(patches.len());
    for patch in &patches {
        let i = patch.center_vertex;
        let mut unit: Vec<(usize, f64)> = Vec::new();
        let mut set = |d: Option<usize>, val: f64| {
            if let Some(d) = d {
                if !unit.iter().any(|(k, _)| *k == d) {
                    unit.push((d, val));
                }
            }
        };
        for &e in &patch.elements {
            let verts = mesh.element(e);
            let dofs = space.element_dofs(e);
            let k = verts.iter().position(|&v| v == i).expect("patch element contains its centre");
            if dim == 1 {
                set(dofs[k], 1.0);
                set(dofs[2], 0.0);
            } else {
                set(dofs[k], 3.0);
                for edge in 0..3 {
                    // edge `edge` is opposite local vertex `edge`
                    set(dofs[3 + edge], if edge == k { 0.0 } else { 0.25 });
                }
            }
        }
        unit.retain(|(_, v)| *v != 0.0);
        let moment = hat_moment(&space, i, &patch.elements, &unit)?;
        if !(moment.abs() > 0.0) {
            return Err(Error::Construction(format!("vanishing normalization on the patch of vertex {i}")));
        }
        let k = patch.eta / moment;
        vertices.push(i);
        all.push(unit.into_iter().map(|(d, v)| (d, k * v)).collect());
        kappa.push(k);
        eta.push(patch.eta);
    }
    Ok(BiorthogonalPsi { space, vertices, coeffs: all, kappa, eta })
}

/// `∫ φ_i u` over the given elements for a sparse P2 function `u`.
fn hat_moment(space: &TestSpace, vertex: usize, elements: &[usize], u: &[(usize, f64)]) -> Result<f64> {
    let mesh = space.mesh();
    let rule = quadrature_rule(mesh.dim(), FORTIN_QUAD_ORDER)?;
    let mut total = 0.0;
    for &e in elements {
        let Some(k) = mesh.element(e).iter().position(|&v| v == vertex) else { continue };
        let map = mesh.element_map(e)?;
        let dofs = space.element_dofs(e);
        for (xr, w) in rule.iter() {
            let b = space.eval_basis_with(&map, xr);
            let lam = barycentric(mesh.dim(), xr);
            let val: f64 = dofs
                .iter()
                .enumerate()
                .filter_map(|(l, d)| d.and_then(|d| u.iter().find(|(j, _)| *j == d)).map(|(_, c)| c * b.values[l]))
                .sum();
            total += w * map.det_abs * lam[k] * val;
        }
    }
    Ok(total)
}

impl BiorthogonalPsi {
    /// Rows of `M[i][j] = ∫ φ_i ψ_j` as `(j, value)` over every pair with
    /// overlapping supports, sorted by `j`. Pairs not listed vanish exactly.
    pub fn moment_matrix(&self) -> Result<Vec<Vec<(usize, f64)>>> {
        let mesh = self.space.mesh();
        let rule = quadrature_rule(mesh.dim(), FORTIN_QUAD_ORDER)?;
        let mut row_of = vec![None; mesh.n_vertices()];
        for (r, &v) in self.vertices.iter().enumerate() {
            row_of[v] = Some(r);
        }
        let mut by_dof: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.space.dim()];
        for (j, psi) in self.coeffs.iter().enumerate() {
            for &(d, c) in psi {
                by_dof[d].push((j, c));
            }
        }
        let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); self.vertices.len()];
        for e in 0..mesh.n_elements() {
            let map = mesh.element_map(e)?;
            let dofs = self.space.element_dofs(e);
            for (xr, w) in rule.iter() {
                let b = self.space.eval_basis_with(&map, xr);
                let lam = barycentric(mesh.dim(), xr);
                for (k, &vk) in mesh.element(e).iter().enumerate() {
                    let Some(r) = row_of[vk] else { continue };
                    for (l, d) in dofs.iter().enumerate() {
                        let Some(d) = d else { continue };
                        for &(j, c) in &by_dof[*d] {
                            *rows[r].entry(j).or_insert(0.0) += w * map.det_abs * lam[k] * c * b.values[l];
                        }
                    }
                }
            }
        }
        Ok(rows.into_iter().map(|r| r.into_iter().collect()).collect())
    }

    pub fn as_function(&self, i: usize) -> FemFunction {
        let mut c = vec![0.0; self.space.dim()];
        for &(d, v) in &self.coeffs[i] {
            c[d] = v;
        }
        FemFunction { space: self.space.clone(), coeffs: c }
    }
}

/// `Πv` for the P1 nodal / P2 pair.
pub fn apply_fortin_p1(v: &SmoothFn, psi: &BiorthogonalPsi) -> Result<FemFunction> {
    let space = &psi.space;
    let mesh = space.mesh();
    let dim = mesh.dim();
    let nv = dim + 1;
    // P1 interpolant written in the P2 basis
    let p1 = space.interpolate(|x| (v.value)(x));
    let mut coeffs = vec![0.0; space.dim()];
    let mut row_of = vec![None; mesh.n_vertices()];
    for (r, &vi) in psi.vertices.iter().enumerate() {
        row_of[vi] = Some(r);
    }
    let vertex_value = |e: usize, k: usize| space.element_dofs(e)[k].map_or(0.0, |d| p1[d]);
    for e in 0..mesh.n_elements() {
        let dofs = space.element_dofs(e);
        for k in 0..nv {
            if let Some(d) = dofs[k] {
                coeffs[d] = vertex_value(e, k);
            }
        }
        if dim == 1 {
            if let Some(d) = dofs[2] {
                coeffs[d] = 0.5 * (vertex_value(e, 0) + vertex_value(e, 1));
            }
        } else {
            for edge in 0..3 {
                if let Some(d) = dofs[3 + edge] {
                    coeffs[d] = 0.5 * (vertex_value(e, (edge + 1) % 3) + vertex_value(e, (edge + 2) % 3));
                }
            }
        }
    }
    // moments ∫ φ_i (v - Π₁v)
    let rule = quadrature_rule(dim, FORTIN_QUAD_ORDER)?;
    let mut defect = vec![0.0; psi.vertices.len()];
    for e in 0..mesh.n_elements() {
        let map = mesh.element_map(e)?;
        let verts = mesh.element(e);
        for (xr, w) in rule.iter() {
            let lam = barycentric(dim, xr);
            let interp: f64 = (0..nv).map(|k| vertex_value(e, k) * lam[k]).sum();
            let diff = w * map.det_abs * ((v.value)(map.apply(xr)) - interp);
            for k in 0..nv {
                if let Some(r) = row_of[verts[k]] {
                    defect[r] += lam[k] * diff;
                }
            }
        }
    }
    for (r, psi_r) in psi.coeffs.iter().enumerate() {
        let alpha = defect[r] / psi.eta[r];
        for &(d, val) in psi_r {
            coeffs[d] += alpha * val;
        }
    }
    FemFunction::new(space.clone(), coeffs)
}

#[derive(Clone, Debug)]
pub enum FortinOperator {
    P0,
    P1(BiorthogonalPsi),
}

impl FortinOperator {
    pub fn apply(&self, v: &SmoothFn, space: &Arc<TestSpace>) -> Result<FemFunction> {
        match self {
            FortinOperator::P0 => apply_fortin_p0(v, space),
            FortinOperator::P1(psi) => apply_fortin_p1(v, psi),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompatibilityReport {
    /// `max |⟨g_i, v - Πv⟩| / max |⟨g_i, v⟩|` over all samples.
    pub max_defect: f64,
    /// `‖Πv‖ / ‖v‖` per sample.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

/// Trial actions `(⟨G_i, v⟩)_i` of a smooth function.
fn trial_actions_smooth(g: &TrialActionSpace, v: &SmoothFn) -> Result<Vec<f64>> {
    let mesh = g.mesh();
    let rule = quadrature_rule(mesh.dim(), FORTIN_QUAD_ORDER)?;
    let mut out = vec![0.0; g.dim()];
    for e in 0..mesh.n_elements() {
        let map = mesh.element_map(e)?;
        for (xr, w) in rule.iter() {
            let val = w * map.det_abs * (v.value)(map.apply(xr));
            for (i, wi) in g.local_generators(e, &barycentric(mesh.dim(), xr)) {
                out[i] += wi * val;
            }
        }
    }
    Ok(out)
}

/// Trial actions of a test-space function.
fn trial_actions_fem(g: &TrialActionSpace, u: &FemFunction) -> Result<Vec<f64>> {
    let mesh = g.mesh();
    let rule = quadrature_rule(mesh.dim(), FORTIN_QUAD_ORDER)?;
    let mut out = vec![0.0; g.dim()];
    for e in 0..mesh.n_elements() {
        let map = mesh.element_map(e)?;
        let c = u.local_coeffs(e);
        for (xr, w) in rule.iter() {
            let b = u.space.eval_basis_with(&map, xr);
            let val: f64 = (0..b.n).map(|k| c[k] * b.values[k]).sum::<f64>() * w * map.det_abs;
            for (i, wi) in g.local_generators(e, &barycentric(mesh.dim(), xr)) {
                out[i] += wi * val;
            }
        }
    }
    Ok(out)
}

/// Applies `fortin` to `samples` random smooth functions and records the
/// orthogonality defect and the stability ratio in the `W^{1,q}` seminorm.
pub fn verify_compatibility(
    g: &TrialActionSpace,
    v: &Arc<TestSpace>,
    fortin: &FortinOperator,
    samples: usize,
    q: f64,
    rng: &mut impl Rng,
) -> Result<CompatibilityReport> {
    verify_compatibility_with(g, v, fortin, samples, q, 3.0, rng)
}

/// As [`verify_compatibility`] with samples of wave numbers up to
/// `max_frequency`. Wave numbers proportional to `1 / h` probe the
/// stability constant at the mesh scale.
pub fn verify_compatibility_with(
    g: &TrialActionSpace,
    v: &Arc<TestSpace>,
    fortin: &FortinOperator,
    samples: usize,
    q: f64,
    max_frequency: f64,
    rng: &mut impl Rng,
) -> Result<CompatibilityReport> {
    let mut max_defect: f64 = 0.0;
    let mut ratios = Vec::with_capacity(samples);
    let space = match fortin {
        FortinOperator::P0 => v.clone(),
        FortinOperator::P1(psi) => psi.space.clone(),
    };
    for _ in 0..samples {
        let f = random_smooth_function_with(g.mesh(), max_frequency, rng);
        let pf = fortin.apply(&f, &space)?;
        let a = trial_actions_smooth(g, &f)?;
        let b = trial_actions_fem(g, &pf)?;
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        let defect = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        max_defect = max_defect.max(defect / scale);
        let num = crate::femspace::wq_seminorm(&pf, q)?;
        let den = f.wq_seminorm(g.mesh(), q)?;
        ratios.push(num / den);
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(CompatibilityReport { max_defect, ratios, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::{make_pair, Pairing};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radial_profiles_are_orthogonal_to_exterior_hats() {
        // ∫₀¹ s² (s - 1)(5s - 3) ds = 0 and ∫₀¹ s (s - 1)(2s - 1) ds = 0,
        // checked with an exact Gauss rule
        let (x, w) = crate::quadrature::gauss_legendre(4);
        let two_d: f64 = x.iter().zip(&w).map(|(s, w)| w * s * s * (s - 1.0) * (5.0 * s - 3.0)).sum();
        let one_d: f64 = x.iter().zip(&w).map(|(s, w)| w * s * (s - 1.0) * (2.0 * s - 1.0)).sum();
        assert!(two_d.abs() < 1e-16 && one_d.abs() < 1e-16);
    }

    #[test]
    fn p1_functions_are_fixed_by_p0_fortin() {
        let mesh = Arc::new(SimplicialMesh::interval(4, 0.0, 1.0).unwrap());
        let space = Arc::new(TestSpace::new(mesh, TestKind::P1Bubble));
        let v = SmoothFn::new(|x| if x[0] < 0.5 { x[0] } else { 1.0 - x[0] }, |x| [if x[0] < 0.5 { 1.0 } else { -1.0 }, 0.0]);
        let pv = apply_fortin_p0(&v, &space).unwrap();
        assert_eq!(&pv.coeffs[..3], &[0.25, 0.5, 0.25]);
        assert!(pv.coeffs[3..].iter().all(|a| a.abs() < 1e-15));
    }

    #[test]
    fn p0_fortin_bubble_coefficient_1d() {
        // α = 6/h ∫_T (v - Π₁v): for v = x(1-x) on a single element of (0,1), Π₁v = 0
        let mesh = Arc::new(SimplicialMesh::interval(1, 0.0, 1.0).unwrap());
        let space = Arc::new(TestSpace::new(mesh, TestKind::P1Bubble));
        let v = SmoothFn::new(|x| x[0] * (1.0 - x[0]), |x| [1.0 - 2.0 * x[0], 0.0]);
        let pv = apply_fortin_p0(&v, &space).unwrap();
        assert!((pv.coeffs[0] - 6.0 * (1.0 / 6.0)).abs() < 1e-14);
    }

    #[test]
    fn triangle_bubble_mass() {
        // ∫_T λ1λ2λ3 = 2|T| / 5! = |T| / 60
        let rule = quadrature_rule(2, FORTIN_QUAD_ORDER).unwrap();
        let m: f64 = rule.iter().map(|(p, w)| w * p[0] * p[1] * (1.0 - p[0] - p[1])).sum();
        assert!((m - 0.5 / 60.0).abs() < 1e-17);
    }

    #[test]
    fn biorthogonality_1d() {
        let mesh = Arc::new(SimplicialMesh::interval(4, 0.0, 1.0).unwrap());
        let psi = build_biorthogonal_psi(mesh).unwrap();
        assert_eq!(psi.vertices.len(), 3);
        let m = psi.moment_matrix().unwrap();
        for i in 0..3 {
            assert!((psi.kappa[i] - 6.0).abs() < 1e-12);
            assert!(m[i].iter().any(|&(j, _)| j == i));
            for &(j, x) in &m[i] {
                let expect = if i == j { psi.eta[i] } else { 0.0 };
                assert!((x - expect).abs() < 1e-14, "{i} {j}: {x}");
            }
        }
    }

    #[test]
    fn biorthogonality_2d_after_local_refinement() {
        let mesh = SimplicialMesh::unit_square(3).unwrap().refine(&[0, 5]);
        let psi = build_biorthogonal_psi(Arc::new(mesh)).unwrap();
        let m = psi.moment_matrix().unwrap();
        for i in 0..m.len() {
            assert!((psi.kappa[i] - 6.0).abs() < 1e-12);
            assert!(m[i].len() > 1);
            for &(j, x) in &m[i] {
                let expect = if i == j { psi.eta[i] } else { 0.0 };
                assert!((x - expect).abs() < 1e-14);
            }
        }
        // Π ψ_j reproduces its moment η_j
        let v = psi.as_function(2);
        let pv_moment = hat_moment(&psi.space, psi.vertices[2], &(0..psi.space.mesh().n_elements()).collect::<Vec<_>>(), &psi.coeffs[2]).unwrap();
        assert!((pv_moment - psi.eta[2]).abs() < 1e-14);
        let _ = v;
    }

    #[test]
    fn fortin_operators_preserve_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mesh in [SimplicialMesh::interval(8, 0.0, 1.0).unwrap(), SimplicialMesh::unit_square(3).unwrap(), SimplicialMesh::disk(1)] {
            let mesh = Arc::new(mesh);
            let (g0, v0) = make_pair(mesh.clone(), Pairing::P0P1Bubble).unwrap();
            let rep = verify_compatibility(&g0, &Arc::new(v0), &FortinOperator::P0, 10, 3.0, &mut rng).unwrap();
            assert!(rep.max_defect < 1e-12, "{}", rep.max_defect);
            let (g1, v1) = make_pair(mesh.clone(), Pairing::P1P2).unwrap();
            let psi = build_biorthogonal_psi(mesh).unwrap();
            let rep = verify_compatibility(&g1, &Arc::new(v1), &FortinOperator::P1(psi), 10, 3.0, &mut rng).unwrap();
            assert!(rep.max_defect < 1e-12, "{}", rep.max_defect);
            assert!(rep.max_ratio < 10.0);
        }
    }
}
