//! Model problems with projected sources: `-u'' + a²u = δ_{x0}` on (0,1)
//! and `-Δu = δ_0` on the unit disk. Galerkin solves, a residual estimator
//! and the two-stage adaptive driver.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapt::{adaptive_project, mark, AdaptConfig, AdaptHistory, AdaptOutcome};
use crate::duality::DualityParams;
use crate::error::{Error, Result};
use crate::femspace::{local_coeffs, FemFunction, Pairing, QuadCache, TestKind, TestSpace};
use crate::functional::{assemble_load, RoughFunctional};
use crate::linalg::Triplets;
use crate::mesh::{barycentric, Point, PointLocator, SimplicialMesh};
use crate::mixed::SolverOptions;
use crate::quadrature::{gauss_legendre, quadrature_rule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PdeKind {
    /// `-u'' + a²u = δ_{x0}` on (0, 1).
    Ode1d { a: f64, x0: f64 },
    /// `-Δu = δ_0` on the unit disk.
    Poisson2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub kind: PdeKind,
    /// Stability constant of the operator.
    pub gamma: f64,
}

impl PdeProblem {
    pub fn ode1d(a: f64, x0: f64) -> Result<Self> {
        if !(a >= 0.0) || !(x0 > 0.0 && x0 < 1.0) {
            return Err(Error::InvalidArgument(format!("need a >= 0 and x0 in (0, 1), got a = {a}, x0 = {x0}")));
        }
        Ok(Self { kind: PdeKind::Ode1d { a, x0 }, gamma: 1.0 })
    }

    pub fn poisson2d() -> Self {
        Self { kind: PdeKind::Poisson2d, gamma: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            PdeKind::Ode1d { .. } => 1,
            PdeKind::Poisson2d => 2,
        }
    }

    /// The Dirac source of the problem.
    pub fn source(&self) -> RoughFunctional {
        match self.kind {
            PdeKind::Ode1d { x0, .. } => RoughFunctional::delta([x0, 0.0]),
            PdeKind::Poisson2d => RoughFunctional::delta([0.0, 0.0]),
        }
    }

    fn reaction(&self) -> f64 {
        match self.kind {
            PdeKind::Ode1d { a, .. } => a * a,
            PdeKind::Poisson2d => 0.0,
        }
    }

    /// Galerkin space: P2 in 1D, P1 in 2D.
    pub fn galerkin_kind(&self) -> TestKind {
        match self.kind {
            PdeKind::Ode1d { .. } => TestKind::P2,
            PdeKind::Poisson2d => TestKind::P1,
        }
    }

    /// Compatible pair used to project the source.
    pub fn pairing(&self) -> Pairing {
        match self.kind {
            PdeKind::Ode1d { .. } => Pairing::P0PdPlus1,
            PdeKind::Poisson2d => Pairing::P0P1Bubble,
        }
    }
}

const SMALL_A: f64 = 1e-8;

/// Exact solution of `-u'' + a²u = δ_{x0}`, `u(0) = u(1) = 0`.
pub fn exact_ode(x: f64, x0: f64, a: f64) -> f64 {
    if a < SMALL_A {
        return if x <= x0 { x * (1.0 - x0) } else { x0 * (1.0 - x) };
    }
    let d = 1.0 - (2.0 * a).exp();
    if x <= x0 {
        ((a * x0).exp() - (a * (2.0 - x0)).exp()) / d * (a * x).sinh() / a
    } else {
        (a * x0).sinh() / a * ((a * x).exp() - (a * (2.0 - x)).exp()) / d
    }
}

/// Derivative of [`exact_ode`] (left branch at `x = x0`).
pub fn exact_ode_derivative(x: f64, x0: f64, a: f64) -> f64 {
    if a < SMALL_A {
        return if x <= x0 { 1.0 - x0 } else { -x0 };
    }
    let d = 1.0 - (2.0 * a).exp();
    if x <= x0 {
        ((a * x0).exp() - (a * (2.0 - x0)).exp()) / d * (a * x).cosh()
    } else {
        (a * x0).sinh() * ((a * x).exp() + (a * (2.0 - x)).exp()) / d
    }
}

/// Green's function of the unit disk at the origin, `-ln|x| / 2π`.
pub fn exact_poisson2d(x: Point) -> Result<f64> {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return Err(Error::SingularPoint(x));
    }
    Ok(-r.ln() / (2.0 * PI))
}

/// Pointwise evaluation of sources given by densities.
enum SourceDensity<'a> {
    Zero,
    Field(&'a (dyn Fn(Point) -> f64 + Send + Sync)),
    SameMesh(&'a crate::femspace::TrialActionSpace, &'a [f64]),
    Nested(&'a crate::femspace::TrialActionSpace, &'a [f64], PointLocator<'a>),
}

impl<'a> SourceDensity<'a> {
    fn new(f: Option<&'a RoughFunctional>, mesh: &SimplicialMesh) -> Result<Self> {
        Ok(match f {
            None => Self::Zero,
            Some(RoughFunctional::Density { g, .. }) => Self::Field(g.as_ref()),
            Some(RoughFunctional::TrialCombination { space, coeffs }) => {
                if **space.mesh() == *mesh {
                    Self::SameMesh(space, coeffs)
                } else {
                    Self::Nested(space, coeffs, PointLocator::new(space.mesh()))
                }
            }
            Some(other) => {
                return Err(Error::InvalidArgument(format!("source {other:?} has no pointwise density")))
            }
        })
    }

    fn value(&self, e: usize, lam: &[f64; 3], x: Point) -> Result<f64> {
        Ok(match self {
            Self::Zero => 0.0,
            Self::Field(g) => g(x),
            Self::SameMesh(space, c) => space.density_value(c, e, lam),
            Self::Nested(space, c, loc) => {
                let (ce, xr) = loc.locate_nearest(x).ok_or(Error::OutOfDomain(x))?;
                space.density_value(c, ce, &barycentric(space.mesh().dim(), xr))
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct PdeSolution {
    pub u_h: FemFunction,
    /// Residual indicators `η_T`.
    pub eta_local: Vec<f64>,
    /// `‖(u - u_h)'‖` against the exact solution for the 1D problem.
    pub h1_error: Option<f64>,
}

impl PdeSolution {
    /// `sqrt(Σ η_T²)`
    pub fn estimator(&self) -> f64 {
        self.eta_local.iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}

/// Solves the problem on `mesh` with the given source by conforming
/// Galerkin (P2 in 1D, P1 in 2D) with homogeneous Dirichlet conditions.
/// `source` may be any functional with a load vector; the residual
/// estimator needs a pointwise density (a density or a trial combination).
pub fn galerkin_solve(problem: &PdeProblem, mesh: Arc<SimplicialMesh>, source: &RoughFunctional) -> Result<PdeSolution> {
    if mesh.dim() != problem.dim() {
        return Err(Error::InvalidArgument("mesh dimension does not match the problem".into()));
    }
    let space = Arc::new(TestSpace::new(mesh, problem.galerkin_kind()));
    let load = assemble_load(source, &space)?;
    let coeffs = if load.iter().all(|&x| x == 0.0) {
        vec![0.0; space.dim()]
    } else {
        system_matrix(problem, &space)?.solve(&load)?
    };
    let u_h = FemFunction::new(space, coeffs)?;
    let eta_local = residual_estimator(problem, &u_h, source)?;
    let h1_error = match problem.kind {
        PdeKind::Ode1d { a, x0 } => Some(h1_error_ode(&u_h, x0, a)?),
        PdeKind::Poisson2d => None,
    };
    Ok(PdeSolution { u_h, eta_local, h1_error })
}

/// Stiffness plus reaction mass.
fn system_matrix(problem: &PdeProblem, space: &TestSpace) -> Result<Triplets> {
    let cache = QuadCache::new(space, 2 * space.degree())?;
    let c = problem.reaction();
    let mut m = Triplets::new(space.dim());
    for e in 0..space.mesh().n_elements() {
        let dofs = space.element_dofs(e);
        for q in 0..cache.nq {
            let w = cache.weight(e, q);
            for (i, di) in dofs.iter().enumerate() {
                let Some(di) = di else { continue };
                let gi = cache.grad(e, q, i);
                for (j, dj) in dofs.iter().enumerate() {
                    let Some(dj) = dj else { continue };
                    let gj = cache.grad(e, q, j);
                    let v = gi[0] * gj[0] + gi[1] * gj[1] + c * cache.value(q, i) * cache.value(q, j);
                    m.add(*di, *dj, w * v);
                }
            }
        }
    }
    Ok(m)
}

/// Second derivative of a P2 function on a 1D element (constant).
fn p2_second_derivative(c: &[f64], h: f64) -> f64 {
    4.0 * (c[0] - 2.0 * c[2] + c[1]) / (h * h)
}

/// `η_T² = h_T² ‖f + Δu_h - a²u_h‖²_T + ½ Σ_{interior faces} h_e ‖[∂_n u_h]‖²_e`.
/// In 1D the faces are the interior nodes of `T`.
pub fn residual_estimator(problem: &PdeProblem, u_h: &FemFunction, source: &RoughFunctional) -> Result<Vec<f64>> {
    let space = &u_h.space;
    let mesh = space.mesh();
    let dim = mesh.dim();
    let density = SourceDensity::new(Some(source), mesh)?;
    let c2 = problem.reaction();
    let rule = quadrature_rule(dim, 6)?;
    let mut eta2 = vec![0.0; mesh.n_elements()];
    for (e, slot) in eta2.iter_mut().enumerate() {
        let map = mesh.element_map(e)?;
        let c = local_coeffs(space, &u_h.coeffs, e);
        let lap = match space.kind() {
            TestKind::P2 if dim == 1 => p2_second_derivative(&c, map.h),
            TestKind::P1 => 0.0,
            other => return Err(Error::InvalidArgument(format!("no residual estimator for {other:?} in {dim}D"))),
        };
        let mut interior = 0.0;
        for (xr, w) in rule.iter() {
            let b = space.eval_basis_with(&map, xr);
            let u: f64 = (0..b.n).map(|k| c[k] * b.values[k]).sum();
            let lam = barycentric(dim, xr);
            let r = density.value(e, &lam, map.apply(xr))? + lap - c2 * u;
            interior += w * map.det_abs * r * r;
        }
        *slot = map.h * map.h * interior;
    }
    if dim == 1 {
        // flux jumps at nodes shared by two elements
        let mut at_node: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mesh.n_vertices()];
        for e in 0..mesh.n_elements() {
            let verts = mesh.element(e);
            for (k, &v) in verts.iter().enumerate() {
                let (_, g) = u_h.eval_local(e, [k as f64, 0.0])?;
                at_node[v].push((e, g[0]));
            }
        }
        for list in at_node.iter().filter(|l| l.len() == 2) {
            let jump = list[0].1 - list[1].1;
            for &(e, _) in list {
                eta2[e] += 0.5 * mesh.diameter(e) * jump * jump;
            }
        }
    } else {
        let topo = mesh.edges();
        let grads: Vec<[f64; 2]> = (0..mesh.n_elements())
            .map(|e| u_h.eval_local(e, [1.0 / 3.0, 1.0 / 3.0]).map(|(_, g)| g))
            .collect::<Result<_>>()?;
        for (id, [a, b]) in topo.edges.iter().enumerate() {
            let els = &topo.edge_elements[id];
            if els.len() != 2 {
                continue;
            }
            let (pa, pb) = (mesh.vertex(*a), mesh.vertex(*b));
            let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
            let n = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
            let (g0, g1) = (grads[els[0]], grads[els[1]]);
            let jump = (g0[0] - g1[0]) * n[0] + (g0[1] - g1[1]) * n[1];
            for &e in els {
                eta2[e] += 0.5 * len * jump * jump * len;
            }
        }
    }
    Ok(eta2.into_iter().map(f64::sqrt).collect())
}

/// `‖(u - u_h)'‖_{L²(0,1)}` against [`exact_ode`], splitting the element
/// that contains `x0`.
pub fn h1_error_ode(u_h: &FemFunction, x0: f64, a: f64) -> Result<f64> {
    let mesh = u_h.space.mesh();
    let (gx, gw) = gauss_legendre(10);
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let map = mesh.element_map(e)?;
        let (xa, xb) = (map.apply([0.0, 0.0])[0], map.apply([1.0, 0.0])[0]);
        let (lo, hi) = (xa.min(xb), xa.max(xb));
        let pieces: Vec<(f64, f64)> = if lo < x0 && x0 < hi { vec![(lo, x0), (x0, hi)] } else { vec![(lo, hi)] };
        for (s0, s1) in pieces {
            let mid = 0.5 * (s0 + s1);
            for (t, w) in gx.iter().zip(&gw) {
                let x = s0 + (s1 - s0) * t;
                let xr = map.apply_inverse([x, 0.0]);
                let (_, g) = u_h.eval_local(e, xr)?;
                // evaluate the exact derivative on the branch of this piece
                let exact = if mid <= x0 { exact_ode_derivative(x.min(x0), x0, a) } else { exact_ode_derivative(x.max(x0 + f64::EPSILON), x0, a) };
                let d = exact - g[0];
                total += w * (s1 - s0) * d * d;
            }
        }
    }
    Ok(total.sqrt())
}

/// `‖u'‖_{L²(0,1)}` of the exact solution, by quadrature on both branches.
pub fn exact_ode_h1_norm(x0: f64, a: f64) -> f64 {
    let (gx, gw) = gauss_legendre(20);
    let mut total = 0.0;
    for (s0, s1, left) in [(0.0, x0, true), (x0, 1.0, false)] {
        for (t, w) in gx.iter().zip(&gw) {
            let x = s0 + (s1 - s0) * t;
            let d = if left { exact_ode_derivative(x.min(x0), x0, a) } else { exact_ode_derivative(x.max(x0 + f64::EPSILON), x0, a) };
            total += w * (s1 - s0) * d * d;
        }
    }
    total.sqrt()
}

/// `‖u - u_h‖_{L²}` against [`exact_poisson2d`].
pub fn l2_error_poisson2d(u_h: &FemFunction) -> Result<f64> {
    let mesh = u_h.space.mesh();
    let rule = quadrature_rule(2, 8)?;
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let map = mesh.element_map(e)?;
        for (xr, w) in rule.iter() {
            let (v, _) = u_h.eval_local(e, xr)?;
            let d = exact_poisson2d(map.apply(xr))? - v;
            total += w * map.det_abs * d * d;
        }
    }
    Ok(total.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalerkinStep {
    pub level: usize,
    pub n_elements: usize,
    pub ndofs: usize,
    pub estimator: f64,
    pub h1_error: Option<f64>,
    pub marked: usize,
}

#[derive(Clone, Debug)]
pub struct TwoStageOutcome {
    pub projection: AdaptOutcome,
    pub solution: PdeSolution,
    pub galerkin_history: Vec<GalerkinStep>,
    pub stage_tol: f64,
    /// Both stages reached their tolerance.
    pub converged: bool,
}

impl TwoStageOutcome {
    pub fn projection_history(&self) -> &AdaptHistory {
        &self.projection.history
    }
}

/// Two-stage driver: adaptive projection of the Dirac source until its
/// estimator is below `γ·tol/2`, then adaptive Galerkin solves with the
/// projected source, starting from the projection mesh, until the residual
/// estimator is below `tol/2`.
pub fn run_two_stage(
    problem: &PdeProblem,
    mesh0: Arc<SimplicialMesh>,
    params: DualityParams,
    tol: f64,
    alpha: f64,
    max_iterations: usize,
    opts: &SolverOptions,
) -> Result<TwoStageOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let stage_tol = 0.5 * tol;
    let config = AdaptConfig::new(problem.gamma * stage_tol, alpha)?.with_max_iterations(max_iterations);
    let projection = adaptive_project(&problem.source(), mesh0, problem.pairing(), params, &config, opts)?;
    let source = projection.solution.projection(&projection.trial);
    let mut mesh = projection.mesh.clone();
    let mut history = Vec::new();
    for level in 0..max_iterations {
        let solution = galerkin_solve(problem, mesh.clone(), &source)?;
        let estimator = solution.estimator();
        let done = estimator < stage_tol;
        let last = level + 1 == max_iterations;
        let marked = if done || last { Vec::new() } else { mark(&solution.eta_local, alpha) };
        history.push(GalerkinStep {
            level,
            n_elements: mesh.n_elements(),
            ndofs: solution.u_h.space.dim(),
            estimator,
            h1_error: solution.h1_error,
            marked: marked.len(),
        });
        log::info!("galerkin step {level}: {} elements, estimator {estimator:.3e}", mesh.n_elements());
        if done || last || marked.is_empty() {
            let converged = projection.converged && done;
            return Ok(TwoStageOutcome { projection, solution, galerkin_history: history, stage_tol, converged });
        }
        mesh = Arc::new(mesh.refine(&marked));
    }
    unreachable!("the loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::make_pair;
    use crate::mixed::solve_projection;

    #[test]
    fn exact_ode_examples() {
        let x0 = std::f64::consts::SQRT_2 / 2.0;
        for a in [0.0, 2.0] {
            assert_eq!(exact_ode(0.0, x0, a), 0.0);
            assert!(exact_ode(1.0, x0, a).abs() < 1e-15);
        }
        assert_eq!(exact_ode(0.5, 0.5, 0.0), 0.25);
        let d = 1.0 - 4f64.exp();
        let left = ((2.0 * x0).exp() - (2.0 * (2.0 - x0)).exp()) / d * (2.0 * x0).sinh() / 2.0;
        let right = (2.0 * x0).sinh() / 2.0 * ((2.0 * x0).exp() - (2.0 * (2.0 - x0)).exp()) / d;
        assert!((left - right).abs() < 1e-14);
        // flux jump of -1 at x0
        let jump = exact_ode_derivative(x0 + 1e-12, x0, 2.0) - exact_ode_derivative(x0, x0, 2.0);
        assert!((jump + 1.0).abs() < 1e-9);
        // small a approaches the limit
        assert!((exact_ode(0.3, x0, 1e-4) - exact_ode(0.3, x0, 0.0)).abs() < 1e-7);
    }

    #[test]
    fn exact_ode_satisfies_equation() {
        let (x0, a) = (0.3, 2.0);
        let h = 1e-4;
        for x in [0.1, 0.2, 0.5, 0.9] {
            let u2 = (exact_ode(x + h, x0, a) - 2.0 * exact_ode(x, x0, a) + exact_ode(x - h, x0, a)) / (h * h);
            assert!((-u2 + a * a * exact_ode(x, x0, a)).abs() < 1e-5);
        }
    }

    #[test]
    fn exact_poisson_examples() {
        assert_eq!(exact_poisson2d([1.0, 0.0]).unwrap(), 0.0);
        let e = (-1f64).exp();
        assert!((exact_poisson2d([0.0, e]).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((exact_poisson2d([0.3, 0.4]).unwrap() - 2f64.ln() / (2.0 * PI)).abs() < 1e-15);
        assert!(matches!(exact_poisson2d([0.0, 0.0]), Err(Error::SingularPoint(_))));
    }

    #[test]
    fn zero_source_gives_zero() {
        let p = PdeProblem::ode1d(1.0, 0.5).unwrap();
        let mesh = Arc::new(SimplicialMesh::interval(4, 0.0, 1.0).unwrap());
        let s = galerkin_solve(&p, mesh, &RoughFunctional::density(|_| 0.0)).unwrap();
        assert!(s.u_h.coeffs.iter().all(|&c| c == 0.0));
        assert!(s.eta_local.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn piecewise_constant_source_is_reproduced() {
        // -u'' = f piecewise constant: the exact solution is piecewise
        // quadratic, so the residual vanishes elementwise and at the nodes
        let p = PdeProblem::ode1d(0.0, 0.5).unwrap();
        let mesh = Arc::new(SimplicialMesh::interval(2, 0.0, 1.0).unwrap());
        let (g, _) = make_pair(mesh.clone(), Pairing::P0PdPlus1).unwrap();
        let f = RoughFunctional::TrialCombination { space: g, coeffs: vec![3.0, -1.0] };
        let s = galerkin_solve(&p, mesh, &f).unwrap();
        for e in &s.eta_local {
            assert!(e.abs() < 1e-12, "{e}");
        }
        // u'' = -3 on (0, 1/2), 1 on (1/2, 1): u = -3x²/2 + x, then (1 - x)²/2;
        // both pieces meet with value 1/8 and slope -1/2
        let loc = PointLocator::new(s.u_h.space.mesh());
        let (alpha, beta) = (1.0, 0.0);
        let exact = |x: f64| if x <= 0.5 { -1.5 * x * x + alpha * x } else { 0.5 * (1.0 - x) * (1.0 - x) + beta * (1.0 - x) };
        for x in [0.1, 0.25, 0.5, 0.8] {
            assert!((s.u_h.eval(&loc, [x, 0.0]).unwrap() - exact(x)).abs() < 1e-13, "{x}");
        }
    }

    #[test]
    fn galerkin_orthogonality_1d() {
        // with a = 0 and a projected delta the regularized solution is
        // exactly representable, so the discrete error is orthogonal to
        // every test function up to roundoff
        let (x0, a) = (std::f64::consts::SQRT_2 / 2.0, 0.0);
        let p = PdeProblem::ode1d(a, x0).unwrap();
        let mesh = Arc::new(SimplicialMesh::interval(8, 0.0, 1.0).unwrap());
        let (g, v) = make_pair(mesh.clone(), Pairing::P0PdPlus1).unwrap();
        let sol = solve_projection(&p.source(), &g, Arc::new(v), DualityParams::from_q(2.0).unwrap(), &SolverOptions::default()).unwrap();
        let f = sol.projection(&g);
        let s = galerkin_solve(&p, mesh, &f).unwrap();
        assert!(s.estimator() < 1e-10);
        // ∫ u_h' φ' = ⟨f, φ⟩ for every basis function
        let k = system_matrix(&p, &s.u_h.space).unwrap();
        let lhs = k.matvec(&s.u_h.coeffs);
        let rhs = assemble_load(&f, &s.u_h.space).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn p1_estimator_rate_on_smooth_source() {
        // -Δu = 1 on the disk; estimator halves under uniform refinement
        let p = PdeProblem::poisson2d();
        let f = RoughFunctional::density(|_| 1.0);
        let mut est = Vec::new();
        let mut hs = Vec::new();
        for l in 1..=4 {
            let mesh = Arc::new(SimplicialMesh::disk(l));
            hs.push(mesh.h_max());
            est.push(galerkin_solve(&p, mesh, &f).unwrap().estimator());
        }
        let rate = crate::rates::loglog_slope(&hs, &est).unwrap();
        assert!((rate - 1.0).abs() < 0.1, "{rate}");
    }

    #[test]
    fn coarse_tolerance_runs_quickly() {
        let p = PdeProblem::ode1d(2.0, std::f64::consts::SQRT_2 / 2.0).unwrap();
        let out = run_two_stage(
            &p,
            Arc::new(SimplicialMesh::interval(4, 0.0, 1.0).unwrap()),
            DualityParams::from_q(2.0).unwrap(),
            0.5,
            0.5,
            30,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.projection.history.len() <= 3);
        assert!(out.galerkin_history.len() <= 3);
    }
}
