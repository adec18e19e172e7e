//! Rough linear functionals and their load vectors on test spaces.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::femspace::{FemFunction, TestSpace, TrialActionSpace};
use crate::mesh::{barycentric, Point, PointLocator};
use crate::quadrature::{gauss_legendre, quadrature_rule};

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;
pub type Curve = Arc<dyn Fn(f64) -> Point + Send + Sync>;

pub const DEFAULT_DENSITY_ORDER: usize = 6;

/// Gauss points per line-source panel.
const PANEL_POINTS: usize = 6;
const MAX_PANEL_DEPTH: u32 = 20;

#[derive(Clone)]
pub enum RoughFunctional {
    /// `v ↦ v(x0)`
    DiracDelta { x0: Point },
    /// `v ↦ ∫_Γ ψ v ds` with `Γ = {c(t) : t0 ≤ t ≤ t1}`; `tangent` is `c'`.
    LineSource { curve: Curve, tangent: Curve, t0: f64, t1: f64, density: ScalarField },
    /// `v ↦ ∫ g v`
    Density { g: ScalarField, quad_order: usize },
    /// `v ↦ ∫ F·∇v`
    GradientAction { field: VectorField, quad_order: usize },
    /// `v ↦ Σ β_i ⟨G_i, v⟩`, a member of a trial action space, possibly on a
    /// coarser nested mesh.
    TrialCombination { space: TrialActionSpace, coeffs: Vec<f64> },
}

impl fmt::Debug for RoughFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DiracDelta { x0 } => write!(f, "DiracDelta({}, {})", x0[0], x0[1]),
            Self::LineSource { t0, t1, .. } => write!(f, "LineSource(t in [{t0}, {t1}])"),
            Self::Density { quad_order, .. } => write!(f, "Density(order {quad_order})"),
            Self::GradientAction { quad_order, .. } => write!(f, "GradientAction(order {quad_order})"),
            Self::TrialCombination { space, .. } => write!(f, "TrialCombination({:?}, dim {})", space.kind(), space.dim()),
        }
    }
}

impl RoughFunctional {
    pub fn delta(x0: Point) -> Self {
        Self::DiracDelta { x0 }
    }

    pub fn density(g: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self::Density { g: Arc::new(g), quad_order: DEFAULT_DENSITY_ORDER }
    }

    pub fn gradient_action(field: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static) -> Self {
        Self::GradientAction { field: Arc::new(field), quad_order: DEFAULT_DENSITY_ORDER }
    }

    /// The parabolic arc `t ↦ (t, (t - 1/2)² + 1/2)`, `t ∈ [0.15, 0.85]`,
    /// with unit density.
    pub fn parabola_line_source() -> Self {
        Self::LineSource {
            curve: Arc::new(|t| [t, (t - 0.5) * (t - 0.5) + 0.5]),
            tangent: Arc::new(|t| [1.0, 2.0 * (t - 0.5)]),
            t0: 0.15,
            t1: 0.85,
            density: Arc::new(|_| 1.0),
        }
    }

    /// Straight segment from `a` to `b` with unit density.
    pub fn segment(a: Point, b: Point) -> Self {
        Self::LineSource {
            curve: Arc::new(move |t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]),
            tangent: Arc::new(move |_| [b[0] - a[0], b[1] - a[1]]),
            t0: 0.0,
            t1: 1.0,
            density: Arc::new(|_| 1.0),
        }
    }

    /// Point sources pair continuously with `W^{1,q}` only for `q > d`.
    pub fn check_exponent(&self, q: f64, dim: usize) {
        if let Self::DiracDelta { x0 } = self {
            if q <= dim as f64 {
                log::warn!(
                    "point source at ({}, {}) is not continuous on W^(1,{q}) in dimension {dim}",
                    x0[0],
                    x0[1]
                );
            }
        }
    }
}

/// `⟨f, v⟩` for a test-space function.
pub fn action(f: &RoughFunctional, v: &FemFunction) -> Result<f64> {
    let load = assemble_load(f, &v.space)?;
    Ok(load.iter().zip(&v.coeffs).map(|(a, b)| a * b).sum())
}

/// Load vector `(⟨f, φ_j⟩)_j` over the global basis of `space`.
pub fn assemble_load(f: &RoughFunctional, space: &TestSpace) -> Result<Vec<f64>> {
    let mut load = vec![0.0; space.dim()];
    let mesh = space.mesh();
    match f {
        RoughFunctional::DiracDelta { x0 } => {
            let locator = PointLocator::new(mesh);
            add_point(space, &locator, *x0, 1.0, &mut load)?;
        }
        RoughFunctional::LineSource { curve, tangent, t0, t1, density } => {
            if !(t0 < t1) {
                return Err(Error::InvalidArgument(format!("empty parameter interval [{t0}, {t1}]")));
            }
            let locator = PointLocator::new(mesh);
            // bound the speed by sampling so each panel has arc length ≤ h_min / 4
            let samples = 1024;
            let max_speed = (0..=samples)
                .map(|k| {
                    let d = tangent(t0 + (t1 - t0) * k as f64 / samples as f64);
                    (d[0] * d[0] + d[1] * d[1]).sqrt()
                })
                .fold(0.0, f64::max);
            let target = mesh.h_min() / 4.0;
            let n_panels = ((max_speed * 1.01 * (t1 - t0) / target).ceil() as usize).max(1);
            let curve = LineData { curve, tangent, t0: *t0, t1: *t1, density };
            line_source_load(space, &locator, &curve, n_panels, &mut load)?;
        }
        RoughFunctional::Density { g, quad_order } => {
            let rule = quadrature_rule(mesh.dim(), *quad_order)?;
            for e in 0..mesh.n_elements() {
                let map = mesh.element_map(e)?;
                let dofs = space.element_dofs(e);
                for (xr, w) in rule.iter() {
                    let b = space.eval_basis_with(&map, xr);
                    let gw = w * map.det_abs * g(map.apply(xr));
                    for (k, d) in dofs.iter().enumerate() {
                        if let Some(d) = d {
                            load[*d] += gw * b.values[k];
                        }
                    }
                }
            }
        }
        RoughFunctional::GradientAction { field, quad_order } => {
            let rule = quadrature_rule(mesh.dim(), *quad_order)?;
            for e in 0..mesh.n_elements() {
                let map = mesh.element_map(e)?;
                let dofs = space.element_dofs(e);
                for (xr, w) in rule.iter() {
                    let b = space.eval_basis_with(&map, xr);
                    let fv = field(map.apply(xr));
                    let wd = w * map.det_abs;
                    for (k, d) in dofs.iter().enumerate() {
                        if let Some(d) = d {
                            load[*d] += wd * (fv[0] * b.grads[k][0] + fv[1] * b.grads[k][1]);
                        }
                    }
                }
            }
        }
        RoughFunctional::TrialCombination { space: trial, coeffs } => {
            if coeffs.len() != trial.dim() {
                return Err(Error::InvalidArgument("coefficient count does not match the trial space".into()));
            }
            // densities are piecewise linear, so degree + 1 is exact
            let rule = quadrature_rule(mesh.dim(), space.degree() + 1)?;
            let same_mesh = Arc::ptr_eq(trial.mesh(), mesh) || **trial.mesh() == **mesh;
            let coarse = (!same_mesh).then(|| PointLocator::new(trial.mesh()));
            for e in 0..mesh.n_elements() {
                let map = mesh.element_map(e)?;
                let dofs = space.element_dofs(e);
                for (xr, w) in rule.iter() {
                    let value = match &coarse {
                        None => trial.density_value(coeffs, e, &barycentric(mesh.dim(), xr)),
                        Some(loc) => {
                            let x = map.apply(xr);
                            let (ce, cxr) = loc.locate_nearest(x).ok_or(Error::OutOfDomain(x))?;
                            trial.density_value(coeffs, ce, &barycentric(mesh.dim(), cxr))
                        }
                    };
                    let b = space.eval_basis_with(&map, xr);
                    let gw = w * map.det_abs * value;
                    for (k, d) in dofs.iter().enumerate() {
                        if let Some(d) = d {
                            load[*d] += gw * b.values[k];
                        }
                    }
                }
            }
        }
    }
    Ok(load)
}

struct LineData<'a> {
    curve: &'a Curve,
    tangent: &'a Curve,
    t0: f64,
    t1: f64,
    density: &'a ScalarField,
}

/// Composite Gauss rule on `n_panels` equal parameter panels. Panels whose
/// ends and midpoint lie in different elements are bisected so the rule
/// never straddles a kink of the integrand.
fn line_source_load(
    space: &TestSpace,
    locator: &PointLocator,
    line: &LineData,
    n_panels: usize,
    load: &mut [f64],
) -> Result<()> {
    let (gx, gw) = gauss_legendre(PANEL_POINTS);
    let dt = (line.t1 - line.t0) / n_panels as f64;
    let mut panels: Vec<(f64, f64, u32)> = (0..n_panels)
        .rev()
        .map(|k| (line.t0 + k as f64 * dt, line.t0 + (k + 1) as f64 * dt, 0))
        .collect();
    let owner = |t: f64| locator.locate((line.curve)(t)).map(|(e, _)| e);
    while let Some((a, b, depth)) = panels.pop() {
        let m = 0.5 * (a + b);
        let (ea, em, eb) = (owner(a), owner(m), owner(b));
        if depth < MAX_PANEL_DEPTH && (ea != em || em != eb) {
            panels.push((m, b, depth + 1));
            panels.push((a, m, depth + 1));
            continue;
        }
        for (&s, &w) in gx.iter().zip(&gw) {
            let t = a + (b - a) * s;
            let x = (line.curve)(t);
            let d = (line.tangent)(t);
            let weight = w * (b - a) * (d[0] * d[0] + d[1] * d[1]).sqrt() * (line.density)(x);
            add_point(space, locator, x, weight, load)?;
        }
    }
    Ok(())
}

fn add_point(space: &TestSpace, locator: &PointLocator, x: Point, weight: f64, load: &mut [f64]) -> Result<()> {
    let (e, xr) = locator.locate(x).ok_or(Error::OutOfDomain(x))?;
    let b = space.eval_basis(e, xr)?;
    for (k, d) in space.element_dofs(e).iter().enumerate() {
        if let Some(d) = d {
            load[*d] += weight * b.values[k];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::{TestKind, TrialKind};
    use crate::mesh::SimplicialMesh;
    use proptest::prelude::*;

    fn interval(n: usize) -> Arc<SimplicialMesh> {
        Arc::new(SimplicialMesh::interval(n, 0.0, 1.0).unwrap())
    }

    #[test]
    fn delta_examples() {
        let v = Arc::new(TestSpace::new(interval(4), TestKind::P1));
        let hat = FemFunction::new(v.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(action(&RoughFunctional::delta([0.5, 0.0]), &hat).unwrap(), 1.0);

        let b = Arc::new(TestSpace::new(interval(1), TestKind::P1Bubble));
        let bubble = FemFunction::new(b, vec![1.0]).unwrap();
        assert_eq!(action(&RoughFunctional::delta([0.5, 0.0]), &bubble).unwrap(), 0.25);

        let err = assemble_load(&RoughFunctional::delta([1.5, 0.0]), &v).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain(_)));
    }

    #[test]
    fn delta_load_is_local() {
        let mesh = Arc::new(SimplicialMesh::unit_square(4).unwrap());
        let v = TestSpace::new(mesh.clone(), TestKind::P2);
        let load = assemble_load(&RoughFunctional::delta([0.37, 0.61]), &v).unwrap();
        let nz: Vec<usize> = (0..load.len()).filter(|&j| load[j] != 0.0).collect();
        assert!(nz.len() <= 6);
        let (e, _) = PointLocator::new(&mesh).locate([0.37, 0.61]).unwrap();
        let owned: Vec<usize> = v.element_dofs(e).iter().flatten().copied().collect();
        assert!(nz.iter().all(|j| owned.contains(j)));
        // partition of unity: boundary-free element, so the entries sum to 1
        assert!((load.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn density_examples() {
        let v = TestSpace::new(interval(8), TestKind::P1);
        let zero = assemble_load(&RoughFunctional::density(|_| 0.0), &v).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
        let one = assemble_load(&RoughFunctional::density(|_| 1.0), &v).unwrap();
        assert!(one.iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn gradient_action_against_integration_by_parts() {
        // ∫ F·∇v = -∫ (div F) v for v vanishing on the boundary
        let mesh = Arc::new(SimplicialMesh::unit_square(4).unwrap());
        let v = TestSpace::new(mesh, TestKind::P2);
        let ga = assemble_load(&RoughFunctional::gradient_action(|p| [p[0] * p[0], p[0] * p[1]]), &v).unwrap();
        let dv = assemble_load(&RoughFunctional::density(|p| -(2.0 * p[0] + p[0])), &v).unwrap();
        for (a, b) in ga.iter().zip(&dv) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn straight_segment_examples() {
        let mesh = Arc::new(SimplicialMesh::unit_square(10).unwrap());
        let space = Arc::new(TestSpace::new(mesh.clone(), TestKind::P1));
        let (a, b): (Point, Point) = ([0.25, 0.3], [0.7, 0.65]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();

        // a single hat is piecewise affine along the segment: compare with a
        // fine composite trapezoid rule
        let mut coeffs = vec![0.0; space.dim()];
        let target = (0..space.dim()).find(|&j| space.node(j) == Some([0.4, 0.4])).unwrap();
        coeffs[target] = 1.0;
        let u = FemFunction::new(space.clone(), coeffs).unwrap();
        let loc = PointLocator::new(&mesh);
        let n = 10_000;
        let vals: Vec<f64> = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                u.eval(&loc, [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]).unwrap()
            })
            .collect();
        let trap = len / n as f64 * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n]));
        let got = action(&RoughFunctional::segment(a, b), &u).unwrap();
        assert!(got > 0.0);
        assert!((got - trap).abs() < 1e-7, "{got} vs {trap}");

        // elements meeting the segment are interior, so the hats sum to one
        // there and the total load is the line integral of the density, which
        // for an affine density is length × mean of the endpoint values
        let density = |p: Point| 1.0 + 2.0 * p[0] - p[1];
        let seg = RoughFunctional::LineSource {
            curve: Arc::new(move |t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]),
            tangent: Arc::new(move |_| [b[0] - a[0], b[1] - a[1]]),
            t0: 0.0,
            t1: 1.0,
            density: Arc::new(density),
        };
        let total: f64 = assemble_load(&seg, &space).unwrap().iter().sum();
        let exact = len * 0.5 * (density(a) + density(b));
        assert!((total - exact).abs() < 1e-13, "{total} vs {exact}");
    }

    #[test]
    fn parabola_panel_refinement_converges() {
        let mesh = Arc::new(SimplicialMesh::unit_square(8).unwrap());
        let v = TestSpace::new(mesh.clone(), TestKind::P2);
        let loc = PointLocator::new(&mesh);
        let RoughFunctional::LineSource { curve, tangent, t0, t1, density } = RoughFunctional::parabola_line_source()
        else {
            unreachable!()
        };
        let line = LineData { curve: &curve, tangent: &tangent, t0, t1, density: &density };
        let mut coarse = vec![0.0; v.dim()];
        line_source_load(&v, &loc, &line, 40, &mut coarse).unwrap();
        let mut fine = vec![0.0; v.dim()];
        line_source_load(&v, &loc, &line, 80, &mut fine).unwrap();
        let scale = coarse.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in coarse.iter().zip(&fine) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }

        // total length: ∫ sqrt(1 + 4 (t - 1/2)²) dt over [0.15, 0.85]
        let arc = |t: f64| {
            let u = 2.0 * (t - 0.5);
            0.25 * (u * (1.0 + u * u).sqrt() + u.asinh())
        };
        let length = arc(0.85) - arc(0.15);
        let p1 = TestSpace::new(Arc::new(mesh.refine_uniform()), TestKind::P1);
        let sum: f64 = assemble_load(&RoughFunctional::parabola_line_source(), &p1).unwrap().iter().sum();
        assert!((sum - length).abs() < 1e-12, "{sum} vs {length}");
    }

    #[test]
    fn trial_combination_on_nested_mesh() {
        let coarse = interval(4);
        let g = TrialActionSpace::new(coarse.clone(), TrialKind::P0Actions).unwrap();
        let f = RoughFunctional::TrialCombination { space: g, coeffs: vec![1.0, -2.0, 3.0, 0.5] };
        let fine = Arc::new(coarse.refine_uniform());
        let v = TestSpace::new(fine.clone(), TestKind::P2);
        let direct = assemble_load(
            &RoughFunctional::density(|p| match (p[0] * 4.0).floor() as i32 {
                0 => 1.0,
                1 => -2.0,
                2 => 3.0,
                _ => 0.5,
            }),
            &v,
        )
        .unwrap();
        let got = assemble_load(&f, &v).unwrap();
        for (a, b) in got.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn density_action_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, k in 1.0f64..5.0) {
            let mesh = Arc::new(SimplicialMesh::disk(1));
            let v = TestSpace::new(mesh, TestKind::P2);
            let f1 = move |p: Point| (k * p[0]).sin();
            let f2 = |p: Point| p[1] * p[1] + 1.0;
            let l1 = assemble_load(&RoughFunctional::density(f1), &v).unwrap();
            let l2 = assemble_load(&RoughFunctional::density(f2), &v).unwrap();
            let both = assemble_load(&RoughFunctional::density(move |p| alpha * f1(p) + beta * f2(p)), &v).unwrap();
            for j in 0..both.len() {
                prop_assert!((both[j] - alpha * l1[j] - beta * l2[j]).abs() < 1e-12);
            }
        }

        #[test]
        fn delta_is_point_evaluation(x in 0.01f64..0.99, y in 0.01f64..0.99, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mesh = Arc::new(SimplicialMesh::unit_square(3).unwrap());
            let space = Arc::new(TestSpace::new(mesh.clone(), TestKind::PdPlus1));
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<f64> = (0..space.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = FemFunction::new(space, coeffs).unwrap();
            let val = u.eval(&PointLocator::new(&mesh), [x, y]).unwrap();
            let act = action(&RoughFunctional::delta([x, y]), &u).unwrap();
            prop_assert!((val - act).abs() < 1e-13);
        }
    }
}
