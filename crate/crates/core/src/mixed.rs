//! The discrete mixed problem: find `r ∈ V` and `β ∈ ℝⁿ` with
//!
//! ```text
//! ⟨J(r), v⟩ + Σ β_i ⟨G_i, v⟩ = ⟨f, v⟩   for all v ∈ V
//! ⟨G_i, r⟩ = 0                         for all i
//! ```
//!
//! `Σ β_i G_i` is the projection of `f` and `‖r‖^{q-1}` the dual-norm error.

use std::sync::Arc;

use crate::duality::{DualityOperator, DualityParams};
use crate::error::{Error, Result};
use crate::femspace::{local_coeffs, FemFunction, TestSpace, TrialActionSpace};
use crate::functional::{assemble_load, RoughFunctional};
use crate::linalg::Triplets;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Tolerance on `‖J(r) + Bβ - ℓ‖_∞ / ‖ℓ‖_∞`.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Initial decrement of `p` between continuation stages.
    pub continuation_step: f64,
    /// Give up when the halved decrement falls below this.
    pub min_continuation_step: f64,
    /// Maximum number of step halvings in the line search.
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton: 50,
            continuation_step: 0.1,
            min_continuation_step: 1e-3,
            max_halvings: 20,
        }
    }
}

/// Assembled data of one mixed problem.
#[derive(Clone, Debug)]
pub struct MixedSystem {
    pub trial: TrialActionSpace,
    pub params: DualityParams,
    op: DualityOperator,
    /// `(test dof j, generator i, ⟨G_i, φ_j⟩)`
    coupling: Vec<(usize, usize, f64)>,
    load: Vec<f64>,
}

/// Assembles the mixed system for `f`.
pub fn assemble_mixed(
    f: &RoughFunctional,
    trial: &TrialActionSpace,
    test: Arc<TestSpace>,
    params: DualityParams,
) -> Result<MixedSystem> {
    f.check_exponent(params.q, test.mesh().dim());
    let load = assemble_load(f, &test)?;
    MixedSystem::with_load(trial, test, load, params)
}

impl MixedSystem {
    /// Mixed system with a precomputed load vector `(⟨f, φ_j⟩)_j`.
    pub fn with_load(
        trial: &TrialActionSpace,
        test: Arc<TestSpace>,
        load: Vec<f64>,
        params: DualityParams,
    ) -> Result<Self> {
        if trial.dim() > test.dim() {
            return Err(Error::IncompatiblePair { trial: trial.dim(), test: test.dim() });
        }
        if load.len() != test.dim() {
            return Err(Error::InvalidArgument(format!(
                "load has {} entries for a space of dimension {}",
                load.len(),
                test.dim()
            )));
        }
        if !Arc::ptr_eq(trial.mesh(), test.mesh()) && **trial.mesh() != **test.mesh() {
            return Err(Error::InvalidArgument("trial and test spaces live on different meshes".into()));
        }
        let op = DualityOperator::new(test.clone())?;
        let coupling = assemble_coupling(trial, &test, &op);
        Ok(Self { trial: trial.clone(), params, op, coupling, load })
    }

    pub fn test_space(&self) -> &Arc<TestSpace> {
        self.op.space()
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn coupling(&self) -> &[(usize, usize, f64)] {
        &self.coupling
    }

    /// Dense `B` with `B[j][i] = ⟨G_i, φ_j⟩`.
    pub fn coupling_dense(&self) -> Vec<Vec<f64>> {
        let mut b = vec![vec![0.0; self.trial.dim()]; self.test_space().dim()];
        for &(j, i, v) in &self.coupling {
            b[j][i] += v;
        }
        b
    }

    /// `B β`
    pub fn couple(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.test_space().dim()];
        for &(j, i, v) in &self.coupling {
            out[j] += v * beta[i];
        }
        out
    }

    /// `Bᵀ r`
    pub fn couple_transpose(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.trial.dim()];
        for &(j, i, v) in &self.coupling {
            out[i] += v * r[j];
        }
        out
    }

    /// Both residual blocks at `(r, β)` with the system's exponent.
    pub fn residual(&self, r: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.residual_with(r, beta, &self.params)
    }

    fn residual_with(&self, r: &[f64], beta: &[f64], params: &DualityParams) -> (Vec<f64>, Vec<f64>) {
        let mut r1 = self.op.apply(r, params);
        for (x, (b, l)) in r1.iter_mut().zip(self.couple(beta).iter().zip(&self.load)) {
            *x += b - l;
        }
        (r1, self.couple_transpose(r))
    }

    /// Solves the system, by one linear solve for `q = 2` and by Newton with
    /// continuation in `p` from 2 otherwise.
    pub fn solve(&self, opts: &SolverOptions) -> Result<MixedSolution> {
        let (r, beta, log) = newton_continuation(&self.op, &self.coupling, self.trial.dim(), &self.load, &self.params, opts)?;
        let space = self.test_space().clone();
        let q = self.params.q;
        let energies = self.op.element_energies(&r, q);
        let total: f64 = energies.iter().sum();
        let (r1, r2) = self.residual(&r, &beta);
        let final_residual = sup(&r1) / sup(&self.load).max(f64::MIN_POSITIVE);
        Ok(MixedSolution {
            q,
            p: self.params.p,
            r: FemFunction::new(space, r)?,
            f_coeffs: beta,
            estimator_global: total.powf((q - 1.0) / q),
            estimator_local: energies.iter().map(|e| e.powf((q - 1.0) / q)).collect(),
            newton_iters: log.iter().map(|s| s.iterations).sum(),
            continuation_path: log.iter().filter(|s| s.converged).map(|s| s.p).collect(),
            final_residual,
            orthogonality_defect: sup(&r2),
            stages: log,
        })
    }
}

fn assemble_coupling(trial: &TrialActionSpace, test: &TestSpace, op: &DualityOperator) -> Vec<(usize, usize, f64)> {
    let c = op.cache();
    let mut out = Vec::new();
    for e in 0..test.mesh().n_elements() {
        let dofs = test.element_dofs(e);
        let mut local: Vec<(usize, usize, f64)> = Vec::new();
        for q in 0..c.nq {
            let w = c.weight(e, q);
            for (gi, gw) in trial.local_generators(e, &c.lambdas[q]) {
                for (k, d) in dofs.iter().enumerate() {
                    if let Some(j) = d {
                        let v = w * gw * c.value(q, k);
                        match local.iter_mut().find(|(a, b, _)| a == j && *b == gi) {
                            Some(entry) => entry.2 += v,
                            None => local.push((*j, gi, v)),
                        }
                    }
                }
            }
        }
        out.extend(local);
    }
    out
}

/// One continuation stage of the Newton solver.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageLog {
    pub p: f64,
    pub iterations: usize,
    /// Relative residual after each iteration (first entry: initial guess).
    pub residuals: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct MixedSolution {
    pub q: f64,
    pub p: f64,
    /// Residual representative.
    pub r: FemFunction,
    /// Coefficients of the projection in the trial generators.
    pub f_coeffs: Vec<f64>,
    /// `‖r‖^{q-1}`
    pub estimator_global: f64,
    /// Element seminorms to the power `q - 1`.
    pub estimator_local: Vec<f64>,
    pub newton_iters: usize,
    /// Exponents `p` of the converged continuation stages.
    pub continuation_path: Vec<f64>,
    pub final_residual: f64,
    /// `max_i |⟨G_i, r⟩|`
    pub orthogonality_defect: f64,
    pub stages: Vec<StageLog>,
}

impl MixedSolution {
    pub fn projection(&self, trial: &TrialActionSpace) -> RoughFunctional {
        RoughFunctional::TrialCombination { space: trial.clone(), coeffs: self.f_coeffs.clone() }
    }
}

/// Projects `f` onto the trial space in the discrete dual norm of the test space.
pub fn solve_projection(
    f: &RoughFunctional,
    trial: &TrialActionSpace,
    test: Arc<TestSpace>,
    params: DualityParams,
    opts: &SolverOptions,
) -> Result<MixedSolution> {
    assemble_mixed(f, trial, test, params)?.solve(opts)
}

/// Dual norm over the test space of the functional with load vector `l`:
/// `sqrt(lᵀ K⁻¹ l)` for `q = 2`, otherwise `‖v‖^{q-1}` with `J(v) = l`.
pub fn discrete_dual_norm(l: &[f64], test: Arc<TestSpace>, params: DualityParams, opts: &SolverOptions) -> Result<f64> {
    if l.len() != test.dim() {
        return Err(Error::InvalidArgument("load length does not match the test space".into()));
    }
    if l.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let op = DualityOperator::new(test)?;
    if params.is_linear() {
        let v = op.stiffness().solve(l)?;
        return Ok(l.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt());
    }
    let (v, _, _) = newton_continuation(&op, &[], 0, l, &params, opts)?;
    let norm_q: f64 = op.element_energies(&v, params.q).iter().sum();
    Ok(norm_q.powf((params.q - 1.0) / params.q))
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Kkt<'a> {
    op: &'a DualityOperator,
    coupling: &'a [(usize, usize, f64)],
    m: usize,
    load: &'a [f64],
    stiffness: Triplets,
}

impl Kkt<'_> {
    fn n(&self) -> usize {
        self.load.len()
    }

    fn residual(&self, r: &[f64], beta: &[f64], params: &DualityParams) -> Vec<f64> {
        let mut res = self.op.apply(r, params);
        for (x, l) in res.iter_mut().zip(self.load) {
            *x -= l;
        }
        for &(j, i, v) in self.coupling {
            res[j] += v * beta[i];
        }
        res
    }

    fn merit(&self, r: &[f64], params: &DualityParams) -> f64 {
        self.op.energy(r, params) - dot(self.load, r)
    }

    /// Solves `[[H + μK, B], [Bᵀ, 0]] [δ; β] = [rhs; -Bᵀr]`.
    fn step(&self, r: &[f64], rhs: &[f64], params: &DualityParams, shift: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let mut t = self.op.jacobian(r, params, 0.0);
        if shift > 0.0 {
            t.entries.extend(self.stiffness.entries.iter().map(|&(i, j, v)| (i, j, shift * v)));
        }
        t.n = n + self.m;
        let mut b = rhs.to_vec();
        b.resize(n + self.m, 0.0);
        for &(j, i, v) in self.coupling {
            t.add(j, n + i, v);
            t.add(n + i, j, v);
            b[n + i] -= v * r[j];
        }
        let x = t.solve(&b)?;
        Ok((x[..n].to_vec(), x[n..].to_vec()))
    }

    /// Newton iteration at fixed exponent starting from a feasible `r`.
    fn newton(&self, mut r: Vec<f64>, params: &DualityParams, opts: &SolverOptions) -> (Vec<f64>, Vec<f64>, StageLog, bool) {
        let scale = sup(self.load).max(f64::MIN_POSITIVE);
        let zero = vec![0.0; self.m];
        let mut beta = zero.clone();
        let mut log = StageLog { p: params.p, iterations: 0, residuals: Vec::new(), converged: false };
        let mut res_norm: f64 = 1.0;
        for it in 0..=opts.max_newton {
            let g = self.residual(&r, &zero, params);
            let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
            // stiffness shift against degenerate flux derivatives, vanishing
            // with the residual
            let shift = if params.is_linear() { 0.0 } else { res_norm.min(1e-2) * self.flux_scale(&r, params) };
            let (delta, beta_new) = match self.step(&r, &rhs, params, shift) {
                Ok(s) => s,
                Err(err) => {
                    log::debug!("Newton step failed at p = {}: {err}", params.p);
                    break;
                }
            };
            // residual of the current iterate with its best multipliers
            let mut full = g.clone();
            for &(j, i, v) in self.coupling {
                full[j] += v * beta_new[i];
            }
            res_norm = sup(&full) / scale;
            beta = beta_new;
            log.residuals.push(res_norm);
            if res_norm <= opts.newton_tol {
                log.converged = true;
                return (r, beta, log, true);
            }
            if it == opts.max_newton {
                break;
            }
            log.iterations += 1;
            let m0 = self.merit(&r, params);
            let slope = dot(&g, &delta);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<f64> = r.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
                let m1 = self.merit(&trial, params);
                let roundoff = 1e-14 * (m0.abs() + self.op.energy(&r, params).abs());
                if m1 <= m0 + 1e-4 * t * slope || (m1 - m0).abs() <= roundoff {
                    accepted = Some(trial);
                    break;
                }
                t *= 0.5;
            }
            let Some(next) = accepted else {
                log::debug!("line search failed at p = {}", params.p);
                break;
            };
            r = next;
        }
        (r, beta, log, false)
    }

    /// Mean flux derivative over quadrature points, used to scale the shift.
    fn flux_scale(&self, r: &[f64], params: &DualityParams) -> f64 {
        let c = self.op.cache();
        let space = self.op.space();
        let d = space.mesh().dim();
        let (mut num, mut den) = (0.0, 0.0);
        for e in 0..space.mesh().n_elements() {
            let lc = local_coeffs(space, r, e);
            for q in 0..c.nq {
                let g = c.grad_of(e, q, &lc);
                let w = c.weight(e, q);
                for gi in &g[..d] {
                    let v = params.flux_derivative(*gi);
                    if v.is_finite() {
                        num += w * v;
                        den += w;
                    }
                }
            }
        }
        if den > 0.0 && num > 0.0 {
            num / den
        } else {
            1.0
        }
    }
}

type NewtonOutput = (Vec<f64>, Vec<f64>, Vec<StageLog>);

fn newton_continuation(
    op: &DualityOperator,
    coupling: &[(usize, usize, f64)],
    m: usize,
    load: &[f64],
    params: &DualityParams,
    opts: &SolverOptions,
) -> Result<NewtonOutput> {
    if !(opts.newton_tol > 0.0) {
        return Err(Error::InvalidArgument("newton_tol must be positive".into()));
    }
    let kkt = Kkt { op, coupling, m, load, stiffness: op.stiffness() };
    let n = load.len();
    let linear = DualityParams { q: 2.0, p: 2.0, eps_reg: params.eps_reg };
    // the q = 2 stage is a single linear solve
    let (mut r, mut beta) = kkt.step(&vec![0.0; n], load, &linear, 0.0)?;
    let scale = sup(load).max(f64::MIN_POSITIVE);
    let res2 = sup(&kkt.residual(&r, &beta, &linear)) / scale;
    let mut log = vec![StageLog { p: 2.0, iterations: 1, residuals: vec![res2], converged: true }];
    if params.is_linear() {
        return Ok((r, beta, log));
    }
    let descending = params.p < 2.0;
    let mut p_prev = 2.0;
    let mut step = opts.continuation_step;
    loop {
        let mut p_next = if descending { p_prev - step } else { p_prev + step };
        if (descending && p_next < params.p + 1e-12) || (!descending && p_next > params.p - 1e-12) {
            p_next = params.p;
        }
        let stage = if p_next == params.p { *params } else { DualityParams::from_p(p_next)?.with_eps(params.eps_reg) };
        let start = warm_start(&kkt, &r, &stage);
        let (r_new, beta_new, stage_log, ok) = kkt.newton(start, &stage, opts);
        let best_res = stage_log.residuals.last().copied().unwrap_or(f64::INFINITY);
        log.push(stage_log);
        if ok {
            r = r_new;
            beta = beta_new;
            p_prev = p_next;
            if p_next == params.p {
                return Ok((r, beta, log));
            }
        } else {
            step *= 0.5;
            log::debug!("continuation stage p = {p_next} failed, step halved to {step}");
            if step < opts.min_continuation_step {
                return Err(Error::NonConvergence {
                    p: p_next,
                    iterations: log.iter().map(|s| s.iterations).sum(),
                    residual: best_res,
                    best_r: r_new,
                    best_f: beta_new,
                });
            }
        }
    }
}

/// Rescales `r` to the best multiple for the new exponent: `λ` minimizes
/// `E(λr) - λ ℓ·r`, i.e. `λ^{q-1} ‖r‖^q = ℓ·r`.
fn warm_start(kkt: &Kkt, r: &[f64], params: &DualityParams) -> Vec<f64> {
    let lr = dot(kkt.load, r);
    let norm_q: f64 = kkt.op.element_energies(r, params.q).iter().sum();
    // a residual at roundoff level carries no information
    let noise = 1e-12 * sup(kkt.load) * r.iter().map(|x| x.abs()).sum::<f64>();
    if lr > noise && norm_q > 0.0 {
        let lambda = (lr / norm_q).powf(1.0 / (params.q - 1.0)).clamp(0.1, 10.0);
        r.iter().map(|x| lambda * x).collect()
    } else {
        r.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::{make_pair, Pairing, TestKind, TrialKind};
    use crate::mesh::SimplicialMesh;

    fn interval(n: usize) -> Arc<SimplicialMesh> {
        Arc::new(SimplicialMesh::interval(n, 0.0, 1.0).unwrap())
    }

    #[test]
    fn coupling_entries_by_hand() {
        let mesh = interval(4);
        let trial = TrialActionSpace::new(mesh.clone(), TrialKind::P0Actions).unwrap();
        let test = Arc::new(TestSpace::new(mesh, TestKind::P1Bubble));
        let sys = MixedSystem::with_load(&trial, test, vec![0.0; 7], DualityParams::from_q(2.0).unwrap()).unwrap();
        let b = sys.coupling_dense();
        let h = 0.25;
        // hat at x = 0.25 meets elements 0 and 1 with mean 1/2
        assert!((b[0][0] - h / 2.0).abs() < 1e-15);
        assert!((b[0][1] - h / 2.0).abs() < 1e-15);
        assert_eq!(b[0][2], 0.0);
        // bubble of element 2 (dof 3 + 2)
        assert!((b[5][2] - h / 6.0).abs() < 1e-15);
    }

    #[test]
    fn incompatible_dimensions_are_rejected() {
        let mesh = interval(4);
        let trial = TrialActionSpace::new(mesh.clone(), TrialKind::P0Actions).unwrap();
        let test = Arc::new(TestSpace::new(mesh, TestKind::P1));
        let err = MixedSystem::with_load(&trial, test, vec![0.0; 3], DualityParams::from_q(2.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::IncompatiblePair { trial: 4, test: 3 }));
    }

    #[test]
    fn piecewise_constant_density_is_reproduced() {
        let mesh = interval(4);
        let values = [1.0, -2.0, 0.5, 3.0];
        let f = RoughFunctional::density(move |p| values[((p[0] * 4.0) as usize).min(3)]);
        for pairing in [Pairing::P0P1Bubble, Pairing::P0PdPlus1] {
            let (g, v) = make_pair(mesh.clone(), pairing).unwrap();
            let v = Arc::new(v);
            for p in [2.0, 1.5] {
                let sol =
                    solve_projection(&f, &g, v.clone(), DualityParams::from_p(p).unwrap(), &SolverOptions::default())
                        .unwrap();
                for (a, b) in sol.f_coeffs.iter().zip(values) {
                    assert!((a - b).abs() < 1e-9, "{pairing:?} p {p}: {a} vs {b}");
                }
                assert!(sol.estimator_global < 1e-8);
            }
        }
    }

    #[test]
    fn two_element_delta_matches_dense_oracle() {
        let mesh = interval(2);
        let (g, v) = make_pair(mesh, Pairing::P0PdPlus1).unwrap();
        let v = Arc::new(v);
        let f = RoughFunctional::delta([0.5, 0.0]);
        let sys = assemble_mixed(&f, &g, v.clone(), DualityParams::from_q(2.0).unwrap()).unwrap();
        let sol = sys.solve(&SolverOptions::default()).unwrap();
        assert!((sol.f_coeffs[0] - sol.f_coeffs[1]).abs() < 1e-12);

        // independent dense saddle-point solve
        let op = DualityOperator::new(v.clone()).unwrap();
        let k = op.stiffness();
        let n = v.dim();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n + 2, n + 2);
        for &(i, j, x) in &k.entries {
            a[(i, j)] += x;
        }
        for (j, row) in sys.coupling_dense().iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                a[(j, n + i)] = x;
                a[(n + i, j)] = x;
            }
        }
        let mut rhs = nalgebra::DVector::<f64>::zeros(n + 2);
        for (j, &l) in sys.load().iter().enumerate() {
            rhs[j] = l;
        }
        let x = a.lu().solve(&rhs).unwrap();
        for i in 0..2 {
            assert!((x[n + i] - sol.f_coeffs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn continuation_path_is_recorded() {
        let mesh = interval(2);
        let (g, v) = make_pair(mesh, Pairing::P0PdPlus1).unwrap();
        let sol = solve_projection(
            &RoughFunctional::delta([0.5, 0.0]),
            &g,
            Arc::new(v),
            DualityParams::from_q(3.0).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        let expected = [2.0, 1.9, 1.8, 1.7, 1.6, 1.5];
        assert_eq!(sol.continuation_path.len(), expected.len());
        for (a, b) in sol.continuation_path.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(sol.stages.iter().all(|s| s.converged));
        assert!(sol.final_residual <= 1e-10);
        assert!(sol.orthogonality_defect <= 1e-9);
    }

    #[test]
    fn dual_norm_closed_forms() {
        let space = Arc::new(TestSpace::new(Arc::new(SimplicialMesh::unit_square(3).unwrap()), TestKind::P2));
        let params = DualityParams::from_q(2.0).unwrap();
        let opts = SolverOptions::default();
        assert_eq!(discrete_dual_norm(&vec![0.0; space.dim()], space.clone(), params, &opts).unwrap(), 0.0);
        let op = DualityOperator::new(space.clone()).unwrap();
        let c: Vec<f64> = (0..space.dim()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let kc = op.stiffness().matvec(&c);
        let expect = dot(&c, &kc).sqrt();
        let got = discrete_dual_norm(&kc, space.clone(), params, &opts).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect);

        // general q: ⟨J(v), v⟩ = ‖v‖^q, so the dual norm of J(v) is ‖v‖^{q-1}
        let p3 = DualityParams::from_q(3.0).unwrap();
        let jc = op.apply(&c, &p3);
        let norm: f64 = op.element_energies(&c, 3.0).iter().sum::<f64>().powf(1.0 / 3.0);
        let got = discrete_dual_norm(&jc, space, p3, &opts).unwrap();
        assert!((got - norm * norm).abs() < 1e-8 * norm * norm, "{got} vs {}", norm * norm);
    }
}
