//! The duality map of `W₀^{1,q}` with the component-wise seminorm, as a
//! weak form, together with its derivative and potential.
//!
//! The map sends `r` to `w ↦ Σ_i ∫ φ(∂_i r) ∂_i w` with the regularized flux
//! `φ(g) = (g² + ε²)^{(q-2)/2} g`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::femspace::{local_coeffs, FemFunction, QuadCache, TestSpace, NONLINEAR_QUAD_ORDER};
use crate::linalg::Triplets;

pub const DEFAULT_EPS_REG: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityParams {
    /// Test-space exponent.
    pub q: f64,
    /// Conjugate exponent `q / (q - 1)`.
    pub p: f64,
    pub eps_reg: f64,
}

impl DualityParams {
    pub fn from_q(q: f64) -> Result<Self> {
        if !(q > 1.0 && q.is_finite()) {
            return Err(Error::InvalidArgument(format!("exponent q = {q} must lie in (1, inf)")));
        }
        Ok(Self { q, p: q / (q - 1.0), eps_reg: DEFAULT_EPS_REG })
    }

    pub fn from_p(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!("exponent p = {p} must lie in (1, inf)")));
        }
        Ok(Self { q: p / (p - 1.0), p, eps_reg: DEFAULT_EPS_REG })
    }

    pub fn with_eps(mut self, eps_reg: f64) -> Self {
        self.eps_reg = eps_reg;
        self
    }

    /// Power of the duality map; always equal to `q`.
    pub fn s(&self) -> f64 {
        self.q
    }

    pub fn is_linear(&self) -> bool {
        self.q == 2.0
    }

    pub fn flux(&self, g: f64) -> f64 {
        if self.is_linear() {
            return g;
        }
        let r2 = g * g + self.eps_reg * self.eps_reg;
        if r2 == 0.0 {
            return 0.0;
        }
        r2.powf(0.5 * (self.q - 2.0)) * g
    }

    /// `φ'(g) = (g² + ε²)^{(q-4)/2} ((q-1) g² + ε²)`
    pub fn flux_derivative(&self, g: f64) -> f64 {
        if self.is_linear() {
            return 1.0;
        }
        let e2 = self.eps_reg * self.eps_reg;
        let r2 = g * g + e2;
        if r2 == 0.0 {
            return if self.q > 2.0 { 0.0 } else { f64::INFINITY };
        }
        r2.powf(0.5 * (self.q - 4.0)) * ((self.q - 1.0) * g * g + e2)
    }

    /// `Φ(g) = ((g² + ε²)^{q/2} - ε^q) / q`, so that `Φ' = φ` and `Φ(0) = 0`.
    pub fn potential(&self, g: f64) -> f64 {
        let e2 = self.eps_reg * self.eps_reg;
        ((g * g + e2).powf(0.5 * self.q) - e2.powf(0.5 * self.q)) / self.q
    }
}

/// Quadrature-backed evaluation of the duality map on one test space.
#[derive(Clone, Debug)]
pub struct DualityOperator {
    space: Arc<TestSpace>,
    cache: QuadCache,
}

impl DualityOperator {
    pub fn new(space: Arc<TestSpace>) -> Result<Self> {
        let cache = QuadCache::new(&space, NONLINEAR_QUAD_ORDER)?;
        Ok(Self { space, cache })
    }

    pub fn space(&self) -> &Arc<TestSpace> {
        &self.space
    }

    pub fn cache(&self) -> &QuadCache {
        &self.cache
    }

    fn dim(&self) -> usize {
        self.space.mesh().dim()
    }

    /// `(⟨J(r), φ_j⟩)_j` over the global basis.
    pub fn apply(&self, r: &[f64], params: &DualityParams) -> Vec<f64> {
        let mut out = vec![0.0; self.space.dim()];
        let c = &self.cache;
        let d = self.dim();
        for e in 0..self.space.mesh().n_elements() {
            let lc = local_coeffs(&self.space, r, e);
            let dofs = self.space.element_dofs(e);
            for q in 0..c.nq {
                let g = c.grad_of(e, q, &lc);
                let w = c.weight(e, q);
                let flux = [params.flux(g[0]), if d == 2 { params.flux(g[1]) } else { 0.0 }];
                for (k, dof) in dofs.iter().enumerate() {
                    if let Some(j) = dof {
                        let gk = c.grad(e, q, k);
                        out[*j] += w * (flux[0] * gk[0] + flux[1] * gk[1]);
                    }
                }
            }
        }
        out
    }

    /// Derivative of [`Self::apply`] at `r`, optionally shifted by
    /// `shift · K` with `K` the stiffness matrix.
    pub(crate) fn jacobian(&self, r: &[f64], params: &DualityParams, shift: f64) -> Triplets {
        let nl = self.space.n_local();
        let mut t = Triplets::new(self.space.dim());
        t.entries.reserve(self.space.mesh().n_elements() * nl * nl);
        let c = &self.cache;
        let d = self.dim();
        let mut local = vec![0.0; nl * nl];
        for e in 0..self.space.mesh().n_elements() {
            let lc = local_coeffs(&self.space, r, e);
            local.iter_mut().for_each(|x| *x = 0.0);
            for q in 0..c.nq {
                let g = c.grad_of(e, q, &lc);
                let w = c.weight(e, q);
                let a = [
                    w * (params.flux_derivative(g[0]) + shift),
                    if d == 2 { w * (params.flux_derivative(g[1]) + shift) } else { 0.0 },
                ];
                for i in 0..nl {
                    let gi = c.grad(e, q, i);
                    for j in 0..nl {
                        let gj = c.grad(e, q, j);
                        local[i * nl + j] += a[0] * gi[0] * gj[0] + a[1] * gi[1] * gj[1];
                    }
                }
            }
            let dofs = self.space.element_dofs(e);
            for (i, di) in dofs.iter().enumerate() {
                let Some(di) = di else { continue };
                for (j, dj) in dofs.iter().enumerate() {
                    if let Some(dj) = dj {
                        t.add(*di, *dj, local[i * nl + j]);
                    }
                }
            }
        }
        t
    }

    /// Stiffness matrix `∫ ∇φ_i·∇φ_j`.
    pub(crate) fn stiffness(&self) -> Triplets {
        let linear = DualityParams { q: 2.0, p: 2.0, eps_reg: 0.0 };
        self.jacobian(&vec![0.0; self.space.dim()], &linear, 0.0)
    }

    /// `Σ_i ∫ Φ(∂_i r)`, whose gradient is [`Self::apply`].
    pub fn energy(&self, r: &[f64], params: &DualityParams) -> f64 {
        let c = &self.cache;
        let d = self.dim();
        let mut total = 0.0;
        for e in 0..self.space.mesh().n_elements() {
            let lc = local_coeffs(&self.space, r, e);
            for q in 0..c.nq {
                let g = c.grad_of(e, q, &lc);
                total += c.weight(e, q) * g[..d].iter().map(|&x| params.potential(x)).sum::<f64>();
            }
        }
        total
    }

    /// `∫_T Σ_i |∂_i r|^q` per element, with the same quadrature as the map.
    pub fn element_energies(&self, r: &[f64], q: f64) -> Vec<f64> {
        crate::femspace::element_q_energy(&self.cache, &self.space, r, q)
    }
}

/// `⟨J(r), φ_w⟩` for the global basis function `w`.
pub fn duality_form(r: &FemFunction, w: usize, params: &DualityParams) -> Result<f64> {
    let op = DualityOperator::new(r.space.clone())?;
    Ok(op.apply(&r.coeffs, params)[w])
}

/// `⟨J(r), w⟩` for a test-space function `w`.
pub fn duality_pairing(r: &FemFunction, w: &FemFunction, params: &DualityParams) -> Result<f64> {
    let op = DualityOperator::new(r.space.clone())?;
    Ok(op.apply(&r.coeffs, params).iter().zip(&w.coeffs).map(|(a, b)| a * b).sum())
}

/// `⟨J'(r) δ, w⟩`
pub fn duality_jacobian_form(
    r: &FemFunction,
    delta: &FemFunction,
    w: &FemFunction,
    params: &DualityParams,
) -> Result<f64> {
    let op = DualityOperator::new(r.space.clone())?;
    let jd = op.jacobian(&r.coeffs, params, 0.0).matvec(&delta.coeffs);
    Ok(jd.iter().zip(&w.coeffs).map(|(a, b)| a * b).sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityCheck {
    /// `⟨J(r), r⟩`
    pub pairing: f64,
    /// `‖r‖^s` with `s = q`.
    pub norm_power: f64,
}

impl IdentityCheck {
    pub fn relative_gap(&self) -> f64 {
        let scale = self.pairing.abs().max(self.norm_power.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.pairing - self.norm_power).abs() / scale
        }
    }
}

/// Both sides of `⟨J(r), r⟩ = ‖r‖^q`, exact for `eps_reg = 0`.
pub fn duality_identities_check(r: &FemFunction, params: &DualityParams) -> Result<IdentityCheck> {
    let op = DualityOperator::new(r.space.clone())?;
    let pairing = op.apply(&r.coeffs, params).iter().zip(&r.coeffs).map(|(a, b)| a * b).sum();
    let norm_power = op.element_energies(&r.coeffs, params.q).iter().sum();
    Ok(IdentityCheck { pairing, norm_power })
}
