//! L² versus discrete H⁻¹ projection of `ℓ(v) = ∫₀¹ x^{-1/4} v'(x) dx`
//! onto the span of the hat `φ_ε` of the mesh {0, ε, 1}.

use std::sync::Arc;

use crate::duality::DualityParams;
use crate::error::{Error, Result};
use crate::femspace::{TestKind, TestSpace, TrialActionSpace, TrialKind};
use crate::mesh::{BoundaryKind, SimplicialMesh};
use crate::mixed::{MixedSystem, SolverOptions};

/// `‖φ_ε‖_{L²} = sqrt(1/3)`
pub const HAT_L2_NORM: f64 = 0.577_350_269_189_625_8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstabilityRow {
    pub epsilon: f64,
    /// L² norm of the L² projection.
    pub l2_proj_norm: f64,
    /// L² norm of the discrete H⁻¹ projection with a P2 test space.
    pub h1neg_proj_l2norm: f64,
}

fn check(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1)")));
    }
    Ok(())
}

/// `ℓ(φ_ε) = (1/ε)∫₀^ε x^{-1/4} - (1/(1-ε))∫_ε¹ x^{-1/4}`
pub fn hat_action(epsilon: f64) -> f64 {
    4.0 / 3.0 * epsilon.powf(-0.25) - 4.0 / 3.0 * (1.0 - epsilon.powf(0.75)) / (1.0 - epsilon)
}

/// Coefficient `α` of the L² projection `α φ_ε`.
pub fn l2_projection_coefficient(epsilon: f64) -> Result<f64> {
    check(epsilon)?;
    Ok(hat_action(epsilon) / (HAT_L2_NORM * HAT_L2_NORM))
}

/// Mesh {0, ε, 1}.
pub fn hat_mesh(epsilon: f64) -> Result<SimplicialMesh> {
    check(epsilon)?;
    SimplicialMesh::from_parts(
        1,
        vec![[0.0, 0.0], [epsilon, 0.0], [1.0, 0.0]],
        vec![0, 1, 1, 2],
        &[0, 2],
        BoundaryKind::Flat,
    )
}

/// `∫_a^b x^{-1/4} (c0 + c1 x) dx`
fn weighted_linear(a: f64, b: f64, c0: f64, c1: f64) -> f64 {
    c0 * 4.0 / 3.0 * (b.powf(0.75) - a.powf(0.75)) + c1 * 4.0 / 7.0 * (b.powf(1.75) - a.powf(1.75))
}

/// Exact load `ℓ(v_j)` for the P2 basis on a 1D mesh of (0, 1). Basis
/// derivatives are linear on each element, so the moments are closed form.
pub fn singular_gradient_load(space: &TestSpace) -> Result<Vec<f64>> {
    let mesh = space.mesh();
    let mut load = vec![0.0; space.dim()];
    for e in 0..mesh.n_elements() {
        let map = mesh.element_map(e)?;
        let (xa, xb) = (map.apply([0.0, 0.0])[0], map.apply([1.0, 0.0])[0]);
        for (k, d) in space.element_dofs(e).iter().enumerate() {
            let Some(d) = d else { continue };
            // derivative is linear: recover it from the endpoints
            let ga = space.eval_basis_with(&map, [0.0, 0.0]).grads[k][0];
            let gb = space.eval_basis_with(&map, [1.0, 0.0]).grads[k][0];
            let c1 = (gb - ga) / (xb - xa);
            let c0 = ga - c1 * xa;
            load[*d] += weighted_linear(xa.min(xb), xa.max(xb), c0, c1);
        }
    }
    Ok(load)
}

/// Coefficient of the discrete H⁻¹ projection onto `span{φ_ε}`, using the
/// nodal action of the interior hat as trial space and P2 as test space.
pub fn h1neg_projection_coefficient(epsilon: f64) -> Result<f64> {
    let mesh = Arc::new(hat_mesh(epsilon)?);
    let trial = TrialActionSpace::new(mesh.clone(), TrialKind::P1NodalActions)?;
    let test = Arc::new(TestSpace::new(mesh, TestKind::P2));
    let load = singular_gradient_load(&test)?;
    let system = MixedSystem::with_load(&trial, test, load, DualityParams::from_q(2.0)?)?;
    Ok(system.solve(&SolverOptions::default())?.f_coeffs[0])
}

pub fn instability_row(epsilon: f64) -> Result<InstabilityRow> {
    Ok(InstabilityRow {
        epsilon,
        l2_proj_norm: l2_projection_coefficient(epsilon)?.abs() * HAT_L2_NORM,
        h1neg_proj_l2norm: h1neg_projection_coefficient(epsilon)?.abs() * HAT_L2_NORM,
    })
}

pub const CSV_HEADER: &str = "epsilon,l2_proj_norm,h1neg_proj_l2norm";

pub fn default_epsilons() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;

    #[test]
    fn hat_norm_is_independent_of_epsilon() {
        let (x, w) = gauss_legendre(4);
        for eps in [0.5, 1e-3] {
            let left: f64 = x.iter().zip(&w).map(|(t, w)| w * eps * t * t).sum();
            let right: f64 = x.iter().zip(&w).map(|(t, w)| w * (1.0 - eps) * (1.0 - t) * (1.0 - t)).sum();
            assert!(((left + right).sqrt() - HAT_L2_NORM).abs() < 1e-15);
            assert!((HAT_L2_NORM - 3f64.sqrt() / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hat_action_closed_form() {
        // substitution x = s⁴ removes the singularity: ∫₀^b x^{-1/4} dx = ∫₀^{b^{1/4}} 4s² ds
        let eps: f64 = 0.01;
        let (x, w) = gauss_legendre(8);
        let int0 = |b: f64| -> f64 {
            let top = b.powf(0.25);
            x.iter().zip(&w).map(|(t, w)| w * top * 4.0 * (top * t).powi(2)).sum()
        };
        let expect = int0(eps) / eps - (int0(1.0) - int0(eps)) / (1.0 - eps);
        assert!((hat_action(eps) - expect).abs() < 1e-12);
    }

    #[test]
    fn load_of_hat_combination_matches_closed_form() {
        // φ_ε is the sum of the P2 vertex function and the halves of the edge functions
        let mesh = Arc::new(hat_mesh(0.2).unwrap());
        let space = TestSpace::new(mesh, TestKind::P2);
        let load = singular_gradient_load(&space).unwrap();
        let hat = space.interpolate(|p| if p[0] < 0.2 { p[0] / 0.2 } else { (1.0 - p[0]) / 0.8 });
        let got: f64 = load.iter().zip(&hat).map(|(a, b)| a * b).sum();
        assert!((got - hat_action(0.2)).abs() < 1e-13);
    }

    #[test]
    fn invalid_epsilon() {
        assert!(instability_row(0.0).is_err());
        assert!(instability_row(1.0).is_err());
    }

    #[test]
    fn h1neg_projection_is_stable() {
        let rows: Vec<InstabilityRow> = default_epsilons().into_iter().map(|e| instability_row(e).unwrap()).collect();
        let max = rows.iter().map(|r| r.h1neg_proj_l2norm).fold(0.0, f64::max);
        let min = rows.iter().map(|r| r.h1neg_proj_l2norm).fold(f64::INFINITY, f64::min);
        assert!(max / min < 10.0);
        assert!(rows[4].l2_proj_norm > 10.0 * rows[0].l2_proj_norm);
    }
}
