//! Maximum-strategy marking and the adaptive projection loop.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::duality::DualityParams;
use crate::error::{Error, Result};
use crate::femspace::{make_pair, Pairing, TrialActionSpace};
use crate::functional::RoughFunctional;
use crate::mesh::SimplicialMesh;
use crate::mixed::{solve_projection, MixedSolution, SolverOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Target for the global estimator.
    pub tol: f64,
    /// Marking fraction.
    pub alpha: f64,
    pub max_iterations: usize,
    /// Stop before solving on a mesh with more degrees of freedom.
    #[serde(default)]
    pub max_ndofs: Option<usize>,
}

impl AdaptConfig {
    pub fn new(tol: f64, alpha: f64) -> Result<Self> {
        let c = Self { tol, alpha, ..Self::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_max_ndofs(mut self, n: usize) -> Self {
        self.max_ndofs = Some(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("marking fraction {} outside (0, 1)", self.alpha)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be nonnegative", self.tol)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("at least one iteration is required".into()));
        }
        Ok(())
    }
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { tol: 1e-3, alpha: 0.5, max_iterations: 30, max_ndofs: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptStep {
    pub level: usize,
    pub n_elements: usize,
    /// `dim G + dim V`
    pub ndofs: usize,
    pub estimator: f64,
    pub marked: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptHistory {
    pub steps: Vec<AdaptStep>,
}

impl AdaptHistory {
    pub const CSV_HEADER: &'static str = "level,n_elements,ndofs,estimator,marked";

    pub fn push(&mut self, step: AdaptStep) {
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn estimators(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.estimator).collect()
    }

    pub fn ndofs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.ndofs as f64).collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for s in &self.steps {
            writeln!(out, "{},{},{},{:.16e},{}", s.level, s.n_elements, s.ndofs, s.estimator, s.marked)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Elements whose indicator strictly exceeds `alpha` times the largest one.
pub fn mark(indicators: &[f64], alpha: f64) -> Vec<usize> {
    let max = indicators.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let threshold = alpha * max;
    indicators.iter().enumerate().filter(|(_, &v)| v > threshold).map(|(i, _)| i).collect()
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub mesh: Arc<SimplicialMesh>,
    pub trial: TrialActionSpace,
    pub solution: MixedSolution,
    pub history: AdaptHistory,
    /// False when the iteration budget ran out before reaching `tol`.
    pub converged: bool,
}

/// Solve, mark, refine until the global estimator is at most `config.tol`.
pub fn adaptive_project(
    f: &RoughFunctional,
    mesh0: Arc<SimplicialMesh>,
    pairing: Pairing,
    params: DualityParams,
    config: &AdaptConfig,
    opts: &SolverOptions,
) -> Result<AdaptOutcome> {
    config.validate()?;
    let mut mesh = mesh0;
    let mut pair = make_pair(mesh.clone(), pairing)?;
    let mut history = AdaptHistory::default();
    for level in 0..config.max_iterations {
        let (trial, test) = pair;
        let ndofs = trial.dim() + test.dim();
        let solution = solve_projection(f, &trial, Arc::new(test), params, opts)?;
        let done = solution.estimator_global <= config.tol;
        let last = level + 1 == config.max_iterations;
        let marked = if done || last { Vec::new() } else { mark(&solution.estimator_local, config.alpha) };
        let next = if marked.is_empty() {
            None
        } else {
            let refined = Arc::new(mesh.refine(&marked));
            let next_pair = make_pair(refined.clone(), pairing)?;
            let next_ndofs = next_pair.0.dim() + next_pair.1.dim();
            config.max_ndofs.is_none_or(|cap| next_ndofs <= cap).then_some((refined, next_pair))
        };
        history.push(AdaptStep {
            level,
            n_elements: mesh.n_elements(),
            ndofs,
            estimator: solution.estimator_global,
            marked: if next.is_some() { marked.len() } else { 0 },
        });
        log::info!(
            "adaptive step {level}: {} elements, estimator {:.3e}, {} marked",
            mesh.n_elements(),
            solution.estimator_global,
            marked.len()
        );
        match next {
            Some((refined, next_pair)) => {
                mesh = refined;
                pair = next_pair;
            }
            None => return Ok(AdaptOutcome { mesh, trial, solution, history, converged: done }),
        }
    }
    unreachable!("the loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marking_examples() {
        assert_eq!(mark(&[1.0, 0.6, 0.4], 0.5), vec![0, 1]);
        assert!(mark(&[0.0, 0.0, 0.0], 0.5).is_empty());
        assert_eq!(mark(&[0.7, 0.7, 0.1], 0.5), vec![0, 1]);
        assert_eq!(mark(&[0.5, 1.0], 0.5), vec![1]);
    }

    #[test]
    fn config_validation() {
        assert!(AdaptConfig::new(1e-3, 1.0).is_err());
        assert!(AdaptConfig::new(1e-3, 0.0).is_err());
        assert!(AdaptConfig::new(-1.0, 0.5).is_err());
        assert_eq!(AdaptConfig::new(1e-3, 0.4).unwrap().max_iterations, 30);
    }

    #[test]
    fn piecewise_constant_source_stops_immediately() {
        let mesh = Arc::new(SimplicialMesh::interval(4, 0.0, 1.0).unwrap());
        let f = RoughFunctional::density(|x| if x[0] < 0.5 { 2.0 } else { -1.0 });
        let out = adaptive_project(
            &f,
            mesh,
            Pairing::P0P1Bubble,
            DualityParams::from_p(1.5).unwrap(),
            &AdaptConfig::new(1e-8, 0.5).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.history.len(), 1);
        assert!(out.history.steps[0].estimator < 1e-8);
    }

    #[test]
    fn delta_refinement_concentrates_near_source() {
        let x0 = std::f64::consts::SQRT_2 / 2.0;
        let mut mesh = Arc::new(SimplicialMesh::interval(4, 0.0, 1.0).unwrap());
        let f = RoughFunctional::delta([x0, 0.0]);
        for _ in 0..8 {
            let (g, v) = make_pair(mesh.clone(), Pairing::P0PdPlus1).unwrap();
            let sol = solve_projection(&f, &g, Arc::new(v), DualityParams::from_q(2.0).unwrap(), &SolverOptions::default()).unwrap();
            let marked = mark(&sol.estimator_local, 0.5);
            let near = marked
                .iter()
                .filter(|&&e| {
                    let c = mesh.centroid(e)[0];
                    (c - x0).abs() <= 2.0 * mesh.diameter(e)
                })
                .count();
            assert_eq!(near, marked.len());
            mesh = Arc::new(mesh.refine(&marked));
        }
    }

    #[test]
    fn dof_budget_stops_early() {
        let mesh = Arc::new(SimplicialMesh::interval(4, 0.0, 1.0).unwrap());
        let cfg = AdaptConfig::new(0.0, 0.5).unwrap().with_max_ndofs(40);
        let out = adaptive_project(
            &RoughFunctional::delta([0.5, 0.0]),
            mesh,
            Pairing::P0PdPlus1,
            DualityParams::from_q(2.0).unwrap(),
            &cfg,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(!out.converged);
        assert!(out.history.steps.iter().all(|s| s.ndofs <= 40));
        assert_eq!(out.history.steps.last().unwrap().marked, 0);
        assert_eq!(out.mesh.n_elements(), out.history.steps.last().unwrap().n_elements);
    }

    #[test]
    fn history_csv() {
        let mut h = AdaptHistory::default();
        h.push(AdaptStep { level: 0, n_elements: 4, ndofs: 11, estimator: 0.5, marked: 1 });
        let csv = h.to_csv();
        assert!(csv.starts_with("level,n_elements,ndofs,estimator,marked\n0,4,11,5"));
    }
}
