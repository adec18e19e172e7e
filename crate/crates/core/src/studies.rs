//! Experiment drivers: convergence studies of the projections, the
//! regularized ODE, the Poisson snapshots and the instability sweep.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapt::{adaptive_project, AdaptConfig};
use crate::duality::DualityParams;
use crate::error::{Error, Result};
use crate::femspace::{make_pair, Pairing};
use crate::functional::RoughFunctional;
use crate::instability::{self, InstabilityRow};
use crate::mesh::{PointLocator, SimplicialMesh};
use crate::mixed::{solve_projection, MixedSolution, SolverOptions};
use crate::pde::{self, exact_ode, exact_ode_h1_norm, exact_poisson2d, galerkin_solve, run_two_stage, PdeProblem};
use crate::persistence::{SolutionRecord, StudyArchive};
use crate::rates::{fitted_rate, RATE_TAIL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Delta1d,
    Ode1d,
    Delta2d,
    Linesource,
    Instability,
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "delta1d" => Self::Delta1d,
            "ode1d" => Self::Ode1d,
            "delta2d" => Self::Delta2d,
            "linesource" => Self::Linesource,
            "instability" => Self::Instability,
            _ => return Err(Error::InvalidArgument(format!("unknown experiment '{s}'"))),
        })
    }
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Delta1d => "delta1d",
            Self::Ode1d => "ode1d",
            Self::Delta2d => "delta2d",
            Self::Linesource => "linesource",
            Self::Instability => "instability",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Uniform,
    Adaptive,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "adaptive" => Ok(Self::Adaptive),
            _ => Err(Error::InvalidArgument(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub experiment: Experiment,
    pub p: Vec<f64>,
    pub mode: Mode,
    /// Uniform refinement levels: `2^level` elements per side in 1D and on
    /// the square, `level` bisection rounds of the disk.
    pub levels: Vec<usize>,
    /// Adaptive tolerance (estimator target, or the two-stage tolerance).
    pub tol: Vec<f64>,
    pub alpha: f64,
    /// Adaptive start mesh: elements per side, or disk refinement rounds.
    pub mesh_n: usize,
    pub max_iterations: usize,
    pub max_ndofs: Option<usize>,
    /// Source location in 1D.
    pub x0: f64,
    /// Reaction coefficient of the ODE.
    pub a: f64,
    pub epsilons: Vec<f64>,
}

impl StudyConfig {
    /// Defaults reproducing the published setups.
    pub fn new(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            p: vec![2.0, 1.5, 1.2],
            mode: Mode::Uniform,
            levels: (4..=9).collect(),
            tol: vec![0.0],
            alpha: 0.5,
            mesh_n: 4,
            max_iterations: 30,
            max_ndofs: None,
            x0: 0.5,
            a: 0.0,
            epsilons: instability::default_epsilons(),
        };
        match experiment {
            Experiment::Delta1d => base,
            Experiment::Ode1d => Self {
                p: vec![2.0],
                levels: (2..=6).collect(),
                tol: vec![1e-1, 1e-2, 1e-3],
                x0: std::f64::consts::SQRT_2 / 2.0,
                ..base
            },
            Experiment::Delta2d => Self { p: vec![1.5, 1.2], levels: (1..=5).collect(), mesh_n: 1, max_iterations: 15, ..base },
            Experiment::Linesource => Self { p: vec![2.0, 1.5], levels: (2..=6).collect(), alpha: 0.4, ..base },
            Experiment::Instability => base,
        }
    }

    /// Applies one `key = value` setting. Lists are comma separated; level
    /// ranges may be written `lo..hi` (inclusive).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidArgument(format!("invalid value '{value}' for {what}"));
        let reals = |v: &str| -> Result<Vec<f64>> {
            v.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad(key))).collect()
        };
        match key {
            "experiment" => {
                let e: Experiment = value.parse()?;
                if e != self.experiment {
                    *self = Self::new(e);
                }
            }
            "p" => self.p = reals(value)?,
            "mode" => self.mode = value.parse()?,
            "levels" => self.levels = parse_levels(value).ok_or_else(|| bad("levels"))?,
            "tol" => self.tol = reals(value)?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("alpha"))?,
            "mesh_n" | "mesh-n" => self.mesh_n = value.parse().map_err(|_| bad("mesh_n"))?,
            "max_iterations" => self.max_iterations = value.parse().map_err(|_| bad("max_iterations"))?,
            "max_ndofs" => self.max_ndofs = Some(value.parse().map_err(|_| bad("max_ndofs"))?),
            "x0" => self.x0 = value.parse().map_err(|_| bad("x0"))?,
            "a" => self.a = value.parse().map_err(|_| bad("a"))?,
            "epsilons" => self.epsilons = reals(value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` lines (`#` starts a comment) or a JSON
    /// object with the same keys. The experiment key is applied first.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs: Vec<(String, String)> = if text.trim_start().starts_with('{') {
            let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
            map.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| {
                    let s = match v {
                        serde_json::Value::String(s) => s,
                        serde_json::Value::Array(a) => {
                            a.iter().map(|x| x.to_string().trim_matches('"').to_string()).collect::<Vec<_>>().join(",")
                        }
                        other => other.to_string(),
                    };
                    (k, s)
                })
                .collect()
        } else {
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Parse { line: i + 1, message: "expected key = value".into() })?;
                out.push((k.trim().to_string(), v.trim().to_string()));
            }
            out
        };
        let experiment = pairs
            .iter()
            .find(|(k, _)| k == "experiment")
            .ok_or_else(|| Error::InvalidArgument("missing experiment".into()))?
            .1
            .parse()?;
        let mut cfg = Self::new(experiment);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "experiment") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() {
            return Err(Error::InvalidArgument("no value of p given".into()));
        }
        if let Some(p) = self.p.iter().find(|&&p| !(p > 1.0 && p <= 2.0)) {
            return Err(Error::InvalidArgument(format!("p = {p} outside (1, 2]")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("no refinement levels given".into()));
        }
        if self.tol.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidArgument("tolerances must be nonnegative".into()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::InvalidArgument("epsilons must lie in (0, 1)".into()));
        }
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return Err(Error::InvalidArgument(format!("x0 = {} outside (0, 1)", self.x0)));
        }
        if !(self.a >= 0.0) {
            return Err(Error::InvalidArgument(format!("a = {} must be nonnegative", self.a)));
        }
        Ok(())
    }

    fn projection_setup(&self) -> Result<ProjectionSetup> {
        Ok(match self.experiment {
            Experiment::Delta1d => ProjectionSetup {
                source: RoughFunctional::delta([self.x0, 0.0]),
                pairing: Pairing::P0PdPlus1,
                dim: 1,
            },
            Experiment::Delta2d => {
                ProjectionSetup { source: RoughFunctional::delta([0.0, 0.0]), pairing: Pairing::P0P1Bubble, dim: 2 }
            }
            Experiment::Linesource => {
                ProjectionSetup { source: RoughFunctional::parabola_line_source(), pairing: Pairing::P0P1Bubble, dim: 2 }
            }
            other => return Err(Error::InvalidArgument(format!("{} is not a projection study", other.name()))),
        })
    }

    fn uniform_mesh(&self, level: usize) -> Result<SimplicialMesh> {
        match self.experiment {
            Experiment::Delta1d | Experiment::Ode1d => SimplicialMesh::interval(1 << level, 0.0, 1.0),
            Experiment::Delta2d => Ok(SimplicialMesh::disk(level)),
            Experiment::Linesource => SimplicialMesh::unit_square(1 << level),
            Experiment::Instability => Err(Error::InvalidArgument("the instability sweep has no mesh".into())),
        }
    }

    fn start_mesh(&self) -> Result<SimplicialMesh> {
        match self.experiment {
            Experiment::Delta1d | Experiment::Ode1d => SimplicialMesh::interval(self.mesh_n, 0.0, 1.0),
            Experiment::Delta2d => Ok(SimplicialMesh::disk(self.mesh_n)),
            Experiment::Linesource => SimplicialMesh::unit_square(self.mesh_n),
            Experiment::Instability => Err(Error::InvalidArgument("the instability sweep has no mesh".into())),
        }
    }

    /// Convergence rate predicted for uniform refinement.
    pub fn expected_rate(&self, p: f64) -> f64 {
        let q = p / (p - 1.0);
        match self.experiment {
            Experiment::Delta2d => 1.0 - 2.0 / q,
            _ => 1.0 - 1.0 / q,
        }
    }
}

fn parse_levels(v: &str) -> Option<Vec<usize>> {
    if let Some((lo, hi)) = v.split_once("..") {
        let (lo, hi): (usize, usize) = (lo.trim().parse().ok()?, hi.trim().trim_start_matches('=').parse().ok()?);
        return (lo <= hi).then(|| (lo..=hi).collect());
    }
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

struct ProjectionSetup {
    source: RoughFunctional,
    pairing: Pairing,
    dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub level: usize,
    pub ndofs: usize,
    /// `ndofs` in 1D, `sqrt(ndofs)` in 2D.
    pub dofs_metric: f64,
    pub estimator: f64,
    /// Rate over the last `RATE_TAIL` rows up to this one.
    pub fitted_rate: Option<f64>,
    pub expected_rate: f64,
}

pub const CONVERGENCE_HEADER: &str = "level,ndofs,dofs_metric,estimator,fitted_rate,expected_rate";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:.16e}"))
}

pub fn convergence_csv(records: &[ConvergenceRecord]) -> String {
    let mut s = format!("{CONVERGENCE_HEADER}\n");
    for r in records {
        writeln!(
            s,
            "{},{},{:.16e},{:.16e},{},{:.16e}",
            r.level,
            r.ndofs,
            r.dofs_metric,
            r.estimator,
            fmt_opt(r.fitted_rate),
            r.expected_rate
        )
        .unwrap();
    }
    s
}

/// Records with running fitted rates.
fn convergence_records(levels: &[usize], ndofs: &[usize], estimators: &[f64], dim: usize, expected: f64) -> Vec<ConvergenceRecord> {
    let metric: Vec<f64> = ndofs.iter().map(|&n| if dim == 1 { n as f64 } else { (n as f64).sqrt() }).collect();
    (0..levels.len())
        .map(|k| ConvergenceRecord {
            level: levels[k],
            ndofs: ndofs[k],
            dofs_metric: metric[k],
            estimator: estimators[k],
            fitted_rate: fitted_rate(&metric[..=k], &estimators[..=k], RATE_TAIL),
            expected_rate: expected,
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ProjectionStudy {
    pub p: f64,
    pub mode: Mode,
    pub records: Vec<ConvergenceRecord>,
    pub final_mesh: Arc<SimplicialMesh>,
    pub final_solution: MixedSolution,
    /// Adaptive runs only: whether the tolerance was reached.
    pub converged: Option<bool>,
}

impl ProjectionStudy {
    /// Rate fitted over the last `RATE_TAIL` rows.
    pub fn rate(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.fitted_rate)
    }

    pub fn csv(&self) -> String {
        convergence_csv(&self.records)
    }
}

fn p_tag(p: f64) -> String {
    format!("p{p}")
}

/// Runs the projection study of `cfg` (delta1d, delta2d or linesource) for
/// every `p`, archiving meshes and solutions when an archive is given.
pub fn run_projection_study(cfg: &StudyConfig, mut archive: Option<&mut StudyArchive>, opts: &SolverOptions) -> Result<Vec<ProjectionStudy>> {
    cfg.validate()?;
    let setup = cfg.projection_setup()?;
    let mut out = Vec::new();
    for &p in &cfg.p {
        let params = DualityParams::from_p(p)?;
        setup.source.check_exponent(params.q, setup.dim);
        let expected = cfg.expected_rate(p);
        let study = match cfg.mode {
            Mode::Uniform => {
                let (mut ndofs, mut est) = (Vec::new(), Vec::new());
                let mut last = None;
                for &level in &cfg.levels {
                    let mesh = Arc::new(cfg.uniform_mesh(level)?);
                    let (g, v) = make_pair(mesh.clone(), setup.pairing)?;
                    ndofs.push(g.dim() + v.dim());
                    let sol = solve_projection(&setup.source, &g, Arc::new(v), params, opts)?;
                    log::info!("{} p = {p} level {level}: estimator {:.4e}", cfg.experiment.name(), sol.estimator_global);
                    est.push(sol.estimator_global);
                    if let Some(a) = archive.as_deref_mut() {
                        a.save_level(&format!("{}_level{level:02}", p_tag(p)), &mesh, &SolutionRecord::new(&sol, g.kind()))?;
                    }
                    last = Some((mesh, sol));
                }
                let (final_mesh, final_solution) = last.expect("levels are nonempty");
                ProjectionStudy {
                    p,
                    mode: Mode::Uniform,
                    records: convergence_records(&cfg.levels, &ndofs, &est, setup.dim, expected),
                    final_mesh,
                    final_solution,
                    converged: None,
                }
            }
            Mode::Adaptive => {
                let mut config = AdaptConfig::new(cfg.tol.first().copied().unwrap_or(0.0), cfg.alpha)?
                    .with_max_iterations(cfg.max_iterations);
                config.max_ndofs = cfg.max_ndofs;
                let outcome = adaptive_project(&setup.source, Arc::new(cfg.start_mesh()?), setup.pairing, params, &config, opts)?;
                let steps = &outcome.history.steps;
                let levels: Vec<usize> = steps.iter().map(|s| s.level).collect();
                let ndofs: Vec<usize> = steps.iter().map(|s| s.ndofs).collect();
                if let Some(a) = archive.as_deref_mut() {
                    a.save_level(
                        &format!("{}_adaptive_final", p_tag(p)),
                        &outcome.mesh,
                        &SolutionRecord::new(&outcome.solution, outcome.trial.kind()),
                    )?;
                    a.write_text(&format!("history_{}.csv", p_tag(p)), &outcome.history.to_csv())?;
                }
                ProjectionStudy {
                    p,
                    mode: Mode::Adaptive,
                    records: convergence_records(&levels, &ndofs, &outcome.history.estimators(), setup.dim, expected),
                    final_mesh: outcome.mesh,
                    final_solution: outcome.solution,
                    converged: Some(outcome.converged),
                }
            }
        };
        if let Some(a) = archive.as_deref_mut() {
            a.write_text(&format!("convergence_{}.csv", p_tag(p)), &study.csv())?;
        }
        out.push(study);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeRow {
    pub n_elements: usize,
    pub ndofs: usize,
    /// Projection estimator.
    pub estimator: f64,
    /// `‖(u - u_n)'‖` of the Galerkin solution with the projected source.
    pub h1_error: f64,
    /// Residual estimator of the Galerkin solve.
    pub galerkin_estimator: f64,
}

pub const ODE_UNIFORM_HEADER: &str = "n_elements,ndofs,estimator,h1_error,galerkin_estimator";

/// Regularized ODE on uniform meshes of `2^level` elements: projection of
/// the delta (P0 against P2, `q = 2` unless `p` says otherwise), then a P2
/// Galerkin solve on the same mesh.
pub fn run_ode_uniform(cfg: &StudyConfig, p: f64, opts: &SolverOptions) -> Result<Vec<OdeRow>> {
    cfg.validate()?;
    let problem = PdeProblem::ode1d(cfg.a, cfg.x0)?;
    let params = DualityParams::from_p(p)?;
    let mut rows = Vec::new();
    for &level in &cfg.levels {
        let mesh = Arc::new(cfg.uniform_mesh(level)?);
        let (g, v) = make_pair(mesh.clone(), problem.pairing())?;
        let ndofs = g.dim() + v.dim();
        let sol = solve_projection(&problem.source(), &g, Arc::new(v), params, opts)?;
        let galerkin = galerkin_solve(&problem, mesh.clone(), &sol.projection(&g))?;
        rows.push(OdeRow {
            n_elements: mesh.n_elements(),
            ndofs,
            estimator: sol.estimator_global,
            h1_error: galerkin.h1_error.expect("1D problems have an exact solution"),
            galerkin_estimator: galerkin.estimator(),
        });
    }
    Ok(rows)
}

pub fn ode_uniform_csv(rows: &[OdeRow]) -> String {
    let mut s = format!("{ODE_UNIFORM_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{:.16e},{:.16e},{:.16e}", r.n_elements, r.ndofs, r.estimator, r.h1_error, r.galerkin_estimator).unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStageRow {
    pub tol: f64,
    pub h1_error: f64,
    pub relative_h1_error: f64,
    pub projection_iterations: usize,
    pub galerkin_iterations: usize,
    pub projection_estimator: f64,
    pub galerkin_estimator: f64,
    pub n_elements: usize,
    pub converged: bool,
}

pub const TWO_STAGE_HEADER: &str =
    "tol,h1_error,relative_h1_error,projection_iterations,galerkin_iterations,projection_estimator,galerkin_estimator,n_elements,converged";

/// Two-stage adaptive solves of the ODE for every tolerance of `cfg`.
/// Returns the rows and the final solution of the smallest tolerance.
pub fn run_ode_two_stage(cfg: &StudyConfig, p: f64, opts: &SolverOptions) -> Result<(Vec<TwoStageRow>, Option<pde::PdeSolution>)> {
    cfg.validate()?;
    let problem = PdeProblem::ode1d(cfg.a, cfg.x0)?;
    let params = DualityParams::from_p(p)?;
    let norm = exact_ode_h1_norm(cfg.x0, cfg.a);
    let mut rows = Vec::new();
    let mut last = None;
    for &tol in &cfg.tol {
        let out = run_two_stage(&problem, Arc::new(cfg.start_mesh()?), params, tol, cfg.alpha, cfg.max_iterations, opts)?;
        let err = out.solution.h1_error.expect("1D problems have an exact solution");
        rows.push(TwoStageRow {
            tol,
            h1_error: err,
            relative_h1_error: err / norm,
            projection_iterations: out.projection.history.len(),
            galerkin_iterations: out.galerkin_history.len(),
            projection_estimator: out.projection.solution.estimator_global,
            galerkin_estimator: out.solution.estimator(),
            n_elements: out.solution.u_h.space.mesh().n_elements(),
            converged: out.converged,
        });
        last = Some(out.solution);
    }
    Ok((rows, last))
}

pub fn two_stage_csv(rows: &[TwoStageRow]) -> String {
    let mut s = format!("{TWO_STAGE_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{},{},{:.16e},{:.16e},{},{}",
            r.tol,
            r.h1_error,
            r.relative_h1_error,
            r.projection_iterations,
            r.galerkin_iterations,
            r.projection_estimator,
            r.galerkin_estimator,
            r.n_elements,
            r.converged
        )
        .unwrap();
    }
    s
}

/// Samples `x,u_exact,u_h` of a 1D solution on `n + 1` equispaced points.
pub fn ode_samples_csv(u_h: &crate::femspace::FemFunction, x0: f64, a: f64, n: usize) -> Result<String> {
    let loc = PointLocator::new(u_h.space.mesh());
    let mut s = String::from("x,u_exact,u_h\n");
    for k in 0..=n {
        let x = k as f64 / n as f64;
        writeln!(s, "{x:.16e},{:.16e},{:.16e}", exact_ode(x, x0, a), u_h.eval(&loc, [x, 0.0])?).unwrap();
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct PoissonSnapshot {
    /// Adaptive iteration of the projection.
    pub iteration: usize,
    pub mesh: Arc<SimplicialMesh>,
    pub solution: pde::PdeSolution,
    pub l2_error: f64,
}

/// Adaptive projection of `δ_0` on the disk; at each of the requested
/// iterations a P1 Galerkin solve of `-Δu = δ_n` on the current mesh.
pub fn run_poisson_snapshots(cfg: &StudyConfig, p: f64, iterations: &[usize], opts: &SolverOptions) -> Result<Vec<PoissonSnapshot>> {
    cfg.validate()?;
    let problem = PdeProblem::poisson2d();
    let params = DualityParams::from_p(p)?;
    let mut mesh = Arc::new(cfg.start_mesh()?);
    let last = iterations.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for it in 0..=last {
        let (g, v) = make_pair(mesh.clone(), problem.pairing())?;
        let sol = solve_projection(&problem.source(), &g, Arc::new(v), params, opts)?;
        if iterations.contains(&it) {
            let solution = galerkin_solve(&problem, mesh.clone(), &sol.projection(&g))?;
            let l2_error = pde::l2_error_poisson2d(&solution.u_h)?;
            out.push(PoissonSnapshot { iteration: it, mesh: mesh.clone(), solution, l2_error });
        }
        let marked = crate::adapt::mark(&sol.estimator_local, cfg.alpha);
        if marked.is_empty() {
            break;
        }
        mesh = Arc::new(mesh.refine(&marked));
    }
    Ok(out)
}

/// Samples `x,y,u_exact,u_h` of a disk solution on an `n × n` grid, inside
/// the mesh and away from the origin.
pub fn poisson_samples_csv(u_h: &crate::femspace::FemFunction, n: usize) -> Result<String> {
    let loc = PointLocator::new(u_h.space.mesh());
    let mut s = String::from("x,y,u_exact,u_h\n");
    for i in 0..=n {
        for j in 0..=n {
            let x = [-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * j as f64 / n as f64];
            if x[0].hypot(x[1]) == 0.0 || loc.locate(x).is_none() {
                continue;
            }
            writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", x[0], x[1], exact_poisson2d(x)?, u_h.eval(&loc, x)?).unwrap();
        }
    }
    Ok(s)
}

pub fn run_instability(epsilons: &[f64]) -> Result<Vec<InstabilityRow>> {
    epsilons.iter().map(|&e| instability::instability_row(e)).collect()
}

pub fn instability_csv(rows: &[InstabilityRow]) -> String {
    let mut s = format!("{}\n", instability::CSV_HEADER);
    for r in rows {
        writeln!(s, "{:.16e},{:.16e},{:.16e}", r.epsilon, r.l2_proj_norm, r.h1neg_proj_l2norm).unwrap();
    }
    s
}
